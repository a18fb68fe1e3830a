//! Time discretization of the horizon `[t0, tf]`.

use serde::{Deserialize, Serialize};

use super::ModelError;

/// Strictly increasing node times spanning a fixed horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t0: f64,
    tf: f64,
    nodes: Vec<f64>,
}

impl TimeGrid {
    /// Uniformly spaced grid with `n_nodes >= 2`.
    pub fn uniform(t0: f64, tf: f64, n_nodes: usize) -> Result<Self, ModelError> {
        if n_nodes < 2 {
            return Err(ModelError::Invalid(format!("grid needs >= 2 nodes, got {n_nodes}")));
        }
        if !(tf > t0) {
            return Err(ModelError::Invalid(format!("need tf > t0, got [{t0}, {tf}]")));
        }
        let h = (tf - t0) / (n_nodes - 1) as f64;
        let mut nodes: Vec<f64> = (0..n_nodes).map(|k| t0 + h * k as f64).collect();
        // pin the endpoints exactly
        nodes[0] = t0;
        nodes[n_nodes - 1] = tf;
        Ok(Self { t0, tf, nodes })
    }

    /// Explicit (possibly non-uniform) node times.
    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self, ModelError> {
        if nodes.len() < 2 {
            return Err(ModelError::Invalid(format!("grid needs >= 2 nodes, got {}", nodes.len())));
        }
        if nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ModelError::Invalid("grid nodes must be strictly increasing".into()));
        }
        Ok(Self { t0: nodes[0], tf: *nodes.last().unwrap(), nodes })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn tf(&self) -> f64 {
        self.tf
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_intervals(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn node(&self, k: usize) -> f64 {
        self.nodes[k]
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Width of interval `k` (between nodes `k` and `k+1`).
    pub fn step(&self, k: usize) -> f64 {
        self.nodes[k + 1] - self.nodes[k]
    }

    /// Trapezoidal quadrature of node samples over the grid.
    pub fn trapezoid(&self, samples: &[f64]) -> f64 {
        debug_assert_eq!(samples.len(), self.nodes.len());
        let mut acc = 0.0;
        for k in 0..self.n_intervals() {
            acc += 0.5 * self.step(k) * (samples[k] + samples[k + 1]);
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_grid_endpoints() {
        let g = TimeGrid::uniform(0.0, 1.0, 11).unwrap();
        assert_eq!(g.n_nodes(), 11);
        assert_eq!(g.node(0), 0.0);
        assert_eq!(g.node(10), 1.0);
        assert!((g.step(3) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(TimeGrid::uniform(0.0, 1.0, 1).is_err());
        assert!(TimeGrid::uniform(1.0, 1.0, 5).is_err());
        assert!(TimeGrid::from_nodes(vec![0.0, 0.5, 0.5, 1.0]).is_err());
    }

    #[test]
    fn trapezoid_constant_is_exact() {
        let g = TimeGrid::uniform(0.0, 2.0, 9).unwrap();
        assert!((g.trapezoid(&[3.0; 9]) - 6.0).abs() < 1e-14);
    }
}
