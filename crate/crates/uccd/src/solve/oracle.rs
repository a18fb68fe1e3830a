//! Exhaustive tensor-grid scan: an independent, derivative-free check on
//! the NLP solver for low-dimensional problems.

use super::SolveError;
use crate::formulations::CompiledNlp;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub feasible: bool,
    pub best_point: Vec<f64>,
    pub best_value: f64,
    /// Scanned points satisfying all constraints within tolerance.
    pub feasible_count: usize,
    pub scanned: usize,
    /// Grid spacing per free dimension.
    pub cell: Vec<f64>,
}

/// Scans the tensor grid over `bounds` at `resolution` points per free
/// dimension (dimensions with equal bounds are pinned). A point is
/// admitted when every equality magnitude and inequality excess is within
/// `tolerance`. Ties in the objective resolve to the lexicographically
/// smallest point.
pub fn grid_oracle(
    nlp: &CompiledNlp,
    bounds: &[(f64, f64)],
    resolution: usize,
    tolerance: f64,
) -> Result<OracleResult, SolveError> {
    assert!(resolution >= 3, "resolution must be >= 3");
    let n = bounds.len();
    assert_eq!(n, nlp.n(), "bounds must cover the decision vector");
    for (lo, hi) in bounds {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(SolveError::UnboundedSet);
        }
    }
    let free: Vec<usize> = (0..n).filter(|i| bounds[*i].0 < bounds[*i].1).collect();
    if free.len() > 6 {
        return Err(SolveError::DimensionTooHigh(free.len()));
    }

    let axis: Vec<Vec<f64>> = free
        .iter()
        .map(|i| {
            let (lo, hi) = bounds[*i];
            (0..resolution)
                .map(|j| lo + (hi - lo) * j as f64 / (resolution - 1) as f64)
                .collect()
        })
        .collect();
    let total: usize = resolution.pow(free.len() as u32);
    let slice_count = if free.is_empty() { 1 } else { resolution };
    let per_slice = total / slice_count;

    #[derive(Clone)]
    struct Best {
        value: f64,
        point: Option<Vec<f64>>,
        feasible: usize,
    }

    // parallel over the first free axis; each slice scans in lexicographic
    // order so the first minimum found is the lexicographically smallest
    let slices = crate::par::map_range(slice_count, |s0| {
        let mut x: Vec<f64> = bounds.iter().map(|(lo, _)| *lo).collect();
        let mut best = Best { value: f64::INFINITY, point: None, feasible: 0 };
        let mut c = vec![0.0; nlp.equalities.len];
        let mut g = vec![0.0; nlp.inequalities.len];
        for rest in 0..per_slice {
            let mut idx = rest;
            if !free.is_empty() {
                x[free[0]] = axis[0][s0];
                for d in (1..free.len()).rev() {
                    x[free[d]] = axis[d][idx % resolution];
                    idx /= resolution;
                }
            }
            (nlp.equalities.eval)(&x, &mut c);
            (nlp.inequalities.eval)(&x, &mut g);
            let eq_ok = c.iter().all(|v| v.abs() <= tolerance);
            let ineq_ok = g.iter().all(|v| *v <= tolerance);
            if eq_ok && ineq_ok {
                best.feasible += 1;
                let v = (nlp.objective.eval)(&x);
                if v.is_finite() && v < best.value {
                    best.value = v;
                    best.point = Some(x.clone());
                }
            }
        }
        best
    });

    let mut feasible_count = 0;
    let mut best_value = f64::INFINITY;
    let mut best_point: Option<Vec<f64>> = None;
    for s in slices {
        feasible_count += s.feasible;
        if s.point.is_some() && s.value < best_value {
            best_value = s.value;
            best_point = s.point;
        }
    }

    let cell: Vec<f64> = free
        .iter()
        .map(|i| (bounds[*i].1 - bounds[*i].0) / (resolution - 1) as f64)
        .collect();
    Ok(match best_point {
        Some(p) => OracleResult {
            feasible: true,
            best_point: p,
            best_value,
            feasible_count,
            scanned: total,
            cell,
        },
        None => OracleResult {
            feasible: false,
            best_point: Vec::new(),
            best_value: f64::INFINITY,
            feasible_count: 0,
            scanned: total,
            cell,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formulations::CompiledNlp;

    #[test]
    fn hits_grid_point() {
        // resolution 11 on [0,1] puts a node exactly at 0.3
        let nlp = CompiledNlp::from_parts(
            vec![0.0],
            vec![1.0],
            vec![0.0],
            |x| (x[0] - 0.3) * (x[0] - 0.3),
        );
        let r = grid_oracle(&nlp, &[(0.0, 1.0)], 11, 1e-6).unwrap();
        assert!(r.feasible);
        assert!((r.best_point[0] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn infeasible_everywhere() {
        let nlp = CompiledNlp::from_parts(vec![0.0], vec![1.0], vec![0.0], |x| x[0])
            .with_inequalities(1, |x, out| out[0] = x[0] + 1.0);
        let r = grid_oracle(&nlp, &[(0.0, 1.0)], 5, 1e-6).unwrap();
        assert!(!r.feasible);
        assert_eq!(r.feasible_count, 0);
    }

    #[test]
    fn refinement_shrinks_gap() {
        let nlp = CompiledNlp::from_parts(
            vec![0.0, 0.0],
            vec![1.0, 1.0],
            vec![0.0; 2],
            |x| (x[0] - 0.311).powi(2) + (x[1] - 0.7).powi(2),
        );
        let mut prev = f64::INFINITY;
        for res in [5, 9, 17, 33] {
            let r = grid_oracle(&nlp, &[(0.0, 1.0), (0.0, 1.0)], res, 1e-6).unwrap();
            let gap = r.best_value;
            assert!(gap <= prev + 1e-15, "gap {gap} vs {prev} at res {res}");
            prev = gap;
        }
    }

    #[test]
    fn dimension_guard() {
        let nlp = CompiledNlp::from_parts(vec![0.0; 7], vec![1.0; 7], vec![0.0; 7], |_| 0.0);
        let bounds = vec![(0.0, 1.0); 7];
        assert!(matches!(
            grid_oracle(&nlp, &bounds, 3, 1e-6),
            Err(SolveError::DimensionTooHigh(7))
        ));
    }

    #[test]
    fn pinned_dimensions_do_not_count() {
        let nlp = CompiledNlp::from_parts(
            vec![0.0; 3],
            vec![1.0; 3],
            vec![0.0; 3],
            |x| (x[0] - 0.5).powi(2) + x[1] + x[2],
        );
        let bounds = vec![(0.0, 1.0), (0.25, 0.25), (0.75, 0.75)];
        let r = grid_oracle(&nlp, &bounds, 5, 1e-6).unwrap();
        assert_eq!(r.best_point[1], 0.25);
        assert_eq!(r.best_point[2], 0.75);
        assert!((r.best_point[0] - 0.5).abs() < 1e-12);
    }
}
