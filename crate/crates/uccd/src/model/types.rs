//! Value types composing a problem: trajectories, static variables,
//! problem data, and boundary conditions.

use super::ModelError;
use crate::mat::Mat;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    Control,
    State,
}

/// Node-sampled trajectory: one row per grid node, one column per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub kind: TrajectoryKind,
    pub names: Vec<String>,
    pub values: Mat,
}

impl Trajectory {
    pub fn new(kind: TrajectoryKind, names: Vec<String>, values: Mat) -> Result<Self, ModelError> {
        if values.cols() != names.len() {
            return Err(ModelError::Invalid(format!(
                "trajectory has {} channels but {} names",
                values.cols(),
                names.len()
            )));
        }
        if !values.is_finite() {
            return Err(ModelError::NonFinite("trajectory values".into()));
        }
        Ok(Self { kind, names, values })
    }

    /// Constant trajectory over `n_nodes` nodes.
    pub fn constant(kind: TrajectoryKind, names: Vec<String>, row: &[f64], n_nodes: usize) -> Self {
        let rows: Vec<Vec<f64>> = (0..n_nodes).map(|_| row.to_vec()).collect();
        Self { kind, names, values: Mat::from_rows(&rows) }
    }

    pub fn n_nodes(&self) -> usize {
        self.values.rows()
    }

    pub fn n_channels(&self) -> usize {
        self.values.cols()
    }

    pub fn node(&self, k: usize) -> &[f64] {
        self.values.row(k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StaticRole {
    #[default]
    Plant,
    ControlGain,
}

/// One time-independent optimization variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticVar {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    #[serde(default)]
    pub role: StaticRole,
}

/// Ordered collection of time-independent optimization variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct StaticVars {
    pub vars: Vec<StaticVar>,
}

impl StaticVars {
    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.vars.iter().position(|v| v.name == name)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for v in &self.vars {
            if v.lower > v.upper {
                return Err(ModelError::Invalid(format!(
                    "static '{}' has lower {} > upper {}",
                    v.name, v.lower, v.upper
                )));
            }
        }
        let mut names: Vec<&str> = self.vars.iter().map(|v| v.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(ModelError::Invalid("duplicate static variable name".into()));
        }
        Ok(())
    }

    /// Bound midpoints (zero when a side is unbounded in practice).
    pub fn midpoints(&self) -> Vec<f64> {
        self.vars
            .iter()
            .map(|v| {
                let mid = 0.5 * (v.lower + v.upper);
                if mid.is_finite() {
                    mid
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Named problem constants and time-tabulated signals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ProblemData {
    #[serde(default)]
    pub constants: BTreeMap<String, f64>,
    #[serde(default)]
    pub signals: BTreeMap<String, Vec<f64>>,
}

impl ProblemData {
    pub fn validate(&self, n_nodes: usize) -> Result<(), ModelError> {
        for (name, series) in &self.signals {
            if series.len() != n_nodes {
                return Err(ModelError::Invalid(format!(
                    "signal '{}' has {} samples, grid has {} nodes",
                    name,
                    series.len(),
                    n_nodes
                )));
            }
        }
        Ok(())
    }

    pub fn has_name(&self, name: &str) -> bool {
        self.constants.contains_key(name) || self.signals.contains_key(name)
    }
}

/// Optional fixed initial and terminal states; `None` components are free.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct BoundaryConditions {
    #[serde(default)]
    pub initial: Vec<Option<f64>>,
    #[serde(default)]
    pub terminal: Vec<Option<f64>>,
}

impl BoundaryConditions {
    pub fn validate(&self, n_s: usize) -> Result<(), ModelError> {
        if !self.initial.is_empty() && self.initial.len() != n_s {
            return Err(ModelError::Invalid(format!(
                "initial boundary has {} entries, state has {}",
                self.initial.len(),
                n_s
            )));
        }
        if !self.terminal.is_empty() && self.terminal.len() != n_s {
            return Err(ModelError::Invalid(format!(
                "terminal boundary has {} entries, state has {}",
                self.terminal.len(),
                n_s
            )));
        }
        Ok(())
    }

    pub fn initial_component(&self, i: usize) -> Option<f64> {
        self.initial.get(i).copied().flatten()
    }

    pub fn terminal_component(&self, i: usize) -> Option<f64> {
        self.terminal.get(i).copied().flatten()
    }

    pub fn any_terminal(&self) -> bool {
        self.terminal.iter().any(Option::is_some)
    }
}
