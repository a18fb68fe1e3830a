//! Deterministic NLP solving: augmented-Lagrangian outer loop with a
//! bound-projected quasi-Newton inner minimizer, the adversarial inner
//! maximizer and scenario-generation coordinator for worst-case robust
//! problems, and a brute-force tensor-grid oracle.

mod auglag;
mod oracle;
mod wcr_solve;

pub use auglag::solve_nlp;
pub use oracle::{grid_oracle, OracleResult};
pub use wcr_solve::{inner_maximize, solve_wcr, InnerResult};

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("non-finite evaluation in {slice} at outer iteration {outer}")]
    NonFinite { slice: String, outer: usize },
    #[error("dimension mismatch: initial point has {got}, layout has {expected}")]
    BadInitialPoint { got: usize, expected: usize },
    #[error("grid oracle limited to 6 free dimensions, got {0}")]
    DimensionTooHigh(usize),
    #[error("unbounded set in inner maximization")]
    UnboundedSet,
    #[error("projection onto polytope sets is not supported in ascent mode")]
    PolytopeAscent,
    #[error(transparent)]
    Compile(#[from] crate::formulations::CompileError),
}

/// How gradients of the augmented Lagrangian are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    /// Analytic when the compiled problem provides them, else central
    /// finite differences.
    #[default]
    Auto,
    FiniteDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_outer_iters: usize,
    pub max_inner_iters: usize,
    pub max_line_search: usize,
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    pub max_penalty: f64,
    pub constraint_tol: f64,
    pub gradient_tol: f64,
    pub fd_step: f64,
    pub seed: u64,
    pub gradient_mode: GradientMode,
    /// Generation-round cap for worst-case robust solves.
    pub wcr_max_rounds: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_outer_iters: 40,
            max_inner_iters: 600,
            max_line_search: 40,
            initial_penalty: 10.0,
            penalty_growth: 10.0,
            max_penalty: 1e8,
            constraint_tol: 1e-6,
            gradient_tol: 1e-6,
            fd_step: 1e-6,
            seed: 0,
            gradient_mode: GradientMode::Auto,
            wcr_max_rounds: 10,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<(), SolveError> {
        assert!(self.constraint_tol > 0.0 && self.gradient_tol > 0.0 && self.fd_step > 0.0);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub outer: usize,
    pub inner_iters: usize,
    pub objective: f64,
    pub violation: f64,
    pub penalty: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceValue {
    pub name: String,
    pub values: Vec<f64>,
}

/// Residual summary for one emitted constraint group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupResidual {
    pub name: String,
    /// Worst violation in the group (equalities: |value|, inequalities:
    /// max(0, value)).
    pub violation: f64,
}

/// One round of worst-case certification: constraint name and its
/// adversarial maximum at the solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WcrCertificate {
    pub constraint: String,
    pub worst_value: f64,
    pub worst_point: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct WcrSummary {
    pub rounds: usize,
    pub pool_size: usize,
    /// Scenario pool (offset rows) backing the final outer solve.
    pub pool: Vec<Vec<f64>>,
    pub certificates: Vec<WcrCertificate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub objective: f64,
    /// Raw decision vector (layout order).
    pub x: Vec<f64>,
    /// Decision vector split by named layout slices.
    pub slices: Vec<SliceValue>,
    pub max_eq_violation: f64,
    pub max_ineq_violation: f64,
    pub constraint_groups: Vec<GroupResidual>,
    pub trace: Vec<IterRecord>,
    pub wall_time_s: f64,
    pub approximations: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal_spread: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wcr: Option<WcrSummary>,
}

impl SolveReport {
    pub fn violation(&self) -> f64 {
        self.max_eq_violation.max(self.max_ineq_violation)
    }
}
