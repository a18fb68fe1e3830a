//! Formulation compilers: turn a problem, its uncertainty bindings, and a
//! risk configuration into a flat deterministic NLP.
//!
//! Each compiler expands the problem over a finite scenario set (states and
//! optionally controls replicated per scenario), keeps every scenario's
//! collocation defects as hard equalities, and renders the inequality
//! constraints under its uncertainty treatment: plain per-scenario rows,
//! scenario means, mean-plus-dispersion margins, smoothed chance
//! indicators, credibility-weighted expectations, or vertex replication.

mod compile;
mod expand;
mod fuzzy;
mod reduced;
mod spec;
mod wcr;

pub use compile::{
    compile_deterministic, compile_pr_constrained, compile_pr_weighted, compile_scc, compile_se,
    expand_scenarios, SccMode,
};
pub use expand::credibility_weights;
pub use fuzzy::{compile_fe, compile_pcc};
pub use reduced::compile_reduced;
pub use spec::{FormulationKind, FormulationParams, FormulationSpec};
pub use wcr::{compile_wcr, InnerMode, WcrCompilation, WcrMode, WcrSubproblem, WcrTarget};

use crate::usets::ScenarioSet;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CompileError {
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Uset(#[from] crate::usets::UsetError),
    #[error("incompatible bindings: {0}")]
    IncompatibleBindings(String),
    #[error("scenario set does not match problem bindings: {0}")]
    ScenarioMismatch(String),
    #[error("invalid parameter: {0}")]
    BadParameter(String),
    #[error("vertex mode needs box or polytope sets: {0}")]
    VertexModeUnsupported(String),
    #[error("vertex expansion too large: {0} scenarios")]
    TooManyVertices(usize),
}

/// Open-loop control structure: one shared control trajectory (OLSC) or one
/// per scenario (OLMC).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlStructure {
    Olsc,
    Olmc,
}

/// Decision-vector layout. Slices are disjoint and cover the vector:
/// controls first (shared or per scenario), then per-scenario states, then
/// statics.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub structure: ControlStructure,
    pub n_scen: usize,
    pub n_nodes: usize,
    pub n_u: usize,
    pub n_s: usize,
    pub n_p: usize,
    /// One state block serves every scenario: set when the bound
    /// uncertainty never reaches the dynamics (data-only perturbations
    /// under a shared control), so the per-scenario state trajectories are
    /// identical and their defect blocks coincide.
    pub shared_states: bool,
    pub state_names: Vec<String>,
    pub control_names: Vec<String>,
    pub static_names: Vec<String>,
}

impl Layout {
    pub fn state_blocks(&self) -> usize {
        if self.shared_states {
            1
        } else {
            self.n_scen
        }
    }

    pub fn n(&self) -> usize {
        self.controls_len() + self.state_blocks() * self.n_nodes * self.n_s + self.n_p
    }

    fn controls_len(&self) -> usize {
        match self.structure {
            ControlStructure::Olsc => self.n_nodes * self.n_u,
            ControlStructure::Olmc => self.n_scen * self.n_nodes * self.n_u,
        }
    }

    #[inline]
    pub fn u_index(&self, s: usize, k: usize, j: usize) -> usize {
        match self.structure {
            ControlStructure::Olsc => k * self.n_u + j,
            ControlStructure::Olmc => (s * self.n_nodes + k) * self.n_u + j,
        }
    }

    #[inline]
    pub fn xi_index(&self, s: usize, k: usize, i: usize) -> usize {
        let block = if self.shared_states { 0 } else { s };
        self.controls_len() + (block * self.n_nodes + k) * self.n_s + i
    }

    #[inline]
    pub fn p_index(&self, m: usize) -> usize {
        self.controls_len() + self.state_blocks() * self.n_nodes * self.n_s + m
    }

    /// Named, disjoint slices covering the decision vector.
    pub fn slices(&self) -> Vec<(String, Range<usize>)> {
        let mut out = Vec::new();
        match self.structure {
            ControlStructure::Olsc => {
                out.push(("u".to_string(), 0..self.n_nodes * self.n_u));
            }
            ControlStructure::Olmc => {
                for s in 0..self.n_scen {
                    let base = s * self.n_nodes * self.n_u;
                    out.push((format!("u_s{s}"), base..base + self.n_nodes * self.n_u));
                }
            }
        }
        for s in 0..self.state_blocks() {
            let base = self.xi_index(s, 0, 0);
            out.push((format!("xi_s{s}"), base..base + self.n_nodes * self.n_s));
        }
        if self.n_p > 0 {
            let base = self.p_index(0);
            out.push(("p".to_string(), base..base + self.n_p));
        }
        out
    }
}

/// Scalar evaluator with an optional analytic gradient.
pub struct ScalarFn {
    pub eval: Box<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    /// Writes the full gradient (overwrites the slice).
    pub grad: Option<Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync>>,
}

/// Vector evaluator with an optional vector-Jacobian product, which is all
/// an augmented-Lagrangian gradient needs.
pub struct VectorFn {
    pub len: usize,
    pub eval: Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync>,
    /// Accumulates `sum_i w_i grad(row_i)(x)` into the gradient slice.
    pub vjp: Option<Box<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>>,
}

impl VectorFn {
    pub fn empty() -> Self {
        Self {
            len: 0,
            eval: Box::new(|_, _| {}),
            vjp: Some(Box::new(|_, _, _| {})),
        }
    }
}

/// Shared, mutable smoothing temperature for SAA chance constraints. The
/// solver halves it on every outer restart; the compiled closures read it.
#[derive(Debug, Clone)]
pub struct AnnealState {
    tau: Arc<AtomicU64>,
    pub factor: f64,
    pub floor: f64,
}

impl AnnealState {
    pub fn new(tau0: f64, factor: f64, floor: f64) -> Self {
        Self { tau: Arc::new(AtomicU64::new(tau0.to_bits())), factor, floor }
    }

    pub fn tau(&self) -> f64 {
        f64::from_bits(self.tau.load(Ordering::Relaxed))
    }

    pub fn step(&self) {
        let next = (self.tau() * self.factor).max(self.floor);
        self.tau.store(next.to_bits(), Ordering::Relaxed);
    }
}

/// Flat deterministic NLP produced by a formulation compiler.
pub struct CompiledNlp {
    pub layout: Layout,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub x0: Vec<f64>,
    pub objective: ScalarFn,
    pub equalities: VectorFn,
    pub inequalities: VectorFn,
    /// `(group label, row count)` in emission order, for reporting.
    pub eq_groups: Vec<(String, usize)>,
    pub ineq_groups: Vec<(String, usize)>,
    pub scenarios: Option<ScenarioSet>,
    pub formulation: String,
    pub approximations: Vec<String>,
    /// Scope tag for compilations that are exact only under conditions
    /// (vertex-mode robust counterparts are exact for affine dependence).
    pub exactness: Option<String>,
    pub anneal: Option<AnnealState>,
    /// Hard (unsmoothed) re-check of smoothed inequality rows.
    pub hard_inequalities: Option<VectorFn>,
    /// Per-scenario objective values at a decision vector, in scenario
    /// order (None for ad-hoc problems).
    pub per_scenario_objectives: Option<Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>>,
}

impl CompiledNlp {
    pub fn n(&self) -> usize {
        self.layout.n()
    }

    /// Builds a bare NLP from closures; used by tests and the brute-force
    /// oracle on toy problems.
    pub fn from_parts(
        lower: Vec<f64>,
        upper: Vec<f64>,
        x0: Vec<f64>,
        objective: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        let n = lower.len();
        assert_eq!(upper.len(), n);
        assert_eq!(x0.len(), n);
        CompiledNlp {
            layout: Layout {
                structure: ControlStructure::Olsc,
                n_scen: 0,
                n_nodes: 0,
                n_u: 0,
                n_s: 0,
                n_p: n,
                shared_states: false,
                state_names: Vec::new(),
                control_names: Vec::new(),
                static_names: (0..n).map(|i| format!("x{i}")).collect(),
            },
            lower,
            upper,
            x0,
            objective: ScalarFn { eval: Box::new(objective), grad: None },
            equalities: VectorFn::empty(),
            inequalities: VectorFn::empty(),
            eq_groups: Vec::new(),
            ineq_groups: Vec::new(),
            scenarios: None,
            formulation: "adhoc".into(),
            approximations: Vec::new(),
            exactness: None,
            anneal: None,
            hard_inequalities: None,
            per_scenario_objectives: None,
        }
    }

    pub fn with_inequalities(mut self, len: usize, f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.inequalities = VectorFn { len, eval: Box::new(f), vjp: None };
        self.ineq_groups = vec![("ineq".into(), len)];
        self
    }

    pub fn with_equalities(mut self, len: usize, f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.equalities = VectorFn { len, eval: Box::new(f), vjp: None };
        self.eq_groups = vec![("eq".into(), len)];
        self
    }

    /// Terminal spread (max minus min across scenarios) per enabled
    /// terminal boundary component; `None` for single-scenario problems.
    pub fn terminal_spread(&self, x: &[f64], terminal_enabled: &[usize]) -> Option<BTreeMap<String, f64>> {
        if self.layout.n_scen < 2 || self.layout.shared_states {
            return None;
        }
        let mut out = BTreeMap::new();
        let k_last = self.layout.n_nodes - 1;
        for &i in terminal_enabled {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for s in 0..self.layout.n_scen {
                let v = x[self.layout.xi_index(s, k_last, i)];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            out.insert(self.layout.state_names[i].clone(), hi - lo);
        }
        Some(out)
    }
}

/// Per-constraint scalar parameter with a default (target failure
/// probabilities, dispersion caps, possibility thresholds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerConstraint {
    pub default: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub overrides: BTreeMap<String, f64>,
}

impl PerConstraint {
    pub fn uniform(default: f64) -> Self {
        Self { default, overrides: BTreeMap::new() }
    }

    pub fn get(&self, name: &str) -> f64 {
        self.overrides.get(name).copied().unwrap_or(self.default)
    }
}
