//! Continuous-time CCD problem definition and its finite-dimensional
//! transcription pieces: time grid, trajectories, dynamics/cost/constraint
//! declarations, boundary conditions, and uncertainty bindings.

mod constraint;
mod cost;
pub mod document;
mod dynamics_spec;
mod eval;
mod grid;
pub mod sim;
mod types;

pub use constraint::{
    ConstraintExpr, ConstraintSpec, InequalityDef, TimeApplicability, TypeOneEquality,
    TypeTwoEquality,
};
pub use cost::{CostSpec, LagrangeForm, MayerForm};
pub use document::{build_problem, problem_to_document, ProblemDocument};
pub use dynamics_spec::{Coef, CoefSlot, DiffusionSpec, DriftSpec, DynamicsSpec, RegistryId, ResolvedDrift};
pub use eval::{
    eval_constraints, eval_cost_spec, eval_defects, eval_objective, epigraph_transform,
    BoundaryResiduals, ConstraintValues,
};
pub use grid::TimeGrid;
pub use types::{
    BoundaryConditions, ProblemData, StaticRole, StaticVar, StaticVars, Trajectory, TrajectoryKind,
};

use crate::usets::{CrispSet, FuzzySet, StochasticModel};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error("unknown registry id '{0}'")]
    UnknownRegistryId(String),
    #[error("unknown name '{0}'")]
    UnknownName(String),
    #[error("duplicate binding target '{0}'")]
    DuplicateBinding(String),
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
    #[error("document parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Uset(#[from] crate::usets::UsetError),
}

/// What an uncertainty model is attached to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BindingTarget {
    /// Additive perturbation of a static optimization variable.
    Static { name: String },
    /// Additive perturbation of a data constant or (uniformly in time) a signal.
    Data { name: String },
    /// Additive perturbation of a fixed initial-state component.
    InitialState { index: usize },
    /// Time-constant additive disturbance on one state derivative channel.
    StateNoise { index: usize },
}

impl BindingTarget {
    pub fn display(&self) -> String {
        match self {
            Self::Static { name } => format!("static:{name}"),
            Self::Data { name } => format!("data:{name}"),
            Self::InitialState { index } => format!("x0[{index}]"),
            Self::StateNoise { index } => format!("noise[{index}]"),
        }
    }
}

/// Uncertainty attached to one or more targets. Samples are additive
/// offsets around the target's base value; a model's own location (mean,
/// set center, membership peak) is its nominal offset. A binding may carry
/// several renderings of the same uncertainty (stochastic / crisp / fuzzy)
/// so that formulations from different families can be compared on one
/// document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyBinding {
    pub targets: Vec<BindingTarget>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stochastic: Option<Vec<StochasticModel>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crisp: Option<CrispSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fuzzy: Option<Vec<FuzzySet>>,
}

impl UncertaintyBinding {
    pub fn dim(&self) -> usize {
        self.targets.len()
    }

    /// Nominal offset per dimension, taken from the first rendering present
    /// (stochastic, then crisp, then fuzzy).
    pub fn nominal(&self) -> Vec<f64> {
        if let Some(models) = &self.stochastic {
            return models.iter().map(StochasticModel::nominal).collect();
        }
        if let Some(set) = &self.crisp {
            return set.nominal();
        }
        if let Some(sets) = &self.fuzzy {
            return sets.iter().map(FuzzySet::peak).collect();
        }
        vec![0.0; self.dim()]
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.targets.is_empty() {
            return Err(ModelError::Invalid("binding needs at least one target".into()));
        }
        if self.stochastic.is_none() && self.crisp.is_none() && self.fuzzy.is_none() {
            return Err(ModelError::Invalid(format!(
                "binding for {} carries no uncertainty model",
                self.targets[0].display()
            )));
        }
        if let Some(models) = &self.stochastic {
            if models.len() != self.dim() {
                return Err(ModelError::Invalid(
                    "stochastic rendering must list one model per target".into(),
                ));
            }
            for m in models {
                m.validate()?;
            }
        }
        if let Some(set) = &self.crisp {
            set.validate()?;
            if set.dim() != self.dim() {
                return Err(ModelError::Invalid(format!(
                    "crisp set dimension {} does not match {} targets",
                    set.dim(),
                    self.dim()
                )));
            }
        }
        if let Some(sets) = &self.fuzzy {
            if sets.len() != self.dim() {
                return Err(ModelError::Invalid(
                    "fuzzy rendering must list one set per target".into(),
                ));
            }
            for s in sets {
                s.validate()?;
            }
        }
        Ok(())
    }
}

/// One level of epigraph rewriting: the retained objective and the
/// auxiliary variable bounding it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpigraphLevel {
    pub var: String,
    pub cost: CostSpec,
}

/// Scenario realization resolved into per-element additive offsets.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScenarioOffsets {
    pub statics: Vec<f64>,
    pub data_constants: BTreeMap<String, f64>,
    pub signals: BTreeMap<String, f64>,
    pub initial_state: Vec<f64>,
    pub noise: Vec<f64>,
}

/// Declarative uncertain control co-design problem. Immutable after build;
/// all evaluation entry points are pure functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UccdProblem {
    pub grid: TimeGrid,
    pub dynamics: DynamicsSpec,
    pub cost: CostSpec,
    pub constraints: ConstraintSpec,
    pub statics: StaticVars,
    pub data: ProblemData,
    pub boundary: BoundaryConditions,
    pub bindings: Vec<UncertaintyBinding>,
    /// Epigraph rewrites applied so far (innermost first).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub epigraph_levels: Vec<EpigraphLevel>,
}

impl UccdProblem {
    pub fn n_states(&self) -> usize {
        self.dynamics.n_states()
    }

    pub fn n_controls(&self) -> usize {
        self.dynamics.n_controls()
    }

    pub fn n_statics(&self) -> usize {
        self.statics.len()
    }

    pub fn state_names(&self) -> Vec<String> {
        self.dynamics.state_names()
    }

    pub fn control_names(&self) -> Vec<String> {
        self.dynamics.control_names()
    }

    /// Flattened display names of all bound uncertain dimensions, in
    /// binding declaration order (the scenario column order).
    pub fn binding_names(&self) -> Vec<String> {
        self.bindings
            .iter()
            .flat_map(|b| b.targets.iter().map(BindingTarget::display))
            .collect()
    }

    pub fn n_uncertain(&self) -> usize {
        self.bindings.iter().map(UncertaintyBinding::dim).sum()
    }

    /// Nominal offsets row (one entry per bound dimension).
    pub fn nominal_offsets_row(&self) -> Vec<f64> {
        self.bindings.iter().flat_map(|b| b.nominal()).collect()
    }

    /// Expands a flat scenario row into per-element offsets.
    pub fn scenario_offsets(&self, row: &[f64]) -> ScenarioOffsets {
        assert_eq!(row.len(), self.n_uncertain(), "scenario row width");
        let mut off = ScenarioOffsets {
            statics: vec![0.0; self.n_statics()],
            initial_state: vec![0.0; self.n_states()],
            noise: vec![0.0; self.n_states()],
            ..Default::default()
        };
        let mut col = 0;
        for binding in &self.bindings {
            for target in &binding.targets {
                let v = row[col];
                col += 1;
                match target {
                    BindingTarget::Static { name } => {
                        let idx = self.statics.index_of(name).expect("validated binding");
                        off.statics[idx] += v;
                    }
                    BindingTarget::Data { name } => {
                        if self.data.constants.contains_key(name) {
                            *off.data_constants.entry(name.clone()).or_insert(0.0) += v;
                        } else {
                            *off.signals.entry(name.clone()).or_insert(0.0) += v;
                        }
                    }
                    BindingTarget::InitialState { index } => off.initial_state[*index] += v,
                    BindingTarget::StateNoise { index } => off.noise[*index] += v,
                }
            }
        }
        off
    }

    /// Stochastic rendering of every binding, flattened per dimension.
    /// Errors when any bound target lacks one.
    pub fn stochastic_models(&self) -> Result<Vec<(String, StochasticModel)>, ModelError> {
        let mut out = Vec::new();
        for b in &self.bindings {
            let models = b.stochastic.as_ref().ok_or_else(|| {
                ModelError::Invalid(format!(
                    "binding for {} has no stochastic rendering",
                    b.targets[0].display()
                ))
            })?;
            for (t, m) in b.targets.iter().zip(models) {
                out.push((t.display(), m.clone()));
            }
        }
        Ok(out)
    }

    /// Crisp rendering of every binding (sets stay joint across their
    /// targets). Errors when any bound target lacks one.
    pub fn crisp_sets(&self) -> Result<Vec<(Vec<String>, CrispSet)>, ModelError> {
        let mut out = Vec::new();
        for b in &self.bindings {
            let set = b.crisp.as_ref().ok_or_else(|| {
                ModelError::Invalid(format!(
                    "binding for {} has no crisp rendering",
                    b.targets[0].display()
                ))
            })?;
            out.push((b.targets.iter().map(BindingTarget::display).collect(), set.clone()));
        }
        Ok(out)
    }

    /// Fuzzy rendering of every binding, flattened per dimension.
    pub fn fuzzy_sets(&self) -> Result<Vec<(String, FuzzySet)>, ModelError> {
        let mut out = Vec::new();
        for b in &self.bindings {
            let sets = b.fuzzy.as_ref().ok_or_else(|| {
                ModelError::Invalid(format!(
                    "binding for {} has no fuzzy rendering",
                    b.targets[0].display()
                ))
            })?;
            for (t, s) in b.targets.iter().zip(sets) {
                out.push((t.display(), s.clone()));
            }
        }
        Ok(out)
    }

    /// Full dimensional and referential validation.
    pub fn validate(&self) -> Result<(), ModelError> {
        let n_s = self.n_states();
        let n_u = self.n_controls();
        self.dynamics.validate()?;
        self.statics.validate()?;
        self.data.validate(self.grid.n_nodes())?;
        self.boundary.validate(n_s)?;
        let has_static = |name: &str| self.statics.index_of(name).is_some();
        let has_constant = |name: &str| self.data.constants.contains_key(name);
        let has_signal = |name: &str| self.data.signals.contains_key(name);
        self.cost.validate(n_s, n_u, &has_static)?;
        for level in &self.epigraph_levels {
            level.cost.validate(n_s, n_u, &has_static)?;
            if !has_static(&level.var) {
                return Err(ModelError::UnknownName(level.var.clone()));
            }
        }
        self.constraints.validate(n_s, n_u, &has_static, &has_constant, &has_signal)?;
        // registry coefficient references must resolve
        let static_index = |name: &str| self.statics.index_of(name);
        let data_value = |name: &str| self.data.constants.get(name).copied();
        ResolvedDrift::resolve(&self.dynamics.drift, &static_index, &data_value)?;

        let mut seen: Vec<String> = Vec::new();
        for b in &self.bindings {
            b.validate()?;
            for t in &b.targets {
                match t {
                    BindingTarget::Static { name } => {
                        if !has_static(name) {
                            return Err(ModelError::UnknownName(name.clone()));
                        }
                    }
                    BindingTarget::Data { name } => {
                        if !self.data.has_name(name) {
                            return Err(ModelError::UnknownName(name.clone()));
                        }
                    }
                    BindingTarget::InitialState { index } | BindingTarget::StateNoise { index } => {
                        if *index >= n_s {
                            return Err(ModelError::Invalid(format!(
                                "binding target index {index} exceeds state dimension {n_s}"
                            )));
                        }
                    }
                }
                let key = t.display();
                if seen.contains(&key) {
                    return Err(ModelError::DuplicateBinding(key));
                }
                seen.push(key);
            }
        }
        Ok(())
    }
}
