//! The problem document: a JSON-compatible description with top-level keys
//! `schema`, `grid`, `dynamics`, `cost`, `constraints`, `statics`, `data`,
//! `boundary`, `uncertainty`, and `formulation`. Field names are part of
//! the external contract; unknown fields are rejected.

use super::{
    BoundaryConditions, Coef, ConstraintSpec, CostSpec, DiffusionSpec, DriftSpec, DynamicsSpec,
    ModelError, ProblemData, RegistryId, StaticVar, StaticVars, TimeGrid, UccdProblem,
    UncertaintyBinding,
};
use crate::model::BindingTarget;
use crate::usets::{CrispSet, FuzzySet, StochasticModel};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridDoc {
    pub t0: f64,
    pub tf: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_nodes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nodes: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsDoc {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<BTreeMap<String, Coef>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diffusion: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct CostDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub registry: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lagrange: Option<super::LagrangeForm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mayer: Option<super::MayerForm>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct BoundaryDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<Vec<Option<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal: Option<Vec<Option<f64>>>,
}

/// A scalar model or a per-target list of them.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T> OneOrMany<T> {
    fn into_vec(self) -> Vec<T> {
        match self {
            Self::One(v) => vec![v],
            Self::Many(v) => v,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UncertaintyBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<BindingTarget>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<Vec<BindingTarget>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stochastic: Option<OneOrMany<StochasticModel>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crisp: Option<CrispSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fuzzy: Option<OneOrMany<FuzzySet>>,
}

/// Parsed (but not yet validated) problem document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemDocument {
    pub schema: u32,
    pub grid: GridDoc,
    pub dynamics: DynamicsDoc,
    #[serde(default)]
    pub cost: CostDoc,
    #[serde(default, skip_serializing_if = "is_default_constraints")]
    pub constraints: ConstraintSpec,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub statics: Vec<StaticVar>,
    #[serde(default)]
    pub data: ProblemData,
    #[serde(default)]
    pub boundary: BoundaryDoc,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub uncertainty: Vec<UncertaintyBlock>,
    /// Solve configuration; interpreted by the formulation compilers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub formulation: Option<serde_json::Value>,
}

fn is_default_constraints(c: &ConstraintSpec) -> bool {
    c == &ConstraintSpec::default()
}

impl ProblemDocument {
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        serde_json::from_str(text).map_err(|e| {
            ModelError::Parse(format!("line {} column {}: {}", e.line(), e.column(), e))
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("document serializes")
    }
}

/// Builds and fully validates a problem from its document.
pub fn build_problem(doc: &ProblemDocument) -> Result<UccdProblem, ModelError> {
    if doc.schema != 1 {
        return Err(ModelError::Invalid(format!(
            "unsupported schema version {}, expected 1",
            doc.schema
        )));
    }
    let grid = match (&doc.grid.nodes, doc.grid.n_nodes) {
        (Some(nodes), None) => TimeGrid::from_nodes(nodes.clone())?,
        (None, Some(n)) => TimeGrid::uniform(doc.grid.t0, doc.grid.tf, n)?,
        _ => {
            return Err(ModelError::Invalid(
                "grid needs exactly one of `n_nodes` or `nodes`".into(),
            ))
        }
    };

    let drift = match doc.dynamics.kind.as_str() {
        "registry" => {
            let id = doc
                .dynamics
                .id
                .as_deref()
                .ok_or_else(|| ModelError::Invalid("registry dynamics need `id`".into()))?;
            DriftSpec::Registry {
                id: RegistryId::parse(id)?,
                coefficients: doc.dynamics.coefficients.clone().unwrap_or_default(),
            }
        }
        "linear" => {
            let a = doc
                .dynamics
                .a
                .clone()
                .ok_or_else(|| ModelError::Invalid("linear dynamics need `a`".into()))?;
            let b = doc
                .dynamics
                .b
                .clone()
                .ok_or_else(|| ModelError::Invalid("linear dynamics need `b`".into()))?;
            DriftSpec::Linear { a, b }
        }
        other => {
            return Err(ModelError::Invalid(format!(
                "dynamics kind must be `registry` or `linear`, got `{other}`"
            )))
        }
    };
    let dynamics = DynamicsSpec {
        drift,
        diffusion: doc.dynamics.diffusion.clone().map(|b| DiffusionSpec::Constant { b }),
    };
    let n_u = dynamics.n_controls();

    let cost = match (&doc.cost.registry, &doc.cost.lagrange, &doc.cost.mayer) {
        (Some(id), None, None) => match id.as_str() {
            "min_energy" => CostSpec::min_energy(n_u),
            other => return Err(ModelError::UnknownRegistryId(other.to_string())),
        },
        (Some(_), _, _) => {
            return Err(ModelError::Invalid(
                "cost takes either `registry` or explicit forms, not both".into(),
            ))
        }
        (None, lagrange, mayer) => CostSpec { lagrange: lagrange.clone(), mayer: mayer.clone() },
    };

    let n_s = dynamics.n_states();
    let boundary = BoundaryConditions {
        initial: doc.boundary.initial.clone().unwrap_or_else(|| vec![None; n_s]),
        terminal: doc.boundary.terminal.clone().unwrap_or_else(|| vec![None; n_s]),
    };

    let mut bindings = Vec::new();
    for block in &doc.uncertainty {
        let targets = match (&block.target, &block.targets) {
            (Some(t), None) => vec![t.clone()],
            (None, Some(ts)) => ts.clone(),
            _ => {
                return Err(ModelError::Invalid(
                    "uncertainty block needs exactly one of `target` or `targets`".into(),
                ))
            }
        };
        bindings.push(UncertaintyBinding {
            targets,
            stochastic: block.stochastic.clone().map(OneOrMany::into_vec),
            crisp: block.crisp.clone(),
            fuzzy: block.fuzzy.clone().map(OneOrMany::into_vec),
        });
    }

    let problem = UccdProblem {
        grid,
        dynamics,
        cost,
        constraints: doc.constraints.clone(),
        statics: StaticVars { vars: doc.statics.clone() },
        data: doc.data.clone(),
        boundary,
        bindings,
        epigraph_levels: Vec::new(),
    };
    problem.validate()?;
    Ok(problem)
}

/// Renders a problem back into document form (resolved registry references
/// serialize as their explicit forms where the original sugar is gone).
pub fn problem_to_document(
    problem: &UccdProblem,
    formulation: Option<serde_json::Value>,
) -> ProblemDocument {
    let dynamics = match &problem.dynamics.drift {
        DriftSpec::Registry { id, coefficients } => DynamicsDoc {
            kind: "registry".into(),
            id: Some(
                serde_json::to_value(id)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_string))
                    .expect("registry id serializes as a string"),
            ),
            coefficients: Some(coefficients.clone()),
            a: None,
            b: None,
            diffusion: problem.dynamics.diffusion.as_ref().map(|DiffusionSpec::Constant { b }| b.clone()),
        },
        DriftSpec::Linear { a, b } => DynamicsDoc {
            kind: "linear".into(),
            id: None,
            coefficients: None,
            a: Some(a.clone()),
            b: Some(b.clone()),
            diffusion: problem.dynamics.diffusion.as_ref().map(|DiffusionSpec::Constant { b }| b.clone()),
        },
    };
    ProblemDocument {
        schema: 1,
        grid: GridDoc {
            t0: problem.grid.t0(),
            tf: problem.grid.tf(),
            n_nodes: None,
            nodes: Some(problem.grid.nodes().to_vec()),
        },
        dynamics,
        cost: CostDoc {
            registry: None,
            lagrange: problem.cost.lagrange.clone(),
            mayer: problem.cost.mayer.clone(),
        },
        constraints: problem.constraints.clone(),
        statics: problem.statics.vars.clone(),
        data: problem.data.clone(),
        boundary: BoundaryDoc {
            initial: Some(problem.boundary.initial.clone()),
            terminal: Some(problem.boundary.terminal.clone()),
        },
        uncertainty: problem
            .bindings
            .iter()
            .map(|b| UncertaintyBlock {
                target: None,
                targets: Some(b.targets.clone()),
                stochastic: b.stochastic.clone().map(OneOrMany::Many),
                crisp: b.crisp.clone(),
                fuzzy: b.fuzzy.clone().map(OneOrMany::Many),
            })
            .collect(),
        formulation,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MINIMAL_DI: &str = r#"{
        "schema": 1,
        "grid": {"t0": 0.0, "tf": 1.0, "n_nodes": 11},
        "dynamics": {"kind": "registry", "id": "double_integrator"},
        "cost": {"registry": "min_energy"},
        "boundary": {"initial": [0.0, 0.0], "terminal": [1.0, 0.0]}
    }"#;

    #[test]
    fn minimal_document_builds() {
        let doc = ProblemDocument::from_json(MINIMAL_DI).unwrap();
        let p = build_problem(&doc).unwrap();
        assert_eq!(p.n_states(), 2);
        assert_eq!(p.n_controls(), 1);
        assert_eq!(p.grid.n_nodes(), 11);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        // A is 2x2 and B is 2x2 while the registry-free state is 2, control
        // 2; bind boundary of length 3 to force the dimension error
        let text = r#"{
            "schema": 1,
            "grid": {"t0": 0.0, "tf": 1.0, "n_nodes": 5},
            "dynamics": {"kind": "linear", "a": [[0.0, 1.0], [0.0, 0.0]], "b": [[0.0], [1.0], [2.0]]},
            "cost": {"registry": "min_energy"}
        }"#;
        let doc = ProblemDocument::from_json(text).unwrap();
        let err = build_problem(&doc).unwrap_err();
        assert!(err.to_string().contains("B has 3 rows"), "{err}");
    }

    #[test]
    fn unknown_binding_target_rejected() {
        let text = r#"{
            "schema": 1,
            "grid": {"t0": 0.0, "tf": 1.0, "n_nodes": 5},
            "dynamics": {"kind": "registry", "id": "double_integrator"},
            "cost": {"registry": "min_energy"},
            "uncertainty": [
                {"target": {"type": "static", "name": "mass2"},
                 "stochastic": {"kind": "gaussian", "mu": 0.0, "sigma": 1.0}}
            ]
        }"#;
        let doc = ProblemDocument::from_json(text).unwrap();
        let err = build_problem(&doc).unwrap_err();
        assert!(matches!(err, ModelError::UnknownName(ref n) if n == "mass2"), "{err}");
    }

    #[test]
    fn duplicate_binding_target_rejected() {
        let text = r#"{
            "schema": 1,
            "grid": {"t0": 0.0, "tf": 1.0, "n_nodes": 5},
            "dynamics": {"kind": "registry", "id": "double_integrator"},
            "cost": {"registry": "min_energy"},
            "data": {"constants": {"vmax": 1.5}},
            "uncertainty": [
                {"target": {"type": "data", "name": "vmax"},
                 "stochastic": {"kind": "gaussian", "mu": 0.0, "sigma": 1.0}},
                {"target": {"type": "data", "name": "vmax"},
                 "stochastic": {"kind": "uniform", "lo": -1.0, "hi": 1.0}}
            ]
        }"#;
        let doc = ProblemDocument::from_json(text).unwrap();
        assert!(matches!(build_problem(&doc), Err(ModelError::DuplicateBinding(_))));
    }

    #[test]
    fn unknown_fields_rejected_with_location() {
        let text = r#"{
            "schema": 1,
            "grid": {"t0": 0.0, "tf": 1.0, "n_nodes": 5, "resolution": 3},
            "dynamics": {"kind": "registry", "id": "double_integrator"},
            "cost": {"registry": "min_energy"}
        }"#;
        let err = ProblemDocument::from_json(text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("resolution") && msg.contains("line"), "{msg}");
    }

    #[test]
    fn unknown_registry_id_rejected() {
        let text = r#"{
            "schema": 1,
            "grid": {"t0": 0.0, "tf": 1.0, "n_nodes": 5},
            "dynamics": {"kind": "registry", "id": "triple_integrator"},
            "cost": {"registry": "min_energy"}
        }"#;
        let doc = ProblemDocument::from_json(text).unwrap();
        assert!(matches!(build_problem(&doc), Err(ModelError::UnknownRegistryId(_))));
    }

    #[test]
    fn build_serialize_build_is_idempotent() {
        let text = r#"{
            "schema": 1,
            "grid": {"t0": 0.0, "tf": 1.0, "n_nodes": 7},
            "dynamics": {"kind": "registry", "id": "scalar_linear",
                         "coefficients": {"a": -1.0, "b": {"var": "gain"}}},
            "cost": {"lagrange": {"r_control": [[1.0]]},
                     "mayer": {"terminal_quad": [[2.0]], "terminal_ref": [0.5]}},
            "constraints": {
                "inequalities": [
                    {"name": "cap", "state_lin": [1.0], "data_lin": {"xmax": -1.0}}
                ],
                "type2_equalities": [
                    {"name": "trim", "applies": "static", "target": 1.0, "tolerance": 0.05,
                     "statics_lin": {"gain": 1.0}}
                ]
            },
            "statics": [{"name": "gain", "lower": 0.0, "upper": 4.0, "role": "control_gain"}],
            "data": {"constants": {"xmax": 2.0}},
            "boundary": {"initial": [1.0]},
            "uncertainty": [
                {"target": {"type": "data", "name": "xmax"},
                 "stochastic": {"kind": "gaussian", "mu": 0.0, "sigma": 0.1},
                 "crisp": {"kind": "box", "center": [0.0], "halfwidth": [0.3]},
                 "fuzzy": {"kind": "triangular", "a": -0.3, "b": 0.0, "c": 0.3}}
            ]
        }"#;
        let doc = ProblemDocument::from_json(text).unwrap();
        let p1 = build_problem(&doc).unwrap();
        let doc2 = problem_to_document(&p1, None);
        let p2 = build_problem(&ProblemDocument::from_json(&doc2.to_json()).unwrap()).unwrap();
        assert_eq!(p1, p2);
    }
}
