//! Dynamics declarations: linear state-space matrices or a closed registry
//! of named models with named coefficients. Coefficients may reference a
//! static variable or data constant by name, which is how plant parameters
//! enter the dynamics for co-design problems.

use super::ModelError;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Scalar coefficient: a literal or a by-name reference resolved against
/// statics first, then data constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coef {
    Value(f64),
    Var { var: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegistryId {
    DoubleIntegrator,
    ScalarLinear,
    Pendulum,
}

impl RegistryId {
    pub fn parse(id: &str) -> Result<Self, ModelError> {
        match id {
            "double_integrator" => Ok(Self::DoubleIntegrator),
            "scalar_linear" => Ok(Self::ScalarLinear),
            "pendulum" => Ok(Self::Pendulum),
            other => Err(ModelError::UnknownRegistryId(other.to_string())),
        }
    }

    pub fn n_states(&self) -> usize {
        match self {
            Self::DoubleIntegrator | Self::Pendulum => 2,
            Self::ScalarLinear => 1,
        }
    }

    pub fn n_controls(&self) -> usize {
        1
    }

    pub fn state_names(&self) -> Vec<String> {
        match self {
            Self::DoubleIntegrator => vec!["pos".into(), "vel".into()],
            Self::ScalarLinear => vec!["x".into()],
            Self::Pendulum => vec!["theta".into(), "omega".into()],
        }
    }

    pub fn control_names(&self) -> Vec<String> {
        vec!["u".into()]
    }

    /// Coefficient names consumed by the model, with defaults where a
    /// conventional value exists.
    pub fn coefficient_names(&self) -> &'static [(&'static str, Option<f64>)] {
        match self {
            Self::DoubleIntegrator => &[],
            Self::ScalarLinear => &[("a", None), ("b", None)],
            Self::Pendulum => &[
                ("gravity", Some(9.81)),
                ("length", None),
                ("mass", None),
                ("damping", Some(0.0)),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DriftSpec {
    Linear { a: Vec<Vec<f64>>, b: Vec<Vec<f64>> },
    Registry { id: RegistryId, #[serde(default)] coefficients: BTreeMap<String, Coef> },
}

/// Diffusion term of the stochastic model; `None` means deterministic
/// dynamics. Only state-independent (constant matrix) diffusion is modeled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DiffusionSpec {
    Constant { b: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsSpec {
    pub drift: DriftSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diffusion: Option<DiffusionSpec>,
}

impl DynamicsSpec {
    pub fn n_states(&self) -> usize {
        match &self.drift {
            DriftSpec::Linear { a, .. } => a.len(),
            DriftSpec::Registry { id, .. } => id.n_states(),
        }
    }

    pub fn n_controls(&self) -> usize {
        match &self.drift {
            DriftSpec::Linear { b, .. } => b.first().map_or(0, Vec::len),
            DriftSpec::Registry { id, .. } => id.n_controls(),
        }
    }

    pub fn state_names(&self) -> Vec<String> {
        match &self.drift {
            DriftSpec::Linear { a, .. } => (0..a.len()).map(|i| format!("x{i}")).collect(),
            DriftSpec::Registry { id, .. } => id.state_names(),
        }
    }

    pub fn control_names(&self) -> Vec<String> {
        match &self.drift {
            DriftSpec::Linear { b, .. } => {
                (0..b.first().map_or(0, Vec::len)).map(|i| format!("u{i}")).collect()
            }
            DriftSpec::Registry { id, .. } => id.control_names(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match &self.drift {
            DriftSpec::Linear { a, b } => {
                let n_s = a.len();
                if n_s == 0 || a.iter().any(|row| row.len() != n_s) {
                    return Err(ModelError::Invalid("A must be square and nonempty".into()));
                }
                if b.len() != n_s {
                    return Err(ModelError::Invalid(format!(
                        "B has {} rows, expected {} (one per state)",
                        b.len(),
                        n_s
                    )));
                }
                let n_u = b[0].len();
                if n_u == 0 || b.iter().any(|row| row.len() != n_u) {
                    return Err(ModelError::Invalid("B must have uniform, nonzero width".into()));
                }
            }
            DriftSpec::Registry { id, coefficients } => {
                let allowed = id.coefficient_names();
                for name in coefficients.keys() {
                    if !allowed.iter().any(|(n, _)| n == name) {
                        return Err(ModelError::Invalid(format!(
                            "registry model {id:?} does not take coefficient '{name}'"
                        )));
                    }
                }
                for (name, default) in allowed {
                    if default.is_none() && !coefficients.contains_key(*name) {
                        return Err(ModelError::Invalid(format!(
                            "registry model {id:?} requires coefficient '{name}'"
                        )));
                    }
                }
            }
        }
        if let Some(DiffusionSpec::Constant { b }) = &self.diffusion {
            let n_s = self.n_states();
            if b.len() != n_s {
                return Err(ModelError::Invalid(format!(
                    "diffusion has {} rows, state has {}",
                    b.len(),
                    n_s
                )));
            }
            let n_w = b.first().map_or(0, Vec::len);
            if n_w == 0 || b.iter().any(|row| row.len() != n_w) {
                return Err(ModelError::Invalid("diffusion must have uniform, nonzero width".into()));
            }
        }
        Ok(())
    }
}

/// Drift with every coefficient resolved to a literal or static-var index;
/// this is the form evaluated in inner loops.
#[derive(Debug, Clone)]
pub enum ResolvedDrift {
    Linear { a: Vec<Vec<f64>>, b: Vec<Vec<f64>> },
    Registry { id: RegistryId, coefficients: Vec<(&'static str, CoefSlot)> },
}

#[derive(Debug, Clone, Copy)]
pub enum CoefSlot {
    Const(f64),
    Static(usize),
}

impl CoefSlot {
    #[inline]
    pub fn value(&self, statics: &[f64]) -> f64 {
        match self {
            Self::Const(v) => *v,
            Self::Static(i) => statics[*i],
        }
    }
}

impl ResolvedDrift {
    /// Resolves coefficient names. `data_value` must already include any
    /// scenario offset on data constants.
    pub fn resolve(
        spec: &DriftSpec,
        static_index: &dyn Fn(&str) -> Option<usize>,
        data_value: &dyn Fn(&str) -> Option<f64>,
    ) -> Result<Self, ModelError> {
        match spec {
            DriftSpec::Linear { a, b } => Ok(Self::Linear { a: a.clone(), b: b.clone() }),
            DriftSpec::Registry { id, coefficients } => {
                let mut resolved = Vec::new();
                for (name, default) in id.coefficient_names() {
                    let slot = match coefficients.get(*name) {
                        Some(Coef::Value(v)) => CoefSlot::Const(*v),
                        Some(Coef::Var { var }) => {
                            if let Some(idx) = static_index(var) {
                                CoefSlot::Static(idx)
                            } else if let Some(v) = data_value(var) {
                                CoefSlot::Const(v)
                            } else {
                                return Err(ModelError::UnknownName(var.clone()));
                            }
                        }
                        None => CoefSlot::Const(
                            default.expect("validated: missing coefficient has a default"),
                        ),
                    };
                    resolved.push((*name, slot));
                }
                Ok(Self::Registry { id: *id, coefficients: resolved })
            }
        }
    }

    #[inline]
    fn coef(&self, name: &str, statics: &[f64]) -> f64 {
        match self {
            Self::Registry { coefficients, .. } => coefficients
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, slot)| slot.value(statics))
                .expect("coefficient resolved at build time"),
            Self::Linear { .. } => unreachable!("linear drift has no named coefficients"),
        }
    }

    /// Evaluates the drift `f(t, x, u, p)` into `out`. The additive `noise`
    /// models a time-constant per-scenario disturbance on each state channel.
    #[inline]
    pub fn eval(&self, _t: f64, x: &[f64], u: &[f64], statics: &[f64], noise: &[f64], out: &mut [f64]) {
        match self {
            Self::Linear { a, b } => {
                for (i, row) in a.iter().enumerate() {
                    let mut acc = 0.0;
                    for (j, aij) in row.iter().enumerate() {
                        acc += aij * x[j];
                    }
                    for (j, bij) in b[i].iter().enumerate() {
                        acc += bij * u[j];
                    }
                    out[i] = acc;
                }
            }
            Self::Registry { id, .. } => match id {
                RegistryId::DoubleIntegrator => {
                    out[0] = x[1];
                    out[1] = u[0];
                }
                RegistryId::ScalarLinear => {
                    let a = self.coef("a", statics);
                    let b = self.coef("b", statics);
                    out[0] = a * x[0] + b * u[0];
                }
                RegistryId::Pendulum => {
                    let g = self.coef("gravity", statics);
                    let l = self.coef("length", statics);
                    let m = self.coef("mass", statics);
                    let c = self.coef("damping", statics);
                    out[0] = x[1];
                    out[1] = -(g / l) * x[0].sin() - c * x[1] + u[0] / (m * l * l);
                }
            },
        }
        if !noise.is_empty() {
            for (o, w) in out.iter_mut().zip(noise) {
                *o += w;
            }
        }
    }
}

/// First derivatives of the drift at one point.
#[derive(Debug, Clone)]
pub struct DriftJacobians {
    /// `d f_i / d x_j`, row-major `n_s x n_s`.
    pub dx: Vec<Vec<f64>>,
    /// `d f_i / d u_j`, row-major `n_s x n_u`.
    pub du: Vec<Vec<f64>>,
    /// Per referenced static variable: (static index, column `d f / d p`).
    pub dp: Vec<(usize, Vec<f64>)>,
}

impl ResolvedDrift {
    /// Analytic Jacobians; every registry model and the linear form have
    /// closed-form derivatives, which is what makes exact gradients
    /// available throughout the compiled problems.
    pub fn jacobians(&self, _t: f64, x: &[f64], u: &[f64], statics: &[f64]) -> DriftJacobians {
        match self {
            Self::Linear { a, b } => {
                DriftJacobians { dx: a.clone(), du: b.clone(), dp: Vec::new() }
            }
            Self::Registry { id, coefficients } => {
                let coef = |name: &str| self.coef(name, statics);
                let mut jac = match id {
                    RegistryId::DoubleIntegrator => DriftJacobians {
                        dx: vec![vec![0.0, 1.0], vec![0.0, 0.0]],
                        du: vec![vec![0.0], vec![1.0]],
                        dp: Vec::new(),
                    },
                    RegistryId::ScalarLinear => DriftJacobians {
                        dx: vec![vec![coef("a")]],
                        du: vec![vec![coef("b")]],
                        dp: Vec::new(),
                    },
                    RegistryId::Pendulum => {
                        let g = coef("gravity");
                        let l = coef("length");
                        let m = coef("mass");
                        let c = coef("damping");
                        DriftJacobians {
                            dx: vec![vec![0.0, 1.0], vec![-(g / l) * x[0].cos(), -c]],
                            du: vec![vec![0.0], vec![1.0 / (m * l * l)]],
                            dp: Vec::new(),
                        }
                    }
                };
                for (name, slot) in coefficients {
                    let CoefSlot::Static(idx) = slot else { continue };
                    let col = match id {
                        RegistryId::DoubleIntegrator => continue,
                        RegistryId::ScalarLinear => match *name {
                            "a" => vec![x[0]],
                            "b" => vec![u[0]],
                            _ => continue,
                        },
                        RegistryId::Pendulum => {
                            let g = coef("gravity");
                            let l = coef("length");
                            let m = coef("mass");
                            match *name {
                                "gravity" => vec![0.0, -x[0].sin() / l],
                                "length" => vec![
                                    0.0,
                                    (g / (l * l)) * x[0].sin() - 2.0 * u[0] / (m * l * l * l),
                                ],
                                "mass" => vec![0.0, -u[0] / (m * m * l * l)],
                                "damping" => vec![0.0, -x[1]],
                                _ => continue,
                            }
                        }
                    };
                    jac.dp.push((*idx, col));
                }
                jac
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_statics(_: &str) -> Option<usize> {
        None
    }

    fn no_data(_: &str) -> Option<f64> {
        None
    }

    #[test]
    fn registry_dimensions() {
        let spec = DynamicsSpec {
            drift: DriftSpec::Registry {
                id: RegistryId::DoubleIntegrator,
                coefficients: BTreeMap::new(),
            },
            diffusion: None,
        };
        assert_eq!(spec.n_states(), 2);
        assert_eq!(spec.n_controls(), 1);
        assert_eq!(spec.state_names(), vec!["pos", "vel"]);
        spec.validate().unwrap();
    }

    #[test]
    fn missing_required_coefficient_rejected() {
        let spec = DynamicsSpec {
            drift: DriftSpec::Registry {
                id: RegistryId::ScalarLinear,
                coefficients: BTreeMap::from([("a".to_string(), Coef::Value(1.0))]),
            },
            diffusion: None,
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn double_integrator_drift() {
        let spec = DriftSpec::Registry {
            id: RegistryId::DoubleIntegrator,
            coefficients: BTreeMap::new(),
        };
        let drift = ResolvedDrift::resolve(&spec, &no_statics, &no_data).unwrap();
        let mut out = [0.0; 2];
        drift.eval(0.0, &[1.0, 3.0], &[-2.0], &[], &[], &mut out);
        assert_eq!(out, [3.0, -2.0]);
    }

    #[test]
    fn coefficient_var_resolution() {
        let spec = DriftSpec::Registry {
            id: RegistryId::ScalarLinear,
            coefficients: BTreeMap::from([
                ("a".to_string(), Coef::Var { var: "gain".into() }),
                ("b".to_string(), Coef::Value(2.0)),
            ]),
        };
        let statics = |name: &str| (name == "gain").then_some(0);
        let drift = ResolvedDrift::resolve(&spec, &statics, &no_data).unwrap();
        let mut out = [0.0; 1];
        drift.eval(0.0, &[2.0], &[1.0], &[-0.5], &[], &mut out);
        assert_eq!(out, [-1.0 + 2.0]);
    }

    #[test]
    fn noise_offsets_add_to_drift() {
        let spec = DriftSpec::Linear { a: vec![vec![0.0]], b: vec![vec![1.0]] };
        let drift = ResolvedDrift::resolve(&spec, &no_statics, &no_data).unwrap();
        let mut out = [0.0; 1];
        drift.eval(0.0, &[0.0], &[1.0], &[], &[0.25], &mut out);
        assert_eq!(out, [1.25]);
    }

    #[test]
    fn pendulum_jacobians_match_finite_differences() {
        let spec = DriftSpec::Registry {
            id: RegistryId::Pendulum,
            coefficients: BTreeMap::from([
                ("length".to_string(), Coef::Var { var: "l".into() }),
                ("mass".to_string(), Coef::Value(1.5)),
                ("damping".to_string(), Coef::Value(0.2)),
            ]),
        };
        let statics_idx = |name: &str| (name == "l").then_some(0);
        let drift = ResolvedDrift::resolve(&spec, &statics_idx, &no_data).unwrap();
        let x = [0.7, -0.3];
        let u = [0.9];
        let p = [1.2];
        let jac = drift.jacobians(0.0, &x, &u, &p);
        let h = 1e-6;
        let eval = |x: &[f64], u: &[f64], p: &[f64]| {
            let mut out = [0.0; 2];
            drift.eval(0.0, x, u, p, &[], &mut out);
            out
        };
        for j in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let (fp, fm) = (eval(&xp, &u, &p), eval(&xm, &u, &p));
            for i in 0..2 {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                assert!((jac.dx[i][j] - fd).abs() < 1e-6, "dx[{i}][{j}]");
            }
        }
        let (fp, fm) = (eval(&x, &[u[0] + h], &p), eval(&x, &[u[0] - h], &p));
        for i in 0..2 {
            let fd = (fp[i] - fm[i]) / (2.0 * h);
            assert!((jac.du[i][0] - fd).abs() < 1e-6, "du[{i}]");
        }
        let (fp, fm) = (eval(&x, &u, &[p[0] + h]), eval(&x, &u, &[p[0] - h]));
        let (idx, col) = &jac.dp[0];
        assert_eq!(*idx, 0);
        for i in 0..2 {
            let fd = (fp[i] - fm[i]) / (2.0 * h);
            assert!((col[i] - fd).abs() < 1e-5, "dp[{i}]: {} vs {}", col[i], fd);
        }
    }
}
