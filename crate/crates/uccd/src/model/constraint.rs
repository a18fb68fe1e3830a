//! Path and boundary constraint declarations.
//!
//! Inequalities follow the `g <= 0` feasibility convention. Type II
//! equalities are stored pre-relaxed as a pair of inequalities with a user
//! tolerance. Type I equalities (analysis relations beyond the dynamics)
//! keep residual form `h = 0`.

use super::ModelError;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Where along the horizon an expression applies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TimeApplicability {
    #[default]
    All,
    Initial,
    Terminal,
    /// Evaluated once with state/control terms read as zero; for relations
    /// among statics and data only.
    Static,
    Window {
        t_lo: f64,
        t_hi: f64,
    },
}

impl TimeApplicability {
    pub fn applies_at(&self, k: usize, n_nodes: usize, t: f64) -> bool {
        match self {
            Self::All => true,
            Self::Initial => k == 0,
            Self::Terminal => k == n_nodes - 1,
            Self::Static => k == 0,
            Self::Window { t_lo, t_hi } => t >= *t_lo && t <= *t_hi,
        }
    }
}

/// Affine plus diagonal-quadratic expression over states, controls,
/// statics, data constants, and signals:
/// `sum a_i x_i + sum q_i x_i^2 + ... + sum c_name * data(name)
///  + sum s_name * signal(name)(t) + constant`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ConstraintExpr {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub state_lin: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub control_lin: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub state_quad: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub control_quad: Vec<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub statics_lin: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub statics_quad: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub data_lin: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub signal_lin: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub constant: f64,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

impl ConstraintExpr {
    pub fn validate(
        &self,
        n_s: usize,
        n_u: usize,
        has_static: &dyn Fn(&str) -> bool,
        has_constant: &dyn Fn(&str) -> bool,
        has_signal: &dyn Fn(&str) -> bool,
    ) -> Result<(), ModelError> {
        for (v, n, what) in [
            (&self.state_lin, n_s, "state_lin"),
            (&self.state_quad, n_s, "state_quad"),
            (&self.control_lin, n_u, "control_lin"),
            (&self.control_quad, n_u, "control_quad"),
        ] {
            if !v.is_empty() && v.len() != n {
                return Err(ModelError::Invalid(format!("{what} must have length {n}")));
            }
        }
        for name in self.statics_lin.keys().chain(self.statics_quad.keys()) {
            if !has_static(name) {
                return Err(ModelError::UnknownName(name.clone()));
            }
        }
        for name in self.data_lin.keys() {
            if !has_constant(name) {
                return Err(ModelError::UnknownName(name.clone()));
            }
        }
        for name in self.signal_lin.keys() {
            if !has_signal(name) {
                return Err(ModelError::UnknownName(name.clone()));
            }
        }
        Ok(())
    }

    pub fn touches_trajectory(&self) -> bool {
        !(self.state_lin.is_empty()
            && self.state_quad.is_empty()
            && self.control_lin.is_empty()
            && self.control_quad.is_empty()
            && self.signal_lin.is_empty())
    }

    /// Evaluate with resolver closures for statics / data / signal values.
    /// `signal_value` receives the node index.
    #[inline]
    pub fn eval(
        &self,
        x: &[f64],
        u: &[f64],
        statics_value: &dyn Fn(&str) -> f64,
        data_value: &dyn Fn(&str) -> f64,
        signal_value: &dyn Fn(&str, usize) -> f64,
        node: usize,
    ) -> f64 {
        let mut acc = self.constant;
        for (a, xi) in self.state_lin.iter().zip(x) {
            acc += a * xi;
        }
        for (q, xi) in self.state_quad.iter().zip(x) {
            acc += q * xi * xi;
        }
        for (a, ui) in self.control_lin.iter().zip(u) {
            acc += a * ui;
        }
        for (q, ui) in self.control_quad.iter().zip(u) {
            acc += q * ui * ui;
        }
        for (name, coef) in &self.statics_lin {
            acc += coef * statics_value(name);
        }
        for (name, coef) in &self.statics_quad {
            let v = statics_value(name);
            acc += coef * v * v;
        }
        for (name, coef) in &self.data_lin {
            acc += coef * data_value(name);
        }
        for (name, coef) in &self.signal_lin {
            acc += coef * signal_value(name, node);
        }
        acc
    }
}

/// A named inequality `expr <= 0` with time applicability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityDef {
    pub name: String,
    #[serde(default)]
    pub applies: TimeApplicability,
    #[serde(flatten)]
    pub expr: ConstraintExpr,
}

/// A design relation `expr = target` that cannot hold exactly under
/// uncertainty; stored with the tolerance it is relaxed by.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeTwoEquality {
    pub name: String,
    #[serde(default)]
    pub applies: TimeApplicability,
    pub target: f64,
    pub tolerance: f64,
    #[serde(flatten)]
    pub expr: ConstraintExpr,
}

impl TypeTwoEquality {
    /// Relaxation into the inequality pair
    /// `expr - target - tol <= 0` and `target - expr - tol <= 0`.
    pub fn relax(&self) -> [InequalityDef; 2] {
        let mut upper = self.expr.clone();
        upper.constant += -self.target - self.tolerance;
        let mut lower = ConstraintExpr {
            state_lin: self.expr.state_lin.iter().map(|v| -v).collect(),
            control_lin: self.expr.control_lin.iter().map(|v| -v).collect(),
            state_quad: self.expr.state_quad.iter().map(|v| -v).collect(),
            control_quad: self.expr.control_quad.iter().map(|v| -v).collect(),
            statics_lin: self.expr.statics_lin.iter().map(|(k, v)| (k.clone(), -v)).collect(),
            statics_quad: self.expr.statics_quad.iter().map(|(k, v)| (k.clone(), -v)).collect(),
            data_lin: self.expr.data_lin.iter().map(|(k, v)| (k.clone(), -v)).collect(),
            signal_lin: self.expr.signal_lin.iter().map(|(k, v)| (k.clone(), -v)).collect(),
            constant: 0.0,
        };
        lower.constant = -self.expr.constant + self.target - self.tolerance;
        [
            InequalityDef {
                name: format!("{}#upper", self.name),
                applies: self.applies,
                expr: upper,
            },
            InequalityDef {
                name: format!("{}#lower", self.name),
                applies: self.applies,
                expr: lower,
            },
        ]
    }
}

/// An analysis-type equality `expr = 0` that must hold at every
/// parameterized point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeOneEquality {
    pub name: String,
    #[serde(default)]
    pub applies: TimeApplicability,
    #[serde(flatten)]
    pub expr: ConstraintExpr,
}

/// All declared constraints of a problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSpec {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inequalities: Vec<InequalityDef>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub type2_equalities: Vec<TypeTwoEquality>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub type1_equalities: Vec<TypeOneEquality>,
}

impl ConstraintSpec {
    /// Inequalities including the relaxed Type II pairs, in declaration
    /// order (inequalities first, then relaxed pairs).
    pub fn all_inequalities(&self) -> Vec<InequalityDef> {
        let mut out = self.inequalities.clone();
        for t2 in &self.type2_equalities {
            out.extend(t2.relax());
        }
        out
    }

    pub fn validate(
        &self,
        n_s: usize,
        n_u: usize,
        has_static: &dyn Fn(&str) -> bool,
        has_constant: &dyn Fn(&str) -> bool,
        has_signal: &dyn Fn(&str) -> bool,
    ) -> Result<(), ModelError> {
        let mut names: Vec<&str> = self
            .inequalities
            .iter()
            .map(|c| c.name.as_str())
            .chain(self.type2_equalities.iter().map(|c| c.name.as_str()))
            .chain(self.type1_equalities.iter().map(|c| c.name.as_str()))
            .collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(ModelError::Invalid(format!("duplicate constraint name '{}'", w[0])));
        }
        for ineq in &self.inequalities {
            ineq.expr.validate(n_s, n_u, has_static, has_constant, has_signal)?;
        }
        for t2 in &self.type2_equalities {
            if t2.tolerance < 0.0 {
                return Err(ModelError::Invalid(format!(
                    "type II equality '{}' needs a nonnegative tolerance",
                    t2.name
                )));
            }
            t2.expr.validate(n_s, n_u, has_static, has_constant, has_signal)?;
        }
        for t1 in &self.type1_equalities {
            t1.expr.validate(n_s, n_u, has_static, has_constant, has_signal)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn type2_relaxation_arithmetic() {
        // a + b = 2 with tolerance 0.1, evaluated at a + b = 2.05:
        // upper: 2.05 - 2 - 0.1 = -0.05, lower: 2 - 2.05 - 0.1 = -0.15
        let t2 = TypeTwoEquality {
            name: "sum".into(),
            applies: TimeApplicability::Static,
            target: 2.0,
            tolerance: 0.1,
            expr: ConstraintExpr {
                statics_lin: BTreeMap::from([("a".to_string(), 1.0), ("b".to_string(), 1.0)]),
                ..Default::default()
            },
        };
        let [upper, lower] = t2.relax();
        let statics = |name: &str| if name == "a" { 1.0 } else { 1.05 };
        let zero = |_: &str| 0.0;
        let sig = |_: &str, _: usize| 0.0;
        let up = upper.expr.eval(&[], &[], &statics, &zero, &sig, 0);
        let lo = lower.expr.eval(&[], &[], &statics, &zero, &sig, 0);
        assert!((up - -0.05).abs() < 1e-12, "upper {up}");
        assert!((lo - -0.15).abs() < 1e-12, "lower {lo}");
        assert!(up <= 0.0 && lo <= 0.0);
    }

    #[test]
    fn window_applicability() {
        let w = TimeApplicability::Window { t_lo: 0.2, t_hi: 0.6 };
        assert!(!w.applies_at(0, 11, 0.0));
        assert!(w.applies_at(3, 11, 0.3));
        assert!(!w.applies_at(9, 11, 0.9));
        assert!(TimeApplicability::Terminal.applies_at(10, 11, 1.0));
    }
}
