//! Objective declarations: a quadratic/affine Lagrange integrand plus a
//! quadratic/affine Mayer term on statics and boundary states.

use super::ModelError;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

fn quad_form(q: &[Vec<f64>], x: &[f64], x_ref: Option<&Vec<f64>>) -> f64 {
    let mut acc = 0.0;
    for (i, row) in q.iter().enumerate() {
        let xi = x[i] - x_ref.map_or(0.0, |r| r[i]);
        for (j, qij) in row.iter().enumerate() {
            let xj = x[j] - x_ref.map_or(0.0, |r| r[j]);
            acc += xi * qij * xj;
        }
    }
    acc
}

fn lin_form(l: &[f64], x: &[f64]) -> f64 {
    l.iter().zip(x).map(|(li, xi)| li * xi).sum()
}

fn check_square(m: &[Vec<f64>], n: usize, what: &str) -> Result<(), ModelError> {
    if m.len() != n || m.iter().any(|r| r.len() != n) {
        return Err(ModelError::Invalid(format!("{what} must be {n}x{n}")));
    }
    for i in 0..n {
        for j in 0..n {
            if (m[i][j] - m[j][i]).abs() > 1e-10 {
                return Err(ModelError::Invalid(format!("{what} must be symmetric")));
            }
        }
    }
    Ok(())
}

/// Running-cost integrand
/// `(x - x_ref)' Q (x - x_ref) + q' x + (u - u_ref)' R (u - u_ref) + r' u + c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct LagrangeForm {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_state: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_control: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_lin: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_lin: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_ref: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_ref: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub constant: f64,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

impl LagrangeForm {
    pub fn validate(&self, n_s: usize, n_u: usize) -> Result<(), ModelError> {
        if let Some(q) = &self.q_state {
            check_square(q, n_s, "Q_state")?;
        }
        if let Some(r) = &self.r_control {
            check_square(r, n_u, "R_control")?;
        }
        for (v, n, what) in [
            (&self.state_lin, n_s, "state_lin"),
            (&self.control_lin, n_u, "control_lin"),
            (&self.state_ref, n_s, "state_ref"),
            (&self.control_ref, n_u, "control_ref"),
        ] {
            if let Some(v) = v {
                if v.len() != n {
                    return Err(ModelError::Invalid(format!("{what} must have length {n}")));
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn eval(&self, x: &[f64], u: &[f64]) -> f64 {
        let mut acc = self.constant;
        if let Some(q) = &self.q_state {
            acc += quad_form(q, x, self.state_ref.as_ref());
        }
        if let Some(r) = &self.r_control {
            acc += quad_form(r, u, self.control_ref.as_ref());
        }
        if let Some(l) = &self.state_lin {
            acc += lin_form(l, x);
        }
        if let Some(l) = &self.control_lin {
            acc += lin_form(l, u);
        }
        acc
    }

    pub fn is_trivial(&self) -> bool {
        self == &Self::default()
    }
}

/// Terminal/initial/statics cost
/// `(xf - ref)' Qf (xf - ref) + qf' xf + (x0 terms) + statics terms + c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct MayerForm {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal_quad: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal_lin: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal_ref: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_quad: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_lin: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_ref: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub statics_lin: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub statics_quad: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub constant: f64,
}

impl MayerForm {
    pub fn validate(
        &self,
        n_s: usize,
        static_names: &dyn Fn(&str) -> bool,
    ) -> Result<(), ModelError> {
        if let Some(q) = &self.terminal_quad {
            check_square(q, n_s, "terminal_quad")?;
        }
        if let Some(q) = &self.initial_quad {
            check_square(q, n_s, "initial_quad")?;
        }
        for (v, what) in [
            (&self.terminal_lin, "terminal_lin"),
            (&self.terminal_ref, "terminal_ref"),
            (&self.initial_lin, "initial_lin"),
            (&self.initial_ref, "initial_ref"),
        ] {
            if let Some(v) = v {
                if v.len() != n_s {
                    return Err(ModelError::Invalid(format!("{what} must have length {n_s}")));
                }
            }
        }
        for name in self.statics_lin.keys().chain(self.statics_quad.keys()) {
            if !static_names(name) {
                return Err(ModelError::UnknownName(name.clone()));
            }
        }
        Ok(())
    }

    /// `statics_value` resolves a static-var name to its current value.
    #[inline]
    pub fn eval(&self, x0: &[f64], xf: &[f64], statics_value: &dyn Fn(&str) -> f64) -> f64 {
        let mut acc = self.constant;
        if let Some(q) = &self.terminal_quad {
            acc += quad_form(q, xf, self.terminal_ref.as_ref());
        }
        if let Some(l) = &self.terminal_lin {
            acc += lin_form(l, xf);
        }
        if let Some(q) = &self.initial_quad {
            acc += quad_form(q, x0, self.initial_ref.as_ref());
        }
        if let Some(l) = &self.initial_lin {
            acc += lin_form(l, x0);
        }
        for (name, coef) in &self.statics_lin {
            acc += coef * statics_value(name);
        }
        for (name, coef) in &self.statics_quad {
            let v = statics_value(name);
            acc += coef * v * v;
        }
        acc
    }

    pub fn is_trivial(&self) -> bool {
        self == &Self::default()
    }
}

/// Objective: integral of the Lagrange form plus the Mayer term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct CostSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lagrange: Option<LagrangeForm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mayer: Option<MayerForm>,
}

impl CostSpec {
    /// Pure control-effort objective `integral of u' u`.
    pub fn min_energy(n_u: usize) -> Self {
        let mut r = vec![vec![0.0; n_u]; n_u];
        for (i, row) in r.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        Self {
            lagrange: Some(LagrangeForm { r_control: Some(r), ..Default::default() }),
            mayer: None,
        }
    }

    /// Objective reading off a single static variable (epigraph form).
    pub fn static_value(name: &str) -> Self {
        Self {
            lagrange: None,
            mayer: Some(MayerForm {
                statics_lin: BTreeMap::from([(name.to_string(), 1.0)]),
                ..Default::default()
            }),
        }
    }

    pub fn validate(
        &self,
        n_s: usize,
        n_u: usize,
        static_names: &dyn Fn(&str) -> bool,
    ) -> Result<(), ModelError> {
        if let Some(l) = &self.lagrange {
            l.validate(n_s, n_u)?;
        }
        if let Some(m) = &self.mayer {
            m.validate(n_s, static_names)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn min_energy_integrand() {
        let c = CostSpec::min_energy(1);
        let l = c.lagrange.unwrap();
        assert_eq!(l.eval(&[9.0, 9.0], &[2.0]), 4.0);
    }

    #[test]
    fn mayer_terminal_square() {
        let m = MayerForm { terminal_quad: Some(vec![vec![1.0]]), ..Default::default() };
        assert_eq!(m.eval(&[0.0], &[3.0], &|_| 0.0), 9.0);
    }

    #[test]
    fn asymmetric_weight_rejected() {
        let l = LagrangeForm {
            q_state: Some(vec![vec![1.0, 2.0], vec![0.0, 1.0]]),
            ..Default::default()
        };
        assert!(l.validate(2, 1).is_err());
    }
}
