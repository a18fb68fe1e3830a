//! Scenario expansion: the shared machinery behind every compiler.
//!
//! A problem plus a scenario set becomes an [`ExpansionCore`]: scenario
//! contexts with resolved drift and additive offsets, index-resolved
//! constraint expressions with per-scenario bias terms, and cost contexts.
//! Compilers assemble equality/inequality "block programs" over the core;
//! the blocks know both their values and their vector-Jacobian products,
//! so compiled problems carry exact gradients end to end.

use super::{AnnealState, CompileError, ControlStructure, Layout, ScalarFn, VectorFn};
use crate::model::{
    ConstraintExpr, LagrangeForm, MayerForm, ResolvedDrift, ScenarioOffsets, TimeApplicability,
    UccdProblem,
};
use crate::usets::{Provenance, ScenarioSet, ALPHA_FLOOR};
use std::sync::Arc;

/// Numerical floor under which a scenario standard deviation is treated as
/// zero (its gradient contribution is dropped).
const STD_FLOOR: f64 = 1e-12;

/// Where a group of inequality rows comes from: a declared constraint or an
/// epigraph level.
#[derive(Debug, Clone)]
pub(crate) enum IneqSource {
    Expr(usize),
    Epigraph(usize),
}

/// How per-scenario raw values aggregate into emitted inequality rows.
#[derive(Clone)]
pub(crate) enum Agg {
    /// One row per applicable node for the given scenario.
    Scenario(usize),
    /// Rows for a selected scenario subset (possibilistic cuts, vertices).
    Scenarios(Vec<usize>),
    /// Probability-weighted scenario mean per node.
    Mean,
    /// `mean + k * population std` per node.
    MeanStd { k: f64 },
    /// `population std - sigma_a` per node.
    StdCap { sigma_a: f64 },
    /// Smoothed chance indicator `sum_s w_s sigmoid(g_s / tau) - p_f`;
    /// `hard` swaps the sigmoid for the exact indicator.
    Sigmoid { p_f: f64, anneal: AnnealState, hard: bool },
    /// Credibility-weighted expectation per node.
    CredMean { cw: Arc<Vec<f64>> },
}

#[derive(Clone)]
pub(crate) struct IneqBlock {
    pub source: IneqSource,
    pub agg: Agg,
    pub label: String,
}

// ---------------------------------------------------------------------------
// Index-resolved expressions
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub(crate) struct IndexedExpr {
    state_lin: Vec<(usize, f64)>,
    state_quad: Vec<(usize, f64)>,
    control_lin: Vec<(usize, f64)>,
    control_quad: Vec<(usize, f64)>,
    statics_lin: Vec<(usize, f64)>,
    statics_quad: Vec<(usize, f64)>,
    data_lin: Vec<(String, f64)>,
    signal_lin: Vec<(String, f64)>,
    constant: f64,
}

fn index_dense(v: &[f64]) -> Vec<(usize, f64)> {
    v.iter().enumerate().filter(|(_, c)| **c != 0.0).map(|(i, c)| (i, *c)).collect()
}

impl IndexedExpr {
    fn from_expr(expr: &ConstraintExpr, problem: &UccdProblem, strip_trajectory: bool) -> Self {
        let name_to_idx = |map: &std::collections::BTreeMap<String, f64>| {
            map.iter()
                .map(|(name, c)| (problem.statics.index_of(name).expect("validated name"), *c))
                .collect::<Vec<_>>()
        };
        let mut out = Self {
            state_lin: index_dense(&expr.state_lin),
            state_quad: index_dense(&expr.state_quad),
            control_lin: index_dense(&expr.control_lin),
            control_quad: index_dense(&expr.control_quad),
            statics_lin: name_to_idx(&expr.statics_lin),
            statics_quad: name_to_idx(&expr.statics_quad),
            data_lin: expr.data_lin.iter().map(|(k, v)| (k.clone(), *v)).collect(),
            signal_lin: expr.signal_lin.iter().map(|(k, v)| (k.clone(), *v)).collect(),
            constant: expr.constant,
        };
        if strip_trajectory {
            out.state_lin.clear();
            out.state_quad.clear();
            out.control_lin.clear();
            out.control_quad.clear();
        }
        out
    }
}

/// Per-scenario constant part of an expression (data, signals, constant).
#[derive(Debug, Clone)]
enum NodeBias {
    Const(f64),
    PerNode(Vec<f64>),
}

impl NodeBias {
    #[inline]
    fn at(&self, k: usize) -> f64 {
        match self {
            Self::Const(c) => *c,
            Self::PerNode(v) => v[k],
        }
    }
}

// ---------------------------------------------------------------------------
// Cost contexts
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub(crate) struct CostCtx {
    lagrange: Option<LagrangeForm>,
    mayer: Option<MayerForm>,
    mayer_statics_lin: Vec<(usize, f64)>,
    mayer_statics_quad: Vec<(usize, f64)>,
}

impl CostCtx {
    fn new(cost: &crate::model::CostSpec, problem: &UccdProblem) -> Self {
        let (mut lin, mut quad) = (Vec::new(), Vec::new());
        if let Some(m) = &cost.mayer {
            for (name, c) in &m.statics_lin {
                lin.push((problem.statics.index_of(name).expect("validated"), *c));
            }
            for (name, c) in &m.statics_quad {
                quad.push((problem.statics.index_of(name).expect("validated"), *c));
            }
        }
        Self {
            lagrange: cost.lagrange.clone(),
            mayer: cost.mayer.clone(),
            mayer_statics_lin: lin,
            mayer_statics_quad: quad,
        }
    }
}

// ---------------------------------------------------------------------------
// Scenario contexts and the core
// ---------------------------------------------------------------------------

pub(crate) struct ScenCtx {
    pub statics_off: Vec<f64>,
    pub noise: Vec<f64>,
    pub x0_off: Vec<f64>,
    pub drift: ResolvedDrift,
    ineq_bias: Vec<NodeBias>,
    type1_bias: Vec<NodeBias>,
}

pub(crate) struct ExpansionCore {
    pub layout: Layout,
    pub nodes: Vec<f64>,
    steps: Vec<f64>,
    trap_w: Vec<f64>,
    pub scen_weights: Vec<f64>,
    pub per_scen: Vec<ScenCtx>,
    ineq_exprs: Vec<IndexedExpr>,
    pub ineq_names: Vec<String>,
    ineq_nodes: Vec<Vec<usize>>,
    type1_exprs: Vec<IndexedExpr>,
    pub type1_names: Vec<String>,
    type1_nodes: Vec<Vec<usize>>,
    cost_main: CostCtx,
    /// Epigraph levels: (auxiliary static index, retained cost).
    cost_levels: Vec<(usize, CostCtx, String)>,
    pub init_bc: Vec<(usize, f64)>,
    pub term_bc: Vec<(usize, f64)>,
    statics_lower: Vec<f64>,
    statics_upper: Vec<f64>,
}

impl ExpansionCore {
    pub fn n_scen(&self) -> usize {
        self.per_scen.len()
    }

    pub fn epigraph_count(&self) -> usize {
        self.cost_levels.len()
    }

    pub fn epigraph_label(&self, level: usize) -> &str {
        &self.cost_levels[level].2
    }

    #[inline]
    fn p_eff(&self, s: usize, m: usize, x: &[f64]) -> f64 {
        x[self.layout.p_index(m)] + self.per_scen[s].statics_off[m]
    }

    // -- expressions ---------------------------------------------------------

    fn expr_value(&self, exprs: &[IndexedExpr], bias: &dyn Fn(&ScenCtx) -> &[NodeBias], e: usize, s: usize, k: usize, x: &[f64]) -> f64 {
        let expr = &exprs[e];
        let ctx = &self.per_scen[s];
        let mut acc = bias(ctx)[e].at(k);
        for (i, c) in &expr.state_lin {
            acc += c * x[self.layout.xi_index(s, k, *i)];
        }
        for (i, c) in &expr.state_quad {
            let v = x[self.layout.xi_index(s, k, *i)];
            acc += c * v * v;
        }
        for (j, c) in &expr.control_lin {
            acc += c * x[self.layout.u_index(s, k, *j)];
        }
        for (j, c) in &expr.control_quad {
            let v = x[self.layout.u_index(s, k, *j)];
            acc += c * v * v;
        }
        for (m, c) in &expr.statics_lin {
            acc += c * self.p_eff(s, *m, x);
        }
        for (m, c) in &expr.statics_quad {
            let v = self.p_eff(s, *m, x);
            acc += c * v * v;
        }
        acc
    }

    pub fn ineq_value(&self, e: usize, s: usize, node_pos: usize, x: &[f64]) -> f64 {
        let k = self.ineq_nodes[e][node_pos];
        self.expr_value(&self.ineq_exprs, &|c| &c.ineq_bias, e, s, k, x)
    }

    /// Largest inequality magnitude over all rows and scenarios at `x`;
    /// used to scale smoothing temperatures.
    pub fn max_abs_ineq(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for e in 0..self.ineq_exprs.len() {
            for s in 0..self.n_scen() {
                for pos in 0..self.ineq_nodes[e].len() {
                    worst = worst.max(self.ineq_value(e, s, pos, x).abs());
                }
            }
        }
        worst
    }

    pub fn type1_value(&self, e: usize, s: usize, node_pos: usize, x: &[f64]) -> f64 {
        let k = self.type1_nodes[e][node_pos];
        self.expr_value(&self.type1_exprs, &|c| &c.type1_bias, e, s, k, x)
    }

    fn expr_grad(&self, exprs: &[IndexedExpr], e: usize, s: usize, k: usize, x: &[f64], w: f64, grad: &mut [f64]) {
        let expr = &exprs[e];
        for (i, c) in &expr.state_lin {
            grad[self.layout.xi_index(s, k, *i)] += w * c;
        }
        for (i, c) in &expr.state_quad {
            let idx = self.layout.xi_index(s, k, *i);
            grad[idx] += w * 2.0 * c * x[idx];
        }
        for (j, c) in &expr.control_lin {
            grad[self.layout.u_index(s, k, *j)] += w * c;
        }
        for (j, c) in &expr.control_quad {
            let idx = self.layout.u_index(s, k, *j);
            grad[idx] += w * 2.0 * c * x[idx];
        }
        for (m, c) in &expr.statics_lin {
            grad[self.layout.p_index(*m)] += w * c;
        }
        for (m, c) in &expr.statics_quad {
            grad[self.layout.p_index(*m)] += w * 2.0 * c * self.p_eff(s, *m, x);
        }
    }

    pub fn ineq_grad(&self, e: usize, s: usize, node_pos: usize, x: &[f64], w: f64, grad: &mut [f64]) {
        let k = self.ineq_nodes[e][node_pos];
        self.expr_grad(&self.ineq_exprs, e, s, k, x, w, grad);
    }

    pub fn type1_grad(&self, e: usize, s: usize, node_pos: usize, x: &[f64], w: f64, grad: &mut [f64]) {
        let k = self.type1_nodes[e][node_pos];
        self.expr_grad(&self.type1_exprs, e, s, k, x, w, grad);
    }

    // -- costs ---------------------------------------------------------------

    fn cost_value_ctx(&self, ctx: &CostCtx, s: usize, x: &[f64]) -> f64 {
        let lay = &self.layout;
        let mut total = 0.0;
        if let Some(l) = &ctx.lagrange {
            let mut xbuf = vec![0.0; lay.n_s];
            let mut ubuf = vec![0.0; lay.n_u];
            for k in 0..lay.n_nodes {
                for i in 0..lay.n_s {
                    xbuf[i] = x[lay.xi_index(s, k, i)];
                }
                for j in 0..lay.n_u {
                    ubuf[j] = x[lay.u_index(s, k, j)];
                }
                total += self.trap_w[k] * l.eval(&xbuf, &ubuf);
            }
        }
        if let Some(m) = &ctx.mayer {
            let k_last = lay.n_nodes - 1;
            let x0: Vec<f64> = (0..lay.n_s).map(|i| x[lay.xi_index(s, 0, i)]).collect();
            let xf: Vec<f64> = (0..lay.n_s).map(|i| x[lay.xi_index(s, k_last, i)]).collect();
            // statics handled through the index-resolved lists below
            let mut stripped = m.clone();
            stripped.statics_lin.clear();
            stripped.statics_quad.clear();
            total += stripped.eval(&x0, &xf, &|_| 0.0);
            for (idx, c) in &ctx.mayer_statics_lin {
                total += c * self.p_eff(s, *idx, x);
            }
            for (idx, c) in &ctx.mayer_statics_quad {
                let v = self.p_eff(s, *idx, x);
                total += c * v * v;
            }
        }
        total
    }

    fn cost_grad_ctx(&self, ctx: &CostCtx, s: usize, x: &[f64], w: f64, grad: &mut [f64]) {
        let lay = &self.layout;
        if let Some(l) = &ctx.lagrange {
            for k in 0..lay.n_nodes {
                let wk = w * self.trap_w[k];
                if let Some(q) = &l.q_state {
                    for i in 0..lay.n_s {
                        let mut acc = 0.0;
                        for j in 0..lay.n_s {
                            let xj = x[lay.xi_index(s, k, j)]
                                - l.state_ref.as_ref().map_or(0.0, |r| r[j]);
                            acc += 2.0 * q[i][j] * xj;
                        }
                        grad[lay.xi_index(s, k, i)] += wk * acc;
                    }
                }
                if let Some(ql) = &l.state_lin {
                    for i in 0..lay.n_s {
                        grad[lay.xi_index(s, k, i)] += wk * ql[i];
                    }
                }
                if let Some(r) = &l.r_control {
                    for i in 0..lay.n_u {
                        let mut acc = 0.0;
                        for j in 0..lay.n_u {
                            let uj = x[lay.u_index(s, k, j)]
                                - l.control_ref.as_ref().map_or(0.0, |r2| r2[j]);
                            acc += 2.0 * r[i][j] * uj;
                        }
                        grad[lay.u_index(s, k, i)] += wk * acc;
                    }
                }
                if let Some(rl) = &l.control_lin {
                    for j in 0..lay.n_u {
                        grad[lay.u_index(s, k, j)] += wk * rl[j];
                    }
                }
            }
        }
        if let Some(m) = &ctx.mayer {
            let k_last = lay.n_nodes - 1;
            if let Some(q) = &m.terminal_quad {
                for i in 0..lay.n_s {
                    let mut acc = 0.0;
                    for j in 0..lay.n_s {
                        let xj = x[lay.xi_index(s, k_last, j)]
                            - m.terminal_ref.as_ref().map_or(0.0, |r| r[j]);
                        acc += 2.0 * q[i][j] * xj;
                    }
                    grad[lay.xi_index(s, k_last, i)] += w * acc;
                }
            }
            if let Some(lin) = &m.terminal_lin {
                for i in 0..lay.n_s {
                    grad[lay.xi_index(s, k_last, i)] += w * lin[i];
                }
            }
            if let Some(q) = &m.initial_quad {
                for i in 0..lay.n_s {
                    let mut acc = 0.0;
                    for j in 0..lay.n_s {
                        let xj = x[lay.xi_index(s, 0, j)]
                            - m.initial_ref.as_ref().map_or(0.0, |r| r[j]);
                        acc += 2.0 * q[i][j] * xj;
                    }
                    grad[lay.xi_index(s, 0, i)] += w * acc;
                }
            }
            if let Some(lin) = &m.initial_lin {
                for i in 0..lay.n_s {
                    grad[lay.xi_index(s, 0, i)] += w * lin[i];
                }
            }
            for (idx, c) in &ctx.mayer_statics_lin {
                grad[lay.p_index(*idx)] += w * c;
            }
            for (idx, c) in &ctx.mayer_statics_quad {
                grad[lay.p_index(*idx)] += w * 2.0 * c * self.p_eff(s, *idx, x);
            }
        }
    }

    pub fn cost_value(&self, s: usize, x: &[f64]) -> f64 {
        self.cost_value_ctx(&self.cost_main, s, x)
    }

    pub fn cost_grad(&self, s: usize, x: &[f64], w: f64, grad: &mut [f64]) {
        self.cost_grad_ctx(&self.cost_main, s, x, w, grad);
    }

    /// Raw epigraph row `cost_level(s, x) - v`.
    pub fn epigraph_value(&self, level: usize, s: usize, x: &[f64]) -> f64 {
        let (v_idx, ctx, _) = &self.cost_levels[level];
        self.cost_value_ctx(ctx, s, x) - x[self.layout.p_index(*v_idx)]
    }

    pub fn epigraph_grad(&self, level: usize, s: usize, x: &[f64], w: f64, grad: &mut [f64]) {
        let (v_idx, ctx, _) = &self.cost_levels[level];
        self.cost_grad_ctx(ctx, s, x, w, grad);
        grad[self.layout.p_index(*v_idx)] -= w;
    }

    // -- defects -------------------------------------------------------------

    fn drift_table(&self, s: usize, x: &[f64]) -> Vec<f64> {
        let lay = &self.layout;
        let ctx = &self.per_scen[s];
        let mut table = vec![0.0; lay.n_nodes * lay.n_s];
        let mut xbuf = vec![0.0; lay.n_s];
        let mut ubuf = vec![0.0; lay.n_u];
        let mut p = vec![0.0; lay.n_p];
        for m in 0..lay.n_p {
            p[m] = self.p_eff(s, m, x);
        }
        for k in 0..lay.n_nodes {
            for i in 0..lay.n_s {
                xbuf[i] = x[lay.xi_index(s, k, i)];
            }
            for j in 0..lay.n_u {
                ubuf[j] = x[lay.u_index(s, k, j)];
            }
            ctx.drift.eval(
                self.nodes[k],
                &xbuf,
                &ubuf,
                &p,
                &ctx.noise,
                &mut table[k * lay.n_s..(k + 1) * lay.n_s],
            );
        }
        table
    }

    pub fn defects_eval(&self, s: usize, x: &[f64], out: &mut [f64]) {
        let lay = &self.layout;
        let f = self.drift_table(s, x);
        for k in 0..lay.n_nodes - 1 {
            let h = self.steps[k];
            for i in 0..lay.n_s {
                out[k * lay.n_s + i] = x[lay.xi_index(s, k + 1, i)]
                    - x[lay.xi_index(s, k, i)]
                    - 0.5 * h * (f[k * lay.n_s + i] + f[(k + 1) * lay.n_s + i]);
            }
        }
    }

    pub fn defects_vjp(&self, s: usize, x: &[f64], w: &[f64], grad: &mut [f64]) {
        let lay = &self.layout;
        let ctx = &self.per_scen[s];
        let mut p = vec![0.0; lay.n_p];
        for m in 0..lay.n_p {
            p[m] = self.p_eff(s, m, x);
        }
        let mut xbuf = vec![0.0; lay.n_s];
        let mut ubuf = vec![0.0; lay.n_u];
        let jacs: Vec<_> = (0..lay.n_nodes)
            .map(|k| {
                for i in 0..lay.n_s {
                    xbuf[i] = x[lay.xi_index(s, k, i)];
                }
                for j in 0..lay.n_u {
                    ubuf[j] = x[lay.u_index(s, k, j)];
                }
                ctx.drift.jacobians(self.nodes[k], &xbuf, &ubuf, &p)
            })
            .collect();
        for k in 0..lay.n_nodes - 1 {
            let half_h = 0.5 * self.steps[k];
            for i in 0..lay.n_s {
                let wr = w[k * lay.n_s + i];
                if wr == 0.0 {
                    continue;
                }
                grad[lay.xi_index(s, k + 1, i)] += wr;
                grad[lay.xi_index(s, k, i)] -= wr;
                for (node, jac) in [(k, &jacs[k]), (k + 1, &jacs[k + 1])] {
                    for j in 0..lay.n_s {
                        grad[lay.xi_index(s, node, j)] -= wr * half_h * jac.dx[i][j];
                    }
                    for j in 0..lay.n_u {
                        grad[lay.u_index(s, node, j)] -= wr * half_h * jac.du[i][j];
                    }
                    for (p_idx, col) in &jac.dp {
                        grad[lay.p_index(*p_idx)] -= wr * half_h * col[i];
                    }
                }
            }
        }
    }

    // -- bounds and initial guess ---------------------------------------------

    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.layout.n();
        let mut lower = vec![f64::NEG_INFINITY; n];
        let mut upper = vec![f64::INFINITY; n];
        for m in 0..self.layout.n_p {
            lower[self.layout.p_index(m)] = self.statics_lower[m];
            upper[self.layout.p_index(m)] = self.statics_upper[m];
        }
        (lower, upper)
    }

    /// Linear interpolation between boundary states per scenario, zero
    /// controls, statics at bound midpoints.
    pub fn initial_guess(&self) -> Vec<f64> {
        let lay = &self.layout;
        let mut x = vec![0.0; lay.n()];
        for s in 0..lay.state_blocks() {
            let mut start = vec![0.0; lay.n_s];
            let mut end = vec![0.0; lay.n_s];
            for (i, base) in &self.init_bc {
                start[*i] = base + self.per_scen[s].x0_off[*i];
            }
            for (i, base) in &self.term_bc {
                end[*i] = *base;
            }
            // free components interpolate flat from their counterpart
            for i in 0..lay.n_s {
                let has_init = self.init_bc.iter().any(|(j, _)| j == &i);
                let has_term = self.term_bc.iter().any(|(j, _)| j == &i);
                if !has_init && has_term {
                    start[i] = end[i];
                }
                if has_init && !has_term {
                    end[i] = start[i];
                }
            }
            for k in 0..lay.n_nodes {
                let frac = if lay.n_nodes > 1 { k as f64 / (lay.n_nodes - 1) as f64 } else { 0.0 };
                for i in 0..lay.n_s {
                    x[lay.xi_index(s, k, i)] = start[i] + frac * (end[i] - start[i]);
                }
            }
        }
        let mids: Vec<f64> = self
            .statics_lower
            .iter()
            .zip(&self.statics_upper)
            .map(|(lo, hi)| {
                let mid = 0.5 * (lo + hi);
                if mid.is_finite() {
                    mid
                } else if lo.is_finite() {
                    *lo
                } else if hi.is_finite() {
                    *hi
                } else {
                    0.0
                }
            })
            .collect();
        for (m, v) in mids.iter().enumerate() {
            x[self.layout.p_index(m)] = *v;
        }
        x
    }
}

// ---------------------------------------------------------------------------
// Core construction
// ---------------------------------------------------------------------------

/// Builds the expansion core. `weights` are the scenario aggregation
/// weights (probabilities for stochastic sets, credibility quadrature
/// weights for alpha grids); they must sum to one.
pub(crate) fn build_core(
    problem: &UccdProblem,
    scen: &ScenarioSet,
    weights: Vec<f64>,
    structure: ControlStructure,
) -> Result<ExpansionCore, CompileError> {
    let binding_names = problem.binding_names();
    if scen.binding_order != binding_names {
        return Err(CompileError::ScenarioMismatch(format!(
            "scenario columns {:?} vs problem bindings {:?}",
            scen.binding_order, binding_names
        )));
    }
    let n_scen = scen.n_scenarios().max(1);
    if scen.n_scenarios() == 0 {
        return Err(CompileError::ScenarioMismatch("empty scenario set".into()));
    }
    if weights.len() != n_scen {
        return Err(CompileError::ScenarioMismatch("one weight per scenario required".into()));
    }
    let wsum: f64 = weights.iter().sum();
    if (wsum - 1.0).abs() > 1e-9 {
        return Err(CompileError::ScenarioMismatch(format!("weights sum to {wsum}, expected 1")));
    }

    // data-only perturbations under one shared control leave every
    // scenario's state trajectory identical; collapse those state blocks
    let dynamic_refs: Vec<String> = match &problem.dynamics.drift {
        crate::model::DriftSpec::Registry { coefficients, .. } => coefficients
            .values()
            .filter_map(|c| match c {
                crate::model::Coef::Var { var } => Some(var.clone()),
                crate::model::Coef::Value(_) => None,
            })
            .collect(),
        crate::model::DriftSpec::Linear { .. } => Vec::new(),
    };
    let shared_states = structure == ControlStructure::Olsc
        && n_scen > 1
        && problem.bindings.iter().all(|b| {
            b.targets.iter().all(|t| match t {
                crate::model::BindingTarget::Data { name } => !dynamic_refs.contains(name),
                _ => false,
            })
        });
    let layout = Layout {
        structure,
        n_scen,
        n_nodes: problem.grid.n_nodes(),
        n_u: problem.n_controls(),
        n_s: problem.n_states(),
        n_p: problem.n_statics(),
        shared_states,
        state_names: problem.state_names(),
        control_names: problem.control_names(),
        static_names: problem.statics.vars.iter().map(|v| v.name.clone()).collect(),
    };

    let all_ineqs = problem.constraints.all_inequalities();
    let node_list = |applies: TimeApplicability| -> Vec<usize> {
        (0..problem.grid.n_nodes())
            .filter(|k| applies.applies_at(*k, problem.grid.n_nodes(), problem.grid.node(*k)))
            .collect()
    };

    let ineq_exprs: Vec<IndexedExpr> = all_ineqs
        .iter()
        .map(|d| {
            IndexedExpr::from_expr(&d.expr, problem, matches!(d.applies, TimeApplicability::Static))
        })
        .collect();
    let ineq_names: Vec<String> = all_ineqs.iter().map(|d| d.name.clone()).collect();
    let ineq_nodes: Vec<Vec<usize>> = all_ineqs.iter().map(|d| node_list(d.applies)).collect();

    let type1_exprs: Vec<IndexedExpr> = problem
        .constraints
        .type1_equalities
        .iter()
        .map(|d| {
            IndexedExpr::from_expr(&d.expr, problem, matches!(d.applies, TimeApplicability::Static))
        })
        .collect();
    let type1_names: Vec<String> =
        problem.constraints.type1_equalities.iter().map(|d| d.name.clone()).collect();
    let type1_nodes: Vec<Vec<usize>> =
        problem.constraints.type1_equalities.iter().map(|d| node_list(d.applies)).collect();

    // per-scenario contexts
    let mut per_scen = Vec::with_capacity(n_scen);
    for s in 0..n_scen {
        let offsets = problem.scenario_offsets(scen.scenario(s));
        per_scen.push(build_scen_ctx(problem, offsets, &ineq_exprs, &ineq_nodes, &type1_exprs)?);
    }

    let cost_main = CostCtx::new(&problem.cost, problem);
    let cost_levels = problem
        .epigraph_levels
        .iter()
        .map(|level| {
            (
                problem.statics.index_of(&level.var).expect("validated epigraph var"),
                CostCtx::new(&level.cost, problem),
                format!("epigraph:{}", level.var),
            )
        })
        .collect();

    let init_bc: Vec<(usize, f64)> = (0..layout.n_s)
        .filter_map(|i| problem.boundary.initial_component(i).map(|v| (i, v)))
        .collect();
    let term_bc: Vec<(usize, f64)> = (0..layout.n_s)
        .filter_map(|i| problem.boundary.terminal_component(i).map(|v| (i, v)))
        .collect();

    let trap_w = {
        let g = &problem.grid;
        let mut w = vec![0.0; g.n_nodes()];
        for k in 0..g.n_intervals() {
            let h = g.step(k);
            w[k] += 0.5 * h;
            w[k + 1] += 0.5 * h;
        }
        w
    };

    Ok(ExpansionCore {
        layout,
        nodes: problem.grid.nodes().to_vec(),
        steps: (0..problem.grid.n_intervals()).map(|k| problem.grid.step(k)).collect(),
        trap_w,
        scen_weights: weights,
        per_scen,
        ineq_exprs,
        ineq_names,
        ineq_nodes,
        type1_exprs,
        type1_names,
        type1_nodes,
        cost_main,
        cost_levels,
        init_bc,
        term_bc,
        statics_lower: problem.statics.vars.iter().map(|v| v.lower).collect(),
        statics_upper: problem.statics.vars.iter().map(|v| v.upper).collect(),
    })
}

fn build_scen_ctx(
    problem: &UccdProblem,
    offsets: ScenarioOffsets,
    ineq_exprs: &[IndexedExpr],
    ineq_nodes: &[Vec<usize>],
    type1_exprs: &[IndexedExpr],
) -> Result<ScenCtx, CompileError> {
    let data_value = |name: &str| -> Option<f64> {
        problem
            .data
            .constants
            .get(name)
            .map(|v| v + offsets.data_constants.get(name).copied().unwrap_or(0.0))
    };
    let static_index = |name: &str| problem.statics.index_of(name);
    let drift = ResolvedDrift::resolve(&problem.dynamics.drift, &static_index, &data_value)?;

    let bias_for = |expr: &IndexedExpr| -> NodeBias {
        let mut base = expr.constant;
        for (name, c) in &expr.data_lin {
            base += c * data_value(name).expect("validated data name");
        }
        if expr.signal_lin.is_empty() {
            NodeBias::Const(base)
        } else {
            let n = problem.grid.n_nodes();
            let mut per = vec![base; n];
            for (name, c) in &expr.signal_lin {
                let series = &problem.data.signals[name];
                let off = offsets.signals.get(name).copied().unwrap_or(0.0);
                for k in 0..n {
                    per[k] += c * (series[k] + off);
                }
            }
            NodeBias::PerNode(per)
        }
    };
    let _ = ineq_nodes;
    Ok(ScenCtx {
        statics_off: offsets.statics.clone(),
        noise: offsets.noise.clone(),
        x0_off: offsets.initial_state.clone(),
        drift,
        ineq_bias: ineq_exprs.iter().map(bias_for).collect(),
        type1_bias: type1_exprs.iter().map(bias_for).collect(),
    })
}

// ---------------------------------------------------------------------------
// Equality program
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub(crate) enum EqBlock {
    Defects(usize),
    InitialBc(usize),
    TerminalBcScen(usize),
    TerminalMean,
    Type1 { expr: usize, scen: usize },
}

impl EqBlock {
    fn len(&self, core: &ExpansionCore) -> usize {
        match self {
            Self::Defects(_) => (core.layout.n_nodes - 1) * core.layout.n_s,
            Self::InitialBc(_) => core.init_bc.len(),
            Self::TerminalBcScen(_) | Self::TerminalMean => core.term_bc.len(),
            Self::Type1 { expr, .. } => core.type1_nodes[*expr].len(),
        }
    }

    fn label(&self, core: &ExpansionCore) -> String {
        match self {
            Self::Defects(s) => format!("defects_s{s}"),
            Self::InitialBc(s) => format!("initial_bc_s{s}"),
            Self::TerminalBcScen(s) => format!("terminal_bc_s{s}"),
            Self::TerminalMean => "terminal_bc_mean".to_string(),
            Self::Type1 { expr, scen } => format!("{}_s{scen}", core.type1_names[*expr]),
        }
    }

    fn eval(&self, core: &ExpansionCore, x: &[f64], out: &mut [f64]) {
        let lay = &core.layout;
        match self {
            Self::Defects(s) => core.defects_eval(*s, x, out),
            Self::InitialBc(s) => {
                for (r, (i, base)) in core.init_bc.iter().enumerate() {
                    out[r] = x[lay.xi_index(*s, 0, *i)] - (base + core.per_scen[*s].x0_off[*i]);
                }
            }
            Self::TerminalBcScen(s) => {
                for (r, (i, base)) in core.term_bc.iter().enumerate() {
                    out[r] = x[lay.xi_index(*s, lay.n_nodes - 1, *i)] - base;
                }
            }
            Self::TerminalMean => {
                for (r, (i, base)) in core.term_bc.iter().enumerate() {
                    let mean: f64 = (0..core.n_scen())
                        .map(|s| core.scen_weights[s] * x[lay.xi_index(s, lay.n_nodes - 1, *i)])
                        .sum();
                    out[r] = mean - base;
                }
            }
            Self::Type1 { expr, scen } => {
                for (r, slot) in out.iter_mut().enumerate() {
                    *slot = core.type1_value(*expr, *scen, r, x);
                }
            }
        }
    }

    fn vjp(&self, core: &ExpansionCore, x: &[f64], w: &[f64], grad: &mut [f64]) {
        let lay = &core.layout;
        match self {
            Self::Defects(s) => core.defects_vjp(*s, x, w, grad),
            Self::InitialBc(s) => {
                for (r, (i, _)) in core.init_bc.iter().enumerate() {
                    grad[lay.xi_index(*s, 0, *i)] += w[r];
                }
            }
            Self::TerminalBcScen(s) => {
                for (r, (i, _)) in core.term_bc.iter().enumerate() {
                    grad[lay.xi_index(*s, lay.n_nodes - 1, *i)] += w[r];
                }
            }
            Self::TerminalMean => {
                for (r, (i, _)) in core.term_bc.iter().enumerate() {
                    for s in 0..core.n_scen() {
                        grad[lay.xi_index(s, lay.n_nodes - 1, *i)] +=
                            w[r] * core.scen_weights[s];
                    }
                }
            }
            Self::Type1 { expr, scen } => {
                for (r, wr) in w.iter().enumerate() {
                    if *wr != 0.0 {
                        core.type1_grad(*expr, *scen, r, x, *wr, grad);
                    }
                }
            }
        }
    }
}

pub(crate) fn standard_eq_blocks(core: &ExpansionCore) -> Vec<EqBlock> {
    let mut blocks = Vec::new();
    let state_blocks = core.layout.state_blocks();
    for s in 0..state_blocks {
        blocks.push(EqBlock::Defects(s));
    }
    if !core.init_bc.is_empty() {
        for s in 0..state_blocks {
            blocks.push(EqBlock::InitialBc(s));
        }
    }
    if !core.term_bc.is_empty() {
        if core.layout.shared_states {
            blocks.push(EqBlock::TerminalBcScen(0));
        } else {
            match (core.layout.structure, core.n_scen()) {
                (ControlStructure::Olmc, _) | (ControlStructure::Olsc, 1) => {
                    for s in 0..core.n_scen() {
                        blocks.push(EqBlock::TerminalBcScen(s));
                    }
                }
                (ControlStructure::Olsc, _) => blocks.push(EqBlock::TerminalMean),
            }
        }
    }
    for e in 0..core.type1_names.len() {
        for s in 0..core.n_scen() {
            blocks.push(EqBlock::Type1 { expr: e, scen: s });
        }
    }
    blocks
}

pub(crate) fn build_eq_fn(
    core: Arc<ExpansionCore>,
    blocks: Vec<EqBlock>,
) -> (VectorFn, Vec<(String, usize)>) {
    let groups: Vec<(String, usize)> =
        blocks.iter().map(|b| (b.label(&core), b.len(&core))).collect();
    let total: usize = groups.iter().map(|(_, n)| n).sum();
    let offsets: Vec<usize> = groups
        .iter()
        .scan(0usize, |acc, (_, n)| {
            let off = *acc;
            *acc += n;
            Some(off)
        })
        .collect();
    let lens: Vec<usize> = groups.iter().map(|(_, n)| *n).collect();

    let eval = {
        let core = Arc::clone(&core);
        let blocks = blocks.clone();
        let offsets = offsets.clone();
        let lens = lens.clone();
        move |x: &[f64], out: &mut [f64]| {
            let parts = crate::par::map_range(blocks.len(), |b| {
                let mut buf = vec![0.0; lens[b]];
                blocks[b].eval(&core, x, &mut buf);
                buf
            });
            for (b, part) in parts.iter().enumerate() {
                out[offsets[b]..offsets[b] + lens[b]].copy_from_slice(part);
            }
        }
    };
    let vjp = {
        let core = Arc::clone(&core);
        let blocks = blocks.clone();
        move |x: &[f64], w: &[f64], grad: &mut [f64]| {
            for (b, block) in blocks.iter().enumerate() {
                block.vjp(&core, x, &w[offsets[b]..offsets[b] + lens[b]], grad);
            }
        }
    };
    (
        VectorFn { len: total, eval: Box::new(eval), vjp: Some(Box::new(vjp)) },
        groups,
    )
}

// ---------------------------------------------------------------------------
// Inequality program
// ---------------------------------------------------------------------------

impl IneqSource {
    fn node_count(&self, core: &ExpansionCore) -> usize {
        match self {
            Self::Expr(e) => core.ineq_nodes[*e].len(),
            Self::Epigraph(_) => 1,
        }
    }

    #[inline]
    fn raw(&self, core: &ExpansionCore, s: usize, pos: usize, x: &[f64]) -> f64 {
        match self {
            Self::Expr(e) => core.ineq_value(*e, s, pos, x),
            Self::Epigraph(l) => core.epigraph_value(*l, s, x),
        }
    }

    #[inline]
    fn raw_grad(&self, core: &ExpansionCore, s: usize, pos: usize, x: &[f64], w: f64, grad: &mut [f64]) {
        match self {
            Self::Expr(e) => core.ineq_grad(*e, s, pos, x, w, grad),
            Self::Epigraph(l) => core.epigraph_grad(*l, s, x, w, grad),
        }
    }
}

impl IneqBlock {
    fn len(&self, core: &ExpansionCore) -> usize {
        let nodes = self.source.node_count(core);
        match &self.agg {
            Agg::Scenario(_) => nodes,
            Agg::Scenarios(sel) => sel.len() * nodes,
            _ => nodes,
        }
    }

    fn eval(&self, core: &ExpansionCore, x: &[f64], out: &mut [f64]) {
        let nodes = self.source.node_count(core);
        match &self.agg {
            Agg::Scenario(s) => {
                for (pos, slot) in out.iter_mut().enumerate() {
                    *slot = self.source.raw(core, *s, pos, x);
                }
            }
            Agg::Scenarios(sel) => {
                for (r, s) in sel.iter().enumerate() {
                    for pos in 0..nodes {
                        out[r * nodes + pos] = self.source.raw(core, *s, pos, x);
                    }
                }
            }
            Agg::Mean => {
                for (pos, slot) in out.iter_mut().enumerate() {
                    *slot = (0..core.n_scen())
                        .map(|s| core.scen_weights[s] * self.source.raw(core, s, pos, x))
                        .sum();
                }
            }
            Agg::CredMean { cw } => {
                for (pos, slot) in out.iter_mut().enumerate() {
                    *slot = (0..core.n_scen())
                        .map(|s| cw[s] * self.source.raw(core, s, pos, x))
                        .sum();
                }
            }
            Agg::MeanStd { k } => {
                for (pos, slot) in out.iter_mut().enumerate() {
                    let (mean, std) = self.mean_std(core, pos, x);
                    *slot = mean + k * std;
                }
            }
            Agg::StdCap { sigma_a } => {
                for (pos, slot) in out.iter_mut().enumerate() {
                    let (_, std) = self.mean_std(core, pos, x);
                    *slot = std - sigma_a;
                }
            }
            Agg::Sigmoid { p_f, anneal, hard } => {
                let tau = anneal.tau();
                for (pos, slot) in out.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for s in 0..core.n_scen() {
                        let g = self.source.raw(core, s, pos, x);
                        acc += core.scen_weights[s]
                            * if *hard {
                                if g >= 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            } else {
                                sigmoid(g / tau)
                            };
                    }
                    *slot = acc - p_f;
                }
            }
        }
    }

    fn mean_std(&self, core: &ExpansionCore, pos: usize, x: &[f64]) -> (f64, f64) {
        let mut mean = 0.0;
        let mut second = 0.0;
        for s in 0..core.n_scen() {
            let g = self.source.raw(core, s, pos, x);
            mean += core.scen_weights[s] * g;
            second += core.scen_weights[s] * g * g;
        }
        (mean, (second - mean * mean).max(0.0).sqrt())
    }

    fn vjp(&self, core: &ExpansionCore, x: &[f64], w: &[f64], grad: &mut [f64]) {
        let nodes = self.source.node_count(core);
        match &self.agg {
            Agg::Scenario(s) => {
                for (pos, wr) in w.iter().enumerate() {
                    if *wr != 0.0 {
                        self.source.raw_grad(core, *s, pos, x, *wr, grad);
                    }
                }
            }
            Agg::Scenarios(sel) => {
                for (r, s) in sel.iter().enumerate() {
                    for pos in 0..nodes {
                        let wr = w[r * nodes + pos];
                        if wr != 0.0 {
                            self.source.raw_grad(core, *s, pos, x, wr, grad);
                        }
                    }
                }
            }
            Agg::Mean => {
                for (pos, wr) in w.iter().enumerate() {
                    if *wr == 0.0 {
                        continue;
                    }
                    for s in 0..core.n_scen() {
                        self.source.raw_grad(core, s, pos, x, wr * core.scen_weights[s], grad);
                    }
                }
            }
            Agg::CredMean { cw } => {
                for (pos, wr) in w.iter().enumerate() {
                    if *wr == 0.0 {
                        continue;
                    }
                    for s in 0..core.n_scen() {
                        if cw[s] != 0.0 {
                            self.source.raw_grad(core, s, pos, x, wr * cw[s], grad);
                        }
                    }
                }
            }
            Agg::MeanStd { k } => {
                for (pos, wr) in w.iter().enumerate() {
                    if *wr == 0.0 {
                        continue;
                    }
                    let (mean, std) = self.mean_std(core, pos, x);
                    for s in 0..core.n_scen() {
                        let ws = core.scen_weights[s];
                        let g = self.source.raw(core, s, pos, x);
                        let mut coef = ws;
                        if std > STD_FLOOR {
                            coef += k * ws * (g - mean) / std;
                        }
                        self.source.raw_grad(core, s, pos, x, wr * coef, grad);
                    }
                }
            }
            Agg::StdCap { .. } => {
                for (pos, wr) in w.iter().enumerate() {
                    if *wr == 0.0 {
                        continue;
                    }
                    let (mean, std) = self.mean_std(core, pos, x);
                    if std <= STD_FLOOR {
                        continue;
                    }
                    for s in 0..core.n_scen() {
                        let ws = core.scen_weights[s];
                        let g = self.source.raw(core, s, pos, x);
                        let coef = ws * (g - mean) / std;
                        self.source.raw_grad(core, s, pos, x, wr * coef, grad);
                    }
                }
            }
            Agg::Sigmoid { anneal, hard, .. } => {
                if *hard {
                    return; // indicator has no useful gradient
                }
                let tau = anneal.tau();
                for (pos, wr) in w.iter().enumerate() {
                    if *wr == 0.0 {
                        continue;
                    }
                    for s in 0..core.n_scen() {
                        let g = self.source.raw(core, s, pos, x);
                        let sig = sigmoid(g / tau);
                        let coef = core.scen_weights[s] * sig * (1.0 - sig) / tau;
                        self.source.raw_grad(core, s, pos, x, wr * coef, grad);
                    }
                }
            }
        }
    }
}

#[inline]
fn sigmoid(y: f64) -> f64 {
    1.0 / (1.0 + (-y).exp())
}

pub(crate) fn build_ineq_fn(
    core: Arc<ExpansionCore>,
    blocks: Vec<IneqBlock>,
) -> (VectorFn, Vec<(String, usize)>) {
    let groups: Vec<(String, usize)> =
        blocks.iter().map(|b| (b.label.clone(), b.len(&core))).collect();
    let total: usize = groups.iter().map(|(_, n)| n).sum();
    let offsets: Vec<usize> = groups
        .iter()
        .scan(0usize, |acc, (_, n)| {
            let off = *acc;
            *acc += n;
            Some(off)
        })
        .collect();
    let lens: Vec<usize> = groups.iter().map(|(_, n)| *n).collect();

    let eval = {
        let core = Arc::clone(&core);
        let blocks = blocks.clone();
        let offsets = offsets.clone();
        let lens = lens.clone();
        move |x: &[f64], out: &mut [f64]| {
            let parts = crate::par::map_range(blocks.len(), |b| {
                let mut buf = vec![0.0; lens[b]];
                blocks[b].eval(&core, x, &mut buf);
                buf
            });
            for (b, part) in parts.iter().enumerate() {
                out[offsets[b]..offsets[b] + lens[b]].copy_from_slice(part);
            }
        }
    };
    let vjp = {
        let core = Arc::clone(&core);
        let blocks = blocks.clone();
        move |x: &[f64], w: &[f64], grad: &mut [f64]| {
            for (b, block) in blocks.iter().enumerate() {
                block.vjp(&core, x, &w[offsets[b]..offsets[b] + lens[b]], grad);
            }
        }
    };
    (
        VectorFn { len: total, eval: Box::new(eval), vjp: Some(Box::new(vjp)) },
        groups,
    )
}

// ---------------------------------------------------------------------------
// Objective
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub(crate) enum ObjKind {
    /// Probability-weighted mean of per-scenario objectives.
    Mean,
    /// `alpha_w * mean + (1 - alpha_w) * population std`.
    WeightedMeanStd { alpha_w: f64 },
    /// Credibility-weighted expectation (fuzzy formulations).
    CredMean { cw: Arc<Vec<f64>> },
}

pub(crate) fn build_objective(core: Arc<ExpansionCore>, kind: ObjKind) -> ScalarFn {
    let eval = {
        let core = Arc::clone(&core);
        let kind = kind.clone();
        move |x: &[f64]| -> f64 {
            let costs = crate::par::map_range(core.n_scen(), |s| core.cost_value(s, x));
            match &kind {
                ObjKind::Mean => {
                    costs.iter().zip(&core.scen_weights).map(|(c, w)| c * w).sum()
                }
                ObjKind::CredMean { cw } => costs.iter().zip(cw.iter()).map(|(c, w)| c * w).sum(),
                ObjKind::WeightedMeanStd { alpha_w } => {
                    let mean: f64 =
                        costs.iter().zip(&core.scen_weights).map(|(c, w)| c * w).sum();
                    let second: f64 =
                        costs.iter().zip(&core.scen_weights).map(|(c, w)| c * c * w).sum();
                    let std = (second - mean * mean).max(0.0).sqrt();
                    alpha_w * mean + (1.0 - alpha_w) * std
                }
            }
        }
    };
    let grad = {
        let core = Arc::clone(&core);
        move |x: &[f64], grad: &mut [f64]| {
            grad.fill(0.0);
            match &kind {
                ObjKind::Mean => {
                    for s in 0..core.n_scen() {
                        core.cost_grad(s, x, core.scen_weights[s], grad);
                    }
                }
                ObjKind::CredMean { cw } => {
                    for s in 0..core.n_scen() {
                        if cw[s] != 0.0 {
                            core.cost_grad(s, x, cw[s], grad);
                        }
                    }
                }
                ObjKind::WeightedMeanStd { alpha_w } => {
                    let costs: Vec<f64> =
                        (0..core.n_scen()).map(|s| core.cost_value(s, x)).collect();
                    let mean: f64 =
                        costs.iter().zip(&core.scen_weights).map(|(c, w)| c * w).sum();
                    let second: f64 =
                        costs.iter().zip(&core.scen_weights).map(|(c, w)| c * c * w).sum();
                    let std = (second - mean * mean).max(0.0).sqrt();
                    for s in 0..core.n_scen() {
                        let ws = core.scen_weights[s];
                        let mut coef = alpha_w * ws;
                        if std > STD_FLOOR {
                            coef += (1.0 - alpha_w) * ws * (costs[s] - mean) / std;
                        }
                        if coef != 0.0 {
                            core.cost_grad(s, x, coef, grad);
                        }
                    }
                }
            }
        }
    };
    ScalarFn { eval: Box::new(eval), grad: Some(Box::new(grad)) }
}

// ---------------------------------------------------------------------------
// Credibility quadrature weights for alpha-grid scenario sets
// ---------------------------------------------------------------------------

/// Quadrature weights turning an alpha-grid scenario set into a
/// credibility-based expectation: trapezoidal weights over the alpha levels
/// (normalized over the clamped range), halved across the two endpoints and
/// averaged across sets. Weights sum to one in the order of the rows.
pub fn credibility_weights(scen: &ScenarioSet) -> Result<Vec<f64>, CompileError> {
    let Provenance::AlphaGrid { levels } = &scen.provenance else {
        return Err(CompileError::ScenarioMismatch(
            "credibility weights need alpha-grid provenance".into(),
        ));
    };
    let levels = *levels;
    let n_sets = scen.n_targets().max(1);
    if n_sets * 2 * levels != scen.n_scenarios() {
        return Err(CompileError::ScenarioMismatch(format!(
            "alpha grid rows {} not divisible into {} levels",
            scen.n_scenarios(),
            levels
        )));
    }
    let alphas: Vec<f64> = (0..levels)
        .map(|j| (j as f64 / (levels - 1) as f64).clamp(ALPHA_FLOOR, 1.0))
        .collect();
    let span = alphas[levels - 1] - alphas[0];
    let mut tw = vec![0.0; levels];
    for j in 0..levels - 1 {
        let h = alphas[j + 1] - alphas[j];
        tw[j] += 0.5 * h / span;
        tw[j + 1] += 0.5 * h / span;
    }
    let mut out = Vec::with_capacity(scen.n_scenarios());
    for _set in 0..n_sets {
        for j in 0..levels {
            let w = tw[j] / (2.0 * n_sets as f64);
            out.push(w);
            out.push(w);
        }
    }
    Ok(out)
}
