//! State-eliminated deterministic compile for brute-force cross-checks.
//!
//! The decision vector shrinks to controls, free initial-state components,
//! and statics; states come from forward trapezoidal simulation, so the
//! collocation equalities disappear and the exhaustive grid oracle can scan
//! a low-dimensional box. Gradients are left to finite differences.

use super::{CompileError, CompiledNlp, ControlStructure, Layout, ScalarFn, VectorFn};
use crate::mat::Mat;
use crate::model::{sim::simulate_trapezoidal, ResolvedDrift, TimeApplicability, UccdProblem};
use std::sync::Arc;

struct ReducedCtx {
    problem: UccdProblem,
    drift: ResolvedDrift,
    free_x0: Vec<usize>,
    n_u: usize,
    n_nodes: usize,
}

impl ReducedCtx {
    fn unpack_and_simulate(&self, x: &[f64]) -> Option<(Mat, Mat, Vec<f64>)> {
        let nu_total = self.n_nodes * self.n_u;
        let mut u_rows = Vec::with_capacity(self.n_nodes);
        for k in 0..self.n_nodes {
            u_rows.push(x[k * self.n_u..(k + 1) * self.n_u].to_vec());
        }
        let u = Mat::from_rows(&u_rows);
        let n_s = self.problem.n_states();
        let mut x0 = vec![0.0; n_s];
        for i in 0..n_s {
            if let Some(v) = self.problem.boundary.initial_component(i) {
                x0[i] = v;
            }
        }
        for (slot, i) in self.free_x0.iter().enumerate() {
            x0[*i] = x[nu_total + slot];
        }
        let statics = &x[nu_total + self.free_x0.len()..];
        let offsets = self.problem.scenario_offsets(&self.problem.nominal_offsets_row());
        let p_eff: Vec<f64> =
            statics.iter().zip(&offsets.statics).map(|(p, o)| p + o).collect();
        let xi = simulate_trapezoidal(
            &self.drift,
            &self.problem.grid,
            &u,
            &x0,
            &p_eff,
            &offsets.noise,
        )
        .ok()?;
        Some((u, xi, p_eff))
    }

    fn statics_value(&self, p_eff: &[f64], name: &str) -> f64 {
        p_eff[self.problem.statics.index_of(name).expect("validated")]
    }
}

/// Compiles the nominal problem with states eliminated. Decision order:
/// controls node-major, then free initial components, then statics.
pub fn compile_reduced(problem: &UccdProblem) -> Result<CompiledNlp, CompileError> {
    let n_u = problem.n_controls();
    let n_nodes = problem.grid.n_nodes();
    let n_s = problem.n_states();
    let free_x0: Vec<usize> =
        (0..n_s).filter(|i| problem.boundary.initial_component(*i).is_none()).collect();
    let n_p = problem.n_statics();
    let n = n_nodes * n_u + free_x0.len() + n_p;

    let offsets = problem.scenario_offsets(&problem.nominal_offsets_row());
    let data_value = |name: &str| -> Option<f64> {
        problem
            .data
            .constants
            .get(name)
            .map(|v| v + offsets.data_constants.get(name).copied().unwrap_or(0.0))
    };
    let static_index = |name: &str| problem.statics.index_of(name);
    let drift = ResolvedDrift::resolve(&problem.dynamics.drift, &static_index, &data_value)?;

    let ctx = Arc::new(ReducedCtx {
        problem: problem.clone(),
        drift,
        free_x0: free_x0.clone(),
        n_u,
        n_nodes,
    });

    let mut static_names: Vec<String> = Vec::with_capacity(n);
    for k in 0..n_nodes {
        for j in 0..n_u {
            static_names.push(format!("u[{k}][{j}]"));
        }
    }
    let state_names = problem.state_names();
    for i in &free_x0 {
        static_names.push(format!("x0[{}]", state_names[*i]));
    }
    for v in &problem.statics.vars {
        static_names.push(format!("p[{}]", v.name));
    }

    let mut lower = vec![f64::NEG_INFINITY; n];
    let mut upper = vec![f64::INFINITY; n];
    for (m, v) in problem.statics.vars.iter().enumerate() {
        lower[n_nodes * n_u + free_x0.len() + m] = v.lower;
        upper[n_nodes * n_u + free_x0.len() + m] = v.upper;
    }
    let mut x0_guess = vec![0.0; n];
    for (m, v) in problem.statics.vars.iter().enumerate() {
        let mid = 0.5 * (v.lower + v.upper);
        x0_guess[n_nodes * n_u + free_x0.len() + m] = if mid.is_finite() { mid } else { 0.0 };
    }

    let obj_ctx = Arc::clone(&ctx);
    let objective = ScalarFn {
        eval: Box::new(move |x: &[f64]| {
            let Some((u, xi, p_eff)) = obj_ctx.unpack_and_simulate(x) else {
                return f64::INFINITY;
            };
            let problem = &obj_ctx.problem;
            let mut total = 0.0;
            if let Some(l) = &problem.cost.lagrange {
                let samples: Vec<f64> = (0..obj_ctx.n_nodes)
                    .map(|k| l.eval(xi.row(k), u.row(k)))
                    .collect();
                total += problem.grid.trapezoid(&samples);
            }
            if let Some(m) = &problem.cost.mayer {
                total += m.eval(xi.row(0), xi.row(obj_ctx.n_nodes - 1), &|name| {
                    obj_ctx.statics_value(&p_eff, name)
                });
            }
            total
        }),
        grad: None,
    };

    let defs = problem.constraints.all_inequalities();
    let node_lists: Vec<Vec<usize>> = defs
        .iter()
        .map(|d| {
            (0..n_nodes)
                .filter(|k| d.applies.applies_at(*k, n_nodes, problem.grid.node(*k)))
                .collect()
        })
        .collect();
    let n_ineq: usize = node_lists.iter().map(Vec::len).sum();
    let ineq_groups: Vec<(String, usize)> = defs
        .iter()
        .zip(&node_lists)
        .map(|(d, nodes)| (d.name.clone(), nodes.len()))
        .collect();
    let ineq_ctx = Arc::clone(&ctx);
    let ineq_defs = defs.clone();
    let ineq_nodes = node_lists.clone();
    let inequalities = VectorFn {
        len: n_ineq,
        eval: Box::new(move |x: &[f64], out: &mut [f64]| {
            let Some((u, xi, p_eff)) = ineq_ctx.unpack_and_simulate(x) else {
                out.fill(f64::INFINITY);
                return;
            };
            let problem = &ineq_ctx.problem;
            let data_v = |name: &str| problem.data.constants.get(name).copied().unwrap_or(0.0);
            let sig_v = |name: &str, k: usize| problem.data.signals.get(name).map_or(0.0, |s| s[k]);
            let mut row = 0;
            for (def, nodes) in ineq_defs.iter().zip(&ineq_nodes) {
                for k in nodes {
                    let (xs, us): (&[f64], &[f64]) =
                        if matches!(def.applies, TimeApplicability::Static) {
                            (&[], &[])
                        } else {
                            (xi.row(*k), u.row(*k))
                        };
                    out[row] = def.expr.eval(
                        xs,
                        us,
                        &|name| ineq_ctx.statics_value(&p_eff, name),
                        &data_v,
                        &sig_v,
                        *k,
                    );
                    row += 1;
                }
            }
        }),
        vjp: None,
    };

    let term_bc: Vec<(usize, f64)> = (0..n_s)
        .filter_map(|i| problem.boundary.terminal_component(i).map(|v| (i, v)))
        .collect();
    let eq_groups = if term_bc.is_empty() {
        Vec::new()
    } else {
        vec![("terminal_bc".to_string(), term_bc.len())]
    };
    let eq_ctx = Arc::clone(&ctx);
    let equalities = VectorFn {
        len: term_bc.len(),
        eval: Box::new(move |x: &[f64], out: &mut [f64]| {
            let Some((_, xi, _)) = eq_ctx.unpack_and_simulate(x) else {
                out.fill(f64::INFINITY);
                return;
            };
            for (r, (i, target)) in term_bc.iter().enumerate() {
                out[r] = xi.get(eq_ctx.n_nodes - 1, *i) - target;
            }
        }),
        vjp: None,
    };

    Ok(CompiledNlp {
        layout: Layout {
            structure: ControlStructure::Olsc,
            n_scen: 0,
            n_nodes: 0,
            n_u: 0,
            n_s: 0,
            n_p: n,
            shared_states: false,
            state_names: problem.state_names(),
            control_names: problem.control_names(),
            static_names,
        },
        lower,
        upper,
        x0: x0_guess,
        objective,
        equalities,
        inequalities,
        eq_groups,
        ineq_groups,
        scenarios: None,
        formulation: "reduced".into(),
        approximations: vec!["states eliminated by forward simulation".into()],
        exactness: None,
        anneal: None,
        hard_inequalities: None,
        per_scenario_objectives: None,
    })
}
