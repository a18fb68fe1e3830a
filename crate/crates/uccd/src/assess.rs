//! Post-solve assessment: re-evaluate a solved design under fresh
//! uncertainty realizations by forward simulation.
//!
//! The solved control (shared block, or the first block under OLMC) and
//! statics are held fixed; each realization perturbs its bound targets,
//! states are re-simulated with the trapezoidal integrator, and every
//! inequality constraint is summarized by its worst applicable node. This
//! is what the failure probabilities in `report.json` and the comparison
//! table are computed from — never the training scenarios.

use crate::formulations::Layout;
use crate::mat::Mat;
use crate::model::{
    sim::simulate_trapezoidal, ModelError, ResolvedDrift, TimeApplicability, UccdProblem,
};
use crate::usets::ScenarioSet;

/// Per-scenario worst constraint values and objectives at a fixed design.
#[derive(Debug, Clone)]
pub struct Assessment {
    /// `n_scen x n_constraints`: worst node value of each inequality.
    pub constraint_worst: Mat,
    pub constraint_names: Vec<String>,
    /// Objective of each re-simulated scenario.
    pub objectives: Vec<f64>,
    /// Scenarios that failed to simulate (non-finite states).
    pub diverged: usize,
}

/// Evaluates the design `x` (interpreted through `layout`) under every
/// scenario row. The original (pre-epigraph) objective is reported.
pub fn assess_scenarios(
    problem: &UccdProblem,
    layout: &Layout,
    x: &[f64],
    scen: &ScenarioSet,
) -> Result<Assessment, ModelError> {
    let defs = problem.constraints.all_inequalities();
    let names: Vec<String> = defs.iter().map(|d| d.name.clone()).collect();
    let n_nodes = layout.n_nodes;
    let n_u = layout.n_u;
    let n_s = problem.n_states();
    // the innermost retained cost is the problem's original objective
    let cost = problem
        .epigraph_levels
        .first()
        .map(|l| &l.cost)
        .unwrap_or(&problem.cost);

    let rows = crate::par::map_range(scen.n_scenarios(), |s| {
        let offsets = problem.scenario_offsets(scen.scenario(s));
        let mut p_eff = vec![0.0; layout.n_p];
        for m in 0..layout.n_p {
            p_eff[m] = x[layout.p_index(m)] + offsets.statics[m];
        }
        let data_value = |name: &str| -> Option<f64> {
            problem
                .data
                .constants
                .get(name)
                .map(|v| v + offsets.data_constants.get(name).copied().unwrap_or(0.0))
        };
        let static_index = |name: &str| problem.statics.index_of(name);
        let Ok(drift) = ResolvedDrift::resolve(&problem.dynamics.drift, &static_index, &data_value)
        else {
            return (vec![f64::NAN; names.len()], f64::NAN, true);
        };
        let mut u_rows = Vec::with_capacity(n_nodes);
        for k in 0..n_nodes {
            u_rows.push((0..n_u).map(|j| x[layout.u_index(0, k, j)]).collect::<Vec<f64>>());
        }
        let u = Mat::from_rows(&u_rows);
        let mut x0 = vec![0.0; n_s];
        for i in 0..n_s {
            x0[i] = match problem.boundary.initial_component(i) {
                Some(base) => base + offsets.initial_state[i],
                None => x[layout.xi_index(0, 0, i)],
            };
        }
        let Ok(xi) =
            simulate_trapezoidal(&drift, &problem.grid, &u, &x0, &p_eff, &offsets.noise)
        else {
            return (vec![f64::NAN; names.len()], f64::NAN, true);
        };

        let statics_value =
            |name: &str| p_eff[problem.statics.index_of(name).expect("validated")];
        let data_v = |name: &str| data_value(name).unwrap_or(0.0);
        let sig_v = |name: &str, k: usize| {
            problem.data.signals.get(name).map_or(0.0, |series| {
                series[k] + offsets.signals.get(name).copied().unwrap_or(0.0)
            })
        };
        let worst: Vec<f64> = defs
            .iter()
            .map(|def| {
                let mut w = f64::NEG_INFINITY;
                for k in 0..n_nodes {
                    if !def.applies.applies_at(k, n_nodes, problem.grid.node(k)) {
                        continue;
                    }
                    let (xs, us): (&[f64], &[f64]) =
                        if matches!(def.applies, TimeApplicability::Static) {
                            (&[], &[])
                        } else {
                            (xi.row(k), u.row(k))
                        };
                    w = w.max(def.expr.eval(xs, us, &statics_value, &data_v, &sig_v, k));
                }
                w
            })
            .collect();

        let mut objective = 0.0;
        if let Some(l) = &cost.lagrange {
            let samples: Vec<f64> = (0..n_nodes).map(|k| l.eval(xi.row(k), u.row(k))).collect();
            objective += problem.grid.trapezoid(&samples);
        }
        if let Some(m) = &cost.mayer {
            objective += m.eval(xi.row(0), xi.row(n_nodes - 1), &statics_value);
        }
        (worst, objective, false)
    });

    let mut constraint_worst = Mat::zeros(scen.n_scenarios(), names.len());
    let mut objectives = Vec::with_capacity(scen.n_scenarios());
    let mut diverged = 0;
    for (s, (worst, obj, bad)) in rows.into_iter().enumerate() {
        constraint_worst.row_mut(s).copy_from_slice(&worst);
        objectives.push(obj);
        diverged += usize::from(bad);
    }
    Ok(Assessment { constraint_worst, constraint_names: names, objectives, diverged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formulations::{compile_deterministic, ControlStructure};
    use crate::model::{build_problem, ProblemDocument};
    use crate::solve::{solve_nlp, SolverOptions};
    use crate::usets::sample_stochastic;

    #[test]
    fn assessment_failure_rate_matches_margin() {
        // velocity cap with gaussian vmax uncertainty: at the solved
        // deterministic design the peak velocity sits near 1.5; vmax draws
        // below the peak fail. The empirical rate must match the normal
        // tail of P[1.6 + d < peak].
        let doc = r#"{
            "schema": 1,
            "grid": {"t0": 0.0, "tf": 1.0, "n_nodes": 41},
            "dynamics": {"kind": "registry", "id": "double_integrator"},
            "cost": {"registry": "min_energy"},
            "constraints": {
                "inequalities": [
                    {"name": "vel_cap", "state_lin": [0.0, 1.0], "data_lin": {"vmax": -1.0}}
                ]
            },
            "data": {"constants": {"vmax": 1.6}},
            "boundary": {"initial": [0.0, 0.0], "terminal": [1.0, 0.0]},
            "uncertainty": [
                {"target": {"type": "data", "name": "vmax"},
                 "stochastic": {"kind": "gaussian", "mu": 0.0, "sigma": 0.05}}
            ]
        }"#;
        let p = build_problem(&ProblemDocument::from_json(doc).unwrap()).unwrap();
        let nlp = compile_deterministic(&p).unwrap();
        let r = solve_nlp(&nlp, &nlp.x0, &SolverOptions::default());
        let models = p.stochastic_models().unwrap();
        let scen = sample_stochastic(&models, 40_000, 99).unwrap();
        let a = assess_scenarios(&p, &nlp.layout, &r.x, &scen).unwrap();
        assert_eq!(a.diverged, 0);
        let col: Vec<f64> = a.constraint_worst.col_iter(0).collect();
        let pfail = crate::risk::empirical_failure_prob(&col);
        // peak velocity of the min-energy solution is 1.5 (at t = 1/2);
        // failure iff 1.6 + d <= 1.5, i.e. d <= -0.1 = -2 sigma
        let expect = 0.022750131948179212;
        assert!(
            (pfail - expect).abs() < 0.004,
            "pfail {pfail} vs normal tail {expect}"
        );
        let _ = ControlStructure::Olsc;
    }
}
