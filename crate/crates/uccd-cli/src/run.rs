//! Formulation dispatch: build the effective formulation spec, check
//! binding compatibility, compile, solve, and assemble artifacts.

use crate::common::{validation, CliError, LoadedProblem};
use serde::Serialize;
use std::collections::BTreeMap;
use uccd::formulations::{
    compile_deterministic, compile_fe, compile_pcc, compile_pr_constrained, compile_pr_weighted,
    compile_scc, compile_se, compile_wcr, CompiledNlp, ControlStructure, FormulationKind,
    FormulationSpec, PerConstraint, SccMode, WcrCompilation, WcrMode,
};
use uccd::model::UccdProblem;
use uccd::risk::ConstraintDiagnostics;
use uccd::solve::{solve_nlp, solve_wcr, SolveReport, SolverOptions};
use uccd::usets::{alpha_grid_scenarios, sample_stochastic, ScenarioSet};

/// CLI-level overrides merged over the document's formulation block.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Overrides {
    pub formulation: Option<String>,
    pub structure: Option<String>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    pub p_f: Option<f64>,
    pub alpha_w: Option<f64>,
    pub k_s: Option<f64>,
    pub sigma_a: Option<f64>,
    pub pos_f: Option<f64>,
    pub n_levels: Option<usize>,
    pub mode: Option<String>,
    pub max_outer: Option<usize>,
    pub constraint_tol: Option<f64>,
    pub gradient_tol: Option<f64>,
    pub mc_samples: Option<usize>,
}

pub struct EffectiveRun {
    pub spec: FormulationSpec,
    pub samples: usize,
    pub seed: u64,
    pub solver: SolverOptions,
    pub mc_samples: usize,
}

pub fn effective_run(
    loaded: &LoadedProblem,
    over: &Overrides,
) -> Result<EffectiveRun, CliError> {
    let mut spec = match &loaded.document.formulation {
        Some(value) => FormulationSpec::from_value(value)
            .map_err(|e| validation(format!("formulation block: {e}")))?,
        None => FormulationSpec::det(),
    };
    if let Some(tag) = &over.formulation {
        spec.kind = FormulationKind::parse(tag)
            .map_err(|e| validation(e.to_string()))?;
    }
    if let Some(s) = &over.structure {
        spec.structure = match s.as_str() {
            "olsc" => ControlStructure::Olsc,
            "olmc" => ControlStructure::Olmc,
            other => return Err(validation(format!("unknown structure '{other}'"))),
        };
    }
    let p = &mut spec.params;
    if over.samples.is_some() {
        p.samples = over.samples;
    }
    if over.seed.is_some() {
        p.seed = over.seed;
    }
    if over.p_f.is_some() {
        p.p_f = over.p_f;
    }
    if over.alpha_w.is_some() {
        p.alpha_w = over.alpha_w;
    }
    if over.k_s.is_some() {
        p.k_s = over.k_s;
    }
    if over.sigma_a.is_some() {
        p.sigma_a = over.sigma_a;
    }
    if over.pos_f.is_some() {
        p.pos_f = over.pos_f;
    }
    if over.n_levels.is_some() {
        p.n_levels = over.n_levels;
    }
    if over.mode.is_some() {
        p.mode = over.mode.clone();
    }
    let seed = spec.params.seed.unwrap_or(42);
    let samples = spec.params.samples.unwrap_or(200);
    let mut solver = SolverOptions { seed, ..SolverOptions::default() };
    if let Some(v) = over.max_outer {
        solver.max_outer_iters = v;
    }
    if let Some(v) = over.constraint_tol {
        solver.constraint_tol = v;
    }
    if let Some(v) = over.gradient_tol {
        solver.gradient_tol = v;
    }
    Ok(EffectiveRun {
        spec,
        samples,
        seed,
        solver,
        mc_samples: over.mc_samples.unwrap_or(10_000),
    })
}

/// Exit-3 gate: the formulation's uncertainty family must be rendered on
/// every binding.
pub fn check_compatibility(problem: &UccdProblem, kind: FormulationKind) -> Result<(), CliError> {
    let fail = |e: uccd::model::ModelError| CliError::Compatibility(e.to_string());
    match kind {
        FormulationKind::Det => Ok(()),
        FormulationKind::Se
        | FormulationKind::Scc
        | FormulationKind::PrWeighted
        | FormulationKind::PrConstrained => {
            if problem.bindings.is_empty() {
                Ok(())
            } else {
                problem.stochastic_models().map(|_| ()).map_err(fail)
            }
        }
        FormulationKind::Wcr => problem.crisp_sets().map(|_| ()).map_err(fail),
        FormulationKind::Fe | FormulationKind::Pcc => {
            if problem.bindings.is_empty() {
                Err(CliError::Compatibility(
                    "fuzzy formulations need at least one fuzzy binding".into(),
                ))
            } else {
                problem.fuzzy_sets().map(|_| ()).map_err(fail)
            }
        }
    }
}

pub enum Compiled {
    Plain(CompiledNlp),
    Wcr(WcrCompilation),
}

/// Compiles the problem under the effective formulation.
pub fn compile(problem: &UccdProblem, run: &EffectiveRun) -> Result<Compiled, CliError> {
    let spec = &run.spec;
    let comp = |e: uccd::formulations::CompileError| CliError::Compatibility(e.to_string());
    let stochastic_scenarios = || -> Result<ScenarioSet, CliError> {
        if problem.bindings.is_empty() {
            Ok(ScenarioSet::nominal(problem.nominal_offsets_row(), problem.binding_names()))
        } else {
            let models = problem.stochastic_models().map_err(|e| CliError::Compatibility(e.to_string()))?;
            sample_stochastic(&models, run.samples, run.seed)
                .map_err(|e| CliError::Internal(e.into()))
        }
    };
    let per = |default: f64, overrides: &BTreeMap<String, f64>| PerConstraint {
        default,
        overrides: overrides.clone(),
    };
    let nlp = match spec.kind {
        FormulationKind::Det => Compiled::Plain(compile_deterministic(problem).map_err(comp)?),
        FormulationKind::Se => Compiled::Plain(
            compile_se(problem, &stochastic_scenarios()?, spec.structure).map_err(comp)?,
        ),
        FormulationKind::Scc => {
            let mode = match spec.params.mode.as_deref() {
                None | Some("gaussian") => SccMode::Gaussian,
                Some("saa") => SccMode::Saa,
                Some(other) => {
                    return Err(validation(format!("unknown scc mode '{other}'")))
                }
            };
            Compiled::Plain(
                compile_scc(
                    problem,
                    &stochastic_scenarios()?,
                    spec.structure,
                    &per(spec.params.p_f.unwrap_or(0.05), &spec.params.p_f_overrides),
                    mode,
                )
                .map_err(comp)?,
            )
        }
        FormulationKind::PrWeighted => Compiled::Plain(
            compile_pr_weighted(
                problem,
                &stochastic_scenarios()?,
                spec.structure,
                spec.params.alpha_w.unwrap_or(0.5),
                spec.params.k_s.unwrap_or(1.0),
            )
            .map_err(comp)?,
        ),
        FormulationKind::PrConstrained => Compiled::Plain(
            compile_pr_constrained(
                problem,
                &stochastic_scenarios()?,
                spec.structure,
                spec.params.alpha_w.unwrap_or(0.5),
                &per(spec.params.sigma_a.unwrap_or(1.0), &spec.params.sigma_a_overrides),
            )
            .map_err(comp)?,
        ),
        FormulationKind::Wcr => {
            let mode = match spec.params.mode.as_deref() {
                None | Some("vertex") => WcrMode::Vertex,
                Some("scenario_generation") | Some("scenario-generation") => {
                    WcrMode::ScenarioGeneration
                }
                Some(other) => {
                    return Err(validation(format!("unknown wcr mode '{other}'")))
                }
            };
            Compiled::Wcr(compile_wcr(problem, mode).map_err(comp)?)
        }
        FormulationKind::Fe => Compiled::Plain(
            compile_fe(problem, spec.structure, spec.params.n_levels.unwrap_or(11))
                .map_err(comp)?,
        ),
        FormulationKind::Pcc => Compiled::Plain(
            compile_pcc(
                problem,
                spec.structure,
                &per(spec.params.pos_f.unwrap_or(0.5), &spec.params.pos_f_overrides),
                spec.params.n_levels.unwrap_or(11),
            )
            .map_err(comp)?,
        ),
    };
    Ok(nlp)
}

pub struct Solved {
    pub report: SolveReport,
    pub nlp: CompiledNlp,
    /// The problem the layout belongs to (epigraph-rewritten for the
    /// robust counterpart).
    pub problem: UccdProblem,
}

pub fn solve(problem: &UccdProblem, run: &EffectiveRun) -> Result<Solved, CliError> {
    let compiled = compile(problem, run)?;
    match compiled {
        Compiled::Plain(nlp) => {
            let mut report = solve_nlp(&nlp, &nlp.x0, &run.solver);
            attach_spread(problem, &nlp, &mut report);
            Ok(Solved { report, nlp, problem: problem.clone() })
        }
        Compiled::Wcr(wcr) => {
            let mut report =
                solve_wcr(&wcr, &run.solver).map_err(|e| CliError::Internal(e.into()))?;
            // rebuild the compilation backing the final outer solve; its
            // layout belongs to the epigraph-rewritten problem
            let pool = report
                .wcr
                .as_ref()
                .map(|s| s.pool.clone())
                .unwrap_or_else(|| wcr.pool.clone());
            let nlp = wcr.rebuild(&pool).map_err(|e| CliError::Internal(e.into()))?;
            let transformed = if problem.epigraph_levels.is_empty() {
                uccd::model::epigraph_transform(problem)
            } else {
                problem.clone()
            };
            attach_spread(&transformed, &nlp, &mut report);
            Ok(Solved { report, nlp, problem: transformed })
        }
    }
}

fn attach_spread(problem: &UccdProblem, nlp: &CompiledNlp, report: &mut SolveReport) {
    let enabled: Vec<usize> = (0..problem.n_states())
        .filter(|i| problem.boundary.terminal_component(*i).is_some())
        .collect();
    if !enabled.is_empty() && report.x.len() == nlp.n() {
        report.terminal_spread = nlp.terminal_spread(&report.x, &enabled);
    }
}

/// `solution.json` payload: the solve report minus wall-clock time, so
/// repeated runs are byte-identical.
#[derive(Serialize)]
pub struct SolutionDoc<'a> {
    pub status: &'a uccd::solve::SolveStatus,
    pub formulation: &'a str,
    pub objective: f64,
    pub slices: &'a [uccd::solve::SliceValue],
    pub max_eq_violation: f64,
    pub max_ineq_violation: f64,
    pub constraint_groups: &'a [uccd::solve::GroupResidual],
    pub trace: &'a [uccd::solve::IterRecord],
    pub approximations: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub terminal_spread: &'a Option<BTreeMap<String, f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wcr: &'a Option<uccd::solve::WcrSummary>,
}

/// Trajectory table: time plus per-scenario state/control columns.
pub fn trajectories_csv(problem: &UccdProblem, nlp: &CompiledNlp, x: &[f64]) -> String {
    let lay = &nlp.layout;
    let mut header = vec!["time".to_string()];
    match lay.structure {
        ControlStructure::Olsc => {
            for name in &lay.control_names {
                header.push(format!("u[{name}]"));
            }
        }
        ControlStructure::Olmc => {
            for s in 0..lay.n_scen {
                for name in &lay.control_names {
                    header.push(format!("u_s{s}[{name}]"));
                }
            }
        }
    }
    for s in 0..lay.n_scen {
        for name in &lay.state_names {
            header.push(format!("xi_s{s}[{name}]"));
        }
    }
    let mut out = header.join(",");
    out.push('\n');
    let times = problem.grid.nodes();
    for k in 0..lay.n_nodes {
        let mut row = vec![crate::common::fmt_f64(times[k])];
        match lay.structure {
            ControlStructure::Olsc => {
                for j in 0..lay.n_u {
                    row.push(crate::common::fmt_f64(x[lay.u_index(0, k, j)]));
                }
            }
            ControlStructure::Olmc => {
                for s in 0..lay.n_scen {
                    for j in 0..lay.n_u {
                        row.push(crate::common::fmt_f64(x[lay.u_index(s, k, j)]));
                    }
                }
            }
        }
        for s in 0..lay.n_scen {
            for i in 0..lay.n_s {
                row.push(crate::common::fmt_f64(x[lay.xi_index(s, k, i)]));
            }
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Risk diagnostics for `report.json`: fresh-seed Monte Carlo at the
/// solution for stochastic renderings, alpha-grid possibility for fuzzy
/// ones. Never reuses the training scenarios.
#[derive(Serialize, Default)]
pub struct RiskReport {
    pub constraints: BTreeMap<String, ConstraintDiagnostics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub system_pfail: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objective_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objective_std: Option<f64>,
    pub mc_samples: usize,
    pub mc_seed: u64,
    pub mc_diverged: usize,
}

pub fn risk_report(solved: &Solved, run: &EffectiveRun) -> Result<RiskReport, CliError> {
    let problem = &solved.problem;
    let mut out = RiskReport {
        mc_samples: 0,
        mc_seed: run.seed + 1,
        ..Default::default()
    };
    let defs = problem.constraints.all_inequalities();
    for def in &defs {
        out.constraints.insert(def.name.clone(), ConstraintDiagnostics::default());
    }

    // objective dispersion over the training scenarios (population form)
    if let (Some(f), Some(scen)) =
        (&solved.nlp.per_scenario_objectives, &solved.nlp.scenarios)
    {
        let costs = f(&solved.report.x);
        let wsum: f64 = scen.weights.iter().sum();
        if wsum > 0.0 && costs.len() == scen.weights.len() {
            let w: Vec<f64> = scen.weights.iter().map(|v| v / wsum).collect();
            out.objective_mean = Some(uccd::risk::weighted_mean(&costs, &w));
            out.objective_std = Some(uccd::risk::weighted_pop_std(&costs, &w));
        }
    }

    // stochastic rendering: fresh MC re-evaluation at seed + 1
    if !problem.bindings.is_empty() {
        if let Ok(models) = problem.stochastic_models() {
            let scen = sample_stochastic(&models, run.mc_samples, run.seed + 1)
                .map_err(|e| CliError::Internal(e.into()))?;
            let assessment =
                uccd::assess::assess_scenarios(problem, &solved.nlp.layout, &solved.report.x, &scen)
                    .map_err(|e| CliError::Internal(e.into()))?;
            out.mc_samples = run.mc_samples;
            out.mc_diverged = assessment.diverged;
            for (c, name) in assessment.constraint_names.iter().enumerate() {
                let values: Vec<f64> = assessment.constraint_worst.col_iter(c).collect();
                let entry = out.constraints.entry(name.clone()).or_default();
                if values.len() >= 2 {
                    if let Ok(stats) = uccd::risk::sample_stats(&values) {
                        entry.mean = Some(stats.mean);
                        entry.std = Some(stats.std);
                    }
                    entry.cvar = uccd::risk::cvar(&values, 0.9).ok();
                }
                entry.pfail = Some(uccd::risk::empirical_failure_prob(&values));
            }
            out.system_pfail = Some(uccd::risk::system_failure_prob(&assessment.constraint_worst));
        }
        // fuzzy rendering: possibility of failure over the alpha grid
        if let Ok(sets) = problem.fuzzy_sets() {
            let levels = run.spec.params.n_levels.unwrap_or(11);
            let scen = alpha_grid_scenarios(&sets, levels)
                .map_err(|e| CliError::Internal(e.into()))?;
            let assessment =
                uccd::assess::assess_scenarios(problem, &solved.nlp.layout, &solved.report.x, &scen)
                    .map_err(|e| CliError::Internal(e.into()))?;
            for (c, name) in assessment.constraint_names.iter().enumerate() {
                let pairs: Vec<(f64, f64)> = assessment
                    .constraint_worst
                    .col_iter(c)
                    .zip(scen.weights.iter().copied())
                    .collect();
                let entry = out.constraints.entry(name.clone()).or_default();
                entry.pos_fail = Some(uccd::risk::possibility_of_failure(&pairs));
            }
        }
    }
    Ok(out)
}
