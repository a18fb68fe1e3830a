//! `uccd`: validate and solve uncertain control co-design documents, sweep
//! Pareto fronts, compare formulations, cross-check against the grid
//! oracle, and run the LQR uncertainty demo.

mod common;
mod run;

use clap::{Args, Parser, Subcommand};
use common::{ensure_out_dir, fmt_f64, load_problem, validation, write_json, CliError, RunManifest};
use run::{Overrides, SolutionDoc};
use std::path::PathBuf;
use std::process::ExitCode;
use uccd::solve::SolveStatus;

#[derive(Parser)]
#[command(name = "uccd", version, about = "Uncertain control co-design toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct SolveFlags {
    /// Formulation tag: det|se|scc|pr-w|pr-c|wcr|fe|pcc (defaults to the
    /// document's formulation block).
    #[arg(long)]
    formulation: Option<String>,
    /// Control structure: olsc|olmc.
    #[arg(long)]
    structure: Option<String>,
    /// Monte Carlo scenario count for stochastic formulations.
    #[arg(long)]
    samples: Option<usize>,
    /// Scenario and solver seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Target failure probability (scc).
    #[arg(long)]
    p_f: Option<f64>,
    /// Mean/dispersion weight (pr-w, pr-c).
    #[arg(long)]
    alpha_w: Option<f64>,
    /// Constraint shift index (pr-w).
    #[arg(long)]
    k_s: Option<f64>,
    /// Allowable dispersion (pr-c).
    #[arg(long)]
    sigma_a: Option<f64>,
    /// Target failure possibility (pcc).
    #[arg(long)]
    pos_f: Option<f64>,
    /// Alpha levels for fuzzy propagation.
    #[arg(long)]
    n_levels: Option<usize>,
    /// Formulation mode: saa|gaussian (scc), vertex|scenario_generation (wcr).
    #[arg(long)]
    mode: Option<String>,
    /// Solver outer-iteration cap.
    #[arg(long)]
    max_outer: Option<usize>,
    /// Solver constraint tolerance.
    #[arg(long)]
    constraint_tol: Option<f64>,
    /// Solver gradient tolerance.
    #[arg(long)]
    gradient_tol: Option<f64>,
    /// Fresh Monte Carlo sample count for reported failure probabilities.
    #[arg(long)]
    mc_samples: Option<usize>,
}

impl SolveFlags {
    fn to_overrides(&self) -> Overrides {
        Overrides {
            formulation: self.formulation.clone(),
            structure: self.structure.clone(),
            samples: self.samples,
            seed: self.seed,
            p_f: self.p_f,
            alpha_w: self.alpha_w,
            k_s: self.k_s,
            sigma_a: self.sigma_a,
            pos_f: self.pos_f,
            n_levels: self.n_levels,
            mode: self.mode.clone(),
            max_outer: self.max_outer,
            constraint_tol: self.constraint_tol,
            gradient_tol: self.gradient_tol,
            mc_samples: self.mc_samples,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a problem document.
    Validate { path: PathBuf },
    /// Compile and solve a problem under a formulation; write artifacts.
    Solve {
        path: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[command(flatten)]
        flags: SolveFlags,
    },
    /// Sweep the probabilistic-robust weight over [0, 1] and tabulate the
    /// mean/dispersion trade-off.
    Pareto {
        path: PathBuf,
        /// Number of weights in the sweep.
        #[arg(long = "alpha-grid", default_value_t = 11)]
        alpha_grid: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[command(flatten)]
        flags: SolveFlags,
    },
    /// Solve several formulations of one document and tabulate optimum,
    /// adversarial worst case, and fresh-sample failure probability.
    Compare {
        path: PathBuf,
        /// Comma-separated formulation tags.
        #[arg(long, value_delimiter = ',', default_value = "se,wcr")]
        formulations: Vec<String>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[command(flatten)]
        flags: SolveFlags,
    },
    /// Cross-check the solver against the exhaustive grid oracle on the
    /// state-eliminated problem.
    Oracle {
        path: PathBuf,
        #[arg(long, default_value_t = 41)]
        resolution: usize,
        /// Half-width of the scan box for controls and free initial states.
        #[arg(long, default_value_t = 4.0)]
        bound: f64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Closed-loop LQR ensemble demo under initial-state and process noise.
    LqrDemo {
        /// State matrix: 1 value (scalar) or 4 row-major values (2x2).
        #[arg(long, value_delimiter = ',', default_value = "1.0")]
        a: Vec<f64>,
        /// Input matrix: 1 value or 2 values (2x1).
        #[arg(long, value_delimiter = ',', default_value = "1.0")]
        b: Vec<f64>,
        /// State weight diagonal.
        #[arg(long, value_delimiter = ',', default_value = "1.0")]
        q: Vec<f64>,
        /// Input weight (scalar).
        #[arg(long, default_value_t = 1.0)]
        r: f64,
        /// Additive process-noise intensity per state.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 1000)]
        paths: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Initial-state standard deviation per component.
        #[arg(long, default_value_t = 0.5)]
        x0_std: f64,
        /// Horizon in multiples of the slowest closed-loop time constant.
        #[arg(long, default_value_t = 5.0)]
        time_constants: f64,
        #[arg(long, default_value_t = 501)]
        nodes: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("UCCD_THREADS") {
        if let Ok(n) = threads.trim().parse::<usize>() {
            uccd::par::configure_threads(n);
        }
    }
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            e.report();
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Validate { path } => {
            let loaded = load_problem(&path)?;
            println!(
                "valid: {} states, {} controls, {} statics, {} nodes, {} bindings",
                loaded.problem.n_states(),
                loaded.problem.n_controls(),
                loaded.problem.n_statics(),
                loaded.problem.grid.n_nodes(),
                loaded.problem.bindings.len()
            );
            Ok(())
        }
        Command::Solve { path, out, flags } => cmd_solve(&path, &out, &flags),
        Command::Pareto { path, alpha_grid, out, flags } => {
            cmd_pareto(&path, alpha_grid, &out, &flags)
        }
        Command::Compare { path, formulations, out, flags } => {
            cmd_compare(&path, &formulations, &out, &flags)
        }
        Command::Oracle { path, resolution, bound, out } => {
            cmd_oracle(&path, resolution, bound, &out)
        }
        Command::LqrDemo {
            a,
            b,
            q,
            r,
            noise,
            paths,
            seed,
            x0_std,
            time_constants,
            nodes,
            out,
        } => cmd_lqr_demo(&a, &b, &q, r, noise, paths, seed, x0_std, time_constants, nodes, &out),
    }
}

fn cmd_solve(path: &PathBuf, out: &PathBuf, flags: &SolveFlags) -> Result<(), CliError> {
    let loaded = load_problem(path)?;
    let overrides = flags.to_overrides();
    let run = run::effective_run(&loaded, &overrides)?;
    run::check_compatibility(&loaded.problem, run.spec.kind)?;
    let out_dir = ensure_out_dir(out)?;
    RunManifest {
        command: "solve".into(),
        problem: path.display().to_string(),
        formulation: run.spec.kind.tag().into(),
        seed: run.seed,
        overrides: serde_json::to_value(&overrides).map_err(|e| CliError::Internal(e.into()))?,
        output_dir: out_dir.display().to_string(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        content_hash: loaded.content_hash.clone(),
    }
    .write(&out_dir)?;

    let solved = run::solve(&loaded.problem, &run)?;
    write_solution_artifacts(&solved, &run, &out_dir)?;
    println!(
        "status: {:?}  objective: {}  violation: {:.3e}",
        solved.report.status,
        solved.report.objective,
        solved.report.violation()
    );
    match solved.report.status {
        SolveStatus::Optimal => Ok(()),
        other => Err(CliError::NonOptimal(format!("status {other:?}"))),
    }
}

fn write_solution_artifacts(
    solved: &run::Solved,
    run_cfg: &run::EffectiveRun,
    out_dir: &std::path::Path,
) -> Result<(), CliError> {
    let report = &solved.report;
    write_json(
        &out_dir.join("solution.json"),
        &SolutionDoc {
            status: &report.status,
            formulation: &solved.nlp.formulation,
            objective: report.objective,
            slices: &report.slices,
            max_eq_violation: report.max_eq_violation,
            max_ineq_violation: report.max_ineq_violation,
            constraint_groups: &report.constraint_groups,
            trace: &report.trace,
            approximations: &report.approximations,
            terminal_spread: &report.terminal_spread,
            wcr: &report.wcr,
        },
    )?;
    common::atomic_write(
        &out_dir.join("trajectories.csv"),
        run::trajectories_csv(&solved.problem, &solved.nlp, &report.x).as_bytes(),
    )?;
    let risk = run::risk_report(solved, run_cfg)?;
    #[derive(serde::Serialize)]
    struct FullReport<'a> {
        status: &'a SolveStatus,
        objective: f64,
        wall_time_s: f64,
        #[serde(flatten)]
        risk: &'a run::RiskReport,
        approximations: &'a [String],
    }
    write_json(
        &out_dir.join("report.json"),
        &FullReport {
            status: &report.status,
            objective: report.objective,
            wall_time_s: report.wall_time_s,
            risk: &risk,
            approximations: &report.approximations,
        },
    )
}

fn cmd_pareto(
    path: &PathBuf,
    alpha_grid: usize,
    out: &PathBuf,
    flags: &SolveFlags,
) -> Result<(), CliError> {
    if alpha_grid < 2 {
        return Err(validation("--alpha-grid must be at least 2"));
    }
    let loaded = load_problem(path)?;
    let mut overrides = flags.to_overrides();
    overrides.formulation = Some("pr-w".into());
    let base = run::effective_run(&loaded, &overrides)?;
    run::check_compatibility(&loaded.problem, base.spec.kind)?;
    let out_dir = ensure_out_dir(out)?;
    RunManifest {
        command: "pareto".into(),
        problem: path.display().to_string(),
        formulation: "pr-w".into(),
        seed: base.seed,
        overrides: serde_json::to_value(&overrides).map_err(|e| CliError::Internal(e.into()))?,
        output_dir: out_dir.display().to_string(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        content_hash: loaded.content_hash.clone(),
    }
    .write(&out_dir)?;

    let mut rows = vec!["alpha_w,o_mu,o_sigma".to_string()];
    for k in 0..alpha_grid {
        let alpha_w = k as f64 / (alpha_grid - 1) as f64;
        let mut o = overrides.clone();
        o.alpha_w = Some(alpha_w);
        let run_cfg = run::effective_run(&loaded, &o)?;
        let solved = run::solve(&loaded.problem, &run_cfg)?;
        if solved.report.status != SolveStatus::Optimal {
            return Err(CliError::NonOptimal(format!(
                "alpha_w = {alpha_w}: status {:?}",
                solved.report.status
            )));
        }
        let costs = solved
            .nlp
            .per_scenario_objectives
            .as_ref()
            .map(|f| f(&solved.report.x))
            .unwrap_or_default();
        let scen = solved.nlp.scenarios.as_ref().expect("pr-w keeps scenarios");
        let wsum: f64 = scen.weights.iter().sum();
        let w: Vec<f64> = scen.weights.iter().map(|v| v / wsum).collect();
        let o_mu = uccd::risk::weighted_mean(&costs, &w);
        let o_sigma = uccd::risk::weighted_pop_std(&costs, &w);
        rows.push(format!("{},{},{}", fmt_f64(alpha_w), fmt_f64(o_mu), fmt_f64(o_sigma)));
    }
    common::atomic_write(&out_dir.join("pareto.csv"), (rows.join("\n") + "\n").as_bytes())?;
    println!("pareto: {} solves written to {}", alpha_grid, out_dir.join("pareto.csv").display());
    Ok(())
}

fn cmd_compare(
    path: &PathBuf,
    formulations: &[String],
    out: &PathBuf,
    flags: &SolveFlags,
) -> Result<(), CliError> {
    let loaded = load_problem(path)?;
    let out_dir = ensure_out_dir(out)?;
    let base_overrides = flags.to_overrides();
    let base = run::effective_run(&loaded, &base_overrides)?;
    RunManifest {
        command: "compare".into(),
        problem: path.display().to_string(),
        formulation: formulations.join(","),
        seed: base.seed,
        overrides: serde_json::to_value(&base_overrides)
            .map_err(|e| CliError::Internal(e.into()))?,
        output_dir: out_dir.display().to_string(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        content_hash: loaded.content_hash.clone(),
    }
    .write(&out_dir)?;

    // the adversarial certifier needs crisp renderings; build it once
    let wcr = uccd::formulations::compile_wcr(
        &loaded.problem,
        uccd::formulations::WcrMode::ScenarioGeneration,
    )
    .ok();

    #[derive(serde::Serialize)]
    struct Row {
        formulation: String,
        status: SolveStatus,
        objective: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        worst_case_g: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        pfail_system: Option<f64>,
        pfail: std::collections::BTreeMap<String, f64>,
    }
    let mut rows = Vec::new();
    for tag in formulations {
        let mut o = base_overrides.clone();
        o.formulation = Some(tag.clone());
        let run_cfg = run::effective_run(&loaded, &o)?;
        run::check_compatibility(&loaded.problem, run_cfg.spec.kind)?;
        let solved = run::solve(&loaded.problem, &run_cfg)?;
        let risk = run::risk_report(&solved, &run_cfg)?;
        // certify only the declared constraints: epigraph rows belong to
        // the robust counterpart's own layout, not this formulation's
        let worst_case_g = wcr.as_ref().map(|w| {
            let mut worst = f64::NEG_INFINITY;
            for sub in &w.subproblems {
                if matches!(sub.target, uccd::formulations::WcrTarget::Epigraph { .. }) {
                    continue;
                }
                if let Ok(inner) = uccd::solve::inner_maximize(
                    sub,
                    &solved.nlp.layout,
                    &solved.report.x,
                    &run_cfg.solver,
                ) {
                    worst = worst.max(inner.value);
                }
            }
            worst
        });
        rows.push(Row {
            formulation: tag.clone(),
            status: solved.report.status,
            objective: solved.report.objective,
            worst_case_g,
            pfail_system: risk.system_pfail,
            pfail: risk
                .constraints
                .iter()
                .filter_map(|(name, d)| d.pfail.map(|p| (name.clone(), p)))
                .collect(),
        });
        println!(
            "{tag}: status {:?} objective {} worst-case g {:?}",
            solved.report.status,
            solved.report.objective,
            rows.last().unwrap().worst_case_g
        );
    }
    #[derive(serde::Serialize)]
    struct Comparison {
        rows: Vec<Row>,
        mc_samples: usize,
        mc_seed: u64,
    }
    write_json(
        &out_dir.join("comparison.json"),
        &Comparison { rows, mc_samples: base.mc_samples, mc_seed: base.seed + 1 },
    )
}

fn cmd_oracle(path: &PathBuf, resolution: usize, bound: f64, out: &PathBuf) -> Result<(), CliError> {
    if resolution < 3 {
        return Err(validation("--resolution must be at least 3"));
    }
    let loaded = load_problem(path)?;
    let out_dir = ensure_out_dir(out)?;
    RunManifest {
        command: "oracle".into(),
        problem: path.display().to_string(),
        formulation: "reduced".into(),
        seed: 0,
        overrides: serde_json::json!({ "resolution": resolution, "bound": bound }),
        output_dir: out_dir.display().to_string(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        content_hash: loaded.content_hash.clone(),
    }
    .write(&out_dir)?;

    let reduced = uccd::formulations::compile_reduced(&loaded.problem)
        .map_err(|e| CliError::Internal(anyhow::anyhow!(e)))?;
    let n = reduced.n();
    let mut bounds = Vec::with_capacity(n);
    for i in 0..n {
        let (lo, hi) = (reduced.lower[i], reduced.upper[i]);
        if lo.is_finite() && hi.is_finite() {
            bounds.push((lo, hi));
        } else {
            bounds.push((-bound, bound));
        }
    }
    let opts = uccd::solve::SolverOptions::default();
    let oracle = uccd::solve::grid_oracle(&reduced, &bounds, resolution, opts.constraint_tol)
        .map_err(|e| match e {
            uccd::solve::SolveError::DimensionTooHigh(d) => {
                validation(format!("decision dimension {d} exceeds the oracle limit of 6; use a coarser grid"))
            }
            other => CliError::Internal(other.into()),
        })?;
    let solver = uccd::solve::solve_nlp(&reduced, &reduced.x0, &opts);

    let objective_gap = (solver.objective - oracle.best_value).abs();
    let argmin_distance = if oracle.feasible {
        solver
            .x
            .iter()
            .zip(&oracle.best_point)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max)
    } else {
        f64::NAN
    };
    #[derive(serde::Serialize)]
    struct OracleReport<'a> {
        oracle: &'a uccd::solve::OracleResult,
        solver_status: SolveStatus,
        solver_objective: f64,
        solver_point: &'a [f64],
        objective_gap: f64,
        argmin_distance: f64,
        max_cell: f64,
        agree: bool,
    }
    let max_cell = oracle.cell.iter().copied().fold(0.0f64, f64::max);
    let solver_feasible = solver.status == SolveStatus::Optimal;
    let agree = if oracle.feasible {
        solver_feasible && argmin_distance <= max_cell + 1e-9
    } else {
        solver.status == SolveStatus::Infeasible
    };
    write_json(
        &out_dir.join("oracle.json"),
        &OracleReport {
            oracle: &oracle,
            solver_status: solver.status,
            solver_objective: solver.objective,
            solver_point: &solver.x,
            objective_gap,
            argmin_distance,
            max_cell,
            agree,
        },
    )?;
    println!(
        "oracle: feasible={} best={}  solver: {:?} {}  gap={:.3e} argmin-dist={:.3e} cell={:.3e}",
        oracle.feasible,
        oracle.best_value,
        solver.status,
        solver.objective,
        objective_gap,
        argmin_distance,
        max_cell
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_lqr_demo(
    a: &[f64],
    b: &[f64],
    q: &[f64],
    r: f64,
    noise: f64,
    paths: usize,
    seed: u64,
    x0_std: f64,
    time_constants: f64,
    nodes: usize,
    out: &PathBuf,
) -> Result<(), CliError> {
    let (a_rows, b_rows, q_rows, n) = match (a.len(), b.len()) {
        (1, 1) => (
            vec![vec![a[0]]],
            vec![vec![b[0]]],
            vec![vec![q.first().copied().unwrap_or(1.0)]],
            1usize,
        ),
        (4, 2) => {
            let qd: Vec<f64> = if q.len() == 2 { q.to_vec() } else { vec![q[0], q[0]] };
            (
                vec![vec![a[0], a[1]], vec![a[2], a[3]]],
                vec![vec![b[0]], vec![b[1]]],
                vec![vec![qd[0], 0.0], vec![0.0, qd[1]]],
                2,
            )
        }
        _ => {
            return Err(validation(
                "lqr-demo takes a scalar spec (--a, --b single values) or a 2-D spec (--a 4 values, --b 2 values)",
            ))
        }
    };
    let spec = uccd::dynamics::LqrSpec::from_rows(
        &a_rows,
        &b_rows,
        &q_rows,
        &[vec![r]],
        vec![0.0; n],
    )
    .map_err(|e| validation(e.to_string()))?;
    let p = uccd::dynamics::solve_care(&spec).map_err(|e| validation(e.to_string()))?;
    let residual = uccd::dynamics::care_residual(&spec, &p);
    let gain = uccd::dynamics::lqr_gain(&spec, &p);

    // horizon: requested multiple of the slowest closed-loop time constant
    let a_cl = &spec.a - &spec.b * &gain;
    let slowest = a_cl
        .complex_eigenvalues()
        .iter()
        .map(|e| e.re.abs())
        .fold(f64::INFINITY, f64::min)
        .max(1e-3);
    let horizon = time_constants / slowest;
    let grid = uccd::model::TimeGrid::uniform(0.0, horizon, nodes.max(2))
        .map_err(|e| validation(e.to_string()))?;
    let noise_matrix = (noise != 0.0)
        .then(|| nalgebra::DMatrix::from_fn(n, 1, |_, _| noise));
    let ensemble = uccd::dynamics::lqr_rollout_ensemble(
        &spec,
        noise_matrix.as_ref(),
        &vec![0.0; n],
        &vec![x0_std; n],
        &grid,
        paths.max(1),
        seed,
        None,
    )
    .map_err(|e| validation(e.to_string()))?;

    let out_dir = ensure_out_dir(out)?;
    RunManifest {
        command: "lqr-demo".into(),
        problem: "(parameters)".into(),
        formulation: "lqr".into(),
        seed,
        overrides: serde_json::json!({
            "a": a, "b": b, "q": q, "r": r, "noise": noise,
            "paths": paths, "x0_std": x0_std,
            "time_constants": time_constants, "nodes": nodes
        }),
        output_dir: out_dir.display().to_string(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        content_hash: String::new(),
    }
    .write(&out_dir)?;

    let mut csv = String::from("time,mean,std");
    for i in 0..ensemble.samples.len() {
        csv.push_str(&format!(",sample{i}"));
    }
    csv.push('\n');
    for k in 0..ensemble.times.len() {
        let mut row = vec![
            fmt_f64(ensemble.times[k]),
            fmt_f64(ensemble.mean[0][k]),
            fmt_f64(ensemble.std[0][k]),
        ];
        for sample in &ensemble.samples {
            row.push(fmt_f64(sample[k]));
        }
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    common::atomic_write(&out_dir.join("lqr_ensemble.csv"), csv.as_bytes())?;

    let gain_str: Vec<String> = gain.iter().map(|v| fmt_f64(*v)).collect();
    println!("care_residual: {residual:.3e}");
    println!("gain: [{}]", gain_str.join(", "));
    println!(
        "terminal mean {} std {}",
        fmt_f64(ensemble.mean[0][ensemble.times.len() - 1]),
        fmt_f64(ensemble.std[0][ensemble.times.len() - 1])
    );
    Ok(())
}
