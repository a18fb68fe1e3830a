//! Deterministic, stochastic-expectation, chance-constrained, and
//! probabilistic-robust compilers.

use super::expand::{
    build_core, build_eq_fn, build_ineq_fn, build_objective, standard_eq_blocks, Agg,
    ExpansionCore, IneqBlock, IneqSource, ObjKind,
};
use super::{
    AnnealState, CompileError, CompiledNlp, ControlStructure, Layout, PerConstraint, VectorFn,
};
use crate::model::UccdProblem;
use crate::risk::standard_normal_quantile;
use crate::usets::ScenarioSet;
use std::sync::Arc;

/// SAA smoothing temperature: 0.05 times the constraint scale, annealed by
/// 0.5 per outer restart down to the floor. The scale is raised to half
/// the largest initial constraint magnitude so the sigmoid never starts
/// saturated (saturation would silence the constraint gradient entirely).
pub(crate) const SAA_TAU: f64 = 0.05;
pub(crate) const SAA_TAU_FACTOR: f64 = 0.5;
pub(crate) const SAA_TAU_FLOOR: f64 = 1e-4;

fn normalized_weights(scen: &ScenarioSet) -> Vec<f64> {
    let sum: f64 = scen.weights.iter().sum();
    if sum <= 0.0 {
        vec![1.0 / scen.n_scenarios() as f64; scen.n_scenarios()]
    } else {
        scen.weights.iter().map(|w| w / sum).collect()
    }
}

/// Builds the expansion skeleton: decision layout, per-scenario contexts,
/// and the standard equality program (defects per scenario, boundary
/// conditions per structure). The OLSC structure shares one control block
/// across scenarios and replaces hard terminal conditions by a
/// terminal-mean equality; OLMC replicates controls and keeps terminal
/// conditions per scenario.
pub fn expand_scenarios(
    problem: &UccdProblem,
    scenarios: &ScenarioSet,
    structure: ControlStructure,
) -> Result<CompiledNlp, CompileError> {
    let weights = normalized_weights(scenarios);
    let core = Arc::new(build_core(problem, scenarios, weights, structure)?);
    assemble(core, scenarios.clone(), ObjKind::Mean, per_scenario_ineq_blocks(), "skeleton")
}

type BlockBuilder = Box<dyn Fn(&ExpansionCore) -> Vec<IneqBlock>>;

pub(crate) fn per_scenario_ineq_blocks() -> BlockBuilder {
    Box::new(|core| {
        let mut blocks = Vec::new();
        for e in 0..core.ineq_names.len() {
            for s in 0..core.n_scen() {
                blocks.push(IneqBlock {
                    source: IneqSource::Expr(e),
                    agg: Agg::Scenario(s),
                    label: format!("{}_s{s}", core.ineq_names[e]),
                });
            }
        }
        for l in 0..core.epigraph_count() {
            for s in 0..core.n_scen() {
                blocks.push(IneqBlock {
                    source: IneqSource::Epigraph(l),
                    agg: Agg::Scenario(s),
                    label: format!("{}_s{s}", core.epigraph_label(l)),
                });
            }
        }
        blocks
    })
}

fn aggregated_ineq_blocks(
    agg_for: impl Fn(&str) -> Agg + 'static,
    suffix: &'static str,
) -> BlockBuilder {
    Box::new(move |core| {
        let mut blocks = Vec::new();
        for e in 0..core.ineq_names.len() {
            let name = core.ineq_names[e].clone();
            blocks.push(IneqBlock {
                source: IneqSource::Expr(e),
                agg: agg_for(&name),
                label: format!("{name}@{suffix}"),
            });
        }
        for l in 0..core.epigraph_count() {
            let name = core.epigraph_label(l).to_string();
            blocks.push(IneqBlock {
                source: IneqSource::Epigraph(l),
                agg: agg_for(&name),
                label: format!("{name}@{suffix}"),
            });
        }
        blocks
    })
}

pub(crate) fn assemble(
    core: Arc<ExpansionCore>,
    scenarios: ScenarioSet,
    obj: ObjKind,
    ineq_blocks: BlockBuilder,
    formulation: &str,
) -> Result<CompiledNlp, CompileError> {
    let eq_blocks = standard_eq_blocks(&core);
    let (equalities, eq_groups) = build_eq_fn(Arc::clone(&core), eq_blocks);
    let blocks = ineq_blocks(&core);
    let anneal = blocks.iter().find_map(|b| match &b.agg {
        Agg::Sigmoid { anneal, .. } => Some(anneal.clone()),
        _ => None,
    });
    let hard_inequalities = if anneal.is_some() {
        let hard_blocks: Vec<IneqBlock> = blocks
            .iter()
            .map(|b| IneqBlock {
                source: b.source.clone(),
                agg: match &b.agg {
                    Agg::Sigmoid { p_f, anneal, .. } => {
                        Agg::Sigmoid { p_f: *p_f, anneal: anneal.clone(), hard: true }
                    }
                    other => other.clone(),
                },
                label: b.label.clone(),
            })
            .collect();
        let (f, _) = build_ineq_fn(Arc::clone(&core), hard_blocks);
        Some(VectorFn { len: f.len, eval: f.eval, vjp: None })
    } else {
        None
    };
    let (inequalities, ineq_groups) = build_ineq_fn(Arc::clone(&core), blocks);
    let objective = build_objective(Arc::clone(&core), obj);
    let (lower, upper) = core.bounds();
    let x0 = core.initial_guess();
    let mut approximations = Vec::new();
    if anneal.is_some() {
        approximations.push("sigmoid-smoothed chance indicator".to_string());
    }
    if matches!(core.layout.structure, ControlStructure::Olsc)
        && core.n_scen() > 1
        && !core.term_bc.is_empty()
    {
        approximations
            .push("terminal boundary enforced in scenario mean (single control)".to_string());
    }
    let layout: Layout = core.layout.clone();
    let obj_core = Arc::clone(&core);
    let per_scenario_objectives = Box::new(move |x: &[f64]| {
        (0..obj_core.n_scen()).map(|s| obj_core.cost_value(s, x)).collect::<Vec<f64>>()
    });
    Ok(CompiledNlp {
        layout,
        lower,
        upper,
        x0,
        objective,
        equalities,
        inequalities,
        eq_groups,
        ineq_groups,
        scenarios: Some(scenarios),
        formulation: formulation.to_string(),
        approximations,
        exactness: None,
        anneal,
        hard_inequalities,
        per_scenario_objectives: Some(per_scenario_objectives),
    })
}

/// Deterministic compile: every binding sits at its nominal offset
/// (guessing the future); a single scenario, boundary conditions enforced.
pub fn compile_deterministic(problem: &UccdProblem) -> Result<CompiledNlp, CompileError> {
    let scen = ScenarioSet::nominal(problem.nominal_offsets_row(), problem.binding_names());
    let core = Arc::new(build_core(problem, &scen, vec![1.0], ControlStructure::Olsc)?);
    assemble(core, scen, ObjKind::Mean, per_scenario_ineq_blocks(), "det")
}

/// Stochastic-in-expectation compile: scenario-weighted mean objective and
/// mean inequality constraints, defects per scenario.
pub fn compile_se(
    problem: &UccdProblem,
    scenarios: &ScenarioSet,
    structure: ControlStructure,
) -> Result<CompiledNlp, CompileError> {
    if !problem.bindings.is_empty() {
        problem.stochastic_models().map_err(|e| CompileError::IncompatibleBindings(e.to_string()))?;
    }
    let weights = normalized_weights(scenarios);
    let core = Arc::new(build_core(problem, scenarios, weights, structure)?);
    assemble(core, scenarios.clone(), ObjKind::Mean, aggregated_ineq_blocks(|_| Agg::Mean, "mean"), "se")
}

/// Chance-constraint mode: smoothed sample-average indicator or the
/// Gaussian-margin deterministic equivalent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SccMode {
    Saa,
    Gaussian,
}

/// Stochastic chance-constrained compile. In `Gaussian` mode every
/// constraint row becomes `mean + z_{1-p_f} * std <= 0`; in `Saa` mode the
/// indicator is replaced by a sigmoid at the annealed temperature and the
/// scenario average is capped by `p_f`.
pub fn compile_scc(
    problem: &UccdProblem,
    scenarios: &ScenarioSet,
    structure: ControlStructure,
    p_f: &PerConstraint,
    mode: SccMode,
) -> Result<CompiledNlp, CompileError> {
    if !problem.bindings.is_empty() {
        problem.stochastic_models().map_err(|e| CompileError::IncompatibleBindings(e.to_string()))?;
    }
    let check = |v: f64| -> Result<(), CompileError> {
        if !(v > 0.0 && v < 1.0) {
            return Err(CompileError::BadParameter(format!("p_f = {v} outside (0,1)")));
        }
        Ok(())
    };
    check(p_f.default)?;
    for v in p_f.overrides.values() {
        check(*v)?;
    }
    let weights = normalized_weights(scenarios);
    let core = Arc::new(build_core(problem, scenarios, weights, structure)?);
    let mut nlp = match mode {
        SccMode::Gaussian => {
            let p_f = p_f.clone();
            assemble(
                core,
                scenarios.clone(),
                ObjKind::Mean,
                aggregated_ineq_blocks(
                    move |name| Agg::MeanStd { k: standard_normal_quantile(1.0 - p_f.get(name)) },
                    "gauss",
                ),
                "scc-gaussian",
            )?
        }
        SccMode::Saa => {
            let p_f = p_f.clone();
            let tau0 = SAA_TAU.max(0.5 * core.max_abs_ineq(&core.initial_guess()));
            let anneal = AnnealState::new(tau0, SAA_TAU_FACTOR, SAA_TAU_FLOOR);
            assemble(
                core,
                scenarios.clone(),
                ObjKind::Mean,
                aggregated_ineq_blocks(
                    move |name| Agg::Sigmoid {
                        p_f: p_f.get(name),
                        anneal: anneal.clone(),
                        hard: false,
                    },
                    "saa",
                ),
                "scc-saa",
            )?
        }
    };
    if mode == SccMode::Saa {
        let min_pf = p_f
            .overrides
            .values()
            .copied()
            .chain(std::iter::once(p_f.default))
            .fold(f64::INFINITY, f64::min);
        if (scenarios.n_scenarios() as f64) < 1.0 / min_pf {
            nlp.approximations.push(format!(
                "SAA resolution warning: {} scenarios < 1/p_f = {:.0}",
                scenarios.n_scenarios(),
                1.0 / min_pf
            ));
        }
    }
    Ok(nlp)
}

/// Probabilistic robust, weighted form: objective
/// `alpha_w * o_mean + (1 - alpha_w) * o_std`, constraints shifted by
/// `k_s` population standard deviations.
pub fn compile_pr_weighted(
    problem: &UccdProblem,
    scenarios: &ScenarioSet,
    structure: ControlStructure,
    alpha_w: f64,
    k_s: f64,
) -> Result<CompiledNlp, CompileError> {
    if !(0.0..=1.0).contains(&alpha_w) {
        return Err(CompileError::BadParameter(format!("alpha_w = {alpha_w} outside [0,1]")));
    }
    if k_s < 0.0 {
        return Err(CompileError::BadParameter(format!("k_s = {k_s} < 0")));
    }
    let weights = normalized_weights(scenarios);
    let core = Arc::new(build_core(problem, scenarios, weights, structure)?);
    assemble(
        core,
        scenarios.clone(),
        ObjKind::WeightedMeanStd { alpha_w },
        aggregated_ineq_blocks(move |_| Agg::MeanStd { k: k_s }, "shift"),
        "pr-w",
    )
}

/// Probabilistic robust, constrained form: mean feasibility plus separate
/// dispersion caps `std - sigma_a <= 0` per constraint.
pub fn compile_pr_constrained(
    problem: &UccdProblem,
    scenarios: &ScenarioSet,
    structure: ControlStructure,
    alpha_w: f64,
    sigma_a: &PerConstraint,
) -> Result<CompiledNlp, CompileError> {
    if !(0.0..=1.0).contains(&alpha_w) {
        return Err(CompileError::BadParameter(format!("alpha_w = {alpha_w} outside [0,1]")));
    }
    if sigma_a.default < 0.0 || sigma_a.overrides.values().any(|v| *v < 0.0) {
        return Err(CompileError::BadParameter("sigma_a must be nonnegative".into()));
    }
    let weights = normalized_weights(scenarios);
    let core = Arc::new(build_core(problem, scenarios, weights, structure)?);
    let sigma_a = sigma_a.clone();
    let blocks: BlockBuilder = Box::new(move |core: &ExpansionCore| {
        let mut blocks = Vec::new();
        for e in 0..core.ineq_names.len() {
            let name = core.ineq_names[e].clone();
            blocks.push(IneqBlock {
                source: IneqSource::Expr(e),
                agg: Agg::Mean,
                label: format!("{name}@mean"),
            });
            let cap = sigma_a.get(&name);
            if cap.is_finite() {
                blocks.push(IneqBlock {
                    source: IneqSource::Expr(e),
                    agg: Agg::StdCap { sigma_a: cap },
                    label: format!("{name}@stdcap"),
                });
            }
        }
        for l in 0..core.epigraph_count() {
            blocks.push(IneqBlock {
                source: IneqSource::Epigraph(l),
                agg: Agg::Mean,
                label: format!("{}@mean", core.epigraph_label(l)),
            });
        }
        blocks
    });
    assemble(core, scenarios.clone(), ObjKind::WeightedMeanStd { alpha_w }, blocks, "pr-c")
}
