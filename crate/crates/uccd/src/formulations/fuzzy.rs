//! Fuzzy expected-value and possibilistic chance-constrained compilers.
//!
//! Both propagate alpha-grid scenarios through the dynamics (one state
//! block and defect set per alpha-cut endpoint). The expected-value form
//! takes credibility-weighted expectations of objective and constraints;
//! the possibilistic form additionally pins constraints on the alpha-cut
//! endpoints at the failure-possibility level, which realizes
//! `POS[g > 0] <= POS_f` for quasi-concave propagation.

use super::expand::{build_core, Agg, IneqBlock, IneqSource, ObjKind};
use super::{CompileError, CompiledNlp, ControlStructure, PerConstraint};
use crate::model::UccdProblem;
use crate::usets::{alpha_cut, ScenarioSet};
use std::sync::Arc;

fn fuzzy_grid(
    problem: &UccdProblem,
    n_levels: usize,
) -> Result<(ScenarioSet, Vec<f64>), CompileError> {
    let sets = problem
        .fuzzy_sets()
        .map_err(|e| CompileError::IncompatibleBindings(e.to_string()))?;
    if sets.is_empty() {
        return Err(CompileError::IncompatibleBindings(
            "fuzzy formulations need at least one fuzzy binding".into(),
        ));
    }
    let scen = crate::usets::alpha_grid_scenarios(&sets, n_levels)?;
    let cw = super::credibility_weights(&scen)?;
    Ok((scen, cw))
}

/// Fuzzy expected-value compile: credibility-weighted expectations of the
/// objective and every inequality constraint.
pub fn compile_fe(
    problem: &UccdProblem,
    structure: ControlStructure,
    n_levels: usize,
) -> Result<CompiledNlp, CompileError> {
    if n_levels < 2 {
        return Err(CompileError::BadParameter("n_levels must be >= 2".into()));
    }
    let (scen, cw) = fuzzy_grid(problem, n_levels)?;
    let cw = Arc::new(cw);
    let core = Arc::new(build_core(problem, &scen, cw.as_ref().clone(), structure)?);
    let blocks_cw = Arc::clone(&cw);
    let mut nlp = super::compile::assemble(
        core,
        scen,
        ObjKind::CredMean { cw: Arc::clone(&cw) },
        Box::new(move |core| {
            let mut blocks = Vec::new();
            for e in 0..core.ineq_names.len() {
                blocks.push(IneqBlock {
                    source: IneqSource::Expr(e),
                    agg: Agg::CredMean { cw: Arc::clone(&blocks_cw) },
                    label: format!("{}@cred", core.ineq_names[e]),
                });
            }
            for l in 0..core.epigraph_count() {
                blocks.push(IneqBlock {
                    source: IneqSource::Epigraph(l),
                    agg: Agg::CredMean { cw: Arc::clone(&blocks_cw) },
                    label: format!("{}@cred", core.epigraph_label(l)),
                });
            }
            blocks
        }),
        "fe",
    )?;
    nlp.approximations
        .push("credibility expectation on a finite alpha grid".to_string());
    if problem.n_uncertain() > 1 {
        nlp.approximations
            .push("one-factor-at-a-time alpha propagation across fuzzy bindings".to_string());
    }
    Ok(nlp)
}

/// Possibilistic chance-constrained compile: the objective is the
/// credibility expectation over the alpha grid; each constraint is
/// enforced on the alpha-cut endpoint scenarios at its `POS_f` level
/// (appended after the grid rows).
pub fn compile_pcc(
    problem: &UccdProblem,
    structure: ControlStructure,
    pos_f: &PerConstraint,
    n_levels: usize,
) -> Result<CompiledNlp, CompileError> {
    if n_levels < 2 {
        return Err(CompileError::BadParameter("n_levels must be >= 2".into()));
    }
    let check = |v: f64| -> Result<(), CompileError> {
        if !(v > 0.0 && v <= 1.0) {
            return Err(CompileError::BadParameter(format!("pos_f = {v} outside (0,1]")));
        }
        Ok(())
    };
    check(pos_f.default)?;
    for v in pos_f.overrides.values() {
        check(*v)?;
    }

    let (grid, cw) = fuzzy_grid(problem, n_levels)?;
    let sets = problem.fuzzy_sets().expect("checked by fuzzy_grid");
    let peaks: Vec<f64> = sets.iter().map(|(_, s)| s.peak()).collect();

    // distinct possibility levels used by any constraint, each expanded
    // into cut-endpoint rows appended after the grid rows
    let mut levels: Vec<f64> = pos_f
        .overrides
        .values()
        .copied()
        .chain(std::iter::once(pos_f.default))
        .collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();

    let mut points: Vec<Vec<f64>> = (0..grid.n_scenarios())
        .map(|k| grid.scenario(k).to_vec())
        .collect();
    let mut weights = grid.weights.clone();
    let mut level_rows: Vec<(f64, Vec<usize>)> = Vec::new();
    for level in &levels {
        let mut rows = Vec::new();
        for (s_idx, (_, set)) in sets.iter().enumerate() {
            let (lo, hi) = alpha_cut(set, *level)?;
            for endpoint in [lo, hi] {
                let mut row = peaks.clone();
                row[s_idx] = endpoint;
                rows.push(points.len());
                points.push(row);
                weights.push(*level);
            }
        }
        level_rows.push((*level, rows));
    }
    let scen = ScenarioSet {
        points: crate::mat::Mat::from_rows(&points),
        weights,
        provenance: grid.provenance.clone(),
        binding_order: grid.binding_order.clone(),
    };

    // credibility weights padded with zeros for the appended cut rows
    let mut cw_full = cw;
    cw_full.resize(points.len(), 0.0);
    let cw_full = Arc::new(cw_full);

    let core = Arc::new(build_core(problem, &scen, cw_full.as_ref().clone(), structure)?);
    let obj_cw = Arc::clone(&cw_full);
    let pos_f = pos_f.clone();
    let mut nlp = super::compile::assemble(
        core,
        scen,
        ObjKind::CredMean { cw: Arc::clone(&cw_full) },
        Box::new(move |core| {
            let mut blocks = Vec::new();
            for e in 0..core.ineq_names.len() {
                let name = core.ineq_names[e].clone();
                let level = pos_f.get(&name);
                let rows = level_rows
                    .iter()
                    .find(|(l, _)| *l == level)
                    .map(|(_, rows)| rows.clone())
                    .expect("level registered above");
                blocks.push(IneqBlock {
                    source: IneqSource::Expr(e),
                    agg: Agg::Scenarios(rows),
                    label: format!("{name}@pos{level}"),
                });
            }
            for l in 0..core.epigraph_count() {
                blocks.push(IneqBlock {
                    source: IneqSource::Epigraph(l),
                    agg: Agg::CredMean { cw: Arc::clone(&obj_cw) },
                    label: format!("{}@cred", core.epigraph_label(l)),
                });
            }
            blocks
        }),
        "pcc",
    )?;
    nlp.approximations
        .push("possibility constraint via alpha-cut endpoint enforcement".to_string());
    Ok(nlp)
}
