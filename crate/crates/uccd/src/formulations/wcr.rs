//! Worst-case robust compilation.
//!
//! The epigraph rewrite is applied automatically, making the objective a
//! plain auxiliary variable. Vertex mode replicates every constraint over
//! all joint vertices of the crisp sets (exact for dependence that is
//! affine in the uncertain quantities). Scenario-generation mode starts
//! from the nominal realization and exposes one adversarial subproblem per
//! constraint; the solve loop appends violating realizations and re-solves.

use super::expand::build_core;
use super::{CompileError, CompiledNlp, ControlStructure, Layout};
use crate::mat::Mat;
use crate::model::{
    epigraph_transform, sim::simulate_trapezoidal, ResolvedDrift, TimeApplicability, UccdProblem,
};
use crate::usets::{enumerate_vertices, CrispSet, Provenance, ScenarioSet};
use std::collections::HashSet;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WcrMode {
    Vertex,
    ScenarioGeneration,
}

/// Which outer constraint a subproblem attacks.
#[derive(Debug, Clone, PartialEq)]
pub enum WcrTarget {
    Inequality { index: usize, name: String },
    Epigraph { level: usize, name: String },
}

impl WcrTarget {
    pub fn name(&self) -> &str {
        match self {
            Self::Inequality { name, .. } | Self::Epigraph { name, .. } => name,
        }
    }
}

/// Preferred inner maximization strategy for the joint uncertainty set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerMode {
    /// Exact enumeration (all sets are boxes or polytopes).
    Vertex,
    /// Projected multistart ascent (ellipsoids present).
    Ascent,
}

/// Adversarial inner problem: maximize one constraint over the crisp sets,
/// re-simulating states forward from the candidate realization.
pub struct WcrSubproblem {
    pub target: WcrTarget,
    /// Joint uncertain dimension (concatenated binding dims).
    pub dim: usize,
    /// Crisp set per binding, in binding order.
    pub sets: Vec<CrispSet>,
    pub inner_mode: InnerMode,
    shared: Arc<WcrShared>,
}

struct WcrShared {
    problem: UccdProblem,
}

impl WcrSubproblem {
    /// Evaluates the inner objective `g_target(q)` at the outer decision
    /// `x`: resolves the offsets of `q`, simulates states forward under the
    /// shared control and statics, and takes the worst applicable node.
    pub fn eval(&self, layout: &Layout, x: &[f64], q: &[f64]) -> Result<f64, CompileError> {
        let problem = &self.shared.problem;
        let offsets = problem.scenario_offsets(q);
        let n_u = layout.n_u;
        let n_nodes = layout.n_nodes;

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
        let drift = ResolvedDrift::resolve(&problem.dynamics.drift, &static_index, &data_value)?;

        let mut u_rows = Vec::with_capacity(n_nodes);
        for k in 0..n_nodes {
            let mut row = Vec::with_capacity(n_u);
            for j in 0..n_u {
                row.push(x[layout.u_index(0, k, j)]);
            }
            u_rows.push(row);
        }
        let u = Mat::from_rows(&u_rows);

        // initial state: enabled components from boundary plus offsets,
        // free components read from the first scenario block
        let mut x0 = vec![0.0; layout.n_s];
        for i in 0..layout.n_s {
            x0[i] = match problem.boundary.initial_component(i) {
                Some(base) => base + offsets.initial_state[i],
                None => x[layout.xi_index(0, 0, i)],
            };
        }
        let xi =
            simulate_trapezoidal(&drift, &problem.grid, &u, &x0, &p_eff, &offsets.noise)?;

        let statics_value =
            |name: &str| p_eff[problem.statics.index_of(name).expect("validated")];
        let data_value_or0 = |name: &str| data_value(name).unwrap_or(0.0);
        let signal_value = |name: &str, k: usize| {
            problem.data.signals.get(name).map_or(0.0, |s| {
                s[k] + offsets.signals.get(name).copied().unwrap_or(0.0)
            })
        };

        match &self.target {
            WcrTarget::Inequality { index, .. } => {
                let defs = problem.constraints.all_inequalities();
                let def = &defs[*index];
                let mut worst = f64::NEG_INFINITY;
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
                    let v = def.expr.eval(
                        xs,
                        us,
                        &statics_value,
                        &data_value_or0,
                        &signal_value,
                        k,
                    );
                    worst = worst.max(v);
                }
                Ok(worst)
            }
            WcrTarget::Epigraph { level, .. } => {
                if layout.n_p < problem.n_statics() {
                    return Err(CompileError::BadParameter(
                        "epigraph subproblem needs the robust counterpart's own layout".into(),
                    ));
                }
                let lvl = &problem.epigraph_levels[*level];
                let mut total = 0.0;
                if let Some(l) = &lvl.cost.lagrange {
                    let samples: Vec<f64> =
                        (0..n_nodes).map(|k| l.eval(xi.row(k), u.row(k))).collect();
                    total += problem.grid.trapezoid(&samples);
                }
                if let Some(m) = &lvl.cost.mayer {
                    total += m.eval(xi.row(0), xi.row(n_nodes - 1), &statics_value);
                }
                let v_idx = problem.statics.index_of(&lvl.var).expect("validated");
                Ok(total - p_eff[v_idx])
            }
        }
    }
}

/// Result of a worst-case robust compilation.
pub struct WcrCompilation {
    pub nlp: CompiledNlp,
    pub subproblems: Vec<WcrSubproblem>,
    /// Scenario pool backing `nlp` (offset rows).
    pub pool: Vec<Vec<f64>>,
    pub mode: WcrMode,
    rebuild: Arc<dyn Fn(&[Vec<f64>]) -> Result<CompiledNlp, CompileError> + Send + Sync>,
}

impl WcrCompilation {
    pub fn rebuild(&self, pool: &[Vec<f64>]) -> Result<CompiledNlp, CompileError> {
        (self.rebuild)(pool)
    }
}

fn pool_nlp(problem: &UccdProblem, pool: &[Vec<f64>]) -> Result<CompiledNlp, CompileError> {
    let n = pool.len();
    let scen = ScenarioSet {
        points: Mat::from_rows(pool),
        weights: vec![1.0 / n as f64; n],
        provenance: if n == 1 { Provenance::Nominal } else { Provenance::Vertices },
        binding_order: problem.binding_names(),
    };
    let weights = vec![1.0 / n as f64; n];
    let core = Arc::new(build_core(problem, &scen, weights, ControlStructure::Olsc)?);
    let mut nlp = super::compile::assemble(
        core,
        scen,
        super::expand::ObjKind::Mean,
        super::compile::per_scenario_ineq_blocks(),
        "wcr",
    )?;
    nlp.exactness = Some("affine-only".to_string());
    Ok(nlp)
}

/// Compiles the robust counterpart. Requires crisp renderings on every
/// binding; vertex mode additionally requires box or polytope sets.
pub fn compile_wcr(problem: &UccdProblem, mode: WcrMode) -> Result<WcrCompilation, CompileError> {
    let sets: Vec<CrispSet> = problem
        .crisp_sets()
        .map_err(|e| CompileError::IncompatibleBindings(e.to_string()))?
        .into_iter()
        .map(|(_, set)| set)
        .collect();

    // the robust counterpart minimizes the epigraph variable
    let work = if problem.epigraph_levels.is_empty() {
        epigraph_transform(problem)
    } else {
        problem.clone()
    };

    let pool: Vec<Vec<f64>> = match mode {
        WcrMode::Vertex => {
            let per_binding: Vec<Vec<Vec<f64>>> = sets
                .iter()
                .map(|set| {
                    enumerate_vertices(set).map_err(|e| {
                        CompileError::VertexModeUnsupported(e.to_string())
                    })
                })
                .collect::<Result<_, _>>()?;
            let mut rows: Vec<Vec<f64>> = vec![Vec::new()];
            for verts in &per_binding {
                let mut next = Vec::with_capacity(rows.len() * verts.len());
                for prefix in &rows {
                    for v in verts {
                        let mut row = prefix.clone();
                        row.extend_from_slice(v);
                        next.push(row);
                    }
                }
                rows = next;
                if rows.len() > 4096 {
                    return Err(CompileError::TooManyVertices(rows.len()));
                }
            }
            dedup_rows(rows)
        }
        WcrMode::ScenarioGeneration => vec![work.nominal_offsets_row()],
    };
    let pool = if pool.is_empty() || pool[0].is_empty() && work.n_uncertain() == 0 {
        vec![work.nominal_offsets_row()]
    } else {
        pool
    };

    let nlp = pool_nlp(&work, &pool)?;
    let shared = Arc::new(WcrShared { problem: work.clone() });
    let inner_mode = if sets
        .iter()
        .all(|s| matches!(s, CrispSet::Box { .. } | CrispSet::Polytope { .. }))
    {
        InnerMode::Vertex
    } else {
        InnerMode::Ascent
    };
    let dim: usize = work.n_uncertain();

    let mut subproblems = Vec::new();
    for (index, def) in work.constraints.all_inequalities().iter().enumerate() {
        subproblems.push(WcrSubproblem {
            target: WcrTarget::Inequality { index, name: def.name.clone() },
            dim,
            sets: sets.clone(),
            inner_mode,
            shared: Arc::clone(&shared),
        });
    }
    for (level, lvl) in work.epigraph_levels.iter().enumerate() {
        subproblems.push(WcrSubproblem {
            target: WcrTarget::Epigraph { level, name: format!("epigraph:{}", lvl.var) },
            dim,
            sets: sets.clone(),
            inner_mode,
            shared: Arc::clone(&shared),
        });
    }

    let rebuild_problem = work;
    let rebuild = Arc::new(move |pool: &[Vec<f64>]| pool_nlp(&rebuild_problem, pool));
    Ok(WcrCompilation { nlp, subproblems, pool, mode, rebuild })
}

fn dedup_rows(rows: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let mut seen: HashSet<Vec<u64>> = HashSet::new();
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
        if seen.insert(key) {
            out.push(row);
        }
    }
    out
}
