//! Evaluation of objective, defects, and constraints at given trajectories,
//! plus the epigraph rewrite. These entry points favor clarity over speed;
//! the formulation compilers build their own index-resolved evaluators for
//! inner loops.

use super::{
    CostSpec, EpigraphLevel, ModelError, ProblemData, ResolvedDrift, StaticVar, TimeApplicability,
    Trajectory, UccdProblem,
};
use crate::mat::Mat;

fn check_trajectories(
    problem: &UccdProblem,
    u: &Trajectory,
    xi: &Trajectory,
) -> Result<(), ModelError> {
    let n = problem.grid.n_nodes();
    if u.n_nodes() != n || xi.n_nodes() != n {
        return Err(ModelError::Invalid(format!(
            "trajectories must have {n} nodes (got u: {}, xi: {})",
            u.n_nodes(),
            xi.n_nodes()
        )));
    }
    if u.n_channels() != problem.n_controls() || xi.n_channels() != problem.n_states() {
        return Err(ModelError::Invalid(format!(
            "channel mismatch: u {}x expected {}, xi {}x expected {}",
            u.n_channels(),
            problem.n_controls(),
            xi.n_channels(),
            problem.n_states()
        )));
    }
    Ok(())
}

/// Evaluates an arbitrary cost spec (trapezoidal Lagrange quadrature plus
/// Mayer term) on the given trajectories.
pub fn eval_cost_spec(
    problem: &UccdProblem,
    cost: &CostSpec,
    u: &Trajectory,
    xi: &Trajectory,
    statics: &[f64],
    _data: &ProblemData,
) -> Result<f64, ModelError> {
    let grid = &problem.grid;
    let mut total = 0.0;
    if let Some(lagrange) = &cost.lagrange {
        let samples: Vec<f64> = (0..grid.n_nodes())
            .map(|k| lagrange.eval(xi.node(k), u.node(k)))
            .collect();
        total += grid.trapezoid(&samples);
    }
    if let Some(mayer) = &cost.mayer {
        let statics_value = |name: &str| {
            statics[problem.statics.index_of(name).expect("validated static name")]
        };
        total += mayer.eval(xi.node(0), xi.node(grid.n_nodes() - 1), &statics_value);
    }
    if !total.is_finite() {
        return Err(ModelError::NonFinite("objective".into()));
    }
    Ok(total)
}

/// Objective of the problem (the epigraph variable when the problem has
/// been rewritten).
pub fn eval_objective(
    problem: &UccdProblem,
    u: &Trajectory,
    xi: &Trajectory,
    statics: &[f64],
    data: &ProblemData,
) -> Result<f64, ModelError> {
    check_trajectories(problem, u, xi)?;
    eval_cost_spec(problem, &problem.cost, u, xi, statics, data)
}

/// Trapezoidal collocation defects, one row per interval:
/// `zeta_k = xi_{k+1} - xi_k - h_k/2 (f_k + f_{k+1})`.
pub fn eval_defects(
    problem: &UccdProblem,
    u: &Trajectory,
    xi: &Trajectory,
    statics: &[f64],
    data: &ProblemData,
) -> Result<Mat, ModelError> {
    check_trajectories(problem, u, xi)?;
    let n_s = problem.n_states();
    let grid = &problem.grid;
    let static_index = |name: &str| problem.statics.index_of(name);
    let data_value = |name: &str| data.constants.get(name).copied();
    let drift = ResolvedDrift::resolve(&problem.dynamics.drift, &static_index, &data_value)?;

    let mut f_nodes = Mat::zeros(grid.n_nodes(), n_s);
    for k in 0..grid.n_nodes() {
        let row = f_nodes.row_mut(k);
        drift.eval(grid.node(k), xi.node(k), u.node(k), statics, &[], row);
    }
    let mut defects = Mat::zeros(grid.n_intervals(), n_s);
    for k in 0..grid.n_intervals() {
        let h = grid.step(k);
        for i in 0..n_s {
            let z = xi.node(k + 1)[i]
                - xi.node(k)[i]
                - 0.5 * h * (f_nodes.get(k, i) + f_nodes.get(k + 1, i));
            defects.set(k, i, z);
        }
    }
    if !defects.is_finite() {
        return Err(ModelError::NonFinite("defects".into()));
    }
    Ok(defects)
}

/// Boundary residuals for enabled components only.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryResiduals {
    pub initial: Vec<Option<f64>>,
    pub terminal: Vec<Option<f64>>,
}

/// Result of [`eval_constraints`]: path inequalities with `g <= 0`
/// feasibility convention, Type I residuals, epigraph rows, and boundary
/// residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintValues {
    /// `(name, [(node, value)])` for every applicable node.
    pub inequalities: Vec<(String, Vec<(usize, f64)>)>,
    pub type1_residuals: Vec<(String, Vec<(usize, f64)>)>,
    /// `(auxiliary var name, cost - v)` per epigraph level.
    pub epigraph: Vec<(String, f64)>,
    pub boundary: BoundaryResiduals,
}

pub fn eval_constraints(
    problem: &UccdProblem,
    u: &Trajectory,
    xi: &Trajectory,
    statics: &[f64],
    data: &ProblemData,
) -> Result<ConstraintValues, ModelError> {
    check_trajectories(problem, u, xi)?;
    let grid = &problem.grid;
    let n_nodes = grid.n_nodes();
    let statics_value =
        |name: &str| statics[problem.statics.index_of(name).expect("validated static name")];
    let data_value = |name: &str| data.constants.get(name).copied().unwrap_or(0.0);
    let signal_value =
        |name: &str, k: usize| data.signals.get(name).map_or(0.0, |s| s[k]);

    let eval_def = |expr: &super::ConstraintExpr, applies: TimeApplicability| {
        let mut vals = Vec::new();
        for k in 0..n_nodes {
            let t = grid.node(k);
            if !applies.applies_at(k, n_nodes, t) {
                continue;
            }
            let (x, uu): (&[f64], &[f64]) = if matches!(applies, TimeApplicability::Static) {
                (&[], &[])
            } else {
                (xi.node(k), u.node(k))
            };
            vals.push((k, expr.eval(x, uu, &statics_value, &data_value, &signal_value, k)));
        }
        vals
    };

    let mut inequalities = Vec::new();
    for def in problem.constraints.all_inequalities() {
        inequalities.push((def.name.clone(), eval_def(&def.expr, def.applies)));
    }
    let mut type1 = Vec::new();
    for def in &problem.constraints.type1_equalities {
        type1.push((def.name.clone(), eval_def(&def.expr, def.applies)));
    }
    let mut epigraph = Vec::new();
    for level in &problem.epigraph_levels {
        let cost = eval_cost_spec(problem, &level.cost, u, xi, statics, data)?;
        let v = statics_value(&level.var);
        epigraph.push((level.var.clone(), cost - v));
    }
    let boundary = BoundaryResiduals {
        initial: (0..problem.n_states())
            .map(|i| problem.boundary.initial_component(i).map(|b| xi.node(0)[i] - b))
            .collect(),
        terminal: (0..problem.n_states())
            .map(|i| {
                problem
                    .boundary
                    .terminal_component(i)
                    .map(|b| xi.node(n_nodes - 1)[i] - b)
            })
            .collect(),
    };
    Ok(ConstraintValues { inequalities, type1_residuals: type1, epigraph, boundary })
}

/// Epigraph rewrite: adds an auxiliary static variable `v`, replaces the
/// objective with `v`, and records the retained objective as a constraint
/// level `cost - v <= 0`. Applying it repeatedly stacks further levels.
pub fn epigraph_transform(problem: &UccdProblem) -> UccdProblem {
    let mut out = problem.clone();
    let mut idx = out.epigraph_levels.len() + 1;
    let var = loop {
        let candidate = if idx == 1 { "v_epi".to_string() } else { format!("v_epi{idx}") };
        if out.statics.index_of(&candidate).is_none() {
            break candidate;
        }
        idx += 1;
    };
    out.statics.vars.push(StaticVar {
        name: var.clone(),
        lower: -1e9,
        upper: 1e9,
        role: super::StaticRole::ControlGain,
    });
    out.epigraph_levels.push(EpigraphLevel { var: var.clone(), cost: out.cost.clone() });
    out.cost = CostSpec::static_value(&var);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        BoundaryConditions, ConstraintSpec, DriftSpec, DynamicsSpec, LagrangeForm, MayerForm,
        RegistryId, StaticVars, TimeGrid, TrajectoryKind,
    };
    use approx::assert_abs_diff_eq;
    use std::collections::BTreeMap;

    fn double_integrator(n_nodes: usize) -> UccdProblem {
        UccdProblem {
            grid: TimeGrid::uniform(0.0, 1.0, n_nodes).unwrap(),
            dynamics: DynamicsSpec {
                drift: DriftSpec::Registry {
                    id: RegistryId::DoubleIntegrator,
                    coefficients: BTreeMap::new(),
                },
                diffusion: None,
            },
            cost: CostSpec::min_energy(1),
            constraints: ConstraintSpec::default(),
            statics: StaticVars::default(),
            data: ProblemData::default(),
            boundary: BoundaryConditions {
                initial: vec![Some(0.0), Some(0.0)],
                terminal: vec![Some(1.0), Some(0.0)],
            },
            bindings: Vec::new(),
            epigraph_levels: Vec::new(),
        }
    }

    fn traj(kind: TrajectoryKind, names: &[&str], rows: Vec<Vec<f64>>) -> Trajectory {
        Trajectory {
            kind,
            names: names.iter().map(|s| s.to_string()).collect(),
            values: Mat::from_rows(&rows),
        }
    }

    #[test]
    fn constant_control_energy_is_exact() {
        // l = u^2, u = 2 on [0,1]: trapezoid is exact for constants -> 4
        let p = double_integrator(11);
        let u = Trajectory::constant(TrajectoryKind::Control, vec!["u".into()], &[2.0], 11);
        let xi = Trajectory::constant(
            TrajectoryKind::State,
            vec!["pos".into(), "vel".into()],
            &[0.0, 0.0],
            11,
        );
        let j = eval_objective(&p, &u, &xi, &[], &p.data.clone()).unwrap();
        assert_abs_diff_eq!(j, 4.0, epsilon = 1e-12);
    }

    #[test]
    fn mayer_only_objective() {
        let mut p = double_integrator(5);
        p.cost = CostSpec {
            lagrange: None,
            mayer: Some(MayerForm {
                terminal_quad: Some(vec![vec![1.0, 0.0], vec![0.0, 0.0]]),
                ..Default::default()
            }),
        };
        let u = Trajectory::constant(TrajectoryKind::Control, vec!["u".into()], &[0.0], 5);
        let mut rows = vec![vec![0.0, 0.0]; 5];
        rows[4] = vec![3.0, 0.0];
        let xi = traj(TrajectoryKind::State, &["pos", "vel"], rows);
        let j = eval_objective(&p, &u, &xi, &[], &p.data.clone()).unwrap();
        assert_abs_diff_eq!(j, 9.0);
    }

    #[test]
    fn min_energy_quadrature_converges_at_second_order() {
        // l = u^2 with u(t) = 6 - 12t: symbolic integral is exactly 12.
        let oracle = 12.0;
        let mut errors = Vec::new();
        for n in [51, 101, 201, 401] {
            let p = double_integrator(n);
            let rows: Vec<Vec<f64>> =
                p.grid.nodes().iter().map(|t| vec![6.0 - 12.0 * t]).collect();
            let u = traj(TrajectoryKind::Control, &["u"], rows);
            let xi = Trajectory::constant(
                TrajectoryKind::State,
                vec!["pos".into(), "vel".into()],
                &[0.0, 0.0],
                n,
            );
            let j = eval_objective(&p, &u, &xi, &[], &p.data.clone()).unwrap();
            errors.push((j - oracle).abs());
        }
        // 201 nodes is comfortably inside 1e-3 of the symbolic value
        assert!(errors[2] < 1e-3, "error at 201 nodes: {}", errors[2]);
        // observed order >= 1.9 on doubling refinements
        for w in errors.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order > 1.9, "observed order {order}");
        }
    }

    #[test]
    fn zero_dynamics_constant_states_zero_defects() {
        let mut p = double_integrator(7);
        p.dynamics = DynamicsSpec {
            drift: DriftSpec::Linear {
                a: vec![vec![0.0, 0.0], vec![0.0, 0.0]],
                b: vec![vec![0.0], vec![0.0]],
            },
            diffusion: None,
        };
        let u = Trajectory::constant(TrajectoryKind::Control, vec!["u0".into()], &[1.0], 7);
        let xi = Trajectory::constant(
            TrajectoryKind::State,
            vec!["x0".into(), "x1".into()],
            &[2.0, -1.0],
            7,
        );
        let d = eval_defects(&p, &u, &xi, &[], &p.data.clone()).unwrap();
        assert!(d.as_slice().iter().all(|z| *z == 0.0));
    }

    #[test]
    fn double_integrator_exact_for_constant_acceleration() {
        // u = 1: vel linear (trapezoid exact), pos quadratic (trapezoid of a
        // linear integrand is exact) -> machine-zero defects on 3 nodes.
        let p = double_integrator(3);
        let u = Trajectory::constant(TrajectoryKind::Control, vec!["u".into()], &[1.0], 3);
        let rows: Vec<Vec<f64>> =
            p.grid.nodes().iter().map(|t| vec![0.5 * t * t, *t]).collect();
        let xi = traj(TrajectoryKind::State, &["pos", "vel"], rows);
        let d = eval_defects(&p, &u, &xi, &[], &p.data.clone()).unwrap();
        for z in d.as_slice() {
            assert!(z.abs() < 1e-15, "defect {z}");
        }
    }

    #[test]
    fn node_perturbation_touches_two_defect_rows() {
        let p = double_integrator(9);
        let u = Trajectory::constant(TrajectoryKind::Control, vec!["u".into()], &[1.0], 9);
        let rows: Vec<Vec<f64>> =
            p.grid.nodes().iter().map(|t| vec![0.5 * t * t, *t]).collect();
        let xi = traj(TrajectoryKind::State, &["pos", "vel"], rows.clone());
        let base = eval_defects(&p, &u, &xi, &[], &p.data.clone()).unwrap();
        let mut rows2 = rows;
        rows2[4][0] += 0.1;
        let xi2 = traj(TrajectoryKind::State, &["pos", "vel"], rows2);
        let bumped = eval_defects(&p, &u, &xi2, &[], &p.data.clone()).unwrap();
        for k in 0..8 {
            for i in 0..2 {
                let changed = (base.get(k, i) - bumped.get(k, i)).abs() > 1e-14;
                let adjacent = k == 3 || k == 4;
                assert_eq!(changed, adjacent && i == 0, "row {k} state {i}");
            }
        }
    }

    #[test]
    fn constraint_values_and_boundary() {
        let mut p = double_integrator(5);
        p.constraints.inequalities.push(crate::model::InequalityDef {
            name: "pos_cap".into(),
            applies: TimeApplicability::All,
            expr: crate::model::ConstraintExpr {
                state_lin: vec![1.0, 0.0],
                constant: -1.0,
                ..Default::default()
            },
        });
        let u = Trajectory::constant(TrajectoryKind::Control, vec!["u".into()], &[0.0], 5);
        let xi = Trajectory::constant(
            TrajectoryKind::State,
            vec!["pos".into(), "vel".into()],
            &[0.5, 0.0],
            5,
        );
        let vals = eval_constraints(&p, &u, &xi, &[], &p.data.clone()).unwrap();
        let (_, g) = &vals.inequalities[0];
        assert_eq!(g.len(), 5);
        assert!(g.iter().all(|(_, v)| (*v - -0.5).abs() < 1e-15));
        // terminal target (1, 0) vs actual (0.5, 0)
        assert_eq!(vals.boundary.terminal[0], Some(-0.5));
        assert_eq!(vals.boundary.terminal[1], Some(0.0));
        assert_eq!(vals.boundary.initial[0], Some(0.5));
    }

    #[test]
    fn epigraph_stacks_and_preserves_cost_value() {
        let p = double_integrator(5);
        let once = epigraph_transform(&p);
        assert_eq!(once.statics.len(), 1);
        assert_eq!(once.epigraph_levels.len(), 1);
        let twice = epigraph_transform(&once);
        assert_eq!(twice.statics.len(), 2);
        assert_eq!(twice.epigraph_levels.len(), 2);
        twice.validate().unwrap();

        // objective now reads the newest auxiliary variable
        let u = Trajectory::constant(TrajectoryKind::Control, vec!["u".into()], &[2.0], 5);
        let xi = Trajectory::constant(
            TrajectoryKind::State,
            vec!["pos".into(), "vel".into()],
            &[0.0, 0.0],
            5,
        );
        let j = eval_objective(&once, &u, &xi, &[7.5], &p.data.clone()).unwrap();
        assert_eq!(j, 7.5);
        // the retained objective shows up as the epigraph residual
        let vals = eval_constraints(&once, &u, &xi, &[7.5], &p.data.clone()).unwrap();
        assert_eq!(vals.epigraph.len(), 1);
        assert_abs_diff_eq!(vals.epigraph[0].1, 4.0 - 7.5, epsilon = 1e-12);
    }
}
