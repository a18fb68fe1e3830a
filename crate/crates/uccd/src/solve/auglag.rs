//! Augmented-Lagrangian solver with a bound-projected L-BFGS inner loop.
//!
//! The outer loop carries multiplier estimates for equalities and
//! inequalities; the penalty grows tenfold whenever the constraint
//! violation fails to shrink by a factor of four. Gradients come from the
//! compiled problem's analytic closures when present, otherwise from
//! central finite differences on the augmented Lagrangian (parallel over
//! coordinates, assembled in index order so results are thread-count
//! independent).

use super::{
    GradientMode, GroupResidual, IterRecord, SliceValue, SolveReport, SolveStatus, SolverOptions,
};
use crate::formulations::CompiledNlp;
use std::time::Instant;

/// Inner-loop tolerance schedule: starts loose, tightens each outer round.
const INNER_TOL0: f64 = 1e-2;
const INNER_TOL_SHRINK: f64 = 0.2;

/// Penalty floor during end-game decay; small values improve conditioning
/// once the multipliers carry the constraints.
const MIN_PENALTY: f64 = 1e-2;

struct AugLag<'a> {
    nlp: &'a CompiledNlp,
    lambda: Vec<f64>,
    mu: Vec<f64>,
    rho: f64,
    use_analytic: bool,
    fd_step: f64,
}

impl<'a> AugLag<'a> {
    fn value(&self, x: &[f64]) -> f64 {
        let f = (self.nlp.objective.eval)(x);
        let mut c = vec![0.0; self.nlp.equalities.len];
        (self.nlp.equalities.eval)(x, &mut c);
        let mut g = vec![0.0; self.nlp.inequalities.len];
        (self.nlp.inequalities.eval)(x, &mut g);
        let mut acc = f;
        for (ci, li) in c.iter().zip(&self.lambda) {
            acc += li * ci + 0.5 * self.rho * ci * ci;
        }
        for (gi, mi) in g.iter().zip(&self.mu) {
            let t = (mi + self.rho * gi).max(0.0);
            acc += (t * t - mi * mi) / (2.0 * self.rho);
        }
        acc
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        if self.use_analytic {
            let obj_grad = self.nlp.objective.grad.as_ref().expect("checked");
            obj_grad(x, grad);
            let mut c = vec![0.0; self.nlp.equalities.len];
            (self.nlp.equalities.eval)(x, &mut c);
            let w_eq: Vec<f64> = c
                .iter()
                .zip(&self.lambda)
                .map(|(ci, li)| li + self.rho * ci)
                .collect();
            if let Some(vjp) = &self.nlp.equalities.vjp {
                vjp(x, &w_eq, grad);
            }
            let mut g = vec![0.0; self.nlp.inequalities.len];
            (self.nlp.inequalities.eval)(x, &mut g);
            let w_ineq: Vec<f64> = g
                .iter()
                .zip(&self.mu)
                .map(|(gi, mi)| (mi + self.rho * gi).max(0.0))
                .collect();
            if let Some(vjp) = &self.nlp.inequalities.vjp {
                vjp(x, &w_ineq, grad);
            }
        } else {
            let partials = crate::par::map_range(x.len(), |i| {
                let h = self.fd_step * x[i].abs().max(1.0);
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[i] += h;
                xm[i] -= h;
                (self.value(&xp) - self.value(&xm)) / (2.0 * h)
            });
            grad.copy_from_slice(&partials);
        }
    }
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lower[i], upper[i]);
    }
}

fn projected_grad_norm(x: &[f64], grad: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
    let mut norm = 0.0f64;
    for i in 0..x.len() {
        let active_low = x[i] <= lower[i] + 1e-12 && grad[i] > 0.0;
        let active_high = x[i] >= upper[i] - 1e-12 && grad[i] < 0.0;
        if !(active_low || active_high) {
            norm = norm.max(grad[i].abs());
        }
    }
    norm
}

/// Bound-projected L-BFGS with backtracking line search. Returns
/// (iterations used, final projected gradient norm, stalled-at-noise-floor).
#[allow(clippy::too_many_arguments)]
fn lbfgs_inner(
    al: &AugLag,
    x: &mut Vec<f64>,
    lower: &[f64],
    upper: &[f64],
    tol: f64,
    max_iters: usize,
    max_line_search: usize,
) -> (usize, f64, bool) {
    const MEMORY: usize = 10;
    let n = x.len();
    let mut s_list: Vec<Vec<f64>> = Vec::new();
    let mut y_list: Vec<Vec<f64>> = Vec::new();
    let mut rho_list: Vec<f64> = Vec::new();

    project(x, lower, upper);
    let mut fx = al.value(x);
    let mut grad = vec![0.0; n];
    al.gradient(x, &mut grad);
    let mut pg = projected_grad_norm(x, &grad, lower, upper);

    let mut iters = 0;
    let mut stalled = 0;
    let mut noise_floor = false;
    while iters < max_iters && pg > tol {
        iters += 1;
        // two-loop recursion
        let mut q = grad.clone();
        let mut alphas = vec![0.0; s_list.len()];
        for j in (0..s_list.len()).rev() {
            let a = rho_list[j] * dot(&s_list[j], &q);
            alphas[j] = a;
            axpy(&mut q, -a, &y_list[j]);
        }
        let gamma = if let (Some(s), Some(y)) = (s_list.last(), y_list.last()) {
            let yy = dot(y, y);
            if yy > 0.0 {
                dot(s, y) / yy
            } else {
                1.0
            }
        } else {
            1.0
        };
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
        for j in 0..s_list.len() {
            let b = rho_list[j] * dot(&y_list[j], &q);
            axpy(&mut q, alphas[j] - b, &s_list[j]);
        }
        // descent direction with safeguard
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        if dot(&dir, &grad) > -1e-12 * norm2(&dir) * norm2(&grad) {
            dir = grad.iter().map(|g| -g).collect();
        }

        // projected line search with parabolic interpolation; for a
        // quadratic augmented Lagrangian the fitted step is the exact line
        // minimum, which is what makes L-BFGS behave like CG here
        let g_dot_d = dot(&grad, &dir);
        let mut step = 1.0;
        let mut accepted = false;
        let mut x_new = vec![0.0; n];
        let mut f_new = fx;
        let trial = |step: f64, x_new: &mut Vec<f64>| -> f64 {
            for i in 0..n {
                x_new[i] = x[i] + step * dir[i];
            }
            project(x_new, lower, upper);
            al.value(x_new)
        };
        for ls in 0..max_line_search {
            f_new = trial(step, &mut x_new);
            let armijo = f_new.is_finite()
                && f_new <= fx + (1e-4 * step * g_dot_d).min(0.0) + 1e-16 * fx.abs();
            let curv = (f_new - fx - step * g_dot_d) / (step * step);
            if armijo {
                accepted = true;
                // one refinement at the parabola minimum (also extends
                // beyond the unit step when the model asks for it)
                if ls == 0 && curv > 0.0 {
                    let alpha = (-g_dot_d / (2.0 * curv)).clamp(1e-3 * step, 100.0 * step);
                    if (alpha - step).abs() > 1e-12 * step {
                        let mut x_ref = vec![0.0; n];
                        let f_ref = trial(alpha, &mut x_ref);
                        if f_ref.is_finite() && f_ref < f_new {
                            x_new = x_ref;
                            f_new = f_ref;
                        }
                    }
                }
                break;
            }
            // interpolated backtracking
            step = if curv > 0.0 {
                (-g_dot_d / (2.0 * curv)).clamp(0.05 * step, 0.5 * step)
            } else {
                0.5 * step
            };
        }
        if !accepted {
            noise_floor = true;
            break;
        }
        // stop when decreases sit at the floating-point noise floor
        if fx - f_new <= 1e-15 * (1.0 + fx.abs()) {
            stalled += 1;
            if stalled >= 25 {
                *x = x_new;
                fx = f_new;
                al.gradient(x, &mut grad);
                pg = projected_grad_norm(x, &grad, lower, upper);
                noise_floor = true;
                break;
            }
        } else {
            stalled = 0;
        }

        let mut grad_new = vec![0.0; n];
        al.gradient(&x_new, &mut grad_new);
        let s: Vec<f64> = x_new.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = grad_new.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm2(&s) * norm2(&y) {
            if s_list.len() == MEMORY {
                s_list.remove(0);
                y_list.remove(0);
                rho_list.remove(0);
            }
            rho_list.push(1.0 / sy);
            s_list.push(s);
            y_list.push(y);
        }
        *x = x_new.clone();
        fx = f_new;
        grad = grad_new;
        pg = projected_grad_norm(x, &grad, lower, upper);
    }
    (iters, pg, noise_floor)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn max_violation(c: &[f64], g: &[f64]) -> (f64, f64) {
    let eq = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let ineq = g.iter().fold(0.0f64, |m, v| m.max(*v));
    (eq, ineq.max(0.0))
}

/// Solves the compiled NLP from `x0`. Deterministic for fixed inputs and
/// options, regardless of thread count.
pub fn solve_nlp(nlp: &CompiledNlp, x0: &[f64], opts: &SolverOptions) -> SolveReport {
    let start = Instant::now();
    let n = nlp.n();
    assert_eq!(x0.len(), n, "initial point must match the layout");

    let use_analytic = opts.gradient_mode == GradientMode::Auto
        && nlp.objective.grad.is_some()
        && nlp.equalities.vjp.is_some()
        && nlp.inequalities.vjp.is_some();

    let mut x = x0.to_vec();
    project(&mut x, &nlp.lower, &nlp.upper);
    let mut al = AugLag {
        nlp,
        lambda: vec![0.0; nlp.equalities.len],
        mu: vec![0.0; nlp.inequalities.len],
        rho: opts.initial_penalty,
        use_analytic,
        fd_step: opts.fd_step,
    };

    let mut trace = Vec::new();
    let mut prev_violation = f64::INFINITY;
    // feasibility gate for multiplier updates
    let mut eta = 1e-2f64.max(10.0 * opts.constraint_tol);
    // one-way learning for penalty decay: a decay that loses feasibility
    // is reverted, and that penalty becomes the new floor
    let mut decay_floor = MIN_PENALTY;
    let mut just_decayed: Option<f64> = None;
    let mut inner_tol = INNER_TOL0.max(opts.gradient_tol);
    let inner_tol_floor = 0.1 * opts.gradient_tol;
    let inner_budget = opts.max_inner_iters.max(2 * n);
    let mut status = SolveStatus::IterationLimit;
    let mut last_pg = f64::INFINITY;
    let mut consecutive_optimal = 0;

    for outer in 0..opts.max_outer_iters {
        let (inner_iters, pg, noise_floor) = lbfgs_inner(
            &al,
            &mut x,
            &nlp.lower,
            &nlp.upper,
            inner_tol,
            inner_budget,
            opts.max_line_search,
        );
        last_pg = pg;
        // a subproblem counts as judged when it met its tolerance or ran
        // into the floating-point floor (nothing more to extract from it)
        let inner_converged = pg <= inner_tol * (1.0 + 1e-12) || noise_floor;

        let mut c = vec![0.0; nlp.equalities.len];
        (nlp.equalities.eval)(&x, &mut c);
        let mut g = vec![0.0; nlp.inequalities.len];
        (nlp.inequalities.eval)(&x, &mut g);
        let (eq_v, ineq_v) = max_violation(&c, &g);
        let violation = eq_v.max(ineq_v);
        if let Some(rho_before) = just_decayed.take() {
            if violation > opts.constraint_tol {
                decay_floor = decay_floor.max(rho_before);
                al.rho = rho_before;
            }
        }
        let objective = (nlp.objective.eval)(&x);
        trace.push(IterRecord {
            outer,
            inner_iters,
            objective,
            violation,
            penalty: al.rho,
            grad_norm: pg,
        });

        // hard re-check of smoothed rows, when present
        let hard_ok = match &nlp.hard_inequalities {
            Some(hard) => {
                let mut hv = vec![0.0; hard.len];
                (hard.eval)(&x, &mut hv);
                hv.iter().all(|v| *v <= opts.constraint_tol)
            }
            None => true,
        };

        // optimality requires a second (polish) pass so the multipliers
        // settle and the objective stops drifting at the 1e-6 level
        if violation <= opts.constraint_tol && pg <= opts.gradient_tol && hard_ok {
            consecutive_optimal += 1;
            if consecutive_optimal >= 2 {
                status = SolveStatus::Optimal;
                break;
            }
        } else {
            consecutive_optimal = 0;
        }
        // working-precision exit: feasible, at the floating-point floor,
        // and the objective has stopped moving across outer rounds
        if hard_ok && noise_floor && trace.len() >= 3 {
            let recent = &trace[trace.len() - 3..];
            let f_ref = recent[2].objective;
            let stagnant = recent.iter().all(|r| {
                r.violation <= opts.constraint_tol
                    && (r.objective - f_ref).abs() <= 1e-9 * (1.0 + f_ref.abs())
            });
            if stagnant {
                status = SolveStatus::Optimal;
                break;
            }
        }

        // multiplier updates only at sufficiently feasible iterates (the
        // gate tightens on every update), so noisy stall points cannot
        // random-walk the estimates
        let update_gate = eta.max(opts.constraint_tol);
        if violation <= update_gate {
            for (li, ci) in al.lambda.iter_mut().zip(&c) {
                *li += al.rho * ci;
            }
            for (mi, gi) in al.mu.iter_mut().zip(&g) {
                *mi = (*mi + al.rho * gi).max(0.0);
            }
            eta = (eta * 0.2).max(0.5 * opts.constraint_tol);
        }
        if violation <= opts.constraint_tol
            && (pg <= 10.0 * opts.gradient_tol || noise_floor)
            && al.rho > decay_floor
        {
            // feasible and squeezed dry: decay the penalty so the
            // conditioning allows polishing the gradient
            just_decayed = Some(al.rho);
            al.rho = (al.rho / opts.penalty_growth).max(decay_floor);
        } else if violation > update_gate
            && inner_converged
            && violation > 0.25 * prev_violation
        {
            al.rho = (al.rho * opts.penalty_growth).min(opts.max_penalty);
        }
        prev_violation = violation;
        inner_tol = (inner_tol * INNER_TOL_SHRINK).max(inner_tol_floor);
        if let Some(anneal) = &nlp.anneal {
            anneal.step();
        }
    }

    let mut c = vec![0.0; nlp.equalities.len];
    (nlp.equalities.eval)(&x, &mut c);
    let mut g = vec![0.0; nlp.inequalities.len];
    (nlp.inequalities.eval)(&x, &mut g);
    let (max_eq_violation, max_ineq_violation) = max_violation(&c, &g);
    let violation = max_eq_violation.max(max_ineq_violation);
    if status != SolveStatus::Optimal {
        status = if violation > (1e3 * opts.constraint_tol).max(1e-3) {
            SolveStatus::Infeasible
        } else if violation <= opts.constraint_tol && last_pg <= 10.0 * opts.gradient_tol {
            SolveStatus::Optimal
        } else {
            SolveStatus::IterationLimit
        };
    }

    let mut constraint_groups = Vec::new();
    let mut offset = 0;
    for (name, len) in &nlp.eq_groups {
        let worst = c[offset..offset + len].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        constraint_groups.push(GroupResidual { name: name.clone(), violation: worst });
        offset += len;
    }
    offset = 0;
    for (name, len) in &nlp.ineq_groups {
        let worst = g[offset..offset + len].iter().fold(0.0f64, |m, v| m.max(*v));
        constraint_groups
            .push(GroupResidual { name: name.clone(), violation: worst.max(0.0) });
        offset += len;
    }

    let slices = nlp
        .layout
        .slices()
        .into_iter()
        .map(|(name, range)| SliceValue { name, values: x[range].to_vec() })
        .collect();

    SolveReport {
        status,
        objective: (nlp.objective.eval)(&x),
        x,
        slices,
        max_eq_violation,
        max_ineq_violation,
        constraint_groups,
        trace,
        wall_time_s: start.elapsed().as_secs_f64(),
        approximations: nlp.approximations.clone(),
        terminal_spread: None,
        wcr: None,
    }
}
