//! Adversarial inner maximization and the scenario-generation loop for
//! worst-case robust problems.

use super::{solve_nlp, SolveError, SolveReport, SolveStatus, SolverOptions, WcrCertificate, WcrSummary};
use crate::formulations::{InnerMode, Layout, WcrCompilation, WcrSubproblem};
use crate::usets::{enumerate_vertices, CrispSet};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct InnerResult {
    pub worst_point: Vec<f64>,
    pub value: f64,
}

fn joint_vertices(sets: &[CrispSet]) -> Result<Vec<Vec<f64>>, SolveError> {
    let mut rows: Vec<Vec<f64>> = vec![Vec::new()];
    for set in sets {
        let verts = enumerate_vertices(set)
            .map_err(|_| SolveError::UnboundedSet)?;
        let mut next = Vec::with_capacity(rows.len() * verts.len());
        for prefix in &rows {
            for v in &verts {
                let mut row = prefix.clone();
                row.extend_from_slice(v);
                next.push(row);
            }
        }
        rows = next;
    }
    Ok(rows)
}

fn set_center(sets: &[CrispSet]) -> Vec<f64> {
    sets.iter().flat_map(|s| s.nominal()).collect()
}

fn bounding_box(sets: &[CrispSet]) -> Result<Vec<(f64, f64)>, SolveError> {
    let mut out = Vec::new();
    for set in sets {
        match set {
            CrispSet::Box { center, halfwidth } => {
                for (c, h) in center.iter().zip(halfwidth) {
                    out.push((c - h, c + h));
                }
            }
            CrispSet::Ellipsoid { center, shape, radius } => {
                // componentwise extent of the ellipsoid: r * sqrt((W^-1)_ii)
                let n = center.len();
                let w = nalgebra::DMatrix::from_fn(n, n, |i, j| shape[i][j]);
                let inv = w
                    .try_inverse()
                    .ok_or(SolveError::UnboundedSet)?;
                for (i, c) in center.iter().enumerate() {
                    let ext = radius * inv[(i, i)].max(0.0).sqrt();
                    out.push((c - ext, c + ext));
                }
            }
            CrispSet::Polytope { vertices } => {
                let dim = vertices[0].len();
                for d in 0..dim {
                    let lo = vertices.iter().map(|v| v[d]).fold(f64::INFINITY, f64::min);
                    let hi = vertices.iter().map(|v| v[d]).fold(f64::NEG_INFINITY, f64::max);
                    out.push((lo, hi));
                }
            }
        }
    }
    Ok(out)
}

/// Projects `q` onto the joint set, blockwise per binding.
fn project_joint(sets: &[CrispSet], q: &mut [f64]) -> Result<(), SolveError> {
    let mut off = 0;
    for set in sets {
        let dim = set.dim();
        let block = &mut q[off..off + dim];
        match set {
            CrispSet::Box { center, halfwidth } => {
                for i in 0..dim {
                    block[i] = block[i].clamp(center[i] - halfwidth[i], center[i] + halfwidth[i]);
                }
            }
            CrispSet::Ellipsoid { center, shape, radius } => {
                let mut quad = 0.0;
                for i in 0..dim {
                    for j in 0..dim {
                        quad += (block[i] - center[i]) * shape[i][j] * (block[j] - center[j]);
                    }
                }
                if quad > radius * radius && quad > 0.0 {
                    let scale = radius / quad.sqrt();
                    for i in 0..dim {
                        block[i] = center[i] + (block[i] - center[i]) * scale;
                    }
                }
            }
            CrispSet::Polytope { .. } => return Err(SolveError::PolytopeAscent),
        }
        off += dim;
    }
    Ok(())
}

/// Maximizes the subproblem's constraint over its crisp sets at the outer
/// decision `x`. Vertex mode enumerates exactly (lexicographically smallest
/// argmax on ties); ascent mode runs projected gradient ascent from the
/// set center plus eight seeded interior points. The returned value is
/// never below the value at the set center.
pub fn inner_maximize(
    sub: &WcrSubproblem,
    layout: &Layout,
    x: &[f64],
    opts: &SolverOptions,
) -> Result<InnerResult, SolveError> {
    let eval = |q: &[f64]| -> Result<f64, SolveError> {
        sub.eval(layout, x, q).map_err(SolveError::Compile)
    };
    if sub.dim == 0 {
        return Ok(InnerResult { worst_point: Vec::new(), value: eval(&[])? });
    }
    match sub.inner_mode {
        InnerMode::Vertex => {
            let mut best: Option<InnerResult> = None;
            for q in joint_vertices(&sub.sets)? {
                let v = eval(&q)?;
                let better = match &best {
                    None => true,
                    Some(b) => v > b.value,
                };
                if better {
                    best = Some(InnerResult { worst_point: q, value: v });
                }
            }
            Ok(best.expect("at least one vertex"))
        }
        InnerMode::Ascent => {
            let center = set_center(&sub.sets);
            let bbox = bounding_box(&sub.sets)?;
            let mut best = InnerResult { worst_point: center.clone(), value: eval(&center)? };
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5ee_d_1717);
            let mut starts = vec![center.clone()];
            for _ in 0..8 {
                let mut q: Vec<f64> = bbox
                    .iter()
                    .map(|(lo, hi)| if lo < hi { rng.gen_range(*lo..*hi) } else { *lo })
                    .collect();
                project_joint(&sub.sets, &mut q)?;
                starts.push(q);
            }
            for start in starts {
                let mut q = start;
                let mut value = eval(&q)?;
                let scale: f64 = bbox
                    .iter()
                    .map(|(lo, hi)| hi - lo)
                    .fold(0.0f64, f64::max)
                    .max(1e-6);
                let mut step = 0.1 * scale;
                for _ in 0..120 {
                    // central-difference ascent direction
                    let mut grad = vec![0.0; q.len()];
                    for i in 0..q.len() {
                        let h = opts.fd_step * q[i].abs().max(1.0);
                        let mut qp = q.clone();
                        let mut qm = q.clone();
                        qp[i] += h;
                        qm[i] -= h;
                        project_joint(&sub.sets, &mut qp)?;
                        project_joint(&sub.sets, &mut qm)?;
                        let denom = qp[i] - qm[i];
                        grad[i] = if denom.abs() > 1e-14 {
                            (eval(&qp)? - eval(&qm)?) / denom
                        } else {
                            0.0
                        };
                    }
                    let gnorm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
                    if gnorm < 1e-10 || step < 1e-12 {
                        break;
                    }
                    let mut q_new: Vec<f64> =
                        q.iter().zip(&grad).map(|(qi, gi)| qi + step * gi / gnorm).collect();
                    project_joint(&sub.sets, &mut q_new)?;
                    let v_new = eval(&q_new)?;
                    if v_new > value + 1e-14 {
                        q = q_new;
                        value = v_new;
                    } else {
                        step *= 0.5;
                    }
                }
                if value > best.value {
                    best = InnerResult { worst_point: q, value };
                }
            }
            Ok(best)
        }
    }
}

/// Cutting-scenario coordination: solve the outer problem against the
/// current pool, certify every constraint with the inner maximizer, append
/// violating realizations, and repeat until certified or the round cap.
pub fn solve_wcr(wcr: &WcrCompilation, opts: &SolverOptions) -> Result<SolveReport, SolveError> {
    let mut pool = wcr.pool.clone();
    let mut rounds = 0;
    loop {
        let nlp = wcr.rebuild(&pool)?;
        let mut report = solve_nlp(&nlp, &nlp.x0, opts);
        let mut certificates = Vec::new();
        let mut violations: Vec<Vec<f64>> = Vec::new();
        for sub in &wcr.subproblems {
            let inner = inner_maximize(sub, &nlp.layout, &report.x, opts)?;
            if inner.value > opts.constraint_tol {
                violations.push(inner.worst_point.clone());
            }
            certificates.push(WcrCertificate {
                constraint: sub.target.name().to_string(),
                worst_value: inner.value,
                worst_point: inner.worst_point,
            });
        }
        let certified = violations.is_empty();
        rounds += 1;
        if certified || rounds >= opts.wcr_max_rounds {
            if !certified {
                report.status = SolveStatus::IterationLimit;
            }
            report.wcr = Some(WcrSummary {
                rounds,
                pool_size: pool.len(),
                pool: pool.clone(),
                certificates,
            });
            return Ok(report);
        }
        for q in violations {
            let key: Vec<u64> = q.iter().map(|v| v.to_bits()).collect();
            let exists = pool
                .iter()
                .any(|row| row.iter().map(|v| v.to_bits()).collect::<Vec<_>>() == key);
            if !exists {
                pool.push(q);
            }
        }
    }
}
