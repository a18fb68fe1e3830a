//! Stochastic simulation and LQR machinery: Euler–Maruyama path ensembles
//! for the SDE form of the dynamics, the continuous algebraic Riccati
//! equation solved by Newton–Kleinman iteration, and closed-loop rollout
//! ensembles under initial-state and process noise.

use crate::mat::Mat;
use crate::model::{DiffusionSpec, DynamicsSpec, ModelError, ResolvedDrift, TimeGrid};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DynError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid spec: {0}")]
    Invalid(String),
    #[error("no stabilizing Riccati solution found within {0} iterations")]
    RiccatiStall(usize),
    #[error("the pair (A, B) admits no stabilizing initial gain")]
    Unstabilizable,
}

/// Drift plus diffusion: `d xi = f(.) dt + b(.) d w`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdeModel {
    pub drift: DynamicsSpec,
    /// Brownian dimension; must match the diffusion width.
    pub n_w: usize,
}

impl SdeModel {
    pub fn new(drift: DynamicsSpec) -> Result<Self, DynError> {
        drift.validate()?;
        let n_w = match &drift.diffusion {
            Some(DiffusionSpec::Constant { b }) => b.first().map_or(0, Vec::len),
            None => 0,
        };
        Ok(Self { drift, n_w })
    }
}

/// Path ensemble produced by [`euler_maruyama`]. Paths are stored as
/// `n_nodes x n_s` tables; non-finite excursions mark the path diverged.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub times: Vec<f64>,
    pub paths: Vec<Mat>,
    pub diverged: Vec<bool>,
}

impl PathEnsemble {
    pub fn n_paths(&self) -> usize {
        self.paths.len()
    }

    /// Per-node mean and (n-1) standard deviation of one state channel
    /// over the non-diverged paths.
    pub fn channel_stats(&self, channel: usize) -> (Vec<f64>, Vec<f64>) {
        let n_nodes = self.times.len();
        let live: Vec<&Mat> = self
            .paths
            .iter()
            .zip(&self.diverged)
            .filter(|(_, d)| !**d)
            .map(|(p, _)| p)
            .collect();
        let n = live.len().max(1) as f64;
        let mut mean = vec![0.0; n_nodes];
        let mut std = vec![0.0; n_nodes];
        for k in 0..n_nodes {
            let m: f64 = live.iter().map(|p| p.get(k, channel)).sum::<f64>() / n;
            mean[k] = m;
            if live.len() > 1 {
                let ss: f64 = live.iter().map(|p| (p.get(k, channel) - m).powi(2)).sum();
                std[k] = (ss / (n - 1.0)).sqrt();
            }
        }
        (mean, std)
    }
}

/// Explicit Euler–Maruyama (strong order 0.5):
/// `x_{k+1} = x_k + f h + b sqrt(h) z_k`. Each path draws from its own
/// counter-derived stream, so ensembles are reproducible and independent
/// of evaluation order; zero diffusion reduces exactly to explicit Euler.
pub fn euler_maruyama(
    model: &SdeModel,
    x0: &[f64],
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble, DynError> {
    assert!(n_paths >= 1, "need at least one path");
    let n_s = model.drift.n_states();
    if x0.len() != n_s {
        return Err(DynError::Invalid(format!(
            "x0 has {} entries, state has {n_s}",
            x0.len()
        )));
    }
    let drift = ResolvedDrift::resolve(&model.drift.drift, &|_| None, &|_| None)?;
    let diffusion = model.drift.diffusion.clone();
    let n_w = model.n_w;
    let n_nodes = grid.n_nodes();
    let zeros_u = vec![0.0; model.drift.n_controls()];

    let results = crate::par::map_range(n_paths, |path| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xeb5e_55aa_11aa_77ff);
        rng.set_stream(path as u64);
        let mut table = Mat::zeros(n_nodes, n_s);
        table.row_mut(0).copy_from_slice(x0);
        let mut f = vec![0.0; n_s];
        let mut diverged = false;
        for k in 0..n_nodes - 1 {
            let h = grid.step(k);
            let sqrt_h = h.sqrt();
            let x_k = table.row(k).to_vec();
            drift.eval(grid.node(k), &x_k, &zeros_u, &[], &[], &mut f);
            let mut x_next: Vec<f64> = (0..n_s).map(|i| x_k[i] + h * f[i]).collect();
            if let Some(DiffusionSpec::Constant { b }) = &diffusion {
                for j in 0..n_w {
                    let z: f64 = rng.sample(rand_distr::StandardNormal);
                    for (i, xi) in x_next.iter_mut().enumerate() {
                        *xi += b[i][j] * sqrt_h * z;
                    }
                }
            }
            if x_next.iter().any(|v| !v.is_finite()) {
                diverged = true;
                for k2 in k + 1..n_nodes {
                    table.row_mut(k2).fill(f64::NAN);
                }
                break;
            }
            table.row_mut(k + 1).copy_from_slice(&x_next);
        }
        (table, diverged)
    });

    let mut paths = Vec::with_capacity(n_paths);
    let mut diverged = Vec::with_capacity(n_paths);
    for (table, d) in results {
        paths.push(table);
        diverged.push(d);
    }
    Ok(PathEnsemble { times: grid.nodes().to_vec(), paths, diverged })
}

// ---------------------------------------------------------------------------
// Riccati / LQR
// ---------------------------------------------------------------------------

/// Infinite-horizon LQR specification.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrSpec {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    /// Reference state tracked by the closed loop.
    pub reference: DVector<f64>,
}

impl LqrSpec {
    pub fn from_rows(
        a: &[Vec<f64>],
        b: &[Vec<f64>],
        q: &[Vec<f64>],
        r: &[Vec<f64>],
        reference: Vec<f64>,
    ) -> Result<Self, DynError> {
        let n = a.len();
        if n == 0 || a.iter().any(|row| row.len() != n) {
            return Err(DynError::Invalid("A must be square".into()));
        }
        let m = b.first().map_or(0, Vec::len);
        if b.len() != n || m == 0 || b.iter().any(|row| row.len() != m) {
            return Err(DynError::Invalid("B must be n x m".into()));
        }
        let dm = |rows: &[Vec<f64>], nr: usize, nc: usize, what: &str| -> Result<DMatrix<f64>, DynError> {
            if rows.len() != nr || rows.iter().any(|row| row.len() != nc) {
                return Err(DynError::Invalid(format!("{what} must be {nr} x {nc}")));
            }
            Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
        };
        let q = dm(q, n, n, "Q")?;
        let r = dm(r, m, m, "R")?;
        for (mat, what) in [(&q, "Q"), (&r, "R")] {
            if (mat - mat.transpose()).amax() > 1e-10 {
                return Err(DynError::Invalid(format!("{what} must be symmetric")));
            }
        }
        if reference.len() != n {
            return Err(DynError::Invalid("reference must have state dimension".into()));
        }
        Ok(Self {
            a: dm(a, n, n, "A")?,
            b: dm(b, n, m, "B")?,
            q,
            r,
            reference: DVector::from_vec(reference),
        })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }
}

/// Solves the Lyapunov equation `M' X + X M = -C` through the Kronecker
/// linear system; fine for the small state dimensions in scope.
fn solve_lyapunov(m: &DMatrix<f64>, c: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = m.nrows();
    let mut k = DMatrix::<f64>::zeros(n * n, n * n);
    // vec(M' X + X M) = (I (x) M' + M' (x) I) vec(X), column-major vec
    for col in 0..n {
        for row in 0..n {
            let eq = col * n + row;
            for l in 0..n {
                k[(eq, col * n + l)] += m[(l, row)];
                k[(eq, l * n + row)] += m[(l, col)];
            }
        }
    }
    let rhs = DVector::from_fn(n * n, |idx, _| -c[(idx % n, idx / n)]);
    let sol = k.lu().solve(&rhs)?;
    let x = DMatrix::from_fn(n, n, |i, j| sol[j * n + i]);
    // symmetrize against round-off
    Some(0.5 * (&x + x.transpose()))
}

fn spectral_abscissa(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|e| e.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Stabilizing initial gain: zero for stable `A`; otherwise pole placement
/// via Ackermann for single-input systems up to dimension 2.
fn stabilizing_gain(spec: &LqrSpec) -> Result<DMatrix<f64>, DynError> {
    let n = spec.n();
    let m = spec.b.ncols();
    let zero = DMatrix::<f64>::zeros(m, n);
    if spectral_abscissa(&spec.a) < -1e-9 {
        return Ok(zero);
    }
    if m != 1 || n > 2 {
        return Err(DynError::Unstabilizable);
    }
    let b = spec.b.column(0);
    if n == 1 {
        if b[0].abs() < 1e-12 {
            return Err(DynError::Unstabilizable);
        }
        // place the closed-loop pole at -1
        let k = (spec.a[(0, 0)] + 1.0) / b[0];
        return Ok(DMatrix::from_row_slice(1, 1, &[k]));
    }
    // n == 2: Ackermann with target poles -1, -2
    let ab = &spec.a * b;
    let ctrb = DMatrix::from_columns(&[b.clone_owned(), ab]);
    let inv = ctrb.try_inverse().ok_or(DynError::Unstabilizable)?;
    // desired characteristic polynomial (s+1)(s+2) = s^2 + 3 s + 2
    let a2 = &spec.a * &spec.a;
    let phi = a2 + 3.0 * &spec.a + 2.0 * DMatrix::<f64>::identity(2, 2);
    let last_row = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
    let k = last_row * inv * phi;
    Ok(k)
}

/// Solves `A'P + PA - P B R^{-1} B' P + Q = 0` by Newton–Kleinman
/// iteration from a stabilizing seed gain. Returns a symmetric PSD `P`
/// with Frobenius residual below 1e-8.
pub fn solve_care(spec: &LqrSpec) -> Result<DMatrix<f64>, DynError> {
    const MAX_ITERS: usize = 60;
    const RESIDUAL_TOL: f64 = 1e-9;
    let r_inv = spec
        .r
        .clone()
        .try_inverse()
        .ok_or_else(|| DynError::Invalid("R must be invertible".into()))?;
    let mut k = stabilizing_gain(spec)?;
    let mut p = DMatrix::<f64>::zeros(spec.n(), spec.n());
    for _ in 0..MAX_ITERS {
        let a_cl = &spec.a - &spec.b * &k;
        if spectral_abscissa(&a_cl) >= 0.0 {
            return Err(DynError::Unstabilizable);
        }
        let c = &spec.q + k.transpose() * &spec.r * &k;
        p = solve_lyapunov(&a_cl, &c).ok_or(DynError::RiccatiStall(MAX_ITERS))?;
        k = &r_inv * spec.b.transpose() * &p;
        let residual = spec.a.transpose() * &p + &p * &spec.a
            - &p * &spec.b * &r_inv * spec.b.transpose() * &p
            + &spec.q;
        if residual.norm() <= RESIDUAL_TOL {
            return Ok(p);
        }
    }
    Err(DynError::RiccatiStall(MAX_ITERS))
}

/// CARE residual Frobenius norm, used by callers to report certification.
pub fn care_residual(spec: &LqrSpec, p: &DMatrix<f64>) -> f64 {
    let r_inv = spec.r.clone().try_inverse().expect("validated R");
    (spec.a.transpose() * p + p * &spec.a - p * &spec.b * r_inv * spec.b.transpose() * p
        + &spec.q)
        .norm()
}

/// LQR gain `K = R^{-1} B' P`.
pub fn lqr_gain(spec: &LqrSpec, p: &DMatrix<f64>) -> DMatrix<f64> {
    spec.r.clone().try_inverse().expect("validated R") * spec.b.transpose() * p
}

/// Closed-loop ensemble statistics from [`lqr_rollout_ensemble`].
#[derive(Debug, Clone)]
pub struct RolloutEnsemble {
    pub times: Vec<f64>,
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
    /// A few raw sample paths of the first state channel, for plotting.
    pub samples: Vec<Vec<f64>>,
    pub gain: DMatrix<f64>,
    pub care_residual: f64,
}

/// Simulates `n_paths` closed-loop trajectories `u = -K (x - reference)`
/// under Gaussian initial spread and additive process noise, with per-path
/// counter-derived streams. `gain_override` substitutes the LQR gain
/// (zero gives the open-loop system).
pub fn lqr_rollout_ensemble(
    spec: &LqrSpec,
    noise_b: Option<&DMatrix<f64>>,
    x0_mean: &[f64],
    x0_std: &[f64],
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    gain_override: Option<DMatrix<f64>>,
) -> Result<RolloutEnsemble, DynError> {
    let n = spec.n();
    if x0_mean.len() != n || x0_std.len() != n {
        return Err(DynError::Invalid("x0 moments must match the state dimension".into()));
    }
    let (gain, residual) = match gain_override {
        Some(k) => (k, 0.0),
        None => {
            let p = solve_care(spec)?;
            let res = care_residual(spec, &p);
            (lqr_gain(spec, &p), res)
        }
    };
    let n_nodes = grid.n_nodes();
    let n_w = noise_b.map_or(0, DMatrix::ncols);

    let tables = crate::par::map_range(n_paths, |path| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x10_0b5e_55);
        rng.set_stream(path as u64);
        let mut x = DVector::from_fn(n, |i, _| {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            x0_mean[i] + x0_std[i] * z
        });
        let mut table = Mat::zeros(n_nodes, n);
        for i in 0..n {
            table.set(0, i, x[i]);
        }
        for k in 0..n_nodes - 1 {
            let h = grid.step(k);
            let u = -&gain * (&x - &spec.reference);
            let mut x_next = &x + h * (&spec.a * &x + &spec.b * &u);
            if let Some(bm) = noise_b {
                let sqrt_h = h.sqrt();
                for j in 0..n_w {
                    let z: f64 = rng.sample(rand_distr::StandardNormal);
                    for i in 0..n {
                        x_next[i] += bm[(i, j)] * sqrt_h * z;
                    }
                }
            }
            x = x_next;
            for i in 0..n {
                table.set(k + 1, i, x[i]);
            }
        }
        table
    });

    let mut mean = vec![vec![0.0; n_nodes]; n];
    let mut std = vec![vec![0.0; n_nodes]; n];
    for i in 0..n {
        for k in 0..n_nodes {
            let m: f64 = tables.iter().map(|t| t.get(k, i)).sum::<f64>() / n_paths as f64;
            mean[i][k] = m;
            if n_paths > 1 {
                let ss: f64 = tables.iter().map(|t| (t.get(k, i) - m).powi(2)).sum();
                std[i][k] = (ss / (n_paths - 1) as f64).sqrt();
            }
        }
    }
    let samples = tables
        .iter()
        .take(5)
        .map(|t| (0..n_nodes).map(|k| t.get(k, 0)).collect())
        .collect();
    Ok(RolloutEnsemble {
        times: grid.nodes().to_vec(),
        mean,
        std,
        samples,
        gain,
        care_residual: residual,
    })
}
