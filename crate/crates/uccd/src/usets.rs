//! Uncertainty set representations and their finite scenario parameterizations.
//!
//! Three families are supported: stochastic models with known distributions,
//! crisp (set-membership) descriptions, and fuzzy membership functions. Each
//! can be reduced to a [`ScenarioSet`] — the finite stand-in for the uncertain
//! dimension that the formulation compilers consume.

use crate::mat::Mat;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Floor applied to alpha levels so that unbounded membership tails
/// (gaussian) stay bounded. Documented knob, not configurable per call.
pub const ALPHA_FLOOR: f64 = 0.01;

/// Default number of alpha levels used by fuzzy compilers.
pub const DEFAULT_ALPHA_LEVELS: usize = 11;

#[derive(Debug, Error)]
pub enum UsetError {
    #[error("dimension mismatch: set has {expected} dims, point has {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("ellipsoidal sets have no finite vertex enumeration")]
    NoVertices,
    #[error("polytope membership implemented for 1-D and 2-D sets only (got {0}-D)")]
    UnsupportedDimension(usize),
    #[error("alpha must lie in (0, 1], got {0}")]
    BadAlpha(f64),
    #[error("invalid model: {0}")]
    InvalidModel(String),
}

// ---------------------------------------------------------------------------
// Stochastic models
// ---------------------------------------------------------------------------

/// Scalar stochastic model with a known distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StochasticModel {
    Gaussian { mu: f64, sigma: f64 },
    Uniform { lo: f64, hi: f64 },
    Discrete { values: Vec<f64>, probabilities: Vec<f64> },
}

impl StochasticModel {
    pub fn validate(&self) -> Result<(), UsetError> {
        match self {
            Self::Gaussian { sigma, .. } => {
                if *sigma <= 0.0 {
                    return Err(UsetError::InvalidModel(format!("sigma must be > 0, got {sigma}")));
                }
            }
            Self::Uniform { lo, hi } => {
                if lo >= hi {
                    return Err(UsetError::InvalidModel(format!("need lo < hi, got [{lo}, {hi}]")));
                }
            }
            Self::Discrete { values, probabilities } => {
                if values.is_empty() || values.len() != probabilities.len() {
                    return Err(UsetError::InvalidModel(
                        "discrete model needs matching nonempty values/probabilities".into(),
                    ));
                }
                let total: f64 = probabilities.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(UsetError::InvalidModel(format!(
                        "probabilities sum to {total}, expected 1"
                    )));
                }
                if probabilities.iter().any(|p| *p < 0.0) {
                    return Err(UsetError::InvalidModel("negative probability".into()));
                }
            }
        }
        Ok(())
    }

    /// Nominal (location) value used wherever a deterministic stand-in is
    /// needed: mean for gaussian and discrete, interval midpoint for uniform.
    pub fn nominal(&self) -> f64 {
        match self {
            Self::Gaussian { mu, .. } => *mu,
            Self::Uniform { lo, hi } => 0.5 * (lo + hi),
            Self::Discrete { values, probabilities } => {
                values.iter().zip(probabilities).map(|(v, p)| v * p).sum()
            }
        }
    }

    /// Exact standard deviation of the model.
    pub fn std_dev(&self) -> f64 {
        match self {
            Self::Gaussian { sigma, .. } => *sigma,
            Self::Uniform { lo, hi } => (hi - lo) / (12.0f64).sqrt(),
            Self::Discrete { values, probabilities } => {
                let mu = self.nominal();
                values
                    .iter()
                    .zip(probabilities)
                    .map(|(v, p)| p * (v - mu) * (v - mu))
                    .sum::<f64>()
                    .sqrt()
            }
        }
    }

    fn sample_one(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Self::Gaussian { mu, sigma } => {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                mu + sigma * z
            }
            Self::Uniform { lo, hi } => rng.gen_range(*lo..*hi),
            Self::Discrete { values, probabilities } => {
                // Cumulative-inverse draw; ties resolved toward the first bin.
                let u: f64 = rng.gen();
                let mut cum = 0.0;
                for (v, p) in values.iter().zip(probabilities) {
                    cum += p;
                    if u <= cum {
                        return *v;
                    }
                }
                *values.last().expect("nonempty discrete model")
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Crisp sets
// ---------------------------------------------------------------------------

/// Norm family inducing the set geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormTag {
    L1,
    L2,
    Linf,
}

/// Crisp uncertainty set: membership is 0/1 and boundary points are members.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CrispSet {
    /// Componentwise `|center - q| <= halfwidth`.
    Box { center: Vec<f64>, halfwidth: Vec<f64> },
    /// `(q - center)^T shape (q - center) <= radius^2` with SPD `shape`.
    Ellipsoid { center: Vec<f64>, shape: Vec<Vec<f64>>, radius: f64 },
    /// Explicit convex polytope given by its vertices.
    Polytope { vertices: Vec<Vec<f64>> },
}

impl CrispSet {
    pub fn dim(&self) -> usize {
        match self {
            Self::Box { center, .. } | Self::Ellipsoid { center, .. } => center.len(),
            Self::Polytope { vertices } => vertices.first().map_or(0, Vec::len),
        }
    }

    pub fn norm_tag(&self) -> NormTag {
        match self {
            Self::Box { .. } => NormTag::Linf,
            Self::Ellipsoid { .. } => NormTag::L2,
            Self::Polytope { .. } => NormTag::L1,
        }
    }

    pub fn validate(&self) -> Result<(), UsetError> {
        match self {
            Self::Box { center, halfwidth } => {
                if center.len() != halfwidth.len() {
                    return Err(UsetError::InvalidModel("center/halfwidth length mismatch".into()));
                }
                if halfwidth.iter().any(|h| *h < 0.0) {
                    return Err(UsetError::InvalidModel("negative halfwidth".into()));
                }
            }
            Self::Ellipsoid { center, shape, radius } => {
                let n = center.len();
                if shape.len() != n || shape.iter().any(|r| r.len() != n) {
                    return Err(UsetError::InvalidModel("shape matrix dimension mismatch".into()));
                }
                if *radius < 0.0 {
                    return Err(UsetError::InvalidModel("negative radius".into()));
                }
                for i in 0..n {
                    for j in 0..n {
                        if (shape[i][j] - shape[j][i]).abs() > 1e-10 {
                            return Err(UsetError::InvalidModel("shape matrix not symmetric".into()));
                        }
                    }
                    if shape[i][i] <= 0.0 {
                        return Err(UsetError::InvalidModel("shape diagonal must be positive".into()));
                    }
                }
            }
            Self::Polytope { vertices } => {
                if vertices.is_empty() {
                    return Err(UsetError::InvalidModel("polytope needs at least one vertex".into()));
                }
                let n = vertices[0].len();
                if vertices.iter().any(|v| v.len() != n) {
                    return Err(UsetError::InvalidModel("ragged polytope vertices".into()));
                }
            }
        }
        Ok(())
    }

    /// Nominal point of the set: center for box/ellipsoid, vertex centroid
    /// for polytopes.
    pub fn nominal(&self) -> Vec<f64> {
        match self {
            Self::Box { center, .. } | Self::Ellipsoid { center, .. } => center.clone(),
            Self::Polytope { vertices } => {
                let n = vertices[0].len();
                let mut c = vec![0.0; n];
                for v in vertices {
                    for (ci, vi) in c.iter_mut().zip(v) {
                        *ci += vi;
                    }
                }
                for ci in &mut c {
                    *ci /= vertices.len() as f64;
                }
                c
            }
        }
    }
}

/// Membership test for a crisp set. Boundary points count as members.
pub fn crisp_contains(set: &CrispSet, q: &[f64]) -> Result<bool, UsetError> {
    if q.len() != set.dim() {
        return Err(UsetError::DimensionMismatch { expected: set.dim(), got: q.len() });
    }
    match set {
        CrispSet::Box { center, halfwidth } => Ok(center
            .iter()
            .zip(halfwidth)
            .zip(q)
            .all(|((c, h), qi)| (c - qi).abs() <= *h)),
        CrispSet::Ellipsoid { center, shape, radius } => {
            let n = center.len();
            let mut quad = 0.0;
            for i in 0..n {
                for j in 0..n {
                    quad += (q[i] - center[i]) * shape[i][j] * (q[j] - center[j]);
                }
            }
            Ok(quad <= radius * radius)
        }
        CrispSet::Polytope { vertices } => polytope_contains(vertices, q),
    }
}

fn polytope_contains(vertices: &[Vec<f64>], q: &[f64]) -> Result<bool, UsetError> {
    match q.len() {
        1 => {
            let lo = vertices.iter().map(|v| v[0]).fold(f64::INFINITY, f64::min);
            let hi = vertices.iter().map(|v| v[0]).fold(f64::NEG_INFINITY, f64::max);
            Ok(q[0] >= lo - 1e-12 && q[0] <= hi + 1e-12)
        }
        2 => {
            let hull = convex_hull_2d(vertices);
            if hull.len() == 1 {
                return Ok((q[0] - hull[0][0]).abs() <= 1e-12 && (q[1] - hull[0][1]).abs() <= 1e-12);
            }
            // q is inside iff it is on the non-negative side of every hull edge
            // (hull is counter-clockwise).
            for i in 0..hull.len() {
                let a = &hull[i];
                let b = &hull[(i + 1) % hull.len()];
                let cross = (b[0] - a[0]) * (q[1] - a[1]) - (b[1] - a[1]) * (q[0] - a[0]);
                if cross < -1e-12 {
                    return Ok(false);
                }
            }
            Ok(true)
        }
        n => Err(UsetError::UnsupportedDimension(n)),
    }
}

/// Andrew's monotone chain; returns the hull counter-clockwise.
fn convex_hull_2d(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut pts: Vec<Vec<f64>> = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup_by(|a, b| a[0] == b[0] && a[1] == b[1]);
    if pts.len() <= 2 {
        return pts;
    }
    let cross = |o: &[f64], a: &[f64], b: &[f64]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let mut lower: Vec<Vec<f64>> = Vec::new();
    for p in &pts {
        while lower.len() >= 2 && cross(&lower[lower.len() - 2], &lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p.clone());
    }
    let mut upper: Vec<Vec<f64>> = Vec::new();
    for p in pts.iter().rev() {
        while upper.len() >= 2 && cross(&upper[upper.len() - 2], &upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p.clone());
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

// ---------------------------------------------------------------------------
// Fuzzy sets
// ---------------------------------------------------------------------------

/// Fuzzy membership function over the real line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FuzzySet {
    Triangular { a: f64, b: f64, c: f64 },
    Trapezoidal { a: f64, b: f64, c: f64, d: f64 },
    GaussianMembership { center: f64, width: f64 },
}

impl FuzzySet {
    pub fn validate(&self) -> Result<(), UsetError> {
        match self {
            Self::Triangular { a, b, c } => {
                if !(a <= b && b <= c) {
                    return Err(UsetError::InvalidModel(format!(
                        "triangular needs a <= b <= c, got ({a}, {b}, {c})"
                    )));
                }
            }
            Self::Trapezoidal { a, b, c, d } => {
                if !(a <= b && b <= c && c <= d) {
                    return Err(UsetError::InvalidModel(format!(
                        "trapezoidal needs a <= b <= c <= d, got ({a}, {b}, {c}, {d})"
                    )));
                }
            }
            Self::GaussianMembership { width, .. } => {
                if *width <= 0.0 {
                    return Err(UsetError::InvalidModel(format!("width must be > 0, got {width}")));
                }
            }
        }
        Ok(())
    }

    /// Point (or midpoint of the plateau) where membership equals one.
    pub fn peak(&self) -> f64 {
        match self {
            Self::Triangular { b, .. } => *b,
            Self::Trapezoidal { b, c, .. } => 0.5 * (b + c),
            Self::GaussianMembership { center, .. } => *center,
        }
    }
}

/// Membership grade in `[0, 1]`.
pub fn membership(set: &FuzzySet, x: f64) -> f64 {
    match set {
        FuzzySet::Triangular { a, b, c } => {
            if x < *a || x > *c {
                0.0
            } else if x <= *b {
                if b == a {
                    1.0
                } else {
                    (x - a) / (b - a)
                }
            } else if c == b {
                1.0
            } else {
                (c - x) / (c - b)
            }
        }
        FuzzySet::Trapezoidal { a, b, c, d } => {
            if x < *a || x > *d {
                0.0
            } else if x < *b {
                if b == a {
                    1.0
                } else {
                    (x - a) / (b - a)
                }
            } else if x <= *c {
                1.0
            } else if d == c {
                1.0
            } else {
                (d - x) / (d - c)
            }
        }
        FuzzySet::GaussianMembership { center, width } => {
            let z = (x - center) / width;
            (-z * z).exp()
        }
    }
}

/// Closed interval `{ x : membership(x) >= alpha }` for `alpha` in `(0, 1]`.
pub fn alpha_cut(set: &FuzzySet, alpha: f64) -> Result<(f64, f64), UsetError> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(UsetError::BadAlpha(alpha));
    }
    Ok(match set {
        FuzzySet::Triangular { a, b, c } => (a + alpha * (b - a), c - alpha * (c - b)),
        FuzzySet::Trapezoidal { a, b, c, d } => (a + alpha * (b - a), d - alpha * (d - c)),
        FuzzySet::GaussianMembership { center, width } => {
            // Analytic inversion of exp(-((x-c)/w)^2) = alpha.
            let half = width * (-alpha.ln()).sqrt();
            (center - half, center + half)
        }
    })
}

/// Bounded support used for propagation; gaussian tails are truncated at the
/// alpha floor.
pub fn support(set: &FuzzySet) -> (f64, f64) {
    match set {
        FuzzySet::Triangular { a, c, .. } => (*a, *c),
        FuzzySet::Trapezoidal { a, d, .. } => (*a, *d),
        FuzzySet::GaussianMembership { .. } => {
            alpha_cut(set, ALPHA_FLOOR).expect("floor alpha is valid")
        }
    }
}

// ---------------------------------------------------------------------------
// Scenario sets
// ---------------------------------------------------------------------------

/// How a scenario set was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    /// Monte Carlo sampling with the given seed.
    Mcs { seed: u64 },
    /// Vertices of crisp sets.
    Vertices,
    /// Alpha-cut endpoints of fuzzy sets.
    AlphaGrid { levels: usize },
    /// Single nominal point.
    Nominal,
    /// Hand-constructed points (sigma points, quadrature nodes, test fixtures).
    Explicit,
}

/// Finite parameterization of the uncertain dimension: one row per scenario,
/// one column per bound target (column order = `binding_order`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSet {
    pub points: Mat,
    /// Probability weights (MCS / explicit) or alpha levels (alpha grid).
    pub weights: Vec<f64>,
    pub provenance: Provenance,
    pub binding_order: Vec<String>,
}

impl ScenarioSet {
    pub fn n_scenarios(&self) -> usize {
        self.points.rows()
    }

    pub fn n_targets(&self) -> usize {
        self.points.cols()
    }

    pub fn scenario(&self, k: usize) -> &[f64] {
        self.points.row(k)
    }

    /// Single nominal scenario (all offsets at the given nominal point).
    pub fn nominal(point: Vec<f64>, binding_order: Vec<String>) -> Self {
        assert_eq!(point.len(), binding_order.len());
        Self {
            points: Mat::from_rows(&[point]),
            weights: vec![1.0],
            provenance: Provenance::Nominal,
            binding_order,
        }
    }

    /// Explicitly provided points with probability weights.
    pub fn explicit(points: Vec<Vec<f64>>, weights: Vec<f64>, binding_order: Vec<String>) -> Self {
        assert_eq!(points.len(), weights.len(), "one weight per scenario");
        Self {
            points: Mat::from_rows(&points),
            weights,
            provenance: Provenance::Explicit,
            binding_order,
        }
    }

    /// CSV rendering: header is the binding order, one row per scenario.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.binding_order.join(","));
        out.push('\n');
        for k in 0..self.n_scenarios() {
            let row: Vec<String> = self.scenario(k).iter().map(|v| format!("{v}")).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Draws `n` scenarios from the given models. Each (model, scenario) cell
/// uses its own counter-derived ChaCha stream, so draws are independent of
/// both evaluation order and thread count.
pub fn sample_stochastic(
    models: &[(String, StochasticModel)],
    n: usize,
    seed: u64,
) -> Result<ScenarioSet, UsetError> {
    assert!(n >= 1, "need at least one scenario");
    for (_, m) in models {
        m.validate()?;
    }
    let n_models = models.len();
    let rows = crate::par::map_range(n, |i| {
        let mut row = Vec::with_capacity(n_models);
        for (m_idx, (_, model)) in models.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
            rng.set_stream(((m_idx as u64) << 32) | i as u64);
            row.push(model.sample_one(&mut rng));
        }
        row
    });
    Ok(ScenarioSet {
        points: Mat::from_rows(&rows),
        weights: vec![1.0 / n as f64; n],
        provenance: Provenance::Mcs { seed },
        binding_order: models.iter().map(|(name, _)| name.clone()).collect(),
    })
}

/// Enumerates the vertices of a box or explicit polytope in deterministic
/// lexicographic order.
pub fn enumerate_vertices(set: &CrispSet) -> Result<Vec<Vec<f64>>, UsetError> {
    match set {
        CrispSet::Box { center, halfwidth } => {
            let n = center.len();
            let count = 1usize << n;
            let mut out = Vec::with_capacity(count);
            for i in 0..count {
                let mut v = Vec::with_capacity(n);
                for (j, (c, h)) in center.iter().zip(halfwidth).enumerate() {
                    // dim 0 is the most significant bit so the listing is
                    // lexicographically ascending
                    let hi = (i >> (n - 1 - j)) & 1 == 1;
                    v.push(if hi { c + h } else { c - h });
                }
                out.push(v);
            }
            Ok(out)
        }
        CrispSet::Polytope { vertices } => {
            let mut out = vertices.clone();
            out.sort_by(|a, b| {
                a.iter()
                    .zip(b)
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| *o != std::cmp::Ordering::Equal)
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
            Ok(out)
        }
        CrispSet::Ellipsoid { .. } => Err(UsetError::NoVertices),
    }
}

/// Alpha-grid parameterization: for levels `alpha_j = j/(n_levels-1)` clamped
/// to `[ALPHA_FLOOR, 1]`, emits both cut endpoints per set per level, with
/// the other sets held at their peak. Row weight is the alpha level.
pub fn alpha_grid_scenarios(
    sets: &[(String, FuzzySet)],
    n_levels: usize,
) -> Result<ScenarioSet, UsetError> {
    assert!(n_levels >= 2, "need at least two alpha levels");
    for (_, s) in sets {
        s.validate()?;
    }
    let peaks: Vec<f64> = sets.iter().map(|(_, s)| s.peak()).collect();
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(2 * n_levels * sets.len());
    let mut weights = Vec::with_capacity(rows.capacity());
    for (s_idx, (_, set)) in sets.iter().enumerate() {
        for j in 0..n_levels {
            let alpha = (j as f64 / (n_levels - 1) as f64).clamp(ALPHA_FLOOR, 1.0);
            let (lo, hi) = alpha_cut(set, alpha)?;
            for endpoint in [lo, hi] {
                let mut row = peaks.clone();
                row[s_idx] = endpoint;
                rows.push(row);
                weights.push(alpha);
            }
        }
    }
    Ok(ScenarioSet {
        points: Mat::from_rows(&rows),
        weights,
        provenance: Provenance::AlphaGrid { levels: n_levels },
        binding_order: sets.iter().map(|(name, _)| name.clone()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn sampling_is_reproducible() {
        let models = vec![
            ("a".to_string(), StochasticModel::Gaussian { mu: 0.0, sigma: 1.0 }),
            ("b".to_string(), StochasticModel::Uniform { lo: -1.0, hi: 1.0 }),
        ];
        let s1 = sample_stochastic(&models, 64, 7).unwrap();
        let s2 = sample_stochastic(&models, 64, 7).unwrap();
        assert_eq!(s1, s2);
        let s3 = sample_stochastic(&models, 64, 8).unwrap();
        assert_ne!(s1.points, s3.points);
    }

    #[test]
    fn gaussian_sample_moments() {
        // CLT bound 3/sqrt(n) = 0.0095 < 0.02 margin from the contract.
        let models = vec![("x".to_string(), StochasticModel::Gaussian { mu: 0.0, sigma: 1.0 })];
        let s = sample_stochastic(&models, 100_000, 123).unwrap();
        let vals: Vec<f64> = s.points.col_iter(0).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (vals.len() - 1) as f64;
        assert!(mean.abs() < 0.02, "sample mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 0.02, "sample std {}", var.sqrt());
    }

    #[test]
    fn degenerate_discrete_is_constant() {
        let models = vec![(
            "d".to_string(),
            StochasticModel::Discrete { values: vec![1.0, 2.0], probabilities: vec![1.0, 0.0] },
        )];
        let s = sample_stochastic(&models, 50, 3).unwrap();
        assert!(s.points.col_iter(0).all(|v| v == 1.0));
    }

    #[test]
    fn box_membership_boundary_inclusive() {
        let set = CrispSet::Box { center: vec![1.0], halfwidth: vec![0.5] };
        assert!(crisp_contains(&set, &[1.5]).unwrap());
        assert!(!crisp_contains(&set, &[1.51]).unwrap());
    }

    #[test]
    fn l2_ball_membership() {
        let set = CrispSet::Ellipsoid {
            center: vec![0.0, 0.0],
            shape: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            radius: 1.0,
        };
        // ||(0.8, 0.8)|| = 1.131 > 1
        assert!(!crisp_contains(&set, &[0.8, 0.8]).unwrap());
        assert!(crisp_contains(&set, &[0.7, 0.7]).unwrap());
    }

    #[test]
    fn polytope_membership_2d() {
        let set = CrispSet::Polytope {
            vertices: vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![0.0, 2.0]],
        };
        assert!(crisp_contains(&set, &[0.5, 0.5]).unwrap());
        assert!(crisp_contains(&set, &[1.0, 1.0]).unwrap()); // on the edge
        assert!(!crisp_contains(&set, &[1.2, 1.2]).unwrap());
    }

    #[test]
    fn box_vertices_lexicographic() {
        let set = CrispSet::Box { center: vec![0.0, 0.0], halfwidth: vec![1.0, 2.0] };
        let v = enumerate_vertices(&set).unwrap();
        assert_eq!(
            v,
            vec![vec![-1.0, -2.0], vec![-1.0, 2.0], vec![1.0, -2.0], vec![1.0, 2.0]]
        );
    }

    #[test]
    fn one_dim_box_has_two_endpoints() {
        let set = CrispSet::Box { center: vec![3.0], halfwidth: vec![0.25] };
        assert_eq!(enumerate_vertices(&set).unwrap(), vec![vec![2.75], vec![3.25]]);
    }

    #[test]
    fn ten_dim_box_vertex_count_and_membership() {
        let set = CrispSet::Box { center: vec![0.0; 10], halfwidth: vec![1.0; 10] };
        let v = enumerate_vertices(&set).unwrap();
        assert_eq!(v.len(), 1024);
        for vertex in &v {
            assert!(crisp_contains(&set, vertex).unwrap());
        }
    }

    #[test]
    fn ellipsoid_has_no_vertices() {
        let set = CrispSet::Ellipsoid {
            center: vec![0.0],
            shape: vec![vec![1.0]],
            radius: 1.0,
        };
        assert!(matches!(enumerate_vertices(&set), Err(UsetError::NoVertices)));
    }

    #[test]
    fn triangular_membership_values() {
        let set = FuzzySet::Triangular { a: 0.0, b: 1.0, c: 2.0 };
        assert_eq!(membership(&set, 1.0), 1.0);
        assert_abs_diff_eq!(membership(&set, 1.5), 0.5);
        assert_eq!(membership(&set, -0.1), 0.0);
        let g = FuzzySet::GaussianMembership { center: 3.0, width: 1.0 };
        assert_eq!(membership(&g, 3.0), 1.0);
    }

    #[test]
    fn alpha_cuts() {
        let tri = FuzzySet::Triangular { a: 0.0, b: 1.0, c: 2.0 };
        assert_eq!(alpha_cut(&tri, 0.5).unwrap(), (0.5, 1.5));
        assert_eq!(alpha_cut(&tri, 1.0).unwrap(), (1.0, 1.0));
        // invert both flanks of the trapezoid by hand:
        // lo: 0 + 0.25*(1-0) = 0.25; hi: 4 - 0.25*(4-2) = 3.5
        let trap = FuzzySet::Trapezoidal { a: 0.0, b: 1.0, c: 2.0, d: 4.0 };
        assert_eq!(alpha_cut(&trap, 0.25).unwrap(), (0.25, 3.5));
        assert!(alpha_cut(&tri, 0.0).is_err());
    }

    #[test]
    fn gaussian_alpha_cut_is_analytic() {
        let g = FuzzySet::GaussianMembership { center: 2.0, width: 0.5 };
        let (lo, hi) = alpha_cut(&g, 0.5).unwrap();
        let half = 0.5 * (-(0.5f64.ln())).sqrt();
        assert_abs_diff_eq!(lo, 2.0 - half, epsilon = 1e-14);
        assert_abs_diff_eq!(hi, 2.0 + half, epsilon = 1e-14);
        // membership at the cut endpoint recovers alpha
        assert_abs_diff_eq!(membership(&g, lo), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn alpha_grid_counting_and_nesting() {
        let sets = vec![("f".to_string(), FuzzySet::Triangular { a: 0.0, b: 1.0, c: 2.0 })];
        let s = alpha_grid_scenarios(&sets, 3).unwrap();
        assert_eq!(s.n_scenarios(), 6); // 2 per level, peak duplicated
        // endpoints at each level lie inside that level's cut
        for k in 0..s.n_scenarios() {
            let alpha = s.weights[k];
            let (lo, hi) = alpha_cut(&sets[0].1, alpha).unwrap();
            let x = s.scenario(k)[0];
            assert!(x >= lo - 1e-12 && x <= hi + 1e-12);
        }
        // nestedness: level-1.0 points lie within the level-0.5 interval
        let (lo05, hi05) = alpha_cut(&sets[0].1, 0.5).unwrap();
        for k in 0..s.n_scenarios() {
            if s.weights[k] == 1.0 {
                let x = s.scenario(k)[0];
                assert!(x >= lo05 && x <= hi05);
            }
        }
    }

    #[test]
    fn csv_header_is_binding_order() {
        let s = ScenarioSet::explicit(
            vec![vec![1.0, 2.0]],
            vec![1.0],
            vec!["mass".into(), "vmax".into()],
        );
        let csv = s.to_csv();
        assert!(csv.starts_with("mass,vmax\n1,2\n"));
    }
}
