//! Scalar risk measures and constraint-treatment evaluators.
//!
//! Everything here is a pure function over sampled values, fuzzy
//! alpha-level pairs, or basic probability assignments. Two dispersion
//! conventions coexist deliberately: [`sample_stats`] reports the unbiased
//! (n-1) standard deviation, while the compiled formulations use the
//! population form `sqrt(E[g^2] - E[g]^2)` via [`weighted_pop_std`].

use crate::mat::Mat;
use crate::usets::{FuzzySet, ALPHA_FLOOR};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RiskError {
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("confidence level must lie in (0, 1), got {0}")]
    BadLevel(f64),
    #[error("utility domain requires positive values, got {0}")]
    NonPositiveUtility(f64),
    #[error("invalid basic probability assignment: {0}")]
    InvalidBpa(String),
    #[error("invalid risk configuration: {0}")]
    InvalidConfig(String),
}

// ---------------------------------------------------------------------------
// Sample statistics
// ---------------------------------------------------------------------------

/// Summary statistics of a sample vector (unbiased n-1 standard deviation).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleStats {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    pub min: f64,
    pub max: f64,
}

pub fn sample_stats(values: &[f64]) -> Result<SampleStats, RiskError> {
    if values.len() < 2 {
        return Err(RiskError::TooFewSamples { need: 2, got: values.len() });
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    let std = (ss / (n - 1) as f64).sqrt();
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(SampleStats { mean, std, n, min, max })
}

/// Weighted mean with weights assumed to sum to one.
pub fn weighted_mean(values: &[f64], weights: &[f64]) -> f64 {
    values.iter().zip(weights).map(|(v, w)| v * w).sum()
}

/// Population-form standard deviation `sqrt(E[v^2] - E[v]^2)` under the
/// given probability weights. This is the dispersion used inside compiled
/// formulations.
pub fn weighted_pop_std(values: &[f64], weights: &[f64]) -> f64 {
    let mean = weighted_mean(values, weights);
    let second: f64 = values.iter().zip(weights).map(|(v, w)| v * v * w).sum();
    (second - mean * mean).max(0.0).sqrt()
}

// ---------------------------------------------------------------------------
// Tail measures
// ---------------------------------------------------------------------------

/// Empirical `gamma`-quantile (value-at-risk) of the sample.
pub fn value_at_risk(values: &[f64], gamma: f64) -> Result<f64, RiskError> {
    if values.is_empty() {
        return Err(RiskError::TooFewSamples { need: 1, got: 0 });
    }
    if !(0.0..1.0).contains(&gamma) || gamma <= 0.0 {
        return Err(RiskError::BadLevel(gamma));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let j = ((gamma * sorted.len() as f64).floor() as usize).min(sorted.len() - 1);
    Ok(sorted[j])
}

/// Conditional value-at-risk with the Rockafellar–Uryasev fractional-tail
/// convention: the upper `1 - gamma` probability mass is averaged, with
/// fractional weight on the quantile sample.
pub fn cvar(values: &[f64], gamma: f64) -> Result<f64, RiskError> {
    if values.is_empty() {
        return Err(RiskError::TooFewSamples { need: 1, got: 0 });
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(RiskError::BadLevel(gamma));
    }
    let n = values.len();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = gamma * n as f64;
    let j0 = (pos.floor() as usize).min(n - 1);
    let mut acc = ((j0 + 1) as f64 / n as f64 - gamma) * sorted[j0];
    for v in &sorted[j0 + 1..] {
        acc += v / n as f64;
    }
    Ok(acc / (1.0 - gamma))
}

/// Fraction of samples with `g >= 0` (the failure event).
pub fn empirical_failure_prob(g_values: &[f64]) -> f64 {
    if g_values.is_empty() {
        return 0.0;
    }
    g_values.iter().filter(|g| **g >= 0.0).count() as f64 / g_values.len() as f64
}

/// Fraction of scenarios (rows) where any constraint column fails.
pub fn system_failure_prob(g_matrix: &Mat) -> f64 {
    if g_matrix.rows() == 0 {
        return 0.0;
    }
    let failures = g_matrix
        .iter_rows()
        .filter(|row| row.iter().any(|g| *g >= 0.0))
        .count();
    failures as f64 / g_matrix.rows() as f64
}

// ---------------------------------------------------------------------------
// Gaussian margins
// ---------------------------------------------------------------------------

/// Inverse standard normal CDF (Wichura's AS 241, double precision).
pub fn standard_normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile needs p in (0,1), got {p}");
    const A: [f64; 8] = [
        3.387_132_872_796_366_6e0,
        1.331_416_678_917_843_8e2,
        1.971_590_950_306_551_3e3,
        1.373_169_376_550_946e4,
        4.592_195_393_154_987e4,
        6.726_577_092_700_87e4,
        3.343_057_558_358_813e4,
        2.509_080_928_730_122_7e3,
    ];
    const B: [f64; 8] = [
        1.0,
        4.231_333_070_160_091e1,
        6.871_870_074_920_579e2,
        5.394_196_021_424_751e3,
        2.121_379_430_158_659_7e4,
        3.930_789_580_009_271e4,
        2.872_908_573_572_194_3e4,
        5.226_495_278_852_545_5e3,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_5e0,
        4.630_337_846_156_546e0,
        5.769_497_221_460_691e0,
        3.647_848_324_763_204_5e0,
        1.270_458_252_452_368_4e0,
        2.417_807_251_774_506e-1,
        2.272_384_498_926_918_4e-2,
        7.745_450_142_783_414e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_759e0,
        1.676_384_830_183_803_8e0,
        6.897_673_349_851e-1,
        1.481_039_764_274_800_8e-1,
        1.519_866_656_361_645_7e-2,
        5.475_938_084_995_345e-4,
        1.050_750_071_644_416_9e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103e0,
        5.463_784_911_164_114e0,
        1.784_826_539_917_291_3e0,
        2.965_605_718_285_048_7e-1,
        2.653_218_952_657_612_4e-2,
        1.242_660_947_388_078_4e-3,
        2.711_555_568_743_487_6e-5,
        2.010_334_399_292_288e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        5.998_322_065_558_88e-1,
        1.369_298_809_227_358e-1,
        1.487_536_129_085_061_5e-2,
        7.868_691_311_456_133e-4,
        1.846_318_317_510_054_8e-5,
        1.421_511_758_316_446e-7,
        2.044_263_103_389_939_7e-15,
    ];
    let poly = |coef: &[f64; 8], x: f64| {
        coef.iter().rev().fold(0.0, |acc, c| acc * x + c)
    };
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180_625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let z = if r <= 5.0 {
        let r = r - 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        let r = r - 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -z
    } else {
        z
    }
}

/// Deterministic equivalent of a Gaussian chance constraint: returns
/// `mu + z_{1 - p_f} * sigma`, whose nonpositivity is equivalent to
/// `P[g >= 0] <= p_f` under Gaussianity.
pub fn gaussian_chance_margin(mu: f64, sigma: f64, p_f: f64) -> Result<f64, RiskError> {
    if !(p_f > 0.0 && p_f < 1.0) {
        return Err(RiskError::BadLevel(p_f));
    }
    if sigma < 0.0 {
        return Err(RiskError::InvalidConfig(format!("sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(mu);
    }
    Ok(mu + standard_normal_quantile(1.0 - p_f) * sigma)
}

// ---------------------------------------------------------------------------
// Utility
// ---------------------------------------------------------------------------

/// Constant-relative-risk-aversion utility `(o^(1-rho) - 1) / (1 - rho)`,
/// with the natural-log branch at `rho = 1`.
pub fn crra_utility(o_value: f64, rho: f64) -> Result<f64, RiskError> {
    if o_value <= 0.0 {
        return Err(RiskError::NonPositiveUtility(o_value));
    }
    if rho < 0.0 {
        return Err(RiskError::InvalidConfig(format!("rho must be >= 0, got {rho}")));
    }
    if (1.0 - rho).abs() < 1e-9 {
        return Ok(o_value.ln());
    }
    Ok((o_value.powf(1.0 - rho) - 1.0) / (1.0 - rho))
}

/// Mean CRRA utility over positive samples.
pub fn expected_utility(o_samples: &[f64], rho: f64) -> Result<f64, RiskError> {
    if o_samples.is_empty() {
        return Err(RiskError::TooFewSamples { need: 1, got: 0 });
    }
    let mut acc = 0.0;
    for o in o_samples {
        acc += crra_utility(*o, rho)?;
    }
    Ok(acc / o_samples.len() as f64)
}

// ---------------------------------------------------------------------------
// Long-run discounted expectation
// ---------------------------------------------------------------------------

/// Scenario mean of the exponentially discounted, normalized time average
/// of `g` over the finite horizon:
/// `mean_k [ trapz(exp(-gamma (t - t0)) g_k(t)) / trapz(exp(-gamma (t - t0))) ]`.
///
/// The infinite-horizon limsup is approximated by the finite grid; callers
/// surface this as an approximation flag.
pub fn discounted_expectation(g_series: &Mat, gamma: f64, times: &[f64]) -> f64 {
    assert!(gamma >= 0.0, "discount parameter must be nonnegative");
    assert_eq!(g_series.cols(), times.len(), "series width must match grid");
    if g_series.rows() == 0 || times.len() < 2 {
        return 0.0;
    }
    let t0 = times[0];
    let wfun = |t: f64| (-gamma * (t - t0)).exp();
    let mut den = 0.0;
    for k in 0..times.len() - 1 {
        let h = times[k + 1] - times[k];
        den += 0.5 * h * (wfun(times[k]) + wfun(times[k + 1]));
    }
    let mut acc = 0.0;
    for s in 0..g_series.rows() {
        let row = g_series.row(s);
        let mut num = 0.0;
        for k in 0..times.len() - 1 {
            let h = times[k + 1] - times[k];
            num += 0.5 * h * (wfun(times[k]) * row[k] + wfun(times[k + 1]) * row[k + 1]);
        }
        acc += num / den;
    }
    acc / g_series.rows() as f64
}

// ---------------------------------------------------------------------------
// Possibilistic measures
// ---------------------------------------------------------------------------

/// Possibility of the failure event `g >= 0` from (value, alpha-level)
/// pairs produced by alpha-grid propagation: the sup of alpha over failing
/// pairs, zero when none fail.
pub fn possibility_of_failure(fuzzy_g: &[(f64, f64)]) -> f64 {
    fuzzy_g
        .iter()
        .filter(|(g, _)| *g >= 0.0)
        .map(|(_, alpha)| *alpha)
        .fold(0.0, f64::max)
}

/// Credibility-based expected value of a fuzzy number:
/// `E = 1/2 ∫_0^1 (L(alpha) + U(alpha)) d alpha` over the alpha-cut
/// endpoints, evaluated with 1001-level trapezoidal quadrature. Gaussian
/// membership tails are truncated at the alpha floor.
pub fn fuzzy_expected_value(set: &FuzzySet) -> f64 {
    const LEVELS: usize = 1001;
    let cut = |alpha: f64| -> (f64, f64) {
        let a = match set {
            FuzzySet::GaussianMembership { .. } => alpha.max(ALPHA_FLOOR),
            _ => alpha.max(1e-12),
        };
        crate::usets::alpha_cut(set, a).expect("clamped alpha is valid")
    };
    let mid = |alpha: f64| {
        let (lo, hi) = cut(alpha);
        0.5 * (lo + hi)
    };
    let h = 1.0 / (LEVELS - 1) as f64;
    let mut acc = 0.5 * (mid(0.0) + mid(1.0));
    for i in 1..LEVELS - 1 {
        acc += mid(i as f64 * h);
    }
    acc * h
}

// ---------------------------------------------------------------------------
// Dempster–Shafer evidence
// ---------------------------------------------------------------------------

/// Basic probability assignment over a finite frame of discernment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bpa {
    /// Focal elements: nonempty subsets with positive mass.
    pub focal: Vec<(BTreeSet<String>, f64)>,
}

impl Bpa {
    pub fn validate(&self) -> Result<(), RiskError> {
        let total: f64 = self.focal.iter().map(|(_, m)| m).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(RiskError::InvalidBpa(format!("masses sum to {total}, expected 1")));
        }
        for (subset, mass) in &self.focal {
            if *mass <= 0.0 {
                return Err(RiskError::InvalidBpa(format!("nonpositive mass {mass}")));
            }
            if subset.is_empty() {
                return Err(RiskError::InvalidBpa("empty focal element".into()));
            }
        }
        Ok(())
    }
}

/// Belief and plausibility of an event: sums of focal masses contained in,
/// respectively intersecting, the event.
pub fn belief_plausibility(bpa: &Bpa, event: &BTreeSet<String>) -> Result<(f64, f64), RiskError> {
    bpa.validate()?;
    let mut belief = 0.0;
    let mut plausibility = 0.0;
    for (subset, mass) in &bpa.focal {
        if subset.is_subset(event) {
            belief += mass;
        }
        if !subset.is_disjoint(event) {
            plausibility += mass;
        }
    }
    Ok((belief, plausibility))
}

// ---------------------------------------------------------------------------
// Risk configuration
// ---------------------------------------------------------------------------

/// Constraint treatment selected by the designer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "treatment", rename_all = "kebab-case")]
pub enum Treatment {
    Nominal,
    Expectation,
    Discounted { gamma: f64 },
    MeanStd { k_s: f64 },
    DispersionCap { sigma_a: f64 },
    Cvar { level: f64 },
    Utility { rho: f64 },
    Chance { p_f: f64 },
    SystemChance { p_f_sys: f64 },
    WorstCase,
    Possibilistic { pos_f: f64 },
    Evidence { required: f64, use_belief: bool },
}

impl Treatment {
    pub fn validate(&self) -> Result<(), RiskError> {
        let bad = |msg: String| Err(RiskError::InvalidConfig(msg));
        match self {
            Self::Discounted { gamma } if *gamma < 0.0 => bad(format!("gamma = {gamma} < 0")),
            Self::MeanStd { k_s } if *k_s < 0.0 => bad(format!("k_s = {k_s} < 0")),
            Self::DispersionCap { sigma_a } if *sigma_a < 0.0 => {
                bad(format!("sigma_a = {sigma_a} < 0"))
            }
            Self::Cvar { level } if !(*level > 0.0 && *level < 1.0) => {
                bad(format!("cvar level = {level} outside (0,1)"))
            }
            Self::Utility { rho } if *rho < 0.0 => bad(format!("rho = {rho} < 0")),
            Self::Chance { p_f } if !(*p_f > 0.0 && *p_f < 1.0) => {
                bad(format!("p_f = {p_f} outside (0,1)"))
            }
            Self::SystemChance { p_f_sys } if !(*p_f_sys > 0.0 && *p_f_sys < 1.0) => {
                bad(format!("p_f_sys = {p_f_sys} outside (0,1)"))
            }
            Self::Possibilistic { pos_f } if !(*pos_f > 0.0 && *pos_f <= 1.0) => {
                bad(format!("pos_f = {pos_f} outside (0,1]"))
            }
            Self::Evidence { required, .. } if !(0.0..=1.0).contains(required) => {
                bad(format!("required measure = {required} outside [0,1]"))
            }
            _ => Ok(()),
        }
    }
}

/// Default treatment plus per-constraint overrides, keyed by constraint name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskConfig {
    pub default: Treatment,
    #[serde(default)]
    pub per_constraint: BTreeMap<String, Treatment>,
}

impl RiskConfig {
    pub fn uniform(default: Treatment) -> Self {
        Self { default, per_constraint: BTreeMap::new() }
    }

    pub fn validate(&self) -> Result<(), RiskError> {
        self.default.validate()?;
        for t in self.per_constraint.values() {
            t.validate()?;
        }
        Ok(())
    }

    pub fn for_constraint(&self, name: &str) -> &Treatment {
        self.per_constraint.get(name).unwrap_or(&self.default)
    }
}

/// Per-constraint risk diagnostics destined for `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ConstraintDiagnostics {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub cvar: Option<f64>,
    pub pfail: Option<f64>,
    pub pos_fail: Option<f64>,
    pub belief: Option<f64>,
    pub plausibility: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn stats_basics() {
        let s = sample_stats(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.std, 1.0);
        let c = sample_stats(&[5.0, 5.0, 5.0]).unwrap();
        assert_eq!(c.std, 0.0);
        // hand computation: mean 1, sum of squared deviations 12, 12/3 = 4
        let s = sample_stats(&[0.0, 0.0, 0.0, 4.0]).unwrap();
        assert_eq!(s.mean, 1.0);
        assert_eq!(s.std, 2.0);
        assert!(sample_stats(&[1.0]).is_err());
    }

    #[test]
    fn population_vs_sample_std() {
        let v = [0.0, 0.0, 0.0, 4.0];
        let w = [0.25; 4];
        // population form: sqrt(E[v^2] - mean^2) = sqrt(4 - 1) = sqrt 3
        assert_abs_diff_eq!(weighted_pop_std(&v, &w), 3.0f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn cvar_exact_tail_arithmetic() {
        assert_eq!(cvar(&[1.0, 2.0, 3.0, 4.0], 0.75).unwrap(), 4.0);
        assert_abs_diff_eq!(cvar(&[7.0; 10], 0.3).unwrap(), 7.0, epsilon = 1e-12);
        // Gamma*n landing mid-sample: {1,2,3,4} at 0.5 -> upper half mean
        assert_abs_diff_eq!(cvar(&[1.0, 2.0, 3.0, 4.0], 0.5).unwrap(), 3.5, epsilon = 1e-12);
    }

    #[test]
    fn cvar_uniform_tail() {
        // analytic E[x | x >= 0.9] = 0.95 for U(0,1)
        let models = vec![(
            "u".to_string(),
            crate::usets::StochasticModel::Uniform { lo: 0.0, hi: 1.0 },
        )];
        let s = crate::usets::sample_stochastic(&models, 1_000_000, 42).unwrap();
        let vals: Vec<f64> = s.points.col_iter(0).collect();
        let c = cvar(&vals, 0.9).unwrap();
        assert!((c - 0.95).abs() < 0.002, "cvar = {c}");
    }

    #[test]
    fn var_cvar_ordering() {
        let vals: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.7919).sin()).collect();
        for gamma in [0.1, 0.5, 0.9, 0.99] {
            let v = value_at_risk(&vals, gamma).unwrap();
            let c = cvar(&vals, gamma).unwrap();
            let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!(min <= v && v <= c + 1e-12 && c <= max + 1e-12);
        }
        // nondecreasing in gamma
        let c1 = cvar(&vals, 0.5).unwrap();
        let c2 = cvar(&vals, 0.8).unwrap();
        assert!(c2 >= c1);
    }

    #[test]
    fn failure_probabilities() {
        assert_eq!(empirical_failure_prob(&[-1.0, -0.5, 2.0, 3.0]), 0.5);
        assert_eq!(empirical_failure_prob(&[-1.0, -2.0]), 0.0);
        // union counting: g1 fails rows {1,2}, g2 fails rows {2,3}, n = 10
        let mut m = Mat::zeros(10, 2);
        for r in 0..10 {
            m.set(r, 0, -1.0);
            m.set(r, 1, -1.0);
        }
        m.set(1, 0, 1.0);
        m.set(2, 0, 1.0);
        m.set(2, 1, 1.0);
        m.set(3, 1, 1.0);
        assert_eq!(system_failure_prob(&m), 0.3);
    }

    #[test]
    fn gaussian_tail_failure_rate() {
        // 1 - Phi(2) = 0.02275 for N(-1, 0.5^2) against threshold 0
        let models = vec![(
            "x".to_string(),
            crate::usets::StochasticModel::Gaussian { mu: -1.0, sigma: 0.5 },
        )];
        let s = crate::usets::sample_stochastic(&models, 1_000_000, 11).unwrap();
        let vals: Vec<f64> = s.points.col_iter(0).collect();
        let p = empirical_failure_prob(&vals);
        assert!((p - 0.02275).abs() < 0.001, "pfail = {p}");
    }

    #[test]
    fn normal_quantile_reference_points() {
        assert_eq!(standard_normal_quantile(0.5), 0.0);
        assert_abs_diff_eq!(standard_normal_quantile(0.8413447460685429), 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(standard_normal_quantile(0.9772498680518208), 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(standard_normal_quantile(0.0227501319481792), -2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(standard_normal_quantile(0.975), 1.959963984540054, epsilon = 1e-9);
        assert_abs_diff_eq!(standard_normal_quantile(1e-9), -5.9978070150076865, epsilon = 1e-7);
    }

    #[test]
    fn chance_margin() {
        assert_eq!(gaussian_chance_margin(3.0, 2.0, 0.5).unwrap(), 3.0);
        let m = gaussian_chance_margin(-1.0, 0.5, 0.02275).unwrap();
        assert!(m.abs() < 1e-4, "margin = {m}");
        assert_eq!(gaussian_chance_margin(7.0, 0.0, 0.001).unwrap(), 7.0);
        assert!(gaussian_chance_margin(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn crra_values() {
        assert_abs_diff_eq!(crra_utility(2.0, 0.0).unwrap(), 1.0);
        assert_abs_diff_eq!(crra_utility(4.0, 0.5).unwrap(), 2.0);
        // limit at rho = 1 equals ln(o); check against nearby rho
        let at_one = crra_utility(std::f64::consts::E, 1.0).unwrap();
        assert_abs_diff_eq!(at_one, 1.0, epsilon = 1e-12);
        let lo = crra_utility(std::f64::consts::E, 1.0 - 1e-6).unwrap();
        let hi = crra_utility(std::f64::consts::E, 1.0 + 1e-6).unwrap();
        assert!((lo - at_one).abs() < 1e-5 && (hi - at_one).abs() < 1e-5);
        assert!(crra_utility(0.0, 1.0).is_err());
        assert!(crra_utility(-1.0, 0.5).is_err());
    }

    #[test]
    fn expected_utility_values() {
        assert_abs_diff_eq!(expected_utility(&[3.0, 3.0], 0.7).unwrap(), crra_utility(3.0, 0.7).unwrap());
        assert_abs_diff_eq!(expected_utility(&[1.0, 3.0], 0.0).unwrap(), 1.0);
        // certainty equivalent for rho = 2 is the harmonic mean: 1/mean(1/o)
        let eu = expected_utility(&[1.0, 3.0], 2.0).unwrap();
        let ce = 1.0 / (0.5 * (1.0 / 1.0 + 1.0 / 3.0));
        assert_abs_diff_eq!(eu, crra_utility(ce, 2.0).unwrap(), epsilon = 1e-12);
        assert_abs_diff_eq!(ce, 1.5, epsilon = 1e-12);
    }

    #[test]
    fn jensen_gap() {
        let samples = [1.0, 2.0, 5.0];
        let mean = samples.iter().sum::<f64>() / 3.0;
        for rho in [0.5, 1.0, 2.0] {
            let eu = expected_utility(&samples, rho).unwrap();
            let um = crra_utility(mean, rho).unwrap();
            assert!(eu < um, "rho={rho}: {eu} !< {um}");
        }
    }

    #[test]
    fn discounted_expectation_limits() {
        let times: Vec<f64> = (0..=100).map(|i| i as f64 * 0.01).collect();
        let constant = Mat::from_rows(&[vec![3.0; 101]]);
        assert_abs_diff_eq!(discounted_expectation(&constant, 0.0, &times), 3.0, epsilon = 1e-12);
        // large discount concentrates at t0; linear g(t) = 1 + t -> g(t0) = 1
        let linear = Mat::from_rows(&[times.iter().map(|t| 1.0 + t).collect::<Vec<_>>()]);
        let v = discounted_expectation(&linear, 200.0, &times);
        assert!((v - 1.0).abs() / 1.0 < 0.01, "v = {v}");
        let zero = Mat::from_rows(&[vec![0.0; 101]]);
        assert_eq!(discounted_expectation(&zero, 1.0, &times), 0.0);
    }

    #[test]
    fn possibility_of_failure_cases() {
        // triangular (-2, -1, 1) rendered as alpha pairs; membership at 0 is 0.5
        let tri = FuzzySet::Triangular { a: -2.0, b: -1.0, c: 1.0 };
        let mut pairs = Vec::new();
        for j in 0..=100 {
            let alpha = (j as f64 / 100.0).max(0.01);
            let (lo, hi) = crate::usets::alpha_cut(&tri, alpha).unwrap();
            pairs.push((lo, alpha));
            pairs.push((hi, alpha));
        }
        let pos = possibility_of_failure(&pairs);
        assert_abs_diff_eq!(pos, 0.5, epsilon = 0.011);
        assert_eq!(possibility_of_failure(&[(-1.0, 0.3), (-0.2, 1.0)]), 0.0);
        assert_eq!(possibility_of_failure(&[(0.0, 1.0), (-3.0, 0.2)]), 1.0);
    }

    #[test]
    fn fuzzy_expectation() {
        let sym = FuzzySet::Triangular { a: 0.0, b: 1.0, c: 2.0 };
        assert_abs_diff_eq!(fuzzy_expected_value(&sym), 1.0, epsilon = 1e-9);
        // closed form (a + 2b + c) / 4
        let skew = FuzzySet::Triangular { a: 0.0, b: 1.0, c: 3.0 };
        assert_abs_diff_eq!(fuzzy_expected_value(&skew), 1.25, epsilon = 1e-3);
        let trap = FuzzySet::Trapezoidal { a: 0.0, b: 1.0, c: 2.0, d: 3.0 };
        assert_abs_diff_eq!(fuzzy_expected_value(&trap), 1.5, epsilon = 1e-9);
    }

    #[test]
    fn belief_and_plausibility() {
        let bpa = Bpa {
            focal: vec![
                ([("a".to_string())].into_iter().collect(), 0.6),
                (["a".to_string(), "b".to_string()].into_iter().collect(), 0.4),
            ],
        };
        let ev_a: BTreeSet<String> = ["a".to_string()].into_iter().collect();
        assert_eq!(belief_plausibility(&bpa, &ev_a).unwrap(), (0.6, 1.0));
        let frame: BTreeSet<String> = ["a".to_string(), "b".to_string()].into_iter().collect();
        assert_eq!(belief_plausibility(&bpa, &frame).unwrap(), (1.0, 1.0));
        let ev_b: BTreeSet<String> = ["b".to_string()].into_iter().collect();
        assert_eq!(belief_plausibility(&bpa, &ev_b).unwrap(), (0.0, 0.4));
    }

    #[test]
    fn risk_config_validation() {
        assert!(RiskConfig::uniform(Treatment::Chance { p_f: 0.05 }).validate().is_ok());
        assert!(RiskConfig::uniform(Treatment::Chance { p_f: 0.0 }).validate().is_err());
        assert!(RiskConfig::uniform(Treatment::Cvar { level: 1.0 }).validate().is_err());
        assert!(RiskConfig::uniform(Treatment::MeanStd { k_s: -1.0 }).validate().is_err());
        let mut cfg = RiskConfig::uniform(Treatment::Expectation);
        cfg.per_constraint.insert("g1".into(), Treatment::Possibilistic { pos_f: 0.0 });
        assert!(cfg.validate().is_err());
    }
}
