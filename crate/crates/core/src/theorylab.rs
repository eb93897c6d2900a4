//! Monte-Carlo checks of angle and distance preservation under Gaussian
//! random projections.
//!
//! Every check fixes one vector pair and re-draws the projection in each trial.
//! Trial `t` uses its own RNG stream derived from `(seed, t)`, so results do not
//! depend on how trials are scheduled across threads.
//!
//! Two samplers produce the projected pair:
//!
//! * [`Sampling::Dense`] draws the full `k x d` Gaussian matrix;
//! * [`Sampling::Reduced`] draws each row's pair `(r·w1, r·w2)` directly from
//!   its bivariate normal law (covariance = Gram matrix of `w1, w2`). Rows of
//!   `P` are independent, so this has exactly the same distribution at a cost
//!   of `2k` normals per trial instead of `kd`.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{derive_seed, random_unit_vector, rng_from_seed, rng_stream};

/// Binomial standard deviations allowed below a theoretical success rate.
pub const BINOMIAL_ALLOWANCE: f64 = 3.0;
/// Standard errors allowed between an empirical mean and its target.
pub const MEAN_ALLOWANCE: f64 = 4.0;
/// Minimum number of trials for the mean check.
pub const MIN_MEAN_TRIALS: usize = 10_000;

const PAIR_TAG: u64 = 0xFA1E;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    Dense,
    #[default]
    Reduced,
}

/// Outcome of a probabilistic bound check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub name: String,
    pub params: BTreeMap<String, f64>,
    pub trials: usize,
    /// Trials in which the bound held.
    pub successes: usize,
    pub empirical_rate: f64,
    /// Probability the bound is guaranteed to hold with (0 when vacuous).
    pub theoretical_rate: f64,
    pub margin: f64,
    /// Binomial slack subtracted from the theoretical rate before comparing.
    pub allowance: f64,
    /// Regimes where a bound says nothing, e.g. a nonpositive guaranteed
    /// probability or an upper bound above 1.
    pub flags: Vec<String>,
    pub pass: bool,
}

impl BoundReport {
    pub fn is_vacuous(&self) -> bool {
        self.flags.iter().any(|f| f == "vacuous_bound")
    }

    pub fn record(&self) -> Record {
        Record {
            name: self.name.clone(),
            params: self.params.clone(),
            trials: self.trials,
            empirical: self.empirical_rate,
            theoretical: self.theoretical_rate,
            pass: self.pass,
        }
    }
}

/// Outcome of the mean-preservation check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanReport {
    pub name: String,
    pub params: BTreeMap<String, f64>,
    pub trials: usize,
    pub mean: f64,
    pub target: f64,
    pub std_error: f64,
    pub pass: bool,
}

impl MeanReport {
    pub fn record(&self) -> Record {
        Record {
            name: self.name.clone(),
            params: self.params.clone(),
            trials: self.trials,
            empirical: self.mean,
            theoretical: self.target,
            pass: self.pass,
        }
    }
}

/// Flat export format shared by all checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub name: String,
    pub params: BTreeMap<String, f64>,
    pub trials: usize,
    pub empirical: f64,
    pub theoretical: f64,
    pub pass: bool,
}

/// Pretty-printed JSON array of records.
pub fn records_to_json(records: &[Record]) -> String {
    serde_json::to_string_pretty(records).expect("records always serialize")
}

fn params(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "epsilon must lie in (0, 1), got {epsilon}"
        )))
    }
}

fn check_dims(d: usize, k: usize, trials: usize) -> Result<()> {
    if d == 0 || k == 0 || trials == 0 {
        return Err(Error::invalid("d, k and trials must be positive"));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Deterministic unit pair in `R^d` at `angle_deg` degrees.
pub fn unit_pair(d: usize, angle_deg: f64, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    if d < 2 {
        return Err(Error::invalid("a pair at a prescribed angle needs d >= 2"));
    }
    let mut rng = rng_from_seed(derive_seed(seed, PAIR_TAG, 0));
    let w1 = random_unit_vector(&mut rng, d);
    let mut u = random_unit_vector(&mut rng, d);
    let c = dot(&u, &w1);
    u.iter_mut().zip(&w1).for_each(|(x, w)| *x -= c * w);
    let n = dot(&u, &u).sqrt();
    u.iter_mut().for_each(|x| *x /= n);
    let theta = angle_deg.to_radians();
    let w2 = w1
        .iter()
        .zip(&u)
        .map(|(a, b)| theta.cos() * a + theta.sin() * b)
        .collect();
    Ok((w1, w2))
}

/// Gram-based sampler of projected pairs.
struct PairSampler<'a> {
    w1: &'a [f64],
    w2: &'a [f64],
    k: usize,
    sigma: f64,
    sampling: Sampling,
    // Cholesky factor of the Gram matrix [[a, b], [b, c]].
    l11: f64,
    l21: f64,
    l22: f64,
}

/// Inner products of one projected pair.
#[derive(Debug, Clone, Copy)]
struct Projected {
    aa: f64,
    ab: f64,
    bb: f64,
}

impl Projected {
    fn cosine(&self) -> f64 {
        self.ab / (self.aa * self.bb).sqrt()
    }

    fn dist_sq(&self) -> f64 {
        self.aa - 2.0 * self.ab + self.bb
    }
}

impl<'a> PairSampler<'a> {
    fn new(w1: &'a [f64], w2: &'a [f64], k: usize, sigma: f64, sampling: Sampling) -> Self {
        let (a, b, c) = (dot(w1, w1), dot(w1, w2), dot(w2, w2));
        let l11 = a.sqrt();
        let l21 = if l11 > 0.0 { b / l11 } else { 0.0 };
        let l22 = (c - l21 * l21).max(0.0).sqrt();
        Self {
            w1,
            w2,
            k,
            sigma,
            sampling,
            l11,
            l21,
            l22,
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> Projected {
        let (mut aa, mut ab, mut bb) = (0.0, 0.0, 0.0);
        for _ in 0..self.k {
            let (x, y) = match self.sampling {
                Sampling::Dense => {
                    let (mut x, mut y) = (0.0, 0.0);
                    for (p, q) in self.w1.iter().zip(self.w2) {
                        let r: f64 = rng.sample(StandardNormal);
                        x += r * p;
                        y += r * q;
                    }
                    (x, y)
                }
                Sampling::Reduced => {
                    let z1: f64 = rng.sample(StandardNormal);
                    let z2: f64 = rng.sample(StandardNormal);
                    (self.l11 * z1, self.l21 * z1 + self.l22 * z2)
                }
            };
            let (x, y) = (self.sigma * x, self.sigma * y);
            aa += x * x;
            ab += x * y;
            bb += y * y;
        }
        Projected { aa, ab, bb }
    }

    fn run<T: Send>(&self, trials: usize, seed: u64, f: impl Fn(Projected) -> T + Sync) -> Vec<T> {
        (0..trials)
            .into_par_iter()
            .map(|t| f(self.sample(&mut rng_stream(seed, t as u64))))
            .collect()
    }
}

/// Compares an empirical success count with a guaranteed probability.
/// A nonpositive guarantee is flagged and never asserted.
fn rate_report(
    name: &str,
    params: BTreeMap<String, f64>,
    successes: usize,
    trials: usize,
    raw_theoretical: f64,
    mut flags: Vec<String>,
) -> BoundReport {
    let empirical = successes as f64 / trials as f64;
    let theoretical = raw_theoretical.clamp(0.0, 1.0);
    let allowance = BINOMIAL_ALLOWANCE * (theoretical * (1.0 - theoretical) / trials as f64).sqrt();
    if raw_theoretical <= 0.0 {
        flags.insert(0, "vacuous_bound".to_string());
    }
    BoundReport {
        name: name.to_string(),
        params,
        trials,
        successes,
        empirical_rate: empirical,
        theoretical_rate: theoretical,
        margin: empirical - theoretical,
        allowance,
        pass: raw_theoretical <= 0.0 || empirical >= theoretical - allowance,
        flags,
    }
}

/// Mean of `<P w1, P w2>` for `P = N(0, 1) / sqrt(k)` against `<w1, w2>`.
pub fn check_lemma1(
    d: usize,
    k: usize,
    angle_deg: f64,
    trials: usize,
    seed: u64,
) -> Result<MeanReport> {
    check_lemma1_with(d, k, angle_deg, trials, seed, Sampling::Reduced)
}

pub fn check_lemma1_with(
    d: usize,
    k: usize,
    angle_deg: f64,
    trials: usize,
    seed: u64,
    sampling: Sampling,
) -> Result<MeanReport> {
    check_dims(d, k, trials)?;
    if trials < MIN_MEAN_TRIALS {
        return Err(Error::invalid(format!(
            "the mean check needs at least {MIN_MEAN_TRIALS} trials, got {trials}"
        )));
    }
    let (w1, w2) = unit_pair(d, angle_deg, seed)?;
    let target = dot(&w1, &w2);
    let sampler = PairSampler::new(&w1, &w2, k, 1.0 / (k as f64).sqrt(), sampling);
    let values = sampler.run(trials, seed, |p| p.ab);
    let n = trials as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let std_error = (var / n).sqrt();
    Ok(MeanReport {
        name: "lemma1".to_string(),
        params: params(&[
            ("d", d as f64),
            ("k", k as f64),
            ("angle_deg", angle_deg),
            ("seed", seed as f64),
        ]),
        trials,
        mean,
        target,
        std_error,
        pass: (mean - target).abs() <= MEAN_ALLOWANCE * std_error,
    })
}

/// Interval for the projected cosine guaranteed by the subgaussian bound.
pub fn theorem1_interval(cos: f64, epsilon: f64) -> (f64, f64) {
    (
        (cos - epsilon) / (1.0 + epsilon),
        (cos + epsilon) / (1.0 - epsilon),
    )
}

/// Probability with which [`theorem1_interval`] holds, before clamping.
pub fn theorem1_probability(k: usize, epsilon: f64) -> f64 {
    let single = 1.0 - 2.0 * (-(k as f64) * epsilon * epsilon / 8.0).exp();
    if single <= 0.0 {
        single
    } else {
        single * single
    }
}

/// Interval for the projected cosine guaranteed under Gaussian projections
/// with acute original angle.
pub fn theorem2_interval(cos: f64, epsilon: f64) -> (f64, f64) {
    let e = epsilon;
    let lower = (1.0 + e) / (1.0 - e) * cos - 2.0 * e / (1.0 - e);
    let upper = (1.0 - e) / (1.0 + e) * cos + (1.0 + 2.0 * e) / (1.0 + e)
        - (1.0 - e * e).sqrt() / (1.0 + e);
    (lower, upper)
}

pub fn theorem2_probability(k: usize, epsilon: f64) -> f64 {
    let e = epsilon;
    1.0 - 6.0 * (-(k as f64) / 2.0 * (e * e / 2.0 - e * e * e / 3.0)).exp()
}

pub fn jll_probability(k: usize, epsilon: f64) -> f64 {
    1.0 - 2.0 * (-(k as f64) * epsilon * epsilon / 8.0).exp()
}

pub fn check_theorem1(
    d: usize,
    k: usize,
    epsilon: f64,
    angle_deg: f64,
    trials: usize,
    seed: u64,
) -> Result<BoundReport> {
    check_theorem1_with(d, k, epsilon, angle_deg, trials, seed, Sampling::Reduced)
}

pub fn check_theorem1_with(
    d: usize,
    k: usize,
    epsilon: f64,
    angle_deg: f64,
    trials: usize,
    seed: u64,
    sampling: Sampling,
) -> Result<BoundReport> {
    check_epsilon(epsilon)?;
    check_dims(d, k, trials)?;
    let (w1, w2) = unit_pair(d, angle_deg, seed)?;
    let (lo, hi) = theorem1_interval(dot(&w1, &w2), epsilon);
    let sampler = PairSampler::new(&w1, &w2, k, 1.0, sampling);
    let hits = sampler.run(trials, seed, |p| {
        let c = p.cosine();
        lo < c && c < hi
    });
    let successes = hits.iter().filter(|&&h| h).count();
    Ok(rate_report(
        "theorem1",
        params(&[
            ("d", d as f64),
            ("k", k as f64),
            ("epsilon", epsilon),
            ("angle_deg", angle_deg),
            ("seed", seed as f64),
        ]),
        successes,
        trials,
        theorem1_probability(k, epsilon),
        Vec::new(),
    ))
}

pub fn check_theorem2(
    d: usize,
    k: usize,
    epsilon: f64,
    angle_deg: f64,
    trials: usize,
    seed: u64,
) -> Result<BoundReport> {
    check_theorem2_with(d, k, epsilon, angle_deg, trials, seed, Sampling::Reduced)
}

pub fn check_theorem2_with(
    d: usize,
    k: usize,
    epsilon: f64,
    angle_deg: f64,
    trials: usize,
    seed: u64,
    sampling: Sampling,
) -> Result<BoundReport> {
    check_epsilon(epsilon)?;
    check_dims(d, k, trials)?;
    let (w1, w2) = unit_pair(d, angle_deg, seed)?;
    let cos = dot(&w1, &w2);
    if cos <= 0.0 {
        return Err(Error::RequiresAcuteAngle { cosine: cos });
    }
    let (lo, hi) = theorem2_interval(cos, epsilon);
    let mut flags = Vec::new();
    if hi >= 1.0 {
        flags.push("upper_bound_at_least_one".to_string());
    }
    if lo <= -1.0 {
        flags.push("lower_bound_at_most_minus_one".to_string());
    }
    let sampler = PairSampler::new(&w1, &w2, k, 1.0 / (k as f64).sqrt(), sampling);
    let hits = sampler.run(trials, seed, |p| {
        let c = p.cosine();
        lo < c && c < hi
    });
    let successes = hits.iter().filter(|&&h| h).count();
    Ok(rate_report(
        "theorem2",
        params(&[
            ("d", d as f64),
            ("k", k as f64),
            ("epsilon", epsilon),
            ("angle_deg", angle_deg),
            ("seed", seed as f64),
        ]),
        successes,
        trials,
        theorem2_probability(k, epsilon),
        flags,
    ))
}

/// Distance preservation for a random Gaussian pair with `sigma = 1`.
pub fn check_jll(
    d: usize,
    k: usize,
    epsilon: f64,
    trials: usize,
    seed: u64,
) -> Result<BoundReport> {
    check_dims(d, k, trials)?;
    let mut rng = rng_from_seed(derive_seed(seed, PAIR_TAG, 1));
    let mut draw = || -> Vec<f64> { (0..d).map(|_| rng.sample(StandardNormal)).collect() };
    let (w1, w2) = (draw(), draw());
    check_jll_pair(&w1, &w2, k, epsilon, 1.0, trials, seed, Sampling::Reduced)
}

/// Distance preservation for a given pair under `N(0, sigma^2)` entries.
/// When `w1 == w2` both sides of the bound are zero and every trial counts as a
/// success.
#[allow(clippy::too_many_arguments)]
pub fn check_jll_pair(
    w1: &[f64],
    w2: &[f64],
    k: usize,
    epsilon: f64,
    sigma: f64,
    trials: usize,
    seed: u64,
    sampling: Sampling,
) -> Result<BoundReport> {
    check_epsilon(epsilon)?;
    check_dims(w1.len(), k, trials)?;
    if w1.len() != w2.len() {
        return Err(Error::invalid("vectors must have the same length"));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("sigma must be positive"));
    }
    let delta_sq: f64 = w1.iter().zip(w2).map(|(a, b)| (a - b) * (a - b)).sum();
    let scale = k as f64 * sigma * sigma * delta_sq;
    let (lo, hi) = ((1.0 - epsilon) * scale, (1.0 + epsilon) * scale);
    let successes = if delta_sq == 0.0 {
        trials
    } else {
        let hits = match sampling {
            // ‖P Δ‖² / (σ² ‖Δ‖²) is chi-squared with k degrees of freedom.
            Sampling::Reduced => {
                let chi = ChiSquared::new(k as f64).expect("k is positive");
                (0..trials)
                    .into_par_iter()
                    .map(|t| {
                        let v =
                            sigma * sigma * delta_sq * chi.sample(&mut rng_stream(seed, t as u64));
                        lo < v && v < hi
                    })
                    .collect::<Vec<_>>()
            }
            Sampling::Dense => {
                PairSampler::new(w1, w2, k, sigma, Sampling::Dense).run(trials, seed, |p| {
                    let v = p.dist_sq();
                    lo < v && v < hi
                })
            }
        };
        hits.iter().filter(|&&h| h).count()
    };
    Ok(rate_report(
        "jll",
        params(&[
            ("d", w1.len() as f64),
            ("k", k as f64),
            ("epsilon", epsilon),
            ("sigma", sigma),
            ("seed", seed as f64),
        ]),
        successes,
        trials,
        jll_probability(k, epsilon),
        Vec::new(),
    ))
}

/// Mean `|cos|` between independent uniform unit vectors in `R^d`.
pub fn check_orthogonality(d: usize, trials: usize, seed: u64) -> Result<f64> {
    check_orthogonality_with(d, trials, seed, Sampling::Reduced)
}

/// By rotation invariance one vector can be fixed to `e1`, so the cosine is
/// `g1 / sqrt(g1² + χ²_{d-1})` for standard normal `g1`.
pub fn check_orthogonality_with(
    d: usize,
    trials: usize,
    seed: u64,
    sampling: Sampling,
) -> Result<f64> {
    if d < 2 || trials == 0 {
        return Err(Error::invalid("need d >= 2 and at least one trial"));
    }
    let chi = ChiSquared::new((d - 1) as f64).expect("d >= 2");
    let values: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_stream(seed, t as u64);
            match sampling {
                Sampling::Reduced => {
                    let g: f64 = rng.sample(StandardNormal);
                    let rest = chi.sample(&mut rng);
                    (g / (g * g + rest).sqrt()).abs()
                }
                Sampling::Dense => {
                    let a = random_unit_vector(&mut rng, d);
                    let b = random_unit_vector(&mut rng, d);
                    dot(&a, &b).abs()
                }
            }
        })
        .collect();
    Ok(values.iter().sum::<f64>() / trials as f64)
}

/// Large-`d` limit of the mean `|cos|`: `sqrt(2 / (π d))`.
pub fn orthogonality_limit(d: usize) -> f64 {
    (2.0 / (std::f64::consts::PI * d as f64)).sqrt()
}

/// Ratio to the limit allowed by [`orthogonality_record`].
pub const ORTHOGONALITY_RATIO: f64 = 1.5;

pub fn orthogonality_record(d: usize, trials: usize, seed: u64) -> Result<Record> {
    let mean = check_orthogonality(d, trials, seed)?;
    let limit = orthogonality_limit(d);
    Ok(Record {
        name: "orthogonality".to_string(),
        params: params(&[("d", d as f64), ("seed", seed as f64)]),
        trials,
        empirical: mean,
        theoretical: limit,
        pass: mean < ORTHOGONALITY_RATIO * limit,
    })
}

/// Cosine thresholds below which the subgaussian bounds are tighter than the
/// Gaussian ones: `(lower, upper)`.
pub fn tightness_thresholds(epsilon: f64) -> (f64, f64) {
    let e = epsilon;
    let lower = (e + 3.0 * e * e) / (3.0 * e + e * e);
    let upper = (1.0 - 3.0 * e * e - (1.0 - e) * (1.0 - e * e).sqrt()) / (3.0 * e - e * e);
    (lower, upper)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TightnessRow {
    pub epsilon: f64,
    pub angle_deg: f64,
    pub lower1: f64,
    pub lower2: f64,
    pub upper1: f64,
    pub upper2: f64,
    /// Whether the observed ordering of both lower and both upper bounds agrees
    /// with [`tightness_thresholds`].
    pub consistent: bool,
}

/// Evaluates both intervals over a grid and checks the crossover angles.
/// Grid points within `1e-9` of a threshold are not judged.
pub fn tightness_grid(epsilons: &[f64], angles_deg: &[f64]) -> Result<Vec<TightnessRow>> {
    let mut rows = Vec::with_capacity(epsilons.len() * angles_deg.len());
    for &e in epsilons {
        check_epsilon(e)?;
        let (tl, tu) = tightness_thresholds(e);
        for &a in angles_deg {
            let c = a.to_radians().cos();
            let (lower1, upper1) = theorem1_interval(c, e);
            let (lower2, upper2) = theorem2_interval(c, e);
            let lower_ok = (c - tl).abs() < 1e-9 || (lower1 > lower2) == (c < tl);
            let upper_ok = (c - tu).abs() < 1e-9 || (upper1 < upper2) == (c < tu);
            rows.push(TightnessRow {
                epsilon: e,
                angle_deg: a,
                lower1,
                lower2,
                upper1,
                upper2,
                consistent: lower_ok && upper_ok,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_pair_has_requested_angle() {
        for a in [0.0, 45.0, 60.0, 90.0, 120.0] {
            let (w1, w2) = unit_pair(50, a, 3).unwrap();
            assert!((dot(&w1, &w1) - 1.0).abs() < 1e-12 && (dot(&w2, &w2) - 1.0).abs() < 1e-12);
            assert!((dot(&w1, &w2) - f64::cos(f64::to_radians(a))).abs() < 1e-12);
        }
    }

    #[test]
    fn closed_forms() {
        assert!(
            (theorem1_probability(800, 0.3) - (1.0 - 2.0 * (-9.0f64).exp()).powi(2)).abs() < 1e-15
        );
        assert!((theorem1_probability(800, 0.3) - 0.99951).abs() < 1e-5);
        assert!((jll_probability(200, 0.5) - 0.99614).abs() < 1e-5);
        // k = 8, epsilon = 0.3 gives 1 - 2 exp(-0.09) < 0.
        assert!(theorem1_probability(8, 0.3) < 0.0);
        let (lo, hi) = theorem1_interval(0.5, 0.3);
        assert!((lo - 0.2 / 1.3).abs() < 1e-15 && (hi - 0.8 / 0.7).abs() < 1e-15);
    }

    #[test]
    fn vacuous_bound_is_flagged_not_asserted() {
        let r = check_theorem1(50, 8, 0.3, 60.0, 500, 1).unwrap();
        assert!(r.is_vacuous() && r.pass && r.theoretical_rate == 0.0);
    }

    #[test]
    fn near_one_epsilon_widens_the_interval() {
        // The lower limit tends to (cos - 1) / 2, not -1.
        let (lo, hi) = theorem1_interval(0.5, 0.999_999);
        assert!((lo + 0.25).abs() < 1e-6 && hi > 1e5);
        let r = check_theorem1(50, 50, 0.999, 60.0, 2000, 2).unwrap();
        assert_eq!(r.successes, r.trials);
    }

    #[test]
    fn obtuse_angle_is_rejected() {
        assert!(matches!(
            check_theorem2(20, 10, 0.3, 120.0, 10, 0),
            Err(Error::RequiresAcuteAngle { .. })
        ));
    }

    #[test]
    fn small_angle_upper_bound_is_flagged() {
        let r = check_theorem2(20, 50, 0.3, 10.0, 200, 0).unwrap();
        assert!(r.flags.iter().any(|f| f == "upper_bound_at_least_one"));
    }

    #[test]
    fn lemma1_targets() {
        for (a, target) in [(90.0, 0.0), (0.0, 1.0), (60.0, 0.5)] {
            let r = check_lemma1(100, 10, a, 10_000, 4).unwrap();
            assert!((r.target - target).abs() < 1e-12);
            assert!(r.pass, "{r:?}");
        }
        assert!(check_lemma1(100, 10, 60.0, 100, 4).is_err());
    }

    #[test]
    fn identical_vectors_satisfy_jll_trivially() {
        let w = vec![0.3; 20];
        let r = check_jll_pair(&w, &w, 5, 0.1, 1.0, 100, 0, Sampling::Dense).unwrap();
        assert_eq!(r.successes, 100);
    }

    #[test]
    fn dense_and_reduced_samplers_agree_in_distribution() {
        // Mean and spread of the projected cosine at a small size.
        let (d, k, trials) = (40, 6, 20_000);
        let (w1, w2) = unit_pair(d, 60.0, 9).unwrap();
        let stats = |sampling| {
            let v = PairSampler::new(&w1, &w2, k, 1.0, sampling).run(trials, 11, |p| p.cosine());
            let n = v.len() as f64;
            let m = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
            (m, var)
        };
        let (md, vd) = stats(Sampling::Dense);
        let (mr, vr) = stats(Sampling::Reduced);
        let se = ((vd + vr) / trials as f64).sqrt();
        assert!((md - mr).abs() < 4.0 * se, "{md} vs {mr}");
        assert!((vd / vr - 1.0).abs() < 0.05, "{vd} vs {vr}");

        let od = check_orthogonality_with(200, 20_000, 5, Sampling::Dense).unwrap();
        let or = check_orthogonality_with(200, 20_000, 5, Sampling::Reduced).unwrap();
        assert!((od / or - 1.0).abs() < 0.03, "{od} vs {or}");
    }

    #[test]
    fn reports_are_deterministic() {
        let a = check_theorem1(100, 20, 0.3, 60.0, 1000, 7).unwrap();
        let b = check_theorem1(100, 20, 0.3, 60.0, 1000, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            records_to_json(&[a.record()]),
            records_to_json(&[b.record()])
        );
    }

    #[test]
    fn record_has_exactly_the_export_keys() {
        let r = check_jll(50, 20, 0.5, 200, 1).unwrap().record();
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        keys.sort_unstable();
        assert_eq!(
            keys,
            [
                "empirical",
                "name",
                "params",
                "pass",
                "theoretical",
                "trials"
            ]
        );
    }

    #[test]
    fn tightness_crossover_on_a_grid() {
        let eps: Vec<f64> = (1..20).map(|i| i as f64 * 0.05).collect();
        let angles: Vec<f64> = (0..=180).map(f64::from).collect();
        let rows = tightness_grid(&eps, &angles).unwrap();
        assert!(rows.iter().all(|r| r.consistent));
        // Past the lower-bound threshold angle the subgaussian lower bound is larger.
        let (tl, _) = tightness_thresholds(0.3);
        let beyond = tl.acos().to_degrees() + 1.0;
        let (l1, _) = theorem1_interval(beyond.to_radians().cos(), 0.3);
        let (l2, _) = theorem2_interval(beyond.to_radians().cos(), 0.3);
        assert!(l1 > l2);
    }
}
