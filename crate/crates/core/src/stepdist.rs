//! Step-size distributions, their sampling, and their logarithmic moment
//! generating functions.
//!
//! Every variant provides `Λ(t) = log E e^{tX}` together with `Λ'(t)` and
//! `Λ''(t)` in closed form:
//!
//! | variant | `Λ(t)` | domain |
//! |---|---|---|
//! | `Gaussian(μ, σ)` | `μt + σ²t²/2` | `ℝ` |
//! | `Exponential(λ, s)` | `st − log(1 − t/λ)` | `t < λ` |
//! | `TwoPoint(x0, x1, p0)` | `log(p0 e^{t x0} + (1−p0) e^{t x1})` | `ℝ` |
//! | `Uniform(lo, hi)` | `log((e^{t hi} − e^{t lo}) / (t (hi − lo)))` | `ℝ` |
//! | `NegLogBeta(α, β, s)` | `st + log B(α − t, β) − log B(α, β)` | `t < α` |
//! | `Empirical(xs)` | `log mean e^{t x_i}` | `ℝ` |
//!
//! `NegLogBeta` is `s − log U` with `U ~ Beta(α, β)`; with `α = β = 1` it is
//! the unit exponential.

use rand::{Rng, RngCore};
use rand_distr::{Beta, Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};
use crate::rng;
use crate::util::float_or_inf;

/// Evaluation requests closer than this to a domain endpoint are rejected.
pub const DOMAIN_MARGIN: f64 = 1e-9;

/// Gap tolerance used when looking for a lattice period in empirical data.
pub const LATTICE_TOLERANCE: f64 = 1e-12;

/// A recovered period shorter than this is indistinguishable from the
/// tolerance itself and is reported as nonlattice.
const MIN_LATTICE_PERIOD: f64 = 1e-9;

/// A step-size distribution.
///
/// Serialized as a JSON object tagged by `"variant"`, for example
/// `{"variant":"gaussian","mu":0.0,"sigma":1.0}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepSpec {
    Gaussian { mu: f64, sigma: f64 },
    Exponential { rate: f64, shift: f64 },
    TwoPoint { x0: f64, x1: f64, p0: f64 },
    Uniform { lo: f64, hi: f64 },
    NegLogBeta {
        alpha: f64,
        beta: f64,
        #[serde(default, skip_serializing_if = "is_zero")]
        shift: f64,
    },
    Empirical { samples: Vec<f64> },
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

/// Structural facts about a validated step distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistInfo {
    /// Essential infimum; `-inf` when unbounded below.
    #[serde(with = "float_or_inf")]
    pub ess_inf: f64,
    /// `P{X = ess inf X}`.
    pub atom_at_essinf: f64,
    /// Lattice period, if the distribution is lattice.
    pub lattice_period: Option<f64>,
    pub mean: f64,
    pub variance: f64,
    /// Open interval on which `Λ` is finite.
    #[serde(with = "float_or_inf")]
    pub t_lo: f64,
    #[serde(with = "float_or_inf")]
    pub t_hi: f64,
}

impl DistInfo {
    pub fn is_lattice(&self) -> bool {
        self.lattice_period.is_some()
    }

    pub fn bounded_below(&self) -> bool {
        self.ess_inf.is_finite()
    }

    /// Whether `t` is far enough inside the domain to be evaluated.
    pub fn admits(&self, t: f64) -> bool {
        t.is_finite() && t > self.t_lo + DOMAIN_MARGIN && t < self.t_hi - DOMAIN_MARGIN
    }
}

/// `Λ` and its first two derivatives at `t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentProfile {
    pub t: f64,
    pub lmgf: f64,
    pub d1: f64,
    pub d2: f64,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidSpec(msg.into())
}

fn finite(name: &str, x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be finite, got {x}")))
    }
}

/// Checks the parameter invariants and returns the distribution's
/// structural facts.
pub fn validate_spec(spec: &StepSpec) -> Result<DistInfo> {
    match *spec {
        StepSpec::Gaussian { mu, sigma } => {
            finite("mu", mu)?;
            finite("sigma", sigma)?;
            if sigma <= 0.0 {
                return Err(invalid(format!("sigma must be > 0, got {sigma}")));
            }
            Ok(DistInfo {
                ess_inf: f64::NEG_INFINITY,
                atom_at_essinf: 0.0,
                lattice_period: None,
                mean: mu,
                variance: sigma * sigma,
                t_lo: f64::NEG_INFINITY,
                t_hi: f64::INFINITY,
            })
        }
        StepSpec::Exponential { rate, shift } => {
            finite("rate", rate)?;
            finite("shift", shift)?;
            if rate <= 0.0 {
                return Err(invalid(format!("rate must be > 0, got {rate}")));
            }
            Ok(DistInfo {
                ess_inf: shift,
                atom_at_essinf: 0.0,
                lattice_period: None,
                mean: shift + 1.0 / rate,
                variance: 1.0 / (rate * rate),
                t_lo: f64::NEG_INFINITY,
                t_hi: rate,
            })
        }
        StepSpec::TwoPoint { x0, x1, p0 } => {
            finite("x0", x0)?;
            finite("x1", x1)?;
            if !(x0 < x1) {
                return Err(invalid(format!("two-point support needs x0 < x1, got {x0} and {x1}")));
            }
            if !(p0 > 0.0 && p0 < 1.0) {
                return Err(invalid(format!("p0 must lie in (0, 1), got {p0}")));
            }
            let gap = x1 - x0;
            Ok(DistInfo {
                ess_inf: x0,
                atom_at_essinf: p0,
                lattice_period: Some(gap),
                mean: p0 * x0 + (1.0 - p0) * x1,
                variance: p0 * (1.0 - p0) * gap * gap,
                t_lo: f64::NEG_INFINITY,
                t_hi: f64::INFINITY,
            })
        }
        StepSpec::Uniform { lo, hi } => {
            finite("lo", lo)?;
            finite("hi", hi)?;
            if !(lo < hi) {
                return Err(invalid(format!("uniform needs lo < hi, got {lo} and {hi}")));
            }
            let w = hi - lo;
            Ok(DistInfo {
                ess_inf: lo,
                atom_at_essinf: 0.0,
                lattice_period: None,
                mean: 0.5 * (lo + hi),
                variance: w * w / 12.0,
                t_lo: f64::NEG_INFINITY,
                t_hi: f64::INFINITY,
            })
        }
        StepSpec::NegLogBeta { alpha, beta, shift } => {
            finite("alpha", alpha)?;
            finite("beta", beta)?;
            finite("shift", shift)?;
            if alpha <= 0.0 || beta <= 0.0 {
                return Err(invalid(format!("alpha and beta must be > 0, got {alpha} and {beta}")));
            }
            Ok(DistInfo {
                ess_inf: shift,
                atom_at_essinf: 0.0,
                lattice_period: None,
                mean: shift + digamma(alpha + beta) - digamma(alpha),
                variance: trigamma(alpha) - trigamma(alpha + beta),
                t_lo: f64::NEG_INFINITY,
                t_hi: alpha,
            })
        }
        StepSpec::Empirical { ref samples } => empirical_info(samples),
    }
}

fn empirical_info(samples: &[f64]) -> Result<DistInfo> {
    if samples.is_empty() {
        return Err(invalid("empirical distribution needs at least one sample"));
    }
    if let Some(bad) = samples.iter().find(|x| !x.is_finite()) {
        return Err(invalid(format!("empirical samples must be finite, got {bad}")));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    if sorted.len() < 2 {
        return Err(invalid("distribution is constant; at least two distinct values are required"));
    }
    let n = samples.len() as f64;
    let min = sorted[0];
    let atom = samples.iter().filter(|&&x| x == min).count() as f64 / n;
    let mean = samples.iter().sum::<f64>() / n;
    let variance = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;

    let period = sorted[1..]
        .iter()
        .map(|x| x - min)
        .fold(0.0, |p, gap| tolerant_gcd(p, gap, LATTICE_TOLERANCE));
    Ok(DistInfo {
        ess_inf: min,
        atom_at_essinf: atom,
        lattice_period: (period >= MIN_LATTICE_PERIOD).then_some(period),
        mean,
        variance,
        t_lo: f64::NEG_INFINITY,
        t_hi: f64::INFINITY,
    })
}

/// Euclid's algorithm on reals, treating remainders below `tol` as zero.
fn tolerant_gcd(a: f64, b: f64, tol: f64) -> f64 {
    let (mut a, mut b) = if a >= b { (a, b) } else { (b, a) };
    while b > tol {
        let r = a % b;
        a = b;
        b = r;
    }
    a
}

/// Evaluates `Λ(t)`, `Λ'(t)` and `Λ''(t)`.
pub fn lmgf_eval(spec: &StepSpec, t: f64) -> Result<MomentProfile> {
    let info = validate_spec(spec)?;
    if !info.admits(t) {
        return Err(Error::Domain { t, lo: info.t_lo, hi: info.t_hi });
    }
    Ok(lmgf_unchecked(spec, t))
}

/// As [`lmgf_eval`] without validation; `t` must already be admissible.
pub(crate) fn lmgf_unchecked(spec: &StepSpec, t: f64) -> MomentProfile {
    let (lmgf, d1, d2) = match *spec {
        StepSpec::Gaussian { mu, sigma } => {
            let v = sigma * sigma;
            (mu * t + 0.5 * v * t * t, mu + v * t, v)
        }
        StepSpec::Exponential { rate, shift } => {
            let r = rate - t;
            (shift * t - (r / rate).ln(), shift + 1.0 / r, 1.0 / (r * r))
        }
        StepSpec::TwoPoint { x0, x1, p0 } => {
            let a0 = p0.ln() + t * x0;
            let a1 = (1.0 - p0).ln() + t * x1;
            let m = a0.max(a1);
            let lmgf = m + ((a0 - m).exp() + (a1 - m).exp()).ln();
            let w0 = (a0 - lmgf).exp();
            let w1 = (a1 - lmgf).exp();
            let gap = x1 - x0;
            (lmgf, w0 * x0 + w1 * x1, w0 * w1 * gap * gap)
        }
        StepSpec::Uniform { lo, hi } => {
            // Λ(t) = t·mid + g(t·w/2) with g(x) = log(sinh x / x).
            let half = 0.5 * (hi - lo);
            let mid = 0.5 * (hi + lo);
            let x = t * half;
            let (g, g1, g2) = log_sinhc(x);
            (t * mid + g, mid + half * g1, half * half * g2)
        }
        StepSpec::NegLogBeta { alpha, beta, shift } => {
            let a = alpha - t;
            let ab = alpha + beta;
            let lmgf = shift * t + ln_gamma(a) - ln_gamma(alpha) + ln_gamma(ab) - ln_gamma(ab - t);
            let d1 = shift + digamma(ab - t) - digamma(a);
            let d2 = trigamma(a) - trigamma(ab - t);
            (lmgf, d1, d2)
        }
        StepSpec::Empirical { ref samples } => {
            let m = samples.iter().map(|x| t * x).fold(f64::NEG_INFINITY, f64::max);
            let (mut z, mut zx) = (0.0, 0.0);
            for &x in samples {
                let w = (t * x - m).exp();
                z += w;
                zx += w * x;
            }
            let d1 = zx / z;
            let d2 = samples.iter().map(|&x| (t * x - m).exp() * (x - d1).powi(2)).sum::<f64>() / z;
            (m + (z / samples.len() as f64).ln(), d1, d2)
        }
    };
    // Λ(0) = log 1 exactly; the log-sum-exp forms above can leave an ulp.
    let lmgf = if t == 0.0 { 0.0 } else { lmgf };
    MomentProfile { t, lmgf, d1, d2 }
}

/// `g(x) = log(sinh x / x)` with `g'` and `g''`, stable for all real `x`.
fn log_sinhc(x: f64) -> (f64, f64, f64) {
    let ax = x.abs();
    if ax < 0.02 {
        let x2 = x * x;
        let g = x2 / 6.0 - x2 * x2 / 180.0 + x2 * x2 * x2 / 2835.0;
        let g1 = x / 3.0 - x * x2 / 45.0 + 2.0 * x * x2 * x2 / 945.0;
        let g2 = 1.0 / 3.0 - x2 / 15.0 + 2.0 * x2 * x2 / 189.0;
        return (g, g1, g2);
    }
    // log sinh|x| = |x| + log(1 − e^{−2|x|}) − log 2
    let log_sinh = ax + (-(-2.0 * ax).exp()).ln_1p() - std::f64::consts::LN_2;
    let g = log_sinh - ax.ln();
    let coth = 1.0 / (ax).tanh();
    let g1 = (coth - 1.0 / ax).copysign(x);
    let s = if ax > 350.0 { f64::INFINITY } else { ax.sinh() };
    let g2 = 1.0 / (ax * ax) - 1.0 / (s * s);
    (g, g1, g2)
}

/// The trigamma function `ψ'(x)` for `x > 0`.
pub(crate) fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // 1/x + 1/2x² + Σ B_{2k}/x^{2k+1}
    let tail = inv2 * inv
        * (1.0 / 6.0
            + inv2 * (-1.0 / 30.0 + inv2 * (1.0 / 42.0 + inv2 * (-1.0 / 30.0 + inv2 * (5.0 / 66.0)))));
    acc + inv + 0.5 * inv2 + tail
}

/// A prepared sampler for one step distribution.
#[derive(Clone, Debug)]
pub enum StepSampler {
    Gaussian { mu: f64, sigma: f64 },
    Exponential { rate: f64, shift: f64 },
    TwoPoint { x0: f64, x1: f64, p0: f64 },
    Uniform { lo: f64, width: f64 },
    NegLogBeta { beta: Beta<f64>, shift: f64 },
    Empirical { samples: Vec<f64> },
}

impl StepSampler {
    pub fn new(spec: &StepSpec) -> Result<Self> {
        validate_spec(spec)?;
        Ok(match *spec {
            StepSpec::Gaussian { mu, sigma } => StepSampler::Gaussian { mu, sigma },
            StepSpec::Exponential { rate, shift } => StepSampler::Exponential { rate, shift },
            StepSpec::TwoPoint { x0, x1, p0 } => StepSampler::TwoPoint { x0, x1, p0 },
            StepSpec::Uniform { lo, hi } => StepSampler::Uniform { lo, width: hi - lo },
            StepSpec::NegLogBeta { alpha, beta, shift } => StepSampler::NegLogBeta {
                beta: Beta::new(alpha, beta).map_err(|e| invalid(e.to_string()))?,
                shift,
            },
            StepSpec::Empirical { ref samples } => StepSampler::Empirical { samples: samples.clone() },
        })
    }

    #[inline]
    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            StepSampler::Gaussian { mu, sigma } => {
                let z: f64 = rng.sample(StandardNormal);
                mu + sigma * z
            }
            StepSampler::Exponential { rate, shift } => {
                let e: f64 = rng.sample(Exp1);
                shift + e / rate
            }
            StepSampler::TwoPoint { x0, x1, p0 } => {
                if rng.random::<f64>() < *p0 {
                    *x0
                } else {
                    *x1
                }
            }
            StepSampler::Uniform { lo, width } => lo + width * rng.random::<f64>(),
            StepSampler::NegLogBeta { beta, shift } => {
                let u = beta.sample(rng).max(f64::MIN_POSITIVE);
                shift - u.ln()
            }
            StepSampler::Empirical { samples } => samples[rng.random_range(0..samples.len())],
        }
    }
}

/// `count` iid draws; the same `(spec, seed, count)` always gives the same output.
pub fn sample(spec: &StepSpec, seed: u64, count: usize) -> Result<Vec<f64>> {
    if count == 0 {
        return Err(Error::OutOfRange("sample count must be at least 1".into()));
    }
    let sampler = StepSampler::new(spec)?;
    let mut rng = rng::stream(seed, 0);
    Ok((0..count).map(|_| sampler.sample(&mut rng)).collect())
}

/// A mean-zero version of a distribution and the shift that was removed.
///
/// If `M_n` is the minimum for the centered walk, the original walk's
/// minimum is `M_n + n · shift`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Centered {
    pub spec: StepSpec,
    pub shift: f64,
}

pub fn centered(spec: &StepSpec) -> Result<Centered> {
    let mean = validate_spec(spec)?.mean;
    let spec = match spec.clone() {
        StepSpec::Gaussian { sigma, .. } => StepSpec::Gaussian { mu: 0.0, sigma },
        StepSpec::Exponential { rate, .. } => StepSpec::Exponential { rate, shift: -1.0 / rate },
        StepSpec::TwoPoint { x0, x1, p0 } => StepSpec::TwoPoint { x0: x0 - mean, x1: x1 - mean, p0 },
        StepSpec::Uniform { lo, hi } => {
            let half = 0.5 * (hi - lo);
            StepSpec::Uniform { lo: -half, hi: half }
        }
        StepSpec::NegLogBeta { alpha, beta, shift } => {
            StepSpec::NegLogBeta { alpha, beta, shift: shift - mean }
        }
        StepSpec::Empirical { samples } => StepSpec::Empirical {
            samples: samples.into_iter().map(|x| x - mean).collect(),
        },
    };
    Ok(Centered { spec, shift: mean })
}

impl StepSpec {
    /// Short descriptor used in CSV rows, e.g. `gaussian(0;1)`.
    pub fn descriptor(&self) -> String {
        match self {
            StepSpec::Gaussian { mu, sigma } => format!("gaussian({mu};{sigma})"),
            StepSpec::Exponential { rate, shift } => format!("exponential({rate};{shift})"),
            StepSpec::TwoPoint { x0, x1, p0 } => format!("two_point({x0};{x1};{p0})"),
            StepSpec::Uniform { lo, hi } => format!("uniform({lo};{hi})"),
            StepSpec::NegLogBeta { alpha, beta, shift } => format!("neg_log_beta({alpha};{beta};{shift})"),
            StepSpec::Empirical { samples } => format!("empirical(n={})", samples.len()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn gauss() -> StepSpec {
        StepSpec::Gaussian { mu: 0.0, sigma: 1.0 }
    }
    fn expo() -> StepSpec {
        StepSpec::Exponential { rate: 1.0, shift: 0.0 }
    }
    fn two_point(p0: f64) -> StepSpec {
        StepSpec::TwoPoint { x0: 0.0, x1: 1.0, p0 }
    }

    fn all_specs() -> Vec<StepSpec> {
        vec![
            gauss(),
            StepSpec::Gaussian { mu: 0.3, sigma: 2.0 },
            expo(),
            StepSpec::Exponential { rate: 2.5, shift: -1.0 },
            two_point(0.6),
            StepSpec::TwoPoint { x0: -1.0, x1: 2.0, p0: 0.2 },
            StepSpec::Uniform { lo: 0.0, hi: 1.0 },
            StepSpec::Uniform { lo: -3.0, hi: 0.5 },
            StepSpec::NegLogBeta { alpha: 2.0, beta: 3.0, shift: 0.0 },
            StepSpec::NegLogBeta { alpha: 0.7, beta: 1.5, shift: 0.25 },
            StepSpec::Empirical { samples: vec![-1.0, 0.25, 0.5, 3.0, 3.0] },
        ]
    }

    #[test]
    fn validate_examples() {
        let g = validate_spec(&gauss()).unwrap();
        assert_eq!(g.ess_inf, f64::NEG_INFINITY);
        assert_eq!((g.atom_at_essinf, g.mean, g.variance), (0.0, 0.0, 1.0));
        assert!(!g.is_lattice());
        assert_eq!((g.t_lo, g.t_hi), (f64::NEG_INFINITY, f64::INFINITY));

        let e = validate_spec(&expo()).unwrap();
        assert_eq!((e.ess_inf, e.atom_at_essinf, e.mean, e.variance), (0.0, 0.0, 1.0, 1.0));
        assert_eq!(e.t_hi, 1.0);
        assert!(!e.is_lattice());

        let tp = validate_spec(&two_point(0.6)).unwrap();
        assert_eq!((tp.ess_inf, tp.atom_at_essinf), (0.0, 0.6));
        assert_eq!(tp.lattice_period, Some(1.0));
        assert_relative_eq!(tp.mean, 0.4, epsilon = 1e-15);
    }

    #[test]
    fn validate_rejects_bad_parameters() {
        let bad = [
            StepSpec::Gaussian { mu: 0.0, sigma: 0.0 },
            StepSpec::Exponential { rate: -1.0, shift: 0.0 },
            StepSpec::TwoPoint { x0: 1.0, x1: 1.0, p0: 0.5 },
            StepSpec::TwoPoint { x0: 0.0, x1: 1.0, p0: 1.0 },
            StepSpec::Uniform { lo: 2.0, hi: 1.0 },
            StepSpec::NegLogBeta { alpha: 0.0, beta: 1.0, shift: 0.0 },
            StepSpec::Empirical { samples: vec![2.0, 2.0, 2.0] },
            StepSpec::Empirical { samples: vec![] },
            StepSpec::Gaussian { mu: f64::NAN, sigma: 1.0 },
        ];
        for spec in bad {
            assert!(matches!(validate_spec(&spec), Err(Error::InvalidSpec(_))), "{spec:?}");
        }
    }

    #[test]
    fn empirical_lattice_detection() {
        let lat = StepSpec::Empirical { samples: vec![0.1, 0.3, 0.7, 0.3, 1.1] };
        let info = validate_spec(&lat).unwrap();
        assert_relative_eq!(info.lattice_period.unwrap(), 0.2, epsilon = 1e-9);
        assert_eq!(info.atom_at_essinf, 0.2);

        let cont = StepSpec::Empirical { samples: sample(&gauss(), 5, 1000).unwrap() };
        assert!(!validate_spec(&cont).unwrap().is_lattice());

        let irr = StepSpec::Empirical { samples: vec![0.0, 1.0, std::f64::consts::SQRT_2] };
        assert!(!validate_spec(&irr).unwrap().is_lattice());
    }

    #[test]
    fn lmgf_examples() {
        let p = lmgf_eval(&gauss(), -1.0).unwrap();
        assert_eq!((p.lmgf, p.d1, p.d2), (0.5, -1.0, 1.0));

        let p = lmgf_eval(&expo(), -3.0).unwrap();
        assert_relative_eq!(p.lmgf, -(4.0f64).ln(), epsilon = 1e-15);
        assert_relative_eq!(p.lmgf, -1.386294, epsilon = 1e-6);
        assert_relative_eq!(p.d1, 0.25, epsilon = 1e-15);
        assert_relative_eq!(p.d2, 0.0625, epsilon = 1e-15);
    }

    #[test]
    fn lmgf_at_zero_is_mean_and_variance() {
        for spec in all_specs() {
            let info = validate_spec(&spec).unwrap();
            let p = lmgf_eval(&spec, 0.0).unwrap();
            assert!(p.lmgf.abs() < 1e-14, "{spec:?}: {}", p.lmgf);
            assert_relative_eq!(p.d1, info.mean, epsilon = 1e-12, max_relative = 1e-12);
            assert_relative_eq!(p.d2, info.variance, epsilon = 1e-12, max_relative = 1e-10);
        }
    }

    #[test]
    fn lmgf_domain_errors() {
        assert!(matches!(lmgf_eval(&expo(), 1.0), Err(Error::Domain { .. })));
        assert!(matches!(lmgf_eval(&expo(), 1.0 - 1e-10), Err(Error::Domain { .. })));
        assert!(lmgf_eval(&expo(), 1.0 - 1e-6).is_ok());
        assert!(matches!(lmgf_eval(&gauss(), f64::NAN), Err(Error::Domain { .. })));
        let nlb = StepSpec::NegLogBeta { alpha: 2.0, beta: 1.0, shift: 0.0 };
        assert!(matches!(lmgf_eval(&nlb, 2.5), Err(Error::Domain { .. })));
    }

    #[test]
    fn neg_log_beta_one_one_is_unit_exponential() {
        let nlb = StepSpec::NegLogBeta { alpha: 1.0, beta: 1.0, shift: 0.0 };
        for t in [-20.0, -3.0, -0.5, 0.0, 0.5, 0.9] {
            let a = lmgf_eval(&nlb, t).unwrap();
            let b = lmgf_eval(&expo(), t).unwrap();
            assert_relative_eq!(a.lmgf, b.lmgf, epsilon = 1e-12);
            assert_relative_eq!(a.d1, b.d1, epsilon = 1e-12, max_relative = 1e-12);
            assert_relative_eq!(a.d2, b.d2, epsilon = 1e-12, max_relative = 1e-10);
        }
    }

    /// Adaptive Simpson; an oracle independent of the gamma-function path.
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (f(lm), f(rm));
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                left + right + (left + right - whole) / 15.0
            } else {
                rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                    + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
            }
        }
        let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
        rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 50)
    }

    #[test]
    fn neg_log_beta_matches_quadrature() {
        // E U^{-t} for U ~ Beta(α, β), integrated over u in (0, 1).
        let (alpha, beta) = (2.5, 1.5);
        let spec = StepSpec::NegLogBeta { alpha, beta, shift: 0.0 };
        let norm = simpson(&|u: f64| u.powf(alpha - 1.0) * (1.0 - u).powf(beta - 1.0), 0.0, 1.0, 1e-13);
        for t in [-4.0, -1.0, 0.5, 1.2] {
            let m0 = simpson(&|u: f64| u.powf(alpha - 1.0 - t) * (1.0 - u).powf(beta - 1.0), 0.0, 1.0, 1e-13);
            let m1 = simpson(
                &|u: f64| if u > 0.0 { -u.ln() * u.powf(alpha - 1.0 - t) * (1.0 - u).powf(beta - 1.0) } else { 0.0 },
                0.0,
                1.0,
                1e-13,
            );
            let p = lmgf_eval(&spec, t).unwrap();
            assert_relative_eq!(p.lmgf, (m0 / norm).ln(), epsilon = 1e-8);
            assert_relative_eq!(p.d1, m1 / m0, epsilon = 1e-8);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-5;
        for spec in all_specs() {
            let info = validate_spec(&spec).unwrap();
            let hi = info.t_hi.min(3.0);
            for k in 0..25 {
                let t = -6.0 + (hi - 0.05 + 6.0) * k as f64 / 24.0;
                let p = lmgf_eval(&spec, t).unwrap();
                let up = lmgf_eval(&spec, t + h).unwrap();
                let dn = lmgf_eval(&spec, t - h).unwrap();
                let fd1 = (up.lmgf - dn.lmgf) / (2.0 * h);
                let fd2 = (up.d1 - dn.d1) / (2.0 * h);
                let scale1 = p.d1.abs().max(1e-3);
                let scale2 = p.d2.abs().max(1e-3);
                assert!((fd1 - p.d1).abs() <= 1e-5 * scale1, "{spec:?} t={t}: Λ' {} vs fd {}", p.d1, fd1);
                assert!((fd2 - p.d2).abs() <= 1e-5 * scale2, "{spec:?} t={t}: Λ'' {} vs fd {}", p.d2, fd2);
            }
        }
    }

    #[test]
    fn lmgf_is_convex_on_a_grid() {
        let h = 1e-2;
        for spec in all_specs() {
            let info = validate_spec(&spec).unwrap();
            let hi = info.t_hi.min(3.0) - 0.1;
            let grid: Vec<f64> = (0..200).map(|k| -8.0 + (hi + 8.0) * k as f64 / 199.0).collect();
            for &t in &grid[1..grid.len() - 1] {
                let l = |s: f64| lmgf_eval(&spec, s).unwrap().lmgf;
                let second = l(t + h) - 2.0 * l(t) + l(t - h);
                assert!(second >= -1e-9, "{spec:?} at {t}: {second}");
            }
        }
    }

    #[test]
    fn uniform_series_and_direct_branches_agree() {
        let spec = StepSpec::Uniform { lo: 0.0, hi: 2.0 };
        let at = |t: f64| lmgf_eval(&spec, t).unwrap();
        for t in [0.019, 0.021, -0.019, -0.021, 0.5, -40.0, 800.0, -800.0] {
            let p = at(t);
            assert!(p.lmgf.is_finite() && p.d1.is_finite() && p.d2.is_finite() && p.d2 >= 0.0, "{t}: {p:?}");
        }
        let (a, b) = (at(0.0199999), at(0.0200001));
        assert_relative_eq!(a.d2, b.d2, epsilon = 1e-9);
        // Direct check against the defining integral at a moderate t.
        let t = 1.3;
        let exact = ((2.0 * t as f64).exp() - 1.0) / (2.0 * t);
        assert_relative_eq!(at(t).lmgf, exact.ln(), epsilon = 1e-14);
    }

    #[test]
    fn trigamma_known_values() {
        let pi2_6 = std::f64::consts::PI.powi(2) / 6.0;
        assert_relative_eq!(trigamma(1.0), pi2_6, epsilon = 1e-13);
        assert_relative_eq!(trigamma(0.5), std::f64::consts::PI.powi(2) / 2.0, epsilon = 1e-12);
        assert_relative_eq!(trigamma(2.0), pi2_6 - 1.0, epsilon = 1e-13);
    }

    #[test]
    fn sample_examples() {
        let tp = sample(&two_point(0.6), 11, 100_000).unwrap();
        assert!(tp.iter().all(|&x| x == 0.0 || x == 1.0));

        let n = 1_000_000;
        let g = sample(&gauss(), 12345, n).unwrap();
        let mean = g.iter().sum::<f64>() / n as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "{mean}");

        assert_eq!(sample(&expo(), 9, 50).unwrap(), sample(&expo(), 9, 50).unwrap());
        assert_ne!(sample(&expo(), 9, 50).unwrap(), sample(&expo(), 10, 50).unwrap());
        assert!(matches!(sample(&expo(), 9, 0), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn samplers_respect_support() {
        for spec in all_specs() {
            let info = validate_spec(&spec).unwrap();
            let xs = sample(&spec, 3, 20_000).unwrap();
            assert!(xs.iter().all(|&x| x >= info.ess_inf), "{spec:?}");
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let se = (info.variance / xs.len() as f64).sqrt();
            assert!((mean - info.mean).abs() < 5.0 * se, "{spec:?}: {mean} vs {}", info.mean);
        }
    }

    #[test]
    fn empirical_lmgf_tracks_parametric() {
        // Λ of the empirical measure of 10^6 draws against the exact Λ, within
        // three Monte Carlo standard errors of the mean of e^{tX}.
        let n = 1_000_000;
        for (spec, ts) in [(gauss(), vec![-0.7, -0.3, 0.4]), (expo(), vec![-2.0, -0.5, 0.3])] {
            let xs = sample(&spec, 77, n).unwrap();
            let emp = StepSpec::Empirical { samples: xs.clone() };
            for t in ts {
                let exact = lmgf_eval(&spec, t).unwrap().lmgf;
                let got = lmgf_eval(&emp, t).unwrap().lmgf;
                let mgf = exact.exp();
                let var = xs.iter().map(|x| ((t * x).exp() - mgf).powi(2)).sum::<f64>() / n as f64;
                // delta method: se(log mean) ≈ se(mean) / mean
                let se = (var / n as f64).sqrt() / mgf;
                assert!((got - exact).abs() < 3.0 * se, "{spec:?} t={t}: {got} vs {exact} (se {se})");
            }
        }
    }

    #[test]
    fn centered_examples() {
        assert_eq!(
            centered(&expo()).unwrap(),
            Centered { spec: StepSpec::Exponential { rate: 1.0, shift: -1.0 }, shift: 1.0 }
        );
        assert_eq!(centered(&gauss()).unwrap().spec, gauss());
        let c = centered(&two_point(0.6)).unwrap();
        match c.spec {
            StepSpec::TwoPoint { x0, x1, p0 } => {
                assert_relative_eq!(x0, -0.4, epsilon = 1e-15);
                assert_relative_eq!(x1, 0.6, epsilon = 1e-15);
                assert_eq!(p0, 0.6);
            }
            other => panic!("{other:?}"),
        }
        for spec in all_specs() {
            let c = centered(&spec).unwrap();
            assert!(validate_spec(&c.spec).unwrap().mean.abs() < 1e-12, "{spec:?}");
        }
    }

    #[test]
    fn json_shape() {
        let s = serde_json::to_string(&gauss()).unwrap();
        assert_eq!(s, r#"{"variant":"gaussian","mu":0.0,"sigma":1.0}"#);
        let tp: StepSpec = serde_json::from_str(r#"{"variant":"two_point","x0":0,"x1":1,"p0":0.6}"#).unwrap();
        assert_eq!(tp, two_point(0.6));
        let nlb: StepSpec = serde_json::from_str(r#"{"variant":"neg_log_beta","alpha":2,"beta":3}"#).unwrap();
        assert_eq!(nlb, StepSpec::NegLogBeta { alpha: 2.0, beta: 3.0, shift: 0.0 });
        assert!(serde_json::from_str::<StepSpec>(r#"{"variant":"gaussian","mu":0,"sigma":1,"extra":2}"#).is_err());
    }

    proptest::proptest! {
        #[test]
        fn json_round_trip_is_lossless(mu in -1e6f64..1e6, sigma in 1e-6f64..1e6, xs in proptest::collection::vec(-1e3f64..1e3, 1..20)) {
            for spec in [StepSpec::Gaussian { mu, sigma }, StepSpec::Empirical { samples: xs.clone() }] {
                let back: StepSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
                proptest::prop_assert_eq!(back, spec);
            }
        }
    }
}
