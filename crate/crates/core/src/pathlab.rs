//! Path combinatorics: chords, cyclic rotations and shape events.
//!
//! A walk is stored as its partial sums `S_0 = 0, S_1, …, S_n`. The chord is
//! the straight line from `(0, 0)` to `(n, S_n)`. All chord comparisons are
//! done in the multiplied form `S_i·n` against `S_n·i`, with differences
//! below a tolerance of `1e-15 · n · max_k |S_k|` treated as ties.

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{Error, Result};
use crate::rng;
use crate::stepdist::{validate_spec, StepSampler, StepSpec};
use crate::util::proportion;

/// Relative tolerance for chord ties.
pub const TIE_TOLERANCE: f64 = 1e-15;

/// Exponent of the closeness threshold `b(n, k)^{1/57}`.
pub const CLOSE_EXPONENT: i32 = 57;

/// Partial sums `S_0 = 0, S_1, …, S_n` of a walk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct WalkPath {
    sums: Vec<f64>,
}

impl WalkPath {
    pub fn from_sums(sums: Vec<f64>) -> Result<Self> {
        match sums.first() {
            Some(&s0) if s0 == 0.0 => {}
            _ => return Err(Error::OutOfRange("a walk must start with S_0 = 0".into())),
        }
        if sums.iter().any(|s| !s.is_finite()) {
            return Err(Error::OutOfRange("partial sums must be finite".into()));
        }
        Ok(WalkPath { sums })
    }

    pub fn from_steps(steps: &[f64]) -> Self {
        let mut sums = Vec::with_capacity(steps.len() + 1);
        let mut s = 0.0;
        sums.push(s);
        for x in steps {
            s += x;
            sums.push(s);
        }
        WalkPath { sums }
    }

    /// Number of steps.
    pub fn n(&self) -> usize {
        self.sums.len() - 1
    }

    pub fn sums(&self) -> &[f64] {
        &self.sums
    }

    pub fn last(&self) -> f64 {
        self.sums[self.n()]
    }

    pub fn steps(&self) -> Vec<f64> {
        self.sums.windows(2).map(|w| w[1] - w[0]).collect()
    }

    fn require_steps(&self) -> Result<()> {
        if self.n() == 0 {
            return Err(Error::OutOfRange("the walk needs at least one step".into()));
        }
        Ok(())
    }

    /// Tie tolerance for multiplied chord comparisons on this path.
    fn tolerance(&self) -> f64 {
        let scale = self.sums.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        TIE_TOLERANCE * self.n() as f64 * scale
    }

    /// `S_i·n − S_n·i`, i.e. `n` times the height of `S_i` above the chord.
    #[inline]
    fn chord_gap(&self, i: usize) -> f64 {
        let n = self.n() as f64;
        self.sums[i] * n - self.last() * i as f64
    }
}

impl TryFrom<Vec<f64>> for WalkPath {
    type Error = Error;
    fn try_from(sums: Vec<f64>) -> Result<Self> {
        WalkPath::from_sums(sums)
    }
}

impl From<WalkPath> for Vec<f64> {
    fn from(p: WalkPath) -> Self {
        p.sums
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeadingStatus {
    pub leading: bool,
    pub strictly_leading: bool,
}

/// Leading: `S_i ≥ S_n·i/n` for every `i`. Strictly leading: strict
/// inequality for `i = 1..n−1` (at `i = n` both sides are `S_n`).
pub fn leading_status(path: &WalkPath) -> Result<LeadingStatus> {
    path.require_steps()?;
    let tol = path.tolerance();
    let n = path.n();
    let mut leading = true;
    let mut strict = true;
    for i in 1..n {
        let gap = path.chord_gap(i);
        if gap <= tol {
            strict = false;
        }
        if gap < -tol {
            leading = false;
            break;
        }
    }
    Ok(LeadingStatus { leading, strictly_leading: leading && strict })
}

/// The walk whose steps are the steps of `path` shifted cyclically by `j`.
///
/// The final partial sum is set to the original `S_n` exactly.
pub fn rotate(path: &WalkPath, j: usize) -> Result<WalkPath> {
    path.require_steps()?;
    let n = path.n();
    if j >= n {
        return Err(Error::OutOfRange(format!("rotation index {j} must lie in [0, {})", n)));
    }
    if j == 0 {
        return Ok(path.clone());
    }
    let s = &path.sums;
    let sn = s[n];
    let mut out = Vec::with_capacity(n + 1);
    out.push(0.0);
    for i in 1..n {
        let k = j + i;
        out.push(if k <= n { s[k] - s[j] } else { sn + s[k - n] - s[j] });
    }
    out.push(sn);
    Ok(WalkPath { sums: out })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RotationReport {
    pub leading_count: usize,
    pub strictly_leading_count: usize,
    pub leading_indices: Vec<usize>,
    pub strictly_leading_indices: Vec<usize>,
}

/// Leading status of every cyclic rotation of `path`.
pub fn rotation_census(path: &WalkPath) -> Result<RotationReport> {
    path.require_steps()?;
    let mut report = RotationReport {
        leading_count: 0,
        strictly_leading_count: 0,
        leading_indices: Vec::new(),
        strictly_leading_indices: Vec::new(),
    };
    for j in 0..path.n() {
        let status = leading_status(&rotate(path, j)?)?;
        if status.leading {
            report.leading_count += 1;
            report.leading_indices.push(j);
        }
        if status.strictly_leading {
            report.strictly_leading_count += 1;
            report.strictly_leading_indices.push(j);
        }
    }
    Ok(report)
}

/// `b(n, k) = min(k, n − k)`.
pub fn b(n: usize, k: usize) -> usize {
    k.min(n - k)
}

fn close_threshold(n: usize, k: usize) -> f64 {
    (b(n, k) as f64).powf(1.0 / CLOSE_EXPONENT as f64)
}

/// Minimum over `i = 1..n−1` of `S_i − S_n·i/n`; `+∞` when `n = 1`.
pub fn min_excess(path: &WalkPath) -> f64 {
    let n = path.n() as f64;
    (1..path.n()).map(|i| path.chord_gap(i) / n).fold(f64::INFINITY, f64::min)
}

/// The walk stays strictly above chord + `a` at every `i = 1..n−1`.
pub fn abo(path: &WalkPath, a: f64) -> bool {
    let n = path.n() as f64;
    let tol = path.tolerance();
    (1..path.n()).all(|i| path.chord_gap(i) - a * n > tol)
}

/// `C_k`: `S_k ≤ S_n·k/n + b(n, k)^{1/57}`.
pub fn close_at(path: &WalkPath, k: usize) -> bool {
    let n = path.n();
    path.chord_gap(k) <= close_threshold(n, k) * n as f64 + path.tolerance()
}

/// `B_a`: `C_k` for some `|a|^57 ≤ k ≤ n − |a|^57`; empty when `|a|^57 > n/2`.
pub fn b_event(path: &WalkPath, a: i64) -> bool {
    let n = path.n();
    let lo = (a.unsigned_abs() as f64).powi(CLOSE_EXPONENT);
    if lo > n as f64 / 2.0 {
        return false;
    }
    let lo = lo.ceil() as usize;
    (lo..=n - lo).any(|k| close_at(path, k))
}

/// `S_k ≥ S_n·k/n + b(n, k)^{1/57}` for all `C ≤ k ≤ n − C`.
pub fn well_behaved(path: &WalkPath, c: usize) -> Result<bool> {
    let n = path.n();
    if c == 0 || n < 2 * c {
        return Err(Error::OutOfRange(format!("well-behaved check needs 1 ≤ C and n ≥ 2C (n={n}, C={c})")));
    }
    let tol = path.tolerance();
    Ok((c..=n - c).all(|k| path.chord_gap(k) >= close_threshold(n, k) * n as f64 - tol))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeReport {
    /// `(a, abo a)` for every queried `a`.
    pub abo_at: Vec<(i64, bool)>,
    #[serde(with = "crate::util::float_or_inf")]
    pub min_excess: f64,
    /// All `k ∈ [0, n]` with `C_k`.
    pub close_indices: Vec<usize>,
    /// `(a, B_a)` for every queried `a`.
    pub b_a: Vec<(i64, bool)>,
    pub well_behaved_c: usize,
    pub well_behaved: bool,
}

pub fn shape_report(path: &WalkPath, a_values: &[i64], c: usize) -> Result<ShapeReport> {
    path.require_steps()?;
    if let Some(a) = a_values.iter().find(|&&a| a > -1) {
        return Err(Error::OutOfRange(format!("shape levels must be integers ≤ −1, got {a}")));
    }
    Ok(ShapeReport {
        abo_at: a_values.iter().map(|&a| (a, abo(path, a as f64))).collect(),
        min_excess: min_excess(path),
        close_indices: (0..=path.n()).filter(|&k| close_at(path, k)).collect(),
        b_a: a_values.iter().map(|&a| (a, b_event(path, a))).collect(),
        well_behaved_c: c,
        well_behaved: well_behaved(path, c)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeEstimate {
    pub n: usize,
    pub a: i64,
    pub window: (f64, f64),
    pub replicates: u64,
    pub p_abo: f64,
    pub p_abo_se: f64,
    pub p_abo_and_ba: f64,
    pub p_abo_and_ba_se: f64,
    /// Fraction of proposals landing in the window (1 for the exact bridge).
    pub acceptance: f64,
}

/// Rejection sampling gives up when fewer than this fraction of proposals land in the window.
pub const MIN_ACCEPTANCE: f64 = 1e-6;
/// Proposals drawn before the acceptance floor is checked.
pub const ACCEPTANCE_PROBE: u64 = 1_000_000;

/// Estimates `P{abo a | lo ≤ S_n ≤ hi}` and `P{abo a, B_a | lo ≤ S_n ≤ hi}`.
///
/// Gaussian steps use the exact conditional bridge; other steps use
/// rejection on the endpoint.
pub fn conditional_shape_estimate(
    spec: &StepSpec,
    n: usize,
    window: (f64, f64),
    a: i64,
    replicates: u64,
    seed: u64,
) -> Result<ShapeEstimate> {
    validate_spec(spec)?;
    if n == 0 {
        return Err(Error::OutOfRange("n must be at least 1".into()));
    }
    if a > -1 {
        return Err(Error::OutOfRange(format!("a must be ≤ −1, got {a}")));
    }
    if replicates == 0 {
        return Err(Error::OutOfRange("replicates must be at least 1".into()));
    }
    let (lo, hi) = window;
    if !(lo < hi) {
        return Err(Error::OutOfRange(format!("empty window ({lo}, {hi})")));
    }
    let mut rng = rng::stream(seed, 0);
    let mut path = WalkPath { sums: vec![0.0; n + 1] };
    let (mut hit_abo, mut hit_joint, mut attempts) = (0u64, 0u64, 0u64);

    let mut tally = |path: &WalkPath| {
        if abo(path, a as f64) {
            hit_abo += 1;
            if b_event(path, a) {
                hit_joint += 1;
            }
        }
    };

    if let StepSpec::Gaussian { mu, sigma } = *spec {
        let nf = n as f64;
        let (m, s) = (mu * nf, sigma * nf.sqrt());
        let (alpha, beta) = ((lo - m) / s, (hi - m) / s);
        if log_normal_mass(alpha, beta) == f64::NEG_INFINITY {
            return Err(Error::OutOfRange(format!("window ({lo}, {hi}) has no Gaussian mass at n={n}")));
        }
        for _ in 0..replicates {
            let end = m + s * truncated_standard_normal(&mut rng, alpha, beta);
            gaussian_bridge(&mut rng, sigma, end, &mut path.sums);
            tally(&path);
        }
        attempts = replicates;
    } else {
        let sampler = StepSampler::new(spec)?;
        let mut accepted = 0u64;
        while accepted < replicates {
            attempts += 1;
            let mut acc = 0.0;
            for slot in path.sums.iter_mut().skip(1) {
                acc += sampler.sample(&mut rng);
                *slot = acc;
            }
            if (lo..=hi).contains(&acc) {
                accepted += 1;
                tally(&path);
            }
            if attempts == ACCEPTANCE_PROBE && (accepted as f64) < MIN_ACCEPTANCE * attempts as f64 {
                return Err(Error::RejectionStarvation { acceptance: accepted as f64 / attempts as f64, attempts });
            }
        }
    }
    let (p_abo, p_abo_se) = proportion(hit_abo, replicates);
    let (p_abo_and_ba, p_abo_and_ba_se) = proportion(hit_joint, replicates);
    Ok(ShapeEstimate {
        n,
        a,
        window,
        replicates,
        p_abo,
        p_abo_se,
        p_abo_and_ba,
        p_abo_and_ba_se,
        acceptance: replicates as f64 / attempts as f64,
    })
}

/// Fills `out[0..=n]` with a Gaussian walk of step scale `sigma` conditioned on `S_n = end`.
fn gaussian_bridge<R: Rng + ?Sized>(rng: &mut R, sigma: f64, end: f64, out: &mut [f64]) {
    let n = out.len() - 1;
    out[0] = 0.0;
    let mut prev = 0.0;
    for i in 1..n {
        let left = (n - i + 1) as f64;
        let mean = prev + (end - prev) / left;
        let sd = sigma * ((left - 1.0) / left).sqrt();
        let z: f64 = rng.sample(StandardNormal);
        prev = mean + sd * z;
        out[i] = prev;
    }
    out[n] = end;
}

/// Upper tail `P{Z > x}` of the standard normal.
fn upper_tail(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// `log P{α ≤ Z ≤ β}`, `−∞` when the mass underflows.
fn log_normal_mass(alpha: f64, beta: f64) -> f64 {
    let (a, b) = if alpha >= 0.0 { (alpha, beta) } else if beta <= 0.0 { (-beta, -alpha) } else { return 0.0 };
    if a > 30.0 {
        // Mills ratio leading term; the window width enters only through e^{-a(b-a)}.
        let log_qa = -0.5 * a * a - (a * (2.0 * std::f64::consts::PI).sqrt()).ln();
        return log_qa + (-(-(b - a) * a).exp_m1()).ln();
    }
    (upper_tail(a) - upper_tail(b)).ln()
}

/// Standard normal restricted to `[alpha, beta]`.
fn truncated_standard_normal<R: Rng + ?Sized>(rng: &mut R, alpha: f64, beta: f64) -> f64 {
    if alpha < 0.0 && beta > 0.0 {
        let (pa, pb) = (1.0 - upper_tail(alpha), 1.0 - upper_tail(beta));
        let u = pa + (pb - pa) * rng.random::<f64>();
        return -std::f64::consts::SQRT_2 * erfc_inv(2.0 * u);
    }
    let flip = beta <= 0.0;
    let (a, b) = if flip { (-beta, -alpha) } else { (alpha, beta) };
    let z = if a <= 5.0 {
        let (qa, qb) = (upper_tail(a), upper_tail(b));
        let q = qb + (qa - qb) * rng.random::<f64>();
        (std::f64::consts::SQRT_2 * erfc_inv(2.0 * q)).clamp(a, b)
    } else {
        let lambda = 0.5 * (a + (a * a + 4.0).sqrt());
        loop {
            let e: f64 = rng.sample(Exp1);
            let x = a + e / lambda;
            if x > b {
                continue;
            }
            if rng.random::<f64>() < (-0.5 * (x - lambda).powi(2)).exp() {
                break x;
            }
        }
    };
    if flip {
        -z
    } else {
        z
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn p(sums: &[f64]) -> WalkPath {
        WalkPath::from_sums(sums.to_vec()).unwrap()
    }

    #[test]
    fn leading_examples() {
        let s = |v: &[f64]| leading_status(&p(v)).unwrap();
        assert_eq!(s(&[0.0, 1.0, 2.0]), LeadingStatus { leading: true, strictly_leading: false });
        assert_eq!(s(&[0.0, 2.0, 3.0]), LeadingStatus { leading: true, strictly_leading: true });
        assert_eq!(s(&[0.0, 0.0, 0.0]), LeadingStatus { leading: true, strictly_leading: false });
        assert_eq!(s(&[0.0, -1.0, 3.0]), LeadingStatus { leading: false, strictly_leading: false });
        // A single step is vacuously strictly leading.
        assert!(s(&[0.0, -4.0]).strictly_leading);
        assert!(leading_status(&p(&[0.0])).is_err());
    }

    #[test]
    fn rotation_examples() {
        let w = WalkPath::from_steps(&[1.0, -1.0, 2.0]);
        assert_eq!(w.sums(), &[0.0, 1.0, 0.0, 2.0]);
        assert_eq!(rotate(&w, 0).unwrap(), w);
        assert_eq!(rotate(&w, 1).unwrap().sums(), &[0.0, -1.0, 1.0, 2.0]);
        assert_eq!(rotate(&w, 2).unwrap().sums(), &[0.0, 2.0, 3.0, 2.0]);
        assert!(rotate(&w, 3).is_err());

        let r = rotation_census(&w).unwrap();
        assert_eq!(r.strictly_leading_count, 1);
        assert_eq!(r.leading_count, 1);
        assert_eq!(r.strictly_leading_indices, vec![2]);

        let flat = WalkPath::from_steps(&[0.7; 9]);
        let r = rotation_census(&flat).unwrap();
        assert_eq!((r.leading_count, r.strictly_leading_count), (9, 0));
    }

    #[test]
    fn shape_examples() {
        let flat = p(&[0.0; 6]);
        assert!(abo(&flat, -1.0));
        assert!(!well_behaved(&flat, 1).unwrap());

        let w = p(&[0.0, 1.0, 0.0, 2.0]);
        assert!(abo(&w, -2.0));
        assert!(!abo(&w, 0.0));
        assert!((min_excess(&w) + 4.0 / 3.0).abs() < 1e-15);

        // |a|^57 > n/2 for any a ≤ −2 at any reachable n.
        let long = WalkPath::from_steps(&[-0.1; 1000]);
        assert!(!b_event(&long, -2));
        // a = −1 covers 1 ≤ k ≤ n − 1; a flat-on-chord walk is close everywhere.
        assert!(b_event(&long, -1));

        let r = shape_report(&w, &[-1, -2], 1).unwrap();
        assert_eq!(r.abo_at, vec![(-1, false), (-2, true)]);
        assert_eq!(r.b_a, vec![(-1, true), (-2, false)]);
        assert!(r.close_indices.contains(&0) && r.close_indices.contains(&3));
        assert!(shape_report(&w, &[0], 1).is_err());
        assert!(shape_report(&w, &[-1], 2).is_err());
    }

    #[test]
    fn well_behaved_requires_clearance_in_the_bulk() {
        // Bulk excess 2 clears b(n, k)^{1/57} ≤ 5^{1/57} everywhere.
        let mut sums = vec![2.0; 11];
        sums[0] = 0.0;
        sums[10] = 0.0;
        assert!(well_behaved(&p(&sums), 1).unwrap());
        sums[5] = 0.5;
        assert!(!well_behaved(&p(&sums), 1).unwrap());
        assert!(well_behaved(&p(&sums), 6).is_err());
    }

    #[test]
    fn truncated_normal_stays_in_window_and_matches_mean() {
        let mut rng = rng::stream(3, 0);
        for &(a, b) in &[(-0.5, 0.7), (1.0, 2.0), (-3.0, -2.5), (6.0, 6.1), (-40.0, -39.98), (52.0, 60.0)] {
            let xs: Vec<f64> = (0..20_000).map(|_| truncated_standard_normal(&mut rng, a, b)).collect();
            assert!(xs.iter().all(|&x| x >= a && x <= b), "({a}, {b})");
            // Oracle: E[Z | a ≤ Z ≤ b] = (φ(a) − φ(b)) / P, evaluated with a scaled density.
            let phi = |x: f64| (-0.5 * (x * x - a.abs().min(b.abs()).powi(2))).exp();
            let grid = 20_000;
            let h = (b - a) / grid as f64;
            let (mut num, mut den) = (0.0, 0.0);
            for k in 0..grid {
                let x = a + (k as f64 + 0.5) * h;
                num += x * phi(x);
                den += phi(x);
            }
            let exact = num / den;
            let (m, se) = crate::util::mean_and_stderr(&xs);
            assert!((m - exact).abs() < 4.0 * se + 1e-9, "({a}, {b}): {m} vs {exact} ± {se}");
        }
    }

    #[test]
    fn bridge_has_the_conditional_law() {
        // For a Gaussian bridge to `end`, S_i ~ N(end·i/n, σ² i(n−i)/n).
        let (n, sigma, end) = (10usize, 1.5, -3.0);
        let mut rng = rng::stream(11, 0);
        let mut buf = vec![0.0; n + 1];
        let reps = 40_000;
        let mut xs = Vec::with_capacity(reps);
        for _ in 0..reps {
            gaussian_bridge(&mut rng, sigma, end, &mut buf);
            assert_eq!(buf[n], end);
            xs.push(buf[4]);
        }
        let (m, se) = crate::util::mean_and_stderr(&xs);
        assert!((m - end * 0.4).abs() < 4.0 * se);
        let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (reps - 1) as f64;
        let exact = sigma * sigma * 4.0 * 6.0 / 10.0;
        assert!((var / exact - 1.0).abs() < 0.03, "{var} vs {exact}");
    }

    #[test]
    fn shape_estimate_orderings() {
        let g = StepSpec::Gaussian { mu: 0.0, sigma: 1.0 };
        let n = 200;
        let m = -1.17741 * n as f64 + 0.5;
        let est = |a| conditional_shape_estimate(&g, n, (m - 1.0, m), a, 20_000, 5).unwrap();
        let (e1, e4) = (est(-1), est(-4));
        assert!(e4.p_abo > e1.p_abo);
        assert!(e1.p_abo_and_ba <= e1.p_abo && e4.p_abo_and_ba <= e4.p_abo);
        assert_eq!(e4.p_abo_and_ba, 0.0);
    }

    #[test]
    fn rejection_path_agrees_with_bridge_for_gaussian_endpoints() {
        // Uniform(-√3, √3) has unit variance; at small n the abo probability
        // under rejection sampling is close to the Gaussian bridge value.
        let u = StepSpec::Uniform { lo: -3f64.sqrt(), hi: 3f64.sqrt() };
        let est = conditional_shape_estimate(&u, 6, (-1.0, 0.0), -1, 20_000, 9).unwrap();
        assert!(est.acceptance > 0.1 && est.acceptance < 0.2, "{}", est.acceptance);
        assert!(est.p_abo > 0.3 && est.p_abo < 0.9);
    }

    #[test]
    fn rejection_starves_far_in_the_tail() {
        let u = StepSpec::Uniform { lo: -1.0, hi: 1.0 };
        let err = conditional_shape_estimate(&u, 40, (-30.0, -29.0), -1, 10, 1).unwrap_err();
        assert!(matches!(err, Error::RejectionStarvation { .. }));
    }

    #[test]
    fn lemma6_bound_on_random_walks() {
        // P{S_n ≤ γn, strictly leading} ≤ P{S_n ≤ γn}/n, within 3 joint standard errors.
        let (n, gamma) = (4usize, -1.17741);
        let mut rng = rng::stream(21, 0);
        let reps = 400_000u64;
        let (mut below, mut both) = (0u64, 0u64);
        let mut steps = vec![0.0; n];
        for _ in 0..reps {
            for x in steps.iter_mut() {
                *x = rng.sample(StandardNormal);
            }
            let w = WalkPath::from_steps(&steps);
            if w.last() <= gamma * n as f64 {
                below += 1;
                if leading_status(&w).unwrap().strictly_leading {
                    both += 1;
                }
            }
        }
        let (pb, _) = proportion(below, reps);
        let (pj, _) = proportion(both, reps);
        // Per-replicate difference D = 1{both} − 1{below}/n; its standard error bounds the joint error.
        let var_d = pj * (1.0 - pj) + pb * (1.0 - pb) / (n * n) as f64 - 2.0 * (pj - pj * pb) / n as f64;
        let se = (var_d / reps as f64).sqrt();
        assert!(pj <= pb / n as f64 + 3.0 * se, "{pj} vs {} ± {se}", pb / n as f64);
        assert!(below > 1000);
    }

    fn integer_steps() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec((-5i32..=5).prop_map(f64::from), 1..40)
    }

    proptest! {
        #[test]
        fn rotations_compose(steps in integer_steps(), a in 0usize..40, b in 0usize..40) {
            let w = WalkPath::from_steps(&steps);
            let n = w.n();
            let (a, b) = (a % n, b % n);
            let lhs = rotate(&rotate(&w, a).unwrap(), b).unwrap();
            prop_assert_eq!(lhs, rotate(&w, (a + b) % n).unwrap());
        }

        #[test]
        fn rotation_preserves_endpoint(steps in prop::collection::vec(-3.0f64..3.0, 1..60), j in 0usize..60) {
            let w = WalkPath::from_steps(&steps);
            let r = rotate(&w, j % w.n()).unwrap();
            prop_assert_eq!(r.last(), w.last());
            prop_assert_eq!(r.n(), w.n());
        }

        #[test]
        fn abo_zero_is_strictly_leading(steps in prop::collection::vec(-3.0f64..3.0, 1..60)) {
            let w = WalkPath::from_steps(&steps);
            prop_assert_eq!(abo(&w, 0.0), leading_status(&w).unwrap().strictly_leading);
        }

        #[test]
        fn abo_matches_min_excess(steps in prop::collection::vec(-3.0f64..3.0, 2..60), a in -4i64..=-1) {
            let w = WalkPath::from_steps(&steps);
            prop_assert_eq!(abo(&w, a as f64), min_excess(&w) > a as f64);
        }

        #[test]
        fn census_is_exact_on_integer_walks(steps in integer_steps()) {
            let r = rotation_census(&WalkPath::from_steps(&steps)).unwrap();
            prop_assert!(r.leading_count >= 1);
            prop_assert!(r.strictly_leading_count <= 1);
        }
    }
}
