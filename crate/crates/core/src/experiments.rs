//! Reproducible experiments with CSV rows, JSON summaries and manifests.
//!
//! Every experiment is described by an [`ExperimentConfig`] plus a master
//! seed. [`run_experiment`] turns the pair into rows and a summary; the
//! rows depend only on the config and the seed, so rerunning a
//! [`Manifest`] reproduces the CSV body byte for byte.
//!
//! Seeds are derived in two levels: grid point `n` gets the master seed of
//! stream `n`, and replicate `r` at that grid point gets stream `r` of it.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::brwsim::{run_replicate, thinned_survival, BrwConfig, OffspringSpec, Strategy, SurvivalPolicy, Tree, Visitor};
use crate::error::{Error, Result};
use crate::ldnum::{classify_regime, predict, solve_tilt, PredictionSet, Regime};
use crate::pathlab::{leading_status, WalkPath};
use crate::rng;
use crate::stepdist::{validate_spec, StepSampler, StepSpec};
use crate::util::{float_or_inf, mean_and_stderr, median, proportion};

pub const CSV_HEADER: &str = "experiment_id,dist,offspring,n,rep,m_n,survived,strategy,beam_K,seed,restarts";
pub const TOOL_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));
pub const DEFAULT_BEAM_K: usize = 50_000;
/// Largest forest `⌊(E B)^n⌋` the iid baseline will simulate.
pub const IID_LIMIT: u64 = 1 << 22;
/// Largest tree `d^n` the typical-leading census will enumerate.
pub const CENSUS_LIMIT: u64 = 1 << 20;
pub const MIN_TAIL_REPLICATES: u64 = 1000;
/// Surviving replicates needed per `n` by [`fit_log_correction`].
pub const MIN_FIT_REPLICATES: usize = 10;

/// One replicate of one grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub experiment_id: String,
    pub dist: String,
    pub offspring: String,
    pub n: usize,
    pub rep: u64,
    /// `inf` for failed or extinct replicates.
    #[serde(with = "float_or_inf")]
    pub m_n: f64,
    pub survived: bool,
    pub strategy: String,
    #[serde(rename = "beam_K")]
    pub beam_k: usize,
    pub seed: u64,
    pub restarts: u32,
}

pub fn write_rows<W: std::io::Write>(w: W, rows: &[ExperimentRow]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(CSV_HEADER.split(','))?;
    for row in rows {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn rows_to_csv(rows: &[ExperimentRow]) -> Result<String> {
    let mut buf = Vec::new();
    write_rows(&mut buf, rows)?;
    Ok(String::from_utf8(buf).expect("CSV output is UTF-8"))
}

/// Reads rows, rejecting files whose header differs from [`CSV_HEADER`].
pub fn read_rows<R: std::io::Read>(r: R) -> Result<Vec<ExperimentRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<&str> = rdr.headers()?.iter().collect();
    if header.join(",") != CSV_HEADER {
        return Err(Error::Config(format!("CSV header {:?} does not match {CSV_HEADER:?}", header.join(","))));
    }
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Everything needed to rerun an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub experiment_id: String,
    pub config: ExperimentConfig,
    pub master_seed: u64,
    pub tool_version: String,
    pub timestamp: String,
}

impl Manifest {
    pub fn new(experiment_id: impl Into<String>, config: ExperimentConfig, master_seed: u64) -> Self {
        Manifest {
            experiment_id: experiment_id.into(),
            config,
            master_seed,
            tool_version: TOOL_VERSION.into(),
            timestamp: timestamp(),
        }
    }
}

/// Current UTC time in RFC 3339 with second precision.
pub fn timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

fn default_strategy() -> Strategy {
    Strategy::Beam { k: DEFAULT_BEAM_K }
}

fn default_exact() -> Strategy {
    Strategy::ExactDfs
}

fn default_max_restarts() -> u32 {
    crate::brwsim::DEFAULT_MAX_RESTARTS
}

fn default_x_grid() -> Vec<f64> {
    (0..=16).map(|i| i as f64 * 0.5).collect()
}

fn default_offsets() -> Vec<f64> {
    vec![0.0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExperimentConfig {
    MinScaling {
        step: StepSpec,
        offspring: OffspringSpec,
        n_grid: Vec<usize>,
        replicates: u64,
        #[serde(default = "default_strategy")]
        strategy: Strategy,
        #[serde(default = "default_max_restarts")]
        max_restarts: u32,
    },
    IidBaseline {
        step: StepSpec,
        mean_offspring: f64,
        n_grid: Vec<usize>,
        replicates: u64,
    },
    TailProfile {
        step: StepSpec,
        offspring: OffspringSpec,
        n: usize,
        replicates: u64,
        #[serde(default = "default_strategy")]
        strategy: Strategy,
        #[serde(default = "default_x_grid")]
        x_grid: Vec<f64>,
    },
    Theorem4 {
        step: StepSpec,
        offspring: OffspringSpec,
        n_grid: Vec<usize>,
        replicates: u64,
        #[serde(default = "default_exact")]
        strategy: Strategy,
    },
    TypicalLeading {
        step: StepSpec,
        offspring: OffspringSpec,
        n_grid: Vec<usize>,
        replicates: u64,
        #[serde(default = "default_offsets")]
        m_offsets: Vec<f64>,
    },
}

impl ExperimentConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ExperimentConfig::MinScaling { .. } => "min_scaling",
            ExperimentConfig::IidBaseline { .. } => "iid_baseline",
            ExperimentConfig::TailProfile { .. } => "tail_profile",
            ExperimentConfig::Theorem4 { .. } => "theorem4",
            ExperimentConfig::TypicalLeading { .. } => "typical_leading",
        }
    }

    /// Identifier derived from the kind and seed, e.g. `min_scaling-000000000000002a`.
    pub fn default_id(&self, master_seed: u64) -> String {
        format!("{}-{master_seed:016x}", self.kind())
    }
}

/// Rows plus a kind-specific JSON summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub rows: Vec<ExperimentRow>,
    pub summary: serde_json::Value,
    /// Present for experiments that fit the logarithmic correction.
    pub fit: Option<FitReport>,
}

pub fn run_experiment(config: &ExperimentConfig, master_seed: u64, experiment_id: &str) -> Result<ExperimentOutput> {
    let json = |v: &dyn erased::Summary| v.to_json();
    Ok(match config {
        ExperimentConfig::MinScaling { step, offspring, n_grid, replicates, strategy, max_restarts } => {
            let r = run_min_scaling(step, offspring, n_grid, *replicates, *strategy, *max_restarts, master_seed, experiment_id)?;
            ExperimentOutput { summary: json(&r)?, fit: r.fit.clone(), rows: r.rows }
        }
        ExperimentConfig::IidBaseline { step, mean_offspring, n_grid, replicates } => {
            let r = run_iid_baseline(step, *mean_offspring, n_grid, *replicates, master_seed, experiment_id)?;
            ExperimentOutput { summary: json(&r)?, fit: r.fit.clone(), rows: r.rows }
        }
        ExperimentConfig::TailProfile { step, offspring, n, replicates, strategy, x_grid } => {
            let r = run_tail_profile(step, offspring, *n, *replicates, *strategy, x_grid, master_seed, experiment_id)?;
            ExperimentOutput { summary: json(&r)?, fit: None, rows: r.rows }
        }
        ExperimentConfig::Theorem4 { step, offspring, n_grid, replicates, strategy } => {
            let r = run_theorem4(step, offspring, n_grid, *replicates, *strategy, master_seed, experiment_id)?;
            ExperimentOutput { summary: json(&r)?, fit: None, rows: r.rows }
        }
        ExperimentConfig::TypicalLeading { step, offspring, n_grid, replicates, m_offsets } => {
            let r = count_typical_leading(step, offspring, n_grid, m_offsets, *replicates, master_seed, experiment_id)?;
            ExperimentOutput { summary: json(&r)?, fit: None, rows: r.rows }
        }
    })
}

mod erased {
    use serde::Serialize;

    pub trait Summary {
        fn to_json(&self) -> crate::Result<serde_json::Value>;
    }

    impl<T: Serialize> Summary for T {
        fn to_json(&self) -> crate::Result<serde_json::Value> {
            let mut v = serde_json::to_value(self)?;
            if let Some(obj) = v.as_object_mut() {
                obj.remove("rows");
            }
            Ok(v)
        }
    }
}

/// Reruns the experiment a manifest describes.
pub fn replay(manifest: &Manifest) -> Result<ExperimentOutput> {
    run_experiment(&manifest.config, manifest.master_seed, &manifest.experiment_id)
}

/// Writes `manifest.json`; call before computing.
pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("manifest.json"), manifest)
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Writes `rows.csv`, `summary.json` and, when present, `fit.json` into `dir`.
pub fn write_output(dir: &Path, output: &ExperimentOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_rows(fs::File::create(dir.join("rows.csv"))?, &output.rows)?;
    write_json(&dir.join("summary.json"), &output.summary)?;
    if let Some(fit) = &output.fit {
        write_json(&dir.join("fit.json"), fit)?;
    }
    Ok(())
}

/// Master seed of grid point `n`; replicate `r` there uses `replicate_seed(grid_seed, r, attempt)`.
pub fn grid_seed(master: u64, n: usize) -> u64 {
    rng::replicate_seed(master, n as u64, 0)
}

fn check_grid(n_grid: &[usize], min_points: usize) -> Result<()> {
    if n_grid.len() < min_points {
        return Err(Error::OutOfRange(format!("need at least {min_points} grid values, got {}", n_grid.len())));
    }
    if n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::OutOfRange("n_grid must be strictly increasing".into()));
    }
    Ok(())
}

fn check_replicates(replicates: u64) -> Result<()> {
    if replicates == 0 {
        return Err(Error::OutOfRange("replicates must be at least 1".into()));
    }
    Ok(())
}

/// Mean and standard error of `m_n − γn` at one grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub n: usize,
    pub count: usize,
    pub mean: f64,
    pub stderr: f64,
}

/// Weighted least squares of the per-`n` mean of `m_n − γn` on `ln n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub gamma_used: f64,
    pub beta_hat: f64,
    pub beta_stderr: f64,
    pub intercept_hat: f64,
    pub n_values: Vec<usize>,
    /// Weighted residual sum of squares.
    pub residual: f64,
    /// False when some grid point had zero spread and plain least squares was used.
    pub weighted: bool,
    pub points: Vec<GridPoint>,
    pub beta_iid: Option<f64>,
    pub beta_brw: Option<f64>,
    /// `(beta_hat − beta_iid) / beta_stderr`.
    pub t_vs_iid: Option<f64>,
    /// `(beta_hat − beta_brw) / beta_stderr`.
    pub t_vs_brw: Option<f64>,
}

impl FitReport {
    pub fn with_reference(mut self, pred: &PredictionSet) -> Self {
        self.beta_iid = Some(pred.beta_iid);
        self.beta_brw = Some(pred.beta_brw);
        self.t_vs_iid = Some((self.beta_hat - pred.beta_iid) / self.beta_stderr);
        self.t_vs_brw = Some((self.beta_hat - pred.beta_brw) / self.beta_stderr);
        self
    }
}

pub fn fit_log_correction(rows: &[ExperimentRow], gamma: f64) -> Result<FitReport> {
    let mut by_n: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.survived && r.m_n.is_finite()) {
        by_n.entry(r.n).or_default().push(r.m_n - gamma * r.n as f64);
    }
    let points: Vec<GridPoint> = by_n
        .iter()
        .filter(|(_, ys)| ys.len() >= MIN_FIT_REPLICATES)
        .map(|(&n, ys)| {
            let (mean, stderr) = mean_and_stderr(ys);
            GridPoint { n, count: ys.len(), mean, stderr }
        })
        .collect();
    if points.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "need 3 distinct n with at least {MIN_FIT_REPLICATES} surviving replicates each, found {}",
            points.len()
        )));
    }
    let weighted = points.iter().all(|p| p.stderr.is_finite() && p.stderr > 0.0);
    let w: Vec<f64> = points.iter().map(|p| if weighted { p.stderr.powi(-2) } else { 1.0 }).collect();
    let x: Vec<f64> = points.iter().map(|p| (p.n as f64).ln()).collect();
    let y: Vec<f64> = points.iter().map(|p| p.mean).collect();
    let s: f64 = w.iter().sum();
    let sx: f64 = w.iter().zip(&x).map(|(w, x)| w * x).sum();
    let sy: f64 = w.iter().zip(&y).map(|(w, y)| w * y).sum();
    let sxx: f64 = w.iter().zip(&x).map(|(w, x)| w * x * x).sum();
    let sxy: f64 = w.iter().zip(&x).zip(&y).map(|((w, x), y)| w * x * y).sum();
    let delta = s * sxx - sx * sx;
    let beta = (s * sxy - sx * sy) / delta;
    let alpha = (sxx * sy - sx * sxy) / delta;
    let residual: f64 = w.iter().zip(&x).zip(&y).map(|((w, x), y)| w * (y - alpha - beta * x).powi(2)).sum();
    let beta_stderr = if weighted {
        (s / delta).sqrt()
    } else {
        let dof = (points.len() - 2) as f64;
        (residual / dof * s / delta).sqrt()
    };
    Ok(FitReport {
        gamma_used: gamma,
        beta_hat: beta,
        beta_stderr,
        intercept_hat: alpha,
        n_values: points.iter().map(|p| p.n).collect(),
        residual,
        weighted,
        points,
        beta_iid: None,
        beta_brw: None,
        t_vs_iid: None,
        t_vs_brw: None,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinScaling {
    pub rows: Vec<ExperimentRow>,
    pub regime: Regime,
    pub prediction: Option<PredictionSet>,
    pub fit: Option<FitReport>,
    /// Per grid point: mean of `m_n / n` over surviving replicates.
    pub mean_speed: Vec<(usize, f64)>,
    pub failed_replicates: usize,
    pub warnings: Vec<String>,
}

#[allow(clippy::too_many_arguments)]
pub fn run_min_scaling(
    step: &StepSpec,
    offspring: &OffspringSpec,
    n_grid: &[usize],
    replicates: u64,
    strategy: Strategy,
    max_restarts: u32,
    master_seed: u64,
    experiment_id: &str,
) -> Result<MinScaling> {
    check_grid(n_grid, 3)?;
    check_replicates(replicates)?;
    offspring.validate()?;
    let info = validate_spec(step)?;
    let regime = classify_regime(&info, offspring.mean());
    let mut warnings = Vec::new();
    if regime != Regime::SharpLogCorrection {
        warnings.push(format!("regime is {regime}; the logarithmic correction is not expected"));
    }
    let prediction = match regime {
        Regime::SharpLogCorrection => Some(predict(&solve_tilt(step, offspring.mean().ln())?)),
        _ => None,
    };
    let survival_policy = SurvivalPolicy::ConditionOnSurvival { max_restarts };
    let mut rows = Vec::new();
    for &n in n_grid {
        let cfg = BrwConfig { offspring: offspring.clone(), step: step.clone(), n, strategy, seed: grid_seed(master_seed, n), survival_policy };
        cfg.validate()?;
        let outcomes: Vec<_> = (0..replicates).into_par_iter().map(|rep| (rep, run_replicate(&cfg, rep))).collect();
        for (rep, outcome) in outcomes {
            rows.push(match outcome {
                Ok(o) => ExperimentRow {
                    experiment_id: experiment_id.into(),
                    dist: step.descriptor(),
                    offspring: offspring.descriptor(),
                    n,
                    rep,
                    m_n: if o.failed { f64::INFINITY } else { o.record.m_n },
                    survived: o.record.survived && !o.failed,
                    strategy: strategy.descriptor().into(),
                    beam_k: strategy.beam_k(),
                    seed: o.seed,
                    restarts: o.restarts,
                },
                Err(e) => {
                    warnings.push(format!("n={n} rep={rep}: {e}"));
                    failed_row(experiment_id, step, offspring, n, rep, strategy, rng::replicate_seed(cfg.seed, rep, 0))
                }
            });
        }
    }
    let failed_replicates = rows.iter().filter(|r| !r.survived).count();
    if failed_replicates > 0 {
        warnings.push(format!("{failed_replicates} replicates failed and carry m_n = inf"));
    }
    let fit = match &prediction {
        Some(p) => match fit_log_correction(&rows, p.gamma) {
            Ok(f) => Some(f.with_reference(p)),
            Err(e) => {
                warnings.push(e.to_string());
                None
            }
        },
        None => None,
    };
    let mean_speed = n_grid
        .iter()
        .map(|&n| {
            let v: Vec<f64> = rows.iter().filter(|r| r.n == n && r.survived).map(|r| r.m_n / n as f64).collect();
            (n, mean_and_stderr(&v).0)
        })
        .collect();
    Ok(MinScaling { rows, regime, prediction, fit, mean_speed, failed_replicates, warnings })
}

fn failed_row(id: &str, step: &StepSpec, offspring: &OffspringSpec, n: usize, rep: u64, strategy: Strategy, seed: u64) -> ExperimentRow {
    ExperimentRow {
        experiment_id: id.into(),
        dist: step.descriptor(),
        offspring: offspring.descriptor(),
        n,
        rep,
        m_n: f64::INFINITY,
        survived: false,
        strategy: strategy.descriptor().into(),
        beam_k: strategy.beam_k(),
        seed,
        restarts: 0,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IidBaseline {
    pub rows: Vec<ExperimentRow>,
    pub prediction: PredictionSet,
    /// Present when the grid has at least three points.
    pub fit: Option<FitReport>,
    /// Per grid point: number of independent walks `⌊(E B)^n⌋`.
    pub walks: Vec<(usize, u64)>,
}

/// `⌊(E B)^n⌋`, or `None` above [`IID_LIMIT`].
fn forest_size(mean_offspring: f64, n: usize) -> Option<u64> {
    let size = mean_offspring.powi(n as i32).floor();
    (size <= IID_LIMIT as f64).then_some(size as u64)
}

/// Minimum over `⌊(E B)^n⌋` independent `n`-step walks.
pub fn run_iid_baseline(
    step: &StepSpec,
    mean_offspring: f64,
    n_grid: &[usize],
    replicates: u64,
    master_seed: u64,
    experiment_id: &str,
) -> Result<IidBaseline> {
    check_grid(n_grid, 1)?;
    check_replicates(replicates)?;
    if !(mean_offspring > 1.0) {
        return Err(Error::NonSupercritical(mean_offspring.ln()));
    }
    let prediction = predict(&solve_tilt(step, mean_offspring.ln())?);
    let mut walks = Vec::new();
    for &n in n_grid {
        if n == 0 {
            return Err(Error::OutOfRange("iid walks need n ≥ 1".into()));
        }
        let size = forest_size(mean_offspring, n).ok_or_else(|| {
            Error::ResourceGuard(format!("⌊{mean_offspring}^{n}⌋ walks exceeds the limit {IID_LIMIT}"))
        })?;
        walks.push((n, size));
    }
    let sampler = StepSampler::new(step)?;
    let label = format!("iid({mean_offspring})");
    let mut rows = Vec::new();
    for &(n, size) in &walks {
        let base = grid_seed(master_seed, n);
        let mins: Vec<(u64, f64)> = (0..replicates)
            .into_par_iter()
            .map(|rep| {
                let seed = rng::replicate_seed(base, rep, 0);
                (seed, iid_minimum(step, &sampler, n, size, seed))
            })
            .collect();
        rows.extend(mins.into_iter().enumerate().map(|(rep, (seed, m))| ExperimentRow {
            experiment_id: experiment_id.into(),
            dist: step.descriptor(),
            offspring: label.clone(),
            n,
            rep: rep as u64,
            m_n: m,
            survived: true,
            strategy: "iid".into(),
            beam_k: 0,
            seed,
            restarts: 0,
        }));
    }
    let fit = if walks.len() >= 3 { Some(fit_log_correction(&rows, prediction.gamma)?.with_reference(&prediction)) } else { None };
    Ok(IidBaseline { rows, prediction, fit, walks })
}

fn iid_minimum(step: &StepSpec, sampler: &StepSampler, n: usize, size: u64, seed: u64) -> f64 {
    let mut rng = rng::stream(seed, 0);
    if let StepSpec::Gaussian { mu, sigma } = *step {
        // A Gaussian walk's endpoint is N(nμ, nσ²); sample it directly.
        let (m, s) = (mu * n as f64, sigma * (n as f64).sqrt());
        let mut best = f64::INFINITY;
        for _ in 0..size {
            let z: f64 = rng.sample(StandardNormal);
            best = best.min(m + s * z);
        }
        return best;
    }
    let mut best = f64::INFINITY;
    for _ in 0..size {
        let mut s = 0.0;
        for _ in 0..n {
            s += sampler.sample(&mut rng);
        }
        best = best.min(s);
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailPoint {
    pub x: f64,
    /// `P{m_n ≥ median + x}`.
    pub upper: f64,
    /// `P{m_n ≤ median − x}`.
    pub lower: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailProfile {
    pub rows: Vec<ExperimentRow>,
    #[serde(with = "float_or_inf")]
    pub median: f64,
    pub points: Vec<TailPoint>,
}

#[allow(clippy::too_many_arguments)]
pub fn run_tail_profile(
    step: &StepSpec,
    offspring: &OffspringSpec,
    n: usize,
    replicates: u64,
    strategy: Strategy,
    x_grid: &[f64],
    master_seed: u64,
    experiment_id: &str,
) -> Result<TailProfile> {
    if replicates < MIN_TAIL_REPLICATES {
        return Err(Error::OutOfRange(format!("tail profiles need at least {MIN_TAIL_REPLICATES} replicates")));
    }
    if x_grid.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::OutOfRange("x grid values must be finite and non-negative".into()));
    }
    let scaling = simulate_grid(step, offspring, n, replicates, strategy, master_seed, experiment_id)?;
    let values: Vec<f64> = scaling.iter().map(|r| r.m_n).collect();
    let med = median(&values);
    let total = values.len() as f64;
    let points = x_grid
        .iter()
        .map(|&x| TailPoint {
            x,
            upper: values.iter().filter(|&&v| v >= med + x).count() as f64 / total,
            lower: values.iter().filter(|&&v| v <= med - x).count() as f64 / total,
        })
        .collect();
    Ok(TailProfile { rows: scaling, median: med, points })
}

/// Survival-conditioned replicates at a single `n`.
fn simulate_grid(
    step: &StepSpec,
    offspring: &OffspringSpec,
    n: usize,
    replicates: u64,
    strategy: Strategy,
    master_seed: u64,
    experiment_id: &str,
) -> Result<Vec<ExperimentRow>> {
    let cfg = BrwConfig {
        offspring: offspring.clone(),
        step: step.clone(),
        n,
        strategy,
        seed: grid_seed(master_seed, n),
        survival_policy: SurvivalPolicy::ConditionOnSurvival { max_restarts: crate::brwsim::DEFAULT_MAX_RESTARTS },
    };
    cfg.validate()?;
    let outcomes: Result<Vec<_>> = (0..replicates).into_par_iter().map(|rep| run_replicate(&cfg, rep)).collect();
    Ok(outcomes?
        .into_iter()
        .map(|o| ExperimentRow {
            experiment_id: experiment_id.into(),
            dist: step.descriptor(),
            offspring: offspring.descriptor(),
            n,
            rep: o.rep,
            m_n: if o.failed { f64::INFINITY } else { o.record.m_n },
            survived: o.record.survived && !o.failed,
            strategy: strategy.descriptor().into(),
            beam_k: strategy.beam_k(),
            seed: o.seed,
            restarts: o.restarts,
        })
        .collect())
}

/// Statistics of `m_n − ess_inf · n` at one grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcessPoint {
    pub n: usize,
    pub mean_excess: f64,
    pub stderr: f64,
    /// `(x, P{m_n − ess_inf·n > x})` for integer `x` up to the largest observed excess.
    pub upper_tail: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundedReport {
    pub rows: Vec<ExperimentRow>,
    pub ess_inf: f64,
    pub atom_at_essinf: f64,
    /// Survival probability of the tree of essential-infimum edges.
    pub p0: f64,
    pub points: Vec<ExcessPoint>,
    pub max_mean_excess: f64,
}

pub fn run_theorem4(
    step: &StepSpec,
    offspring: &OffspringSpec,
    n_grid: &[usize],
    replicates: u64,
    strategy: Strategy,
    master_seed: u64,
    experiment_id: &str,
) -> Result<BoundedReport> {
    check_grid(n_grid, 1)?;
    check_replicates(replicates)?;
    offspring.validate()?;
    let info = validate_spec(step)?;
    let regime = classify_regime(&info, offspring.mean());
    if regime != Regime::BoundedMinimum {
        return Err(Error::RegimeMismatch(format!(
            "theorem4 needs an atom at the essential infimum heavier than 1/E B; {} with E B = {} is {regime}",
            step.descriptor(),
            offspring.mean()
        )));
    }
    let p0 = thinned_survival(offspring, &info)?.p0;
    let mut rows = Vec::new();
    let mut points = Vec::new();
    for &n in n_grid {
        let grid = simulate_grid(step, offspring, n, replicates, strategy, master_seed, experiment_id)?;
        let excess: Vec<f64> = grid.iter().filter(|r| r.survived).map(|r| r.m_n - info.ess_inf * n as f64).collect();
        let (mean_excess, stderr) = mean_and_stderr(&excess);
        let top = excess.iter().cloned().fold(0.0f64, f64::max).ceil() as usize;
        let upper_tail = (0..=top)
            .map(|x| {
                let x = x as f64;
                (x, excess.iter().filter(|&&e| e > x).count() as f64 / excess.len() as f64)
            })
            .collect();
        points.push(ExcessPoint { n, mean_excess, stderr, upper_tail });
        rows.extend(grid);
    }
    let max_mean_excess = points.iter().map(|p| p.mean_excess).fold(f64::NEG_INFINITY, f64::max);
    Ok(BoundedReport { rows, ess_inf: info.ess_inf, atom_at_essinf: info.atom_at_essinf, p0, points, max_mean_excess })
}

/// Node counts at one `(n, offset)` pair, averaged over trees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeadingCount {
    pub n: usize,
    pub offset: f64,
    /// `m = m*(n) + offset`.
    pub m: f64,
    /// `E|{v : S_v ≤ m}|`.
    pub mean_below: f64,
    /// `E|{v : m − 1 ≤ S_v ≤ m}|`.
    pub mean_window: f64,
    pub mean_window_se: f64,
    /// `E|G_{n,m}|`: window nodes whose walk is strictly leading.
    pub mean_leading: f64,
    pub mean_leading_se: f64,
    /// `n · E|G| / E|window|`.
    pub ratio: f64,
    /// `E|G| − E|window| / n` and its standard error over trees.
    pub excess_over_bound: f64,
    pub excess_se: f64,
    /// `(E|G|)² / E|G|²`, a lower bound on `P{|G| > 0}`.
    pub chung_erdos_bound: f64,
    /// Empirical `P{|G| > 0}`.
    pub p_nonempty: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypicalLeading {
    pub rows: Vec<ExperimentRow>,
    pub prediction: PredictionSet,
    pub counts: Vec<LeadingCount>,
}

struct TreeCounts {
    seed: u64,
    min: f64,
    below: Vec<u64>,
    window: Vec<u64>,
    leading: Vec<u64>,
}

struct Census<'a> {
    levels: &'a [f64],
    below: Vec<u64>,
    window: Vec<u64>,
    leading: Vec<u64>,
    min: f64,
    path: WalkPath,
}

impl Visitor for Census<'_> {
    fn leaf(&mut self, sums: &[f64]) {
        let s = sums[sums.len() - 1];
        self.min = self.min.min(s);
        let mut strict = None;
        for (j, &m) in self.levels.iter().enumerate() {
            if s > m {
                continue;
            }
            self.below[j] += 1;
            if s >= m - 1.0 {
                self.window[j] += 1;
                let is_strict = *strict.get_or_insert_with(|| {
                    self.path = WalkPath::from_sums(sums.to_vec()).expect("finite sums");
                    leading_status(&self.path).map(|st| st.strictly_leading).unwrap_or(false)
                });
                self.leading[j] += u64::from(is_strict);
            }
        }
    }
}

/// Enumerates whole trees and counts strictly leading nodes near `m*(n) + offset`.
pub fn count_typical_leading(
    step: &StepSpec,
    offspring: &OffspringSpec,
    n_grid: &[usize],
    m_offsets: &[f64],
    replicates: u64,
    master_seed: u64,
    experiment_id: &str,
) -> Result<TypicalLeading> {
    check_grid(n_grid, 1)?;
    check_replicates(replicates)?;
    if m_offsets.is_empty() {
        return Err(Error::OutOfRange("need at least one m offset".into()));
    }
    offspring.validate()?;
    validate_spec(step)?;
    let prediction = predict(&solve_tilt(step, offspring.mean().ln())?);
    let d = offspring.max_children() as u64;
    for &n in n_grid {
        if n == 0 || u32::try_from(n).ok().and_then(|n| d.checked_pow(n)).is_none_or(|l| l > CENSUS_LIMIT) {
            return Err(Error::ResourceGuard(format!("enumerating {d}^{n} nodes exceeds the limit {CENSUS_LIMIT}")));
        }
    }
    let mut rows = Vec::new();
    let mut counts = Vec::new();
    for &n in n_grid {
        let m_star = prediction.m_star(n as f64);
        let levels: Vec<f64> = m_offsets.iter().map(|o| m_star + o).collect();
        let base = grid_seed(master_seed, n);
        let trees: Vec<TreeCounts> = (0..replicates)
            .into_par_iter()
            .map(|rep| {
                let seed = rng::replicate_seed(base, rep, 0);
                let tree = Tree::new(offspring, step, seed).expect("validated");
                let k = levels.len();
                let mut c = Census {
                    levels: &levels,
                    below: vec![0; k],
                    window: vec![0; k],
                    leading: vec![0; k],
                    min: f64::INFINITY,
                    path: WalkPath::from_sums(vec![0.0]).expect("root"),
                };
                tree.visit(n, &mut c);
                TreeCounts { seed, min: c.min, below: c.below, window: c.window, leading: c.leading }
            })
            .collect();
        for (j, (&offset, &m)) in m_offsets.iter().zip(&levels).enumerate() {
            let col = |f: fn(&TreeCounts) -> &[u64]| -> Vec<f64> { trees.iter().map(|t| f(t)[j] as f64).collect() };
            let below = col(|t| &t.below);
            let window = col(|t| &t.window);
            let leading = col(|t| &t.leading);
            let (mean_window, mean_window_se) = mean_and_stderr(&window);
            let (mean_leading, mean_leading_se) = mean_and_stderr(&leading);
            let diff: Vec<f64> = leading.iter().zip(&window).map(|(g, w)| g - w / n as f64).collect();
            let (excess_over_bound, excess_se) = mean_and_stderr(&diff);
            let second = leading.iter().map(|g| g * g).sum::<f64>() / leading.len() as f64;
            let nonempty = leading.iter().filter(|&&g| g > 0.0).count() as u64;
            counts.push(LeadingCount {
                n,
                offset,
                m,
                mean_below: mean_and_stderr(&below).0,
                mean_window,
                mean_window_se,
                mean_leading,
                mean_leading_se,
                ratio: n as f64 * mean_leading / mean_window,
                excess_over_bound,
                excess_se,
                chung_erdos_bound: if second > 0.0 { mean_leading * mean_leading / second } else { 0.0 },
                p_nonempty: proportion(nonempty, replicates).0,
            });
        }
        rows.extend(trees.iter().enumerate().map(|(rep, t)| ExperimentRow {
            experiment_id: experiment_id.into(),
            dist: step.descriptor(),
            offspring: offspring.descriptor(),
            n,
            rep: rep as u64,
            m_n: t.min,
            survived: t.min.is_finite(),
            strategy: Strategy::FullEnumeration.descriptor().into(),
            beam_k: 0,
            seed: t.seed,
            restarts: 0,
        }));
    }
    Ok(TypicalLeading { rows, prediction, counts })
}

#[cfg(test)]
mod tests {
    use super::*;

    const GAUSS: StepSpec = StepSpec::Gaussian { mu: 0.0, sigma: 1.0 };
    const BIN: OffspringSpec = OffspringSpec::Deterministic { d: 2 };
    const GAMMA: f64 = -1.1774100225154747;

    fn synthetic(beta: f64, intercept: f64, noise: f64, reps: u64, grid: &[usize]) -> Vec<ExperimentRow> {
        let mut rng = rng::stream(17, 0);
        let mut rows = Vec::new();
        for &n in grid {
            for rep in 0..reps {
                let z: f64 = rng.sample(StandardNormal);
                rows.push(ExperimentRow {
                    experiment_id: "synthetic".into(),
                    dist: GAUSS.descriptor(),
                    offspring: BIN.descriptor(),
                    n,
                    rep,
                    m_n: GAMMA * n as f64 + beta * (n as f64).ln() + intercept + noise * z,
                    survived: true,
                    strategy: "beam".into(),
                    beam_k: 10,
                    seed: rep,
                    restarts: 0,
                });
            }
        }
        rows
    }

    #[test]
    fn noiseless_fit_recovers_coefficients() {
        let rows = synthetic(1.2740, 0.5, 0.0, 12, &[50, 100, 200, 400]);
        let fit = fit_log_correction(&rows, GAMMA).unwrap();
        assert!((fit.beta_hat - 1.2740).abs() < 1e-9, "{}", fit.beta_hat);
        assert!((fit.intercept_hat - 0.5).abs() < 1e-9, "{}", fit.intercept_hat);
        assert!(!fit.weighted);
        assert_eq!(fit.n_values, vec![50, 100, 200, 400]);
    }

    #[test]
    fn fit_separates_iid_from_brw_coefficient() {
        let rows = synthetic(0.4247, -1.0, 1.0, 100, &[50, 100, 200]);
        let pred = PredictionSet { t_star: GAMMA, gamma: GAMMA, beta_brw: 1.2740, beta_iid: 0.4247 };
        let fit = fit_log_correction(&rows, GAMMA).unwrap().with_reference(&pred);
        assert!(fit.weighted && fit.beta_stderr > 0.0);
        assert!(fit.t_vs_brw.unwrap() < -5.0, "{fit:?}");
        assert!(fit.t_vs_iid.unwrap().abs() < 3.0, "{fit:?}");
    }

    #[test]
    fn fit_needs_three_populated_grid_points() {
        let rows = synthetic(1.0, 0.0, 1.0, 20, &[10, 20]);
        assert!(matches!(fit_log_correction(&rows, GAMMA), Err(Error::InsufficientData(_))));
        let mut rows = synthetic(1.0, 0.0, 1.0, 20, &[10, 20, 40]);
        for r in rows.iter_mut().filter(|r| r.n == 40).skip(5) {
            r.survived = false;
            r.m_n = f64::INFINITY;
        }
        assert!(matches!(fit_log_correction(&rows, GAMMA), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn csv_schema_and_sentinel() {
        let mut rows = synthetic(1.0, 0.0, 1.0, 2, &[5]);
        rows[1].m_n = f64::INFINITY;
        rows[1].survived = false;
        let text = rows_to_csv(&rows).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        assert!(lines.nth(1).unwrap().contains(",inf,false,"));
        assert_eq!(read_rows(text.as_bytes()).unwrap(), rows);
        let bad = text.replacen("beam_K", "beam_k", 1);
        assert!(read_rows(bad.as_bytes()).is_err());
    }

    #[test]
    fn min_scaling_rows_and_determinism() {
        let cfg = ExperimentConfig::MinScaling {
            step: GAUSS,
            offspring: BIN,
            n_grid: vec![10, 20, 40],
            replicates: 12,
            strategy: Strategy::Beam { k: 200 },
            max_restarts: 10,
        };
        let a = run_experiment(&cfg, 5, "t").unwrap();
        let b = run_experiment(&cfg, 5, "t").unwrap();
        assert_eq!(a.rows.len(), 36);
        assert!(a.rows.iter().all(|r| r.survived && r.restarts == 0));
        assert_eq!(rows_to_csv(&a.rows).unwrap(), rows_to_csv(&b.rows).unwrap());
        let fit = a.fit.unwrap();
        assert!(fit.t_vs_iid.is_some());
        assert_ne!(run_experiment(&cfg, 6, "t").unwrap().rows, a.rows);
        assert!(a.summary.get("rows").is_none());
        assert!(a.summary["mean_speed"].is_array());
    }

    #[test]
    fn manifest_round_trip_and_replay() {
        let cfg = ExperimentConfig::Theorem4 {
            step: StepSpec::TwoPoint { x0: 0.0, x1: 1.0, p0: 0.6 },
            offspring: BIN,
            n_grid: vec![10, 30],
            replicates: 50,
            strategy: Strategy::ExactDfs,
        };
        let id = cfg.default_id(9);
        assert_eq!(id, "theorem4-0000000000000009");
        let m = Manifest::new(id, cfg, 9);
        let dir = tempfile::tempdir().unwrap();
        write_manifest(dir.path(), &m).unwrap();
        let back = read_manifest(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(back, m);
        let first = replay(&m).unwrap();
        write_output(dir.path(), &first).unwrap();
        let on_disk = fs::read_to_string(dir.path().join("rows.csv")).unwrap();
        assert_eq!(on_disk, rows_to_csv(&replay(&back).unwrap().rows).unwrap());
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
        for key in ["experiment_id", "config", "master_seed", "tool_version", "timestamp"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn config_parsing_is_strict_with_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str(
            r#"{"kind":"min_scaling","step":{"variant":"gaussian","mu":0,"sigma":1},
                "offspring":{"variant":"deterministic","d":2},"n_grid":[50,100,200],"replicates":100}"#,
        )
        .unwrap();
        match cfg {
            ExperimentConfig::MinScaling { strategy, max_restarts, .. } => {
                assert_eq!(strategy, Strategy::Beam { k: 50_000 });
                assert_eq!(max_restarts, 1000);
            }
            _ => unreachable!(),
        }
        let err = serde_json::from_str::<ExperimentConfig>(
            r#"{"kind":"iid_baseline","step":{"variant":"gaussian","mu":0,"sigma":1},
                "mean_offspring":2,"n_grid":[1],"replicates":1,"replicate":3}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("replicate"), "{err}");
    }

    #[test]
    fn iid_two_walk_minimum() {
        let r = run_iid_baseline(&GAUSS, 2.0, &[1], 40_000, 3, "iid").unwrap();
        let ms: Vec<f64> = r.rows.iter().map(|r| r.m_n).collect();
        let (m, se) = mean_and_stderr(&ms);
        let exact = -1.0 / std::f64::consts::PI.sqrt();
        assert!((m - exact).abs() < 3.0 * se, "{m} ± {se} vs {exact}");
        assert!(r.fit.is_none());
        assert_eq!(r.walks, vec![(1, 2)]);
    }

    #[test]
    fn iid_non_gaussian_path_matches_order_statistics() {
        // Min of two Exp(1) walk endpoints with n = 1 is Exp(2), mean 1/2.
        let e = StepSpec::Exponential { rate: 1.0, shift: 0.0 };
        let r = run_iid_baseline(&e, 2.0, &[1, 2], 20_000, 4, "iid").unwrap();
        let ms: Vec<f64> = r.rows.iter().filter(|r| r.n == 1).map(|r| r.m_n).collect();
        let (m, se) = mean_and_stderr(&ms);
        assert!((m - 0.5).abs() < 3.0 * se, "{m} ± {se}");
        // n = 2: four Gamma(2, 1) endpoints; E min = ∫ (1 + x)^4 e^{−4x} dx = 0.6875... (hand integral: Σ C(4,j) j!/4^{j+1}).
        let exact: f64 = (0..=4).map(|j| binom(4, j) * factorial(j) / 4f64.powi(j as i32 + 1)).sum();
        let ms: Vec<f64> = r.rows.iter().filter(|r| r.n == 2).map(|r| r.m_n).collect();
        let (m, se) = mean_and_stderr(&ms);
        assert!((m - exact).abs() < 3.0 * se, "{m} ± {se} vs {exact}");
    }

    fn binom(n: u32, k: u32) -> f64 {
        (0..k).map(|i| (n - i) as f64 / (i + 1) as f64).product()
    }

    fn factorial(k: u32) -> f64 {
        (1..=k).map(f64::from).product()
    }

    #[test]
    fn iid_guard() {
        assert!(matches!(run_iid_baseline(&GAUSS, 2.0, &[23], 1, 3, "iid"), Err(Error::ResourceGuard(_))));
        assert!(run_iid_baseline(&GAUSS, 2.0, &[22], 1, 3, "iid").is_ok());
    }

    #[test]
    fn tail_profile_is_monotone_and_centered() {
        let reps = 1000;
        let r = run_tail_profile(&GAUSS, &BIN, 30, reps, Strategy::Beam { k: 500 }, &default_x_grid(), 1, "tail").unwrap();
        assert!(r.points.windows(2).all(|w| w[1].upper <= w[0].upper && w[1].lower <= w[0].lower));
        let tol = 2.0 / (reps as f64).sqrt();
        assert!((r.points[0].upper - 0.5).abs() <= tol && (r.points[0].lower - 0.5).abs() <= tol);
        // Exponential decay of the upper tail: chord slope of log CCDF over [1, 4].
        let at = |x: f64| r.points.iter().find(|p| p.x == x).unwrap().upper;
        let slope = (at(4.0).ln() - at(1.0).ln()) / 3.0;
        assert!(slope <= -0.3, "{slope}");
        assert!(run_tail_profile(&GAUSS, &BIN, 30, 999, Strategy::Beam { k: 10 }, &[0.0], 1, "tail").is_err());
    }

    #[test]
    fn theorem4_refuses_other_regimes() {
        let err = run_theorem4(&GAUSS, &BIN, &[10], 10, Strategy::Beam { k: 10 }, 1, "t4").unwrap_err();
        assert!(matches!(err, Error::RegimeMismatch(_)));
        let tp = StepSpec::TwoPoint { x0: 0.0, x1: 1.0, p0: 0.5 };
        assert!(matches!(run_theorem4(&tp, &BIN, &[10], 10, Strategy::ExactDfs, 1, "t4"), Err(Error::RegimeMismatch(_))));
    }

    #[test]
    fn theorem4_small_run() {
        let tp = StepSpec::TwoPoint { x0: 0.0, x1: 1.0, p0: 0.6 };
        let r = run_theorem4(&tp, &BIN, &[20, 80], 400, Strategy::ExactDfs, 2, "t4").unwrap();
        assert!((r.p0 - 5.0 / 9.0).abs() < 1e-12);
        assert_eq!(r.rows.len(), 800);
        // P{m_n = 0} is at least the thinned survival probability.
        let zero = r.rows.iter().filter(|row| row.n == 80 && row.m_n == 0.0).count() as f64 / 400.0;
        assert!(zero > 5.0 / 9.0 - 0.08, "{zero}");
        assert!(r.points.iter().all(|p| p.mean_excess < 2.0));
        assert_eq!(r.points[0].upper_tail[0].0, 0.0);
    }

    #[test]
    fn typical_leading_small_trees() {
        let r = count_typical_leading(&GAUSS, &BIN, &[6, 8], &[-30.0, 0.0, 2.0], 400, 1, "lead").unwrap();
        assert_eq!(r.rows.len(), 800);
        for c in &r.counts {
            assert!(c.mean_leading <= c.mean_window && c.mean_window <= c.mean_below);
            assert!(c.chung_erdos_bound <= c.p_nonempty + 1e-12);
            if c.offset == -30.0 {
                assert_eq!((c.mean_below, c.mean_leading), (0.0, 0.0));
            } else {
                assert!(c.excess_over_bound <= 3.0 * c.excess_se, "{c:?}");
            }
        }
        assert!(matches!(count_typical_leading(&GAUSS, &BIN, &[21], &[0.0], 1, 1, "x"), Err(Error::ResourceGuard(_))));
    }
}
