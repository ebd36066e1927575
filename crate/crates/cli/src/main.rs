//! `brwmin`: command-line front end for the brwmin library.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use brwmin::brwsim::{batch_min, BrwConfig, OffspringSpec, Strategy, SurvivalPolicy};
use brwmin::experiments::{self, ExperimentConfig, Manifest};
use brwmin::ldnum::{self, Regime};
use brwmin::pathlab::{self, WalkPath};
use brwmin::stepdist::StepSpec;
use brwmin::{rng, Error};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Parser)]
#[command(name = "brwmin", version, about = "Minima of branching random walks")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON file with the command's parameters.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for artifacts.
    #[arg(long, global = true, default_value = "brwmin-out")]
    output: PathBuf,
    /// Master seed; a fresh one is drawn and recorded when omitted.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Override a parameter, e.g. `--param n=200` or `--param step.sigma=2`.
    #[arg(long = "param", global = true, value_name = "KEY=VALUE")]
    params: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Moments, regime and asymptotic constants of a step law.
    Analyze,
    /// Solve for the tilt t* and the speed.
    SolveTilt,
    /// Predicted speed and logarithmic corrections.
    Predict,
    /// Simulate minima of a branching random walk.
    Simulate,
    /// Rotation census of a single walk.
    Rotations,
    /// Shape events of a walk, or a conditional shape estimate.
    Shape,
    /// Run or replay an experiment.
    Experiment {
        #[command(subcommand)]
        kind: ExperimentKind,
    },
    /// Fit the logarithmic correction to experiment rows.
    Fit,
}

#[derive(Subcommand)]
enum ExperimentKind {
    MinScaling,
    IidBaseline,
    TailProfile,
    Theorem4,
    TypicalLeading,
    /// Rerun the experiment recorded in a manifest.
    Replay {
        manifest: PathBuf,
    },
}

impl ExperimentKind {
    fn tag(&self) -> &'static str {
        match self {
            ExperimentKind::MinScaling => "min_scaling",
            ExperimentKind::IidBaseline => "iid_baseline",
            ExperimentKind::TailProfile => "tail_profile",
            ExperimentKind::Theorem4 => "theorem4",
            ExperimentKind::TypicalLeading => "typical_leading",
            ExperimentKind::Replay { .. } => "replay",
        }
    }
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Numeric(String),
    Guard(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Numeric(_) => 2,
            Failure::Guard(_) => 3,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::ResourceGuard(_) => Failure::Guard(msg),
            Error::Domain { .. }
            | Error::NonSupercritical(_)
            | Error::Unsolvable { .. }
            | Error::Lattice { .. }
            | Error::RejectionStarvation { .. }
            | Error::InsufficientData(_)
            | Error::RegimeMismatch(_) => Failure::Numeric(msg),
            _ => Failure::Usage(msg),
        }
    }
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LawParams {
    step: StepSpec,
    mean_offspring: f64,
}

fn default_replicates() -> u64 {
    1
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateParams {
    offspring: OffspringSpec,
    step: StepSpec,
    n: usize,
    strategy: Strategy,
    #[serde(default)]
    survival_policy: SurvivalPolicy,
    #[serde(default = "default_replicates")]
    replicates: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RotationParams {
    steps: Vec<f64>,
}

fn default_c() -> usize {
    1
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ShapeParams {
    /// Classify this walk.
    steps: Option<Vec<f64>>,
    #[serde(default)]
    a_values: Vec<i64>,
    #[serde(default = "default_c")]
    c: usize,
    /// Or estimate conditional probabilities for this law.
    step: Option<StepSpec>,
    n: Option<usize>,
    window: Option<(f64, f64)>,
    a: Option<i64>,
    replicates: Option<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FitParams {
    rows: PathBuf,
    gamma: Option<f64>,
    step: Option<StepSpec>,
    mean_offspring: Option<f64>,
}

/// Manifest for commands other than experiments.
#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    config: &'a Value,
    master_seed: u64,
    tool_version: &'a str,
    timestamp: String,
}

/// Loads the config file, applies `--param` overrides and returns the JSON object.
fn load_params(common: &Common) -> Outcome<Value> {
    let mut root = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        None => Value::Object(Map::new()),
    };
    if !root.is_object() {
        return Err(usage("config must be a JSON object"));
    }
    for p in &common.params {
        let (key, raw) = p.split_once('=').ok_or_else(|| usage(format!("--param {p:?} is not KEY=VALUE")))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.into()));
        set_path(&mut root, key, value)?;
    }
    Ok(root)
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Outcome {
    let mut parts = key.split('.').peekable();
    let mut node = root;
    while let Some(part) = parts.next() {
        let obj = node.as_object_mut().ok_or_else(|| usage(format!("cannot set {key:?}: parent is not an object")))?;
        if parts.peek().is_none() {
            obj.insert(part.into(), value);
            return Ok(());
        }
        node = obj.entry(part).or_insert_with(|| Value::Object(Map::new()));
    }
    Err(usage(format!("empty parameter key {key:?}")))
}

fn parse<T: DeserializeOwned>(v: &Value) -> Outcome<T> {
    serde_json::from_value(v.clone()).map_err(|e| usage(format!("invalid config: {e}")))
}

fn write<T: Serialize + ?Sized>(dir: &Path, name: &str, value: &T) -> Outcome<PathBuf> {
    let path = dir.join(name);
    experiments::write_json(&path, value)?;
    Ok(path)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Usage(m) | Failure::Numeric(m) | Failure::Guard(m)) = &f;
            eprintln!("error: {m}");
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: Cli) -> Outcome {
    let common = &cli.common;
    if let Some(threads) = common.threads {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().map_err(usage)?;
    }
    let seed = common.seed.unwrap_or_else(rng::fresh_seed);
    let out = common.output.as_path();
    fs::create_dir_all(out).map_err(|e| usage(format!("{}: {e}", out.display())))?;

    if let Command::Experiment { kind } = &cli.command {
        return experiment(common, kind, seed);
    }
    let params = load_params(common)?;
    let name = match cli.command {
        Command::Analyze => "analyze",
        Command::SolveTilt => "solve-tilt",
        Command::Predict => "predict",
        Command::Simulate => "simulate",
        Command::Rotations => "rotations",
        Command::Shape => "shape",
        Command::Fit => "fit",
        Command::Experiment { .. } => unreachable!(),
    };
    let manifest = RunManifest {
        command: name,
        config: &params,
        master_seed: seed,
        tool_version: experiments::TOOL_VERSION,
        timestamp: experiments::timestamp(),
    };
    write(out, "manifest.json", &manifest)?;
    match cli.command {
        Command::Analyze => {
            let p: LawParams = parse(&params)?;
            let a = ldnum::analyze(&p.step, p.mean_offspring)?;
            println!("regime {}", a.regime);
            println!("ess_inf {} atom {} mean {} variance {}", a.info.ess_inf, a.info.atom_at_essinf, a.info.mean, a.info.variance);
            if let Some(pred) = &a.predictions {
                println!("t_star={:.6} gamma={:.6} beta_brw={:.4} beta_iid={:.4}", pred.t_star, pred.gamma, pred.beta_brw, pred.beta_iid);
            }
            println!("wrote {}", write(out, "analysis.json", &a)?.display());
        }
        Command::SolveTilt => {
            let p: LawParams = parse(&params)?;
            let a = ldnum::analyze(&p.step, p.mean_offspring)?;
            let tilt = ldnum::solve_tilt(&p.step, p.mean_offspring.ln()).map_err(|e| regime_failure(e, &a.regime))?;
            println!("t_star={:.6}", tilt.t_star);
            println!("gamma={:.6}", tilt.gamma);
            println!("regime {}", a.regime);
            println!("wrote {}", write(out, "tilt.json", &tilt)?.display());
        }
        Command::Predict => {
            let p: LawParams = parse(&params)?;
            let a = ldnum::analyze(&p.step, p.mean_offspring)?;
            let pred = match (&a.regime, &a.predictions) {
                (Regime::SharpLogCorrection, Some(pred)) => pred,
                (Regime::BoundedMinimum, _) => {
                    return Err(Failure::Numeric(format!(
                        "regime {}: the minimum stays within O(1) of ess_inf·n = {}·n and no logarithmic correction applies; \
                         run `brwmin experiment theorem4` instead",
                        a.regime, a.info.ess_inf
                    )))
                }
                (regime, _) => return Err(Failure::Numeric(format!("regime {regime}: no sharp prediction is available"))),
            };
            println!("regime {}", a.regime);
            println!("t_star={:.6} gamma={:.6}", pred.t_star, pred.gamma);
            println!("beta_brw={:.4} beta_iid={:.4}", pred.beta_brw, pred.beta_iid);
            println!("wrote {}", write(out, "prediction.json", pred)?.display());
        }
        Command::Simulate => {
            let p: SimulateParams = parse(&params)?;
            let cfg = BrwConfig { offspring: p.offspring, step: p.step, n: p.n, strategy: p.strategy, seed, survival_policy: p.survival_policy };
            let outcomes = batch_min(&cfg, p.replicates)?;
            let rows: Vec<_> = outcomes
                .iter()
                .map(|o| experiments::ExperimentRow {
                    experiment_id: format!("simulate-{seed:016x}"),
                    dist: cfg.step.descriptor(),
                    offspring: cfg.offspring.descriptor(),
                    n: cfg.n,
                    rep: o.rep,
                    m_n: if o.failed { f64::INFINITY } else { o.record.m_n },
                    survived: o.record.survived && !o.failed,
                    strategy: cfg.strategy.descriptor().into(),
                    beam_k: cfg.strategy.beam_k(),
                    seed: o.seed,
                    restarts: o.restarts,
                })
                .collect();
            let csv = out.join("rows.csv");
            experiments::write_rows(fs::File::create(&csv).map_err(usage)?, &rows)?;
            let records = write(out, "records.json", &outcomes)?;
            let finite: Vec<f64> = rows.iter().filter(|r| r.survived).map(|r| r.m_n).collect();
            let (mean, se) = brwmin::util::mean_and_stderr(&finite);
            println!("{} replicates, {} survived, mean m_n {mean:.4} ± {se:.4}", rows.len(), finite.len());
            println!("wrote {} and {}", csv.display(), records.display());
        }
        Command::Rotations => {
            let p: RotationParams = parse(&params)?;
            let path = WalkPath::from_steps(&p.steps);
            let report = pathlab::rotation_census(&path)?;
            println!("leading {} strictly leading {}", report.leading_count, report.strictly_leading_count);
            println!("wrote {}", write(out, "rotations.json", &report)?.display());
        }
        Command::Shape => {
            let p: ShapeParams = parse(&params)?;
            match (p.steps, p.step) {
                (Some(steps), None) => {
                    let path = WalkPath::from_steps(&steps);
                    let report = pathlab::shape_report(&path, &p.a_values, p.c)?;
                    println!("min excess {} well behaved {}", report.min_excess, report.well_behaved);
                    println!("wrote {}", write(out, "shape.json", &report)?.display());
                }
                (None, Some(step)) => {
                    let missing = |k: &str| usage(format!("shape estimate needs {k:?}"));
                    let est = pathlab::conditional_shape_estimate(
                        &step,
                        p.n.ok_or_else(|| missing("n"))?,
                        p.window.ok_or_else(|| missing("window"))?,
                        p.a.ok_or_else(|| missing("a"))?,
                        p.replicates.ok_or_else(|| missing("replicates"))?,
                        seed,
                    )?;
                    println!("p_abo {:.4e} ± {:.1e}", est.p_abo, est.p_abo_se);
                    println!("p_abo_and_Ba {:.4e} ± {:.1e}", est.p_abo_and_ba, est.p_abo_and_ba_se);
                    println!("wrote {}", write(out, "shape_estimate.json", &est)?.display());
                }
                _ => return Err(usage("shape needs exactly one of \"steps\" (classify a walk) or \"step\" (estimate)")),
            }
        }
        Command::Fit => {
            let p: FitParams = parse(&params)?;
            let file = fs::File::open(&p.rows).map_err(|e| usage(format!("{}: {e}", p.rows.display())))?;
            let rows = experiments::read_rows(file)?;
            let prediction = match (&p.step, p.mean_offspring) {
                (Some(step), Some(eb)) => Some(ldnum::predict(&ldnum::solve_tilt(step, eb.ln())?)),
                (None, None) => None,
                _ => return Err(usage("\"step\" and \"mean_offspring\" must be given together")),
            };
            let gamma = p.gamma.or(prediction.as_ref().map(|q| q.gamma)).ok_or_else(|| usage("fit needs \"gamma\" or a step law"))?;
            let mut fit = experiments::fit_log_correction(&rows, gamma)?;
            if let Some(pred) = &prediction {
                fit = fit.with_reference(pred);
            }
            print_fit(&fit);
            println!("wrote {}", write(out, "fit.json", &fit)?.display());
        }
        Command::Experiment { .. } => unreachable!(),
    }
    Ok(())
}

fn regime_failure(e: Error, regime: &Regime) -> Failure {
    match Failure::from(e) {
        Failure::Numeric(m) => Failure::Numeric(format!("{m} (regime {regime})")),
        other => other,
    }
}

fn print_fit(fit: &experiments::FitReport) {
    println!("gamma {:.6} beta_hat {:.4} ± {:.4} intercept {:.4}", fit.gamma_used, fit.beta_hat, fit.beta_stderr, fit.intercept_hat);
    if let (Some(ti), Some(tb)) = (fit.t_vs_iid, fit.t_vs_brw) {
        println!("t vs beta_iid {ti:.2}, t vs beta_brw {tb:.2}");
    }
}

fn experiment(common: &Common, kind: &ExperimentKind, seed: u64) -> Outcome {
    let out = common.output.as_path();
    let manifest = match kind {
        ExperimentKind::Replay { manifest } => {
            let m = experiments::read_manifest(manifest)?;
            Manifest { timestamp: experiments::timestamp(), ..m }
        }
        _ => {
            let mut params = load_params(common)?;
            let obj = params.as_object_mut().expect("object");
            if obj.contains_key("kind") {
                return Err(usage("unknown field `kind`: the experiment kind comes from the subcommand"));
            }
            let id = match obj.remove("experiment_id") {
                Some(Value::String(s)) => Some(s),
                Some(_) => return Err(usage("experiment_id must be a string")),
                None => None,
            };
            obj.insert("kind".into(), Value::String(kind.tag().into()));
            let config: ExperimentConfig = parse(&params)?;
            let id = id.unwrap_or_else(|| config.default_id(seed));
            Manifest::new(id, config, seed)
        }
    };
    experiments::write_manifest(out, &manifest)?;
    let output = experiments::replay(&manifest)?;
    experiments::write_output(out, &output)?;
    println!("experiment {} ({}), seed {}", manifest.experiment_id, manifest.config.kind(), manifest.master_seed);
    println!("{} rows", output.rows.len());
    if let Some(fit) = &output.fit {
        print_fit(fit);
    }
    if let Some(w) = output.summary.get("warnings").and_then(Value::as_array) {
        for line in w.iter().filter_map(Value::as_str) {
            println!("warning: {line}");
        }
    }
    println!("wrote {}", out.display());
    Ok(())
}
