//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error,
//! 3 numeric failure. Logs go to standard error; tables and CSV go to
//! files or standard output.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{error, info, LevelFilter};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::dvae::{export_latents, load_model, save_model, train, DecoderVariance, Mode, TrainConfig, TrainedModel, MODEL_FILE};
use crate::error::{Error, Result};
use crate::harness::{read_results, run_experiment, summarize, ExperimentConfig, ModelKind, RunOutcome};
use crate::knn::{knn_fit, load_knn, save_knn, KnnModel, DEFAULT_K, KNN_MANIFEST};
use crate::metrics::{self, PredictionRecord};
use crate::selftest;
use crate::signal::{
    build_dataset, normalize, read_dataset, read_raw_trials, write_dataset, write_raw_trials, Dataset,
    GaitCycle, PipelineParams, Sex,
};
use crate::synth::{generate_dataset, GeneratorConfig};

pub const SEED_ENV: &str = "FAIRLOAD_SEED";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "fairload", version, about = "Fairness-aware hand-load estimation from gait cycles")]
pub struct Cli {
    /// Seed for every random draw; falls back to FAIRLOAD_SEED.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON config for the subcommand; explicit flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file or directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for sweeps.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Only report errors.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset (processed cycles plus ground truth).
    Gen(GenArgs),
    /// Filter, segment and resample raw trials into a dataset.
    Preprocess(PreprocessArgs),
    /// Train one model on a dataset.
    Train(TrainArgs),
    /// Per-trial load predictions as CSV.
    Predict(ApplyArgs),
    /// MAE and fairness metrics of a model on a dataset, as JSON.
    Eval(ApplyArgs),
    /// Leave-one-subject-out sweep over sex ratios.
    Sweep(SweepArgs),
    /// Summary table and boxplots from a results CSV.
    Summarize(SummarizeArgs),
    /// Posterior means of every cycle as CSV.
    ExportLatents(ApplyArgs),
    /// Run the numerical self-checks.
    Selftest,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub male: Option<usize>,
    #[arg(long)]
    pub female: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub cycles_per_trial: Option<usize>,
    #[arg(long)]
    pub trials_per_condition: Option<usize>,
    /// Comma-separated load weights in kg.
    #[arg(long, value_delimiter = ',')]
    pub weights: Option<Vec<f64>>,
    #[arg(long)]
    pub noise: Option<f64>,
    /// Switch off every effect, variability and noise source.
    #[arg(long)]
    pub noiseless: bool,
    /// Also write the raw trials to this directory.
    #[arg(long)]
    pub raw_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Directory written by `gen --raw-out`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub cutoff: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Dvae,
    PlainVae,
    Knn,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "dvae")]
    pub model: ModelArg,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub arch_scale: Option<f64>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    /// Learn a scalar decoder variance instead of fixing it at one.
    #[arg(long)]
    pub learned_variance: bool,
    /// Neighbours for the k-NN model.
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ApplyArgs {
    /// Model directory written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Comma-separated subset of dvae, plain_vae, knn.
    #[arg(long, value_delimiter = ',')]
    pub models: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    #[arg(long)]
    pub results: PathBuf,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let level = if cli.quiet { LevelFilter::Error } else { LevelFilter::Info };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_env("RUST_LOG")
        .target(env_logger::Target::Stderr)
        .try_init();
    log::set_max_level(level);
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            error!("{e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numeric() {
        EXIT_NUMERIC
    } else {
        EXIT_DATA
    }
}

fn resolve_seed(flag: Option<u64>) -> Result<Option<u64>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Parameter(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Ok(serde_json::from_str(&text)?)
        }
    }
}

fn require_out(cli: &Cli) -> Result<&Path> {
    cli.out
        .as_deref()
        .ok_or_else(|| Error::Parameter("--out is required for this command".into()))
}

/// Writes to `--out` when given, otherwise to standard output.
fn with_output(cli: &Cli, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match &cli.out {
        Some(p) => {
            let mut file = io::BufWriter::new(fs::File::create(p).map_err(|e| Error::io(p, e))?);
            f(&mut file)?;
            file.flush().map_err(|e| Error::io(p, e))
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            f(&mut lock)?;
            lock.flush().map_err(|e| Error::io("stdout", e))
        }
    }
}

fn run(cli: &Cli) -> Result<i32> {
    let seed = resolve_seed(cli.seed)?;
    match &cli.command {
        Command::Gen(a) => gen(cli, a, seed),
        Command::Preprocess(a) => preprocess(cli, a),
        Command::Train(a) => train_cmd(cli, a, seed),
        Command::Predict(a) => predict(cli, a),
        Command::Eval(a) => eval(cli, a),
        Command::Sweep(a) => sweep(cli, a, seed),
        Command::Summarize(a) => summarize_cmd(cli, a),
        Command::ExportLatents(a) => export(cli, a),
        Command::Selftest => Ok(selftest_cmd(cli)),
    }
}

fn gen(cli: &Cli, a: &GenArgs, seed: Option<u64>) -> Result<i32> {
    let out = require_out(cli)?;
    let mut cfg: GeneratorConfig = load_config(cli.config.as_deref())?;
    if a.noiseless {
        cfg = cfg.noiseless();
    }
    cfg.n_subjects_male = a.male.unwrap_or(cfg.n_subjects_male);
    cfg.n_subjects_female = a.female.unwrap_or(cfg.n_subjects_female);
    cfg.n_channels = a.channels.unwrap_or(cfg.n_channels);
    cfg.cycles_per_trial = a.cycles_per_trial.unwrap_or(cfg.cycles_per_trial);
    cfg.trials_per_condition = a.trials_per_condition.unwrap_or(cfg.trials_per_condition);
    cfg.noise_std = a.noise.unwrap_or(cfg.noise_std);
    cfg.seed = seed.unwrap_or(cfg.seed);
    if let Some(w) = &a.weights {
        cfg.weights_kg = w.clone();
    }
    let (trials, truth) = generate_dataset(&cfg)?;
    if let Some(raw) = &a.raw_out {
        write_raw_trials(raw, &trials)?;
    }
    let ds = build_dataset(&trials, &PipelineParams::default())?;
    write_dataset(out, &ds)?;
    truth.write(&out.join(GROUND_TRUTH_FILE))?;
    info!("wrote {} cycles from {} trials to {}", ds.len(), trials.len(), out.display());
    Ok(EXIT_OK)
}

fn preprocess(cli: &Cli, a: &PreprocessArgs) -> Result<i32> {
    let out = require_out(cli)?;
    let mut params: PipelineParams = load_config(cli.config.as_deref())?;
    params.cutoff_hz = a.cutoff.unwrap_or(params.cutoff_hz);
    let trials = read_raw_trials(&a.input)?;
    let ds = build_dataset(&trials, &params)?;
    write_dataset(out, &ds)?;
    info!("wrote {} cycles to {}", ds.len(), out.display());
    Ok(EXIT_OK)
}

fn train_cmd(cli: &Cli, a: &TrainArgs, seed: Option<u64>) -> Result<i32> {
    let out = require_out(cli)?;
    let raw = read_dataset(&a.data)?;
    let ds = match &raw.channel_stats {
        Some(_) => raw,
        None => normalize(&raw, None)?,
    };
    if a.model == ModelArg::Knn {
        let m = knn_fit(&ds, a.k.unwrap_or(DEFAULT_K))?;
        save_knn(out, &m)?;
        info!("stored {} reference cycles in {}", m.n_rows(), out.display());
        return Ok(EXIT_OK);
    }
    let mut cfg: TrainConfig = load_config(cli.config.as_deref())?;
    cfg.mode = if a.model == ModelArg::Dvae { Mode::Dvae } else { Mode::PlainVae };
    cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
    cfg.batch_size = a.batch_size.unwrap_or(cfg.batch_size);
    cfg.learning_rate = a.lr.unwrap_or(cfg.learning_rate);
    cfg.beta1 = a.beta1.unwrap_or(cfg.beta1);
    cfg.beta2 = a.beta2.unwrap_or(cfg.beta2);
    cfg.arch_scale = a.arch_scale.unwrap_or(cfg.arch_scale);
    cfg.latent_dim = a.latent_dim.unwrap_or(cfg.latent_dim);
    cfg.seed = seed.unwrap_or(cfg.seed);
    if a.learned_variance {
        cfg.decoder_variance = DecoderVariance::LearnedScalar;
    }
    let m = train(&ds, &cfg)?;
    save_model(out, &m)?;
    if let Some(last) = m.log.last() {
        info!("final epoch loss {:.4}; model saved to {}", last.loss.total, out.display());
    }
    Ok(EXIT_OK)
}

enum Loaded {
    Vae(Box<TrainedModel>),
    Knn(KnnModel),
}

impl Loaded {
    fn open(dir: &Path) -> Result<Loaded> {
        if dir.join(MODEL_FILE).exists() {
            Ok(Loaded::Vae(Box::new(load_model(dir)?)))
        } else if dir.join(KNN_MANIFEST).exists() {
            Ok(Loaded::Knn(load_knn(dir)?))
        } else {
            Err(Error::Data(format!("{} holds no saved model", dir.display())))
        }
    }

    fn prepare(&self, ds: &Dataset) -> Result<Dataset> {
        match self {
            Loaded::Vae(m) => m.prepare(ds),
            Loaded::Knn(m) => m.prepare(ds),
        }
    }

    fn predict_trial(&self, cycles: &[&GaitCycle]) -> Result<f64> {
        match self {
            Loaded::Vae(m) => m.predict_trial(cycles),
            Loaded::Knn(m) => m.predict_trial(cycles),
        }
    }
}

fn trial_predictions(a: &ApplyArgs) -> Result<Vec<PredictionRecord>> {
    let model = Loaded::open(&a.model)?;
    let ds = model.prepare(&read_dataset(&a.data)?)?;
    crate::harness::group_trials(&ds)
        .into_iter()
        .map(|trial| {
            Ok(PredictionRecord {
                subject_id: trial[0].subject_id.clone(),
                trial_id: trial[0].trial_id.clone(),
                sex: trial[0].sex,
                y_true: trial[0].weight_kg,
                y_pred: model.predict_trial(&trial)?,
            })
        })
        .collect()
}

fn predict(cli: &Cli, a: &ApplyArgs) -> Result<i32> {
    let records = trial_predictions(a)?;
    with_output(cli, |w| {
        let mut csv = csv::Writer::from_writer(w);
        for r in &records {
            csv.serialize(r).map_err(crate::dvae::csv_err)?;
        }
        csv.flush().map_err(|e| Error::io("predictions", e))
    })?;
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct EvalReport {
    n_trials: usize,
    mae_overall: f64,
    mae_female: Option<f64>,
    mae_male: Option<f64>,
    sp: Option<f64>,
    prd: Option<f64>,
    nrd: Option<f64>,
}

fn eval(cli: &Cli, a: &ApplyArgs) -> Result<i32> {
    let records = trial_predictions(a)?;
    let of_sex = |s: Sex| -> Vec<PredictionRecord> { records.iter().filter(|r| r.sex == s).cloned().collect() };
    let report = EvalReport {
        n_trials: records.len(),
        mae_overall: metrics::mae(&records)?,
        mae_female: metrics::mae(&of_sex(Sex::Female)).ok(),
        mae_male: metrics::mae(&of_sex(Sex::Male)).ok(),
        sp: metrics::statistical_parity(&records).ok(),
        prd: metrics::positive_residual_difference(&records).ok(),
        nrd: metrics::negative_residual_difference(&records).ok(),
    };
    with_output(cli, |w| {
        serde_json::to_writer_pretty(&mut *w, &report)?;
        writeln!(w).map_err(|e| Error::io("report", e))
    })?;
    Ok(EXIT_OK)
}

fn sweep(cli: &Cli, a: &SweepArgs, seed: Option<u64>) -> Result<i32> {
    let mut cfg: ExperimentConfig = load_config(cli.config.as_deref())?;
    if let Some(d) = &a.data {
        cfg.dataset = Some(d.clone());
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = Some(o.clone());
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    if let Some(models) = &a.models {
        cfg.models = models.iter().map(|m| m.parse()).collect::<Result<Vec<ModelKind>>>()?;
    }
    let outcome: RunOutcome = run_experiment(&cfg)?;
    info!(
        "{} folds, {} failed; results in {}",
        outcome.n_folds,
        outcome.n_failed,
        outcome.out_dir.display()
    );
    if outcome.too_many_failures() {
        error!("{:.0}% of folds failed", 100.0 * outcome.failure_rate());
        return Ok(EXIT_NUMERIC);
    }
    Ok(EXIT_OK)
}

fn summarize_cmd(cli: &Cli, a: &SummarizeArgs) -> Result<i32> {
    let rows = read_results(&a.results)?;
    let out = match &cli.out {
        Some(o) => o.clone(),
        None => a.results.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let summary = summarize(&rows, &out)?;
    info!("{} summary rows written to {}", summary.len(), out.display());
    Ok(EXIT_OK)
}

fn export(cli: &Cli, a: &ApplyArgs) -> Result<i32> {
    let model = load_model(&a.model)?;
    let ds = model.prepare(&read_dataset(&a.data)?)?;
    with_output(cli, |w| export_latents(&model, &ds, w))?;
    Ok(EXIT_OK)
}

fn selftest_cmd(cli: &Cli) -> i32 {
    let results = selftest::run_all();
    let mut all = true;
    for r in &results {
        all &= r.passed;
        let line = format!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
        if !r.passed {
            eprintln!("{line}");
        } else if !cli.quiet {
            println!("{line}");
        }
    }
    if all {
        EXIT_OK
    } else {
        EXIT_NUMERIC
    }
}

