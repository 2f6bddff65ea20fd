//! Leave-one-subject-out sweeps over training sex ratios.
//!
//! For every (ratio, seed) pair the harness plans one fold per subject,
//! trains each requested model on the fold's subjects and scores it on the
//! held-out subject. Per-fold MAE is reported for the held-out subject's
//! sex; SP, PRD and NRD need both sexes and are computed once per
//! (model, ratio, seed) from the held-out predictions of all its folds.

mod folds;
mod search;
mod summary;

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::{info, warn};
use serde::{Deserialize, Serialize};

pub use folds::{audit_run, plan_folds, realize_counts, validate_ratio, AuditReport, FoldPlan, FoldRecord, Ratio};
pub use search::{beta_search, BetaSearch, BetaTrial};
pub use summary::{
    boxplot_svg, quantile, read_results, seed_summaries, summarize, summary_rows, write_results,
    ResultRow, SeedSummary, SummaryRow, PLOTTED_METRICS, RESULTS_HEADER,
};

use crate::dvae::{save_model, train, Mode, TrainConfig};
use crate::error::{Error, Result};
use crate::knn::{knn_fit, save_knn, DEFAULT_K};
use crate::metrics::{
    negative_residual_difference, positive_residual_difference, statistical_parity, PredictionRecord,
};
use crate::signal::{denormalize, normalize, read_dataset, Dataset, GaitCycle};

pub const CONFIG_FILE: &str = "config.json";
pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const BETA_SEARCH_FILE: &str = "beta_search.csv";

pub const DEFAULT_RATIOS: [Ratio; 5] = [(0.9, 0.1), (0.7, 0.3), (0.5, 0.5), (0.3, 0.7), (0.1, 0.9)];

/// Share of failed folds above which a sweep counts as failed.
pub const MAX_FAILURE_RATE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Dvae,
    PlainVae,
    Knn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Dvae, ModelKind::PlainVae, ModelKind::Knn];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Dvae => "dvae",
            ModelKind::PlainVae => "plain_vae",
            ModelKind::Knn => "knn",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown model {s:?}")))
    }
}

/// Granularity of the predictions that enter the metrics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalUnit {
    /// One prediction per trial: the mean over its cycles.
    #[default]
    Trial,
    Cycle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub models: Vec<ModelKind>,
    pub ratios: Vec<Ratio>,
    pub seeds: Vec<u64>,
    pub dvae: TrainConfig,
    pub plain_vae: TrainConfig,
    pub knn_k: usize,
    pub eval_unit: EvalUnit,
    pub threads: usize,
    pub persist_models: bool,
    pub beta_search: Option<BetaSearch>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: None,
            output_dir: None,
            models: ModelKind::ALL.to_vec(),
            ratios: DEFAULT_RATIOS.to_vec(),
            seeds: vec![0],
            dvae: TrainConfig::default(),
            plain_vae: TrainConfig {
                mode: Mode::PlainVae,
                ..TrainConfig::default()
            },
            knn_k: DEFAULT_K,
            eval_unit: EvalUnit::Trial,
            threads: 1,
            persist_models: true,
            beta_search: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() || self.ratios.is_empty() || self.seeds.is_empty() {
            return Err(Error::Parameter("need at least one model, ratio and seed".into()));
        }
        let unique: BTreeSet<_> = self.models.iter().collect();
        if unique.len() != self.models.len() {
            return Err(Error::Parameter("models listed more than once".into()));
        }
        let seeds: BTreeSet<_> = self.seeds.iter().collect();
        if seeds.len() != self.seeds.len() {
            return Err(Error::Parameter("seeds listed more than once".into()));
        }
        for &r in &self.ratios {
            validate_ratio(r)?;
            if self.models.contains(&ModelKind::Dvae) && (r.0 == 0.0 || r.1 == 0.0) {
                return Err(Error::Parameter(format!(
                    "ratio {}:{} leaves one sex out, which the dvae cannot train on",
                    r.0, r.1
                )));
            }
        }
        if self.knn_k == 0 {
            return Err(Error::Parameter("knn_k must be positive".into()));
        }
        if self.threads == 0 {
            return Err(Error::Parameter("threads must be positive".into()));
        }
        if self.dvae.mode != Mode::Dvae || self.plain_vae.mode != Mode::PlainVae {
            return Err(Error::Parameter("dvae and plain_vae configs carry the wrong mode".into()));
        }
        self.dvae.validate()?;
        self.plain_vae.validate()?;
        if let Some(s) = &self.beta_search {
            s.validate()?;
        }
        Ok(())
    }
}

/// Outcome of one (model, fold) evaluation.
#[derive(Debug)]
struct FoldOutcome {
    record: Option<FoldRecord>,
    predictions: Result<Vec<PredictionRecord>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub rows: Vec<ResultRow>,
    pub n_folds: usize,
    pub n_failed: usize,
}

impl RunOutcome {
    pub fn failure_rate(&self) -> f64 {
        if self.n_folds == 0 {
            0.0
        } else {
            self.n_failed as f64 / self.n_folds as f64
        }
    }

    pub fn too_many_failures(&self) -> bool {
        self.failure_rate() > MAX_FAILURE_RATE
    }
}

pub(crate) fn ratio_tag(r: Ratio) -> String {
    format!("{:.2}-{:.2}", r.0, r.1)
}

/// Seed for training one model on one fold. It depends only on its own
/// (seed, ratio, model, subject) so adding other seeds changes nothing.
fn train_seed(seed: u64, ratio: Ratio, kind: ModelKind, subject: &str) -> u64 {
    let subject_key = subject.bytes().fold(0xCBF2_9CE4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01B3));
    folds::mix(folds::mix(seed, folds::ratio_key(ratio)), folds::mix(kind as u64, subject_key))
}

/// Cycles grouped by trial in order of first appearance.
pub(crate) fn group_trials(ds: &Dataset) -> Vec<Vec<&GaitCycle>> {
    let mut groups: Vec<Vec<&GaitCycle>> = Vec::new();
    for c in &ds.cycles {
        match groups.iter_mut().find(|g| g[0].trial_id == c.trial_id) {
            Some(g) => g.push(c),
            None => groups.push(vec![c]),
        }
    }
    groups
}

/// Raw copy of `dataset`, undoing any stored normalisation.
pub fn raw_dataset(dataset: &Dataset) -> Result<Dataset> {
    match &dataset.channel_stats {
        Some(s) => denormalize(dataset, s),
        None => Ok(dataset.clone()),
    }
}

/// Normalised training and test sets for one plan.
pub(crate) fn split(raw: &Dataset, train_subjects: &[String], held_out: &str) -> Result<(Dataset, Dataset)> {
    let keep: BTreeSet<&str> = train_subjects.iter().map(String::as_str).collect();
    let train = normalize(&raw.filter(|c| keep.contains(c.subject_id.as_str())), None)?;
    let test_raw = raw.filter(|c| c.subject_id == held_out);
    if train.is_empty() {
        return Err(Error::Data("fold has no training cycles".into()));
    }
    if test_raw.is_empty() {
        return Err(Error::Data(format!("held-out subject {held_out} has no cycles")));
    }
    let test = normalize(&test_raw, train.channel_stats.as_deref())?;
    Ok((train, test))
}

/// Per-unit predictions from per-cycle predictor `predict`.
fn predictions(
    test: &Dataset,
    unit: EvalUnit,
    mut predict: impl FnMut(&[&GaitCycle]) -> Result<Vec<f64>>,
) -> Result<Vec<PredictionRecord>> {
    let mut out = Vec::new();
    for trial in group_trials(test) {
        let p = predict(&trial)?;
        let rec = |c: &GaitCycle, y_pred: f64| PredictionRecord {
            subject_id: c.subject_id.clone(),
            trial_id: c.trial_id.clone(),
            sex: c.sex,
            y_true: c.weight_kg,
            y_pred,
        };
        match unit {
            EvalUnit::Trial => out.push(rec(trial[0], p.iter().sum::<f64>() / p.len() as f64)),
            EvalUnit::Cycle => out.extend(trial.iter().zip(&p).map(|(c, &v)| rec(c, v))),
        }
    }
    if let Some(bad) = out.iter().find(|r| !r.y_pred.is_finite()) {
        return Err(Error::Numeric(format!("non-finite prediction for trial {}", bad.trial_id)));
    }
    Ok(out)
}

fn run_fold(
    config: &ExperimentConfig,
    raw: &Dataset,
    kind: ModelKind,
    plan: &FoldPlan,
    model_dir: Option<&Path>,
) -> FoldOutcome {
    let (train_set, test) = match split(raw, &plan.train_subjects, &plan.held_out_subject) {
        Ok(v) => v,
        Err(e) => return FoldOutcome { record: None, predictions: Err(e) },
    };
    let used: BTreeSet<String> = train_set.cycles.iter().map(|c| c.subject_id.clone()).collect();
    let record = FoldRecord {
        plan: plan.clone(),
        used_train_subjects: used.into_iter().collect(),
        n_train_cycles: train_set.len(),
        n_test_cycles: test.len(),
    };
    let seed = train_seed(plan.seed, plan.ratio, kind, &plan.held_out_subject);
    let result = match kind {
        ModelKind::Knn => knn_fit(&train_set, config.knn_k.min(train_set.len())).and_then(|m| {
            if let Some(dir) = model_dir {
                save_knn(dir, &m)?;
            }
            predictions(&test, config.eval_unit, |c| m.predict_cycles(c))
        }),
        ModelKind::Dvae | ModelKind::PlainVae => {
            let base = if kind == ModelKind::Dvae { &config.dvae } else { &config.plain_vae };
            let cfg = TrainConfig { seed, ..base.clone() };
            train(&train_set, &cfg).and_then(|m| {
                if let Some(dir) = model_dir {
                    save_model(dir, &m)?;
                }
                predictions(&test, config.eval_unit, |c| m.predict_cycles(c))
            })
        }
    };
    FoldOutcome { record: Some(record), predictions: result }
}

/// Runs `f` over `jobs` on up to `threads` workers, returning results in
/// job order.
fn run_parallel<J: Sync, T: Send>(jobs: &[J], threads: usize, f: impl Fn(&J) -> T + Sync) -> Vec<T> {
    if threads <= 1 || jobs.len() <= 1 {
        return jobs.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads.min(jobs.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs.len() {
                    break;
                }
                let out = f(&jobs[i]);
                slots.lock().expect("result slots poisoned")[i] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots poisoned")
        .into_iter()
        .map(|o| o.expect("every job ran"))
        .collect()
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Loads the configured dataset and runs the sweep into the configured
/// output directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutcome> {
    let path = config
        .dataset
        .as_ref()
        .ok_or_else(|| Error::Parameter("config names no dataset".into()))?;
    let out = config
        .output_dir
        .as_ref()
        .ok_or_else(|| Error::Parameter("config names no output directory".into()))?;
    let dataset = read_dataset(path)?;
    run_experiment_on(config, &dataset, out)
}

/// Runs the sweep on an in-memory dataset, writing the run directory to `out_dir`.
pub fn run_experiment_on(config: &ExperimentConfig, dataset: &Dataset, out_dir: &Path) -> Result<RunOutcome> {
    config.validate()?;
    dataset.validate()?;
    let raw = raw_dataset(dataset)?;
    for sub in ["folds", "models", "plots"] {
        create_dir(&out_dir.join(sub))?;
    }
    let mut config = config.clone();
    if let Some(search) = &config.beta_search {
        let trials = beta_search(&raw, &config.dvae, search)?;
        search::write_trials(&out_dir.join(BETA_SEARCH_FILE), &trials)?;
        let best = &trials[0];
        info!("beta search picked beta1 = {}, beta2 = {}", best.beta1, best.beta2);
        config.dvae.beta1 = best.beta1;
        config.dvae.beta2 = best.beta2;
    }
    write_json(&out_dir.join(CONFIG_FILE), &config)?;

    let mut rows = Vec::new();
    let (mut n_folds, mut n_failed) = (0, 0);
    for &ratio in &config.ratios {
        for &seed in &config.seeds {
            let plans = plan_folds(&raw, ratio, seed)?;
            let jobs: Vec<(ModelKind, &FoldPlan)> = config
                .models
                .iter()
                .flat_map(|&m| plans.iter().map(move |p| (m, p)))
                .collect();
            info!("ratio {}:{} seed {seed}: {} folds", ratio.0, ratio.1, jobs.len());
            let outcomes = run_parallel(&jobs, config.threads, |&(kind, plan)| {
                let dir = config.persist_models.then(|| {
                    out_dir
                        .join("models")
                        .join(kind.as_str())
                        .join(ratio_tag(ratio))
                        .join(format!("seed{seed}"))
                        .join(&plan.held_out_subject)
                });
                catch_unwind(AssertUnwindSafe(|| run_fold(&config, &raw, kind, plan, dir.as_deref())))
                    .unwrap_or_else(|_| FoldOutcome {
                        record: None,
                        predictions: Err(Error::Numeric("fold panicked".into())),
                    })
            });
            for &kind in &config.models {
                let of_model: Vec<(&FoldPlan, &FoldOutcome)> = jobs
                    .iter()
                    .zip(&outcomes)
                    .filter(|((k, _), _)| *k == kind)
                    .map(|((_, p), o)| (*p, o))
                    .collect();
                let pooled: Vec<PredictionRecord> = of_model
                    .iter()
                    .filter_map(|(_, o)| o.predictions.as_ref().ok())
                    .flatten()
                    .cloned()
                    .collect();
                let fairness = statistical_parity(&pooled).and_then(|sp| {
                    Ok((sp, positive_residual_difference(&pooled)?, negative_residual_difference(&pooled)?))
                });
                if let Err(e) = &fairness {
                    warn!("{kind} ratio {}:{} seed {seed}: no pooled fairness metrics ({e})", ratio.0, ratio.1);
                }
                for (plan, outcome) in of_model {
                    n_folds += 1;
                    if let Some(rec) = &outcome.record {
                        let name = format!(
                            "{kind}_{}_seed{seed}_{}.json",
                            ratio_tag(ratio),
                            plan.held_out_subject
                        );
                        write_json(&out_dir.join("folds").join(name), rec)?;
                    }
                    let mut row = ResultRow {
                        model: kind.to_string(),
                        ratio_m: ratio.0,
                        ratio_f: ratio.1,
                        seed,
                        fold_subject: plan.held_out_subject.clone(),
                        test_sex: plan.held_out_sex,
                        n_trials: 0,
                        mae: None,
                        sp: None,
                        prd: None,
                        nrd: None,
                        status: "ok".into(),
                    };
                    match &outcome.predictions {
                        Ok(p) => {
                            row.n_trials = p.iter().map(|r| &r.trial_id).collect::<BTreeSet<_>>().len();
                            row.mae = crate::metrics::mae(p).ok();
                            if let Ok((sp, prd, nrd)) = fairness {
                                (row.sp, row.prd, row.nrd) = (Some(sp), Some(prd), Some(nrd));
                            }
                        }
                        Err(e) => {
                            n_failed += 1;
                            warn!("{kind} fold {} failed: {e}", plan.held_out_subject);
                            row.status = format!("failed: {e}");
                        }
                    }
                    rows.push(row);
                }
            }
        }
    }
    write_results(&out_dir.join(RESULTS_FILE), &rows)?;
    summarize(&rows, out_dir)?;
    Ok(RunOutcome {
        out_dir: out_dir.to_path_buf(),
        rows,
        n_folds,
        n_failed,
    })
}
