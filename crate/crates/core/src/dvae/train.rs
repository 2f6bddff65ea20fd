use std::io::Write;
use std::path::Path;

use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{Batch, IeRouting, LossBreakdown, LossWeights, Noise, StepOptions};
use super::{ArchConfig, Dvae, Latents, Mode, TrainConfig};
use crate::error::{Error, Result};
use crate::nn::{Adam, Module};
use crate::signal::{renormalize, ChannelStat, Dataset, GaitCycle, Sex, CYCLE_LEN};

pub const LOG_FILE: &str = "training_log.csv";

/// Cycles per forward pass at inference time.
const INFER_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: LossBreakdown,
}

/// A trained model together with everything needed to apply it to new data.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: Dvae,
    pub config: TrainConfig,
    pub channel_names: Vec<String>,
    pub channel_stats: Vec<ChannelStat>,
    pub target_mean: f64,
    pub target_std: f64,
    pub log: Vec<EpochLog>,
}

/// Trains on a normalised dataset with the full-size widths scaled by
/// `config.arch_scale`.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainedModel> {
    let mut arch = ArchConfig::scaled(CYCLE_LEN, dataset.n_channels, config.arch_scale, config.latent_dim)?;
    arch.dropout = config.head_dropout;
    arch.validate()?;
    train_with_arch(dataset, config, arch)
}

/// Index ranges of the mini-batches. A trailing single-sample batch is
/// merged into its predecessor so batch statistics stay defined.
fn batch_ranges(n: usize, size: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = (0..n).step_by(size).map(|lo| (lo, (lo + size).min(n))).collect();
    if out.len() > 1 && out.last().is_some_and(|(lo, hi)| hi - lo == 1) {
        let (_, hi) = out.pop().expect("non-empty");
        out.last_mut().expect("at least one batch left").1 = hi;
    }
    out
}

fn make_batch(cycles: &[&GaitCycle], idx: &[usize], targets: &[f64]) -> Batch {
    let mut x = Vec::with_capacity(idx.len() * cycles[0].data.len());
    for &i in idx {
        x.extend_from_slice(&cycles[i].data);
    }
    Batch {
        x,
        y: idx.iter().map(|&i| targets[i]).collect(),
        sex: idx.iter().map(|&i| cycles[i].sex.class_index()).collect(),
    }
}

pub fn train_with_arch(dataset: &Dataset, config: &TrainConfig, arch: ArchConfig) -> Result<TrainedModel> {
    config.validate()?;
    dataset.validate()?;
    let stats = dataset
        .channel_stats
        .clone()
        .ok_or_else(|| Error::Data("training data must be normalised first".into()))?;
    if dataset.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if arch.cycle_len() != dataset.cycles[0].data.len() || arch.n_channels != dataset.n_channels {
        return Err(Error::Shape(format!(
            "architecture expects {} × {} cycles",
            arch.seq_len, arch.n_channels
        )));
    }
    if config.mode == Mode::Dvae {
        for sex in [Sex::Male, Sex::Female] {
            if !dataset.cycles.iter().any(|c| c.sex == sex) {
                return Err(Error::Data(format!(
                    "dvae training needs both sexes, no {sex} cycles present"
                )));
            }
        }
    }

    let weights: Vec<f64> = dataset.cycles.iter().map(|c| c.weight_kg).collect();
    let (target_mean, target_std) = if config.target_standardization {
        let n = weights.len() as f64;
        let mean = weights.iter().sum::<f64>() / n;
        let var = weights.iter().map(|w| (w - mean) * (w - mean)).sum::<f64>() / n;
        (mean, if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 })
    } else {
        (0.0, 1.0)
    };
    let targets: Vec<f64> = weights.iter().map(|w| (w - target_mean) / target_std).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = Dvae::new(arch, config.mode, config.decoder_variance, &mut rng)?;
    let mut grad = model.zeros_like();
    let mut opt = Adam::new(config.learning_rate);
    let cycles: Vec<&GaitCycle> = dataset.cycles.iter().collect();
    let n = cycles.len();
    let mut order: Vec<usize> = (0..n).collect();
    let opts = StepOptions {
        beta1: config.beta1,
        beta2: config.beta2,
        update_running: true,
    };
    let weights = LossWeights::total(config.beta1, config.beta2);
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut acc = LossBreakdown::default();
        for (lo, hi) in batch_ranges(n, config.batch_size) {
            let batch = make_batch(&cycles, &order[lo..hi], &targets);
            let noise = Noise::sample(&mut rng, config.mc_samples, batch.size(), model.latent_dim(), config.mode);
            let (loss, tape) = model
                .forward_loss(&batch, &noise, &opts, &mut rng)
                .map_err(|e| match e {
                    Error::Numeric(msg) => Error::Numeric(format!("training diverged in epoch {epoch}: {msg}")),
                    other => other,
                })?;
            if loss.kl_agnostic < 0.0 || loss.kl_specific < 0.0 {
                return Err(Error::Numeric(format!("negative KL in epoch {epoch}: {loss:?}")));
            }
            if loss.additivity_error() > 1e-9 * loss.total.abs().max(1.0) {
                return Err(Error::Numeric(format!("loss components do not add up in epoch {epoch}")));
            }
            grad.zero_params();
            model.backward(&tape, weights, IeRouting::EncodersOnly, &mut grad);
            opt.step(&mut model, &grad);
            accumulate(&mut acc, &loss, (hi - lo) as f64 / n as f64);
        }
        acc.beta1 = config.beta1;
        acc.beta2 = config.beta2;
        debug!("epoch {epoch}: total {:.4} vae {:.4} dc {:.4} ie {:.4}", acc.total, acc.vae_loss, acc.discriminative_loss, acc.independence_loss);
        log.push(EpochLog { epoch, loss: acc });
    }

    let mut trained = TrainedModel {
        model,
        config: config.clone(),
        channel_names: dataset.channel_names.clone(),
        channel_stats: stats,
        target_mean,
        target_std,
        log,
    };
    if config.recalibrate_batch_norm {
        let lat = trained.encode_dataset(dataset)?;
        trained.model.regressor.recalibrate(&lat.z_mean);
        if let (Some(c), Some(s)) = (trained.model.classifier.as_mut(), &lat.zsex_mean) {
            c.recalibrate(s);
        }
    }
    Ok(trained)
}

fn accumulate(acc: &mut LossBreakdown, l: &LossBreakdown, w: f64) {
    acc.vae_loss += w * l.vae_loss;
    acc.reconstruction_term += w * l.reconstruction_term;
    acc.kl_agnostic += w * l.kl_agnostic;
    acc.kl_specific += w * l.kl_specific;
    acc.discriminative_loss += w * l.discriminative_loss;
    acc.regressor_term += w * l.regressor_term;
    acc.classifier_term += w * l.classifier_term;
    acc.independence_loss += w * l.independence_loss;
    acc.total += w * l.total;
}

impl TrainedModel {
    /// Applies the stored channel statistics to `dataset`, undoing any
    /// different normalisation it already carries.
    pub fn prepare(&self, dataset: &Dataset) -> Result<Dataset> {
        renormalize(dataset, &self.channel_names, &self.channel_stats)
    }

    fn destandardize(&self, v: f64) -> f64 {
        v * self.target_std + self.target_mean
    }

    /// Per-cycle load estimates in kg for cycles normalised with the model's statistics.
    pub fn predict_cycles(&self, cycles: &[&GaitCycle]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(cycles.len());
        for chunk in cycles.chunks(INFER_CHUNK) {
            let x: Vec<f64> = chunk.iter().flat_map(|c| c.data.iter().copied()).collect();
            let y = self.model.predict_standardized(&x, chunk.len())?;
            out.extend(y.into_iter().map(|v| self.destandardize(v)));
        }
        Ok(out)
    }

    pub fn predict_weight(&self, cycle: &GaitCycle) -> Result<f64> {
        Ok(self.predict_cycles(&[cycle])?[0])
    }

    /// Mean of the per-cycle estimates of one trial.
    pub fn predict_trial(&self, cycles: &[&GaitCycle]) -> Result<f64> {
        check_single_trial(cycles)?;
        let p = self.predict_cycles(cycles)?;
        Ok(p.iter().sum::<f64>() / p.len() as f64)
    }

    /// Eval-mode posterior parameters of every cycle.
    pub fn encode_dataset(&self, dataset: &Dataset) -> Result<Latents> {
        let d = self.model.latent_dim();
        let mut all = Latents {
            z_mean: Vec::with_capacity(dataset.len() * d),
            z_logvar: Vec::with_capacity(dataset.len() * d),
            zsex_mean: (self.model.mode == Mode::Dvae).then(Vec::new),
            zsex_logvar: (self.model.mode == Mode::Dvae).then(Vec::new),
        };
        for chunk in dataset.cycles.chunks(INFER_CHUNK) {
            let x: Vec<f64> = chunk.iter().flat_map(|c| c.data.iter().copied()).collect();
            let lat = self.model.encode(&x, chunk.len())?;
            all.z_mean.extend(lat.z_mean);
            all.z_logvar.extend(lat.z_logvar);
            if let (Some(a), Some(b)) = (all.zsex_mean.as_mut(), lat.zsex_mean) {
                a.extend(b);
            }
            if let (Some(a), Some(b)) = (all.zsex_logvar.as_mut(), lat.zsex_logvar) {
                a.extend(b);
            }
        }
        Ok(all)
    }
}

/// Rejects empty input and cycles drawn from more than one trial.
pub(crate) fn check_single_trial(cycles: &[&GaitCycle]) -> Result<()> {
    let first = cycles
        .first()
        .ok_or_else(|| Error::Parameter("a trial needs at least one cycle".into()))?;
    if let Some(other) = cycles.iter().find(|c| c.trial_id != first.trial_id) {
        return Err(Error::Data(format!(
            "cycles from trials {} and {} mixed",
            first.trial_id, other.trial_id
        )));
    }
    Ok(())
}

/// Writes one CSV row per cycle with its posterior means. `dataset` must be
/// normalised with the model's statistics (see [`TrainedModel::prepare`]).
pub fn export_latents(model: &TrainedModel, dataset: &Dataset, out: impl Write) -> Result<()> {
    let lat = model.encode_dataset(dataset)?;
    let d = model.model.latent_dim();
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["subject_id", "trial_id", "sex", "weight_kg"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..d).map(|i| format!("z_mean_{i}")));
    if lat.zsex_mean.is_some() {
        header.extend((0..d).map(|i| format!("zsex_mean_{i}")));
    }
    w.write_record(&header).map_err(csv_err)?;
    for (i, c) in dataset.cycles.iter().enumerate() {
        let mut row = vec![
            c.subject_id.clone(),
            c.trial_id.clone(),
            c.sex.to_string(),
            c.weight_kg.to_string(),
        ];
        row.extend(lat.z_mean[i * d..(i + 1) * d].iter().map(|v| v.to_string()));
        if let Some(s) = &lat.zsex_mean {
            row.extend(s[i * d..(i + 1) * d].iter().map(|v| v.to_string()));
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("latent export", e))
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Data(format!("csv: {e}"))
}

pub fn write_training_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record([
        "epoch",
        "vae_loss",
        "reconstruction_term",
        "kl_agnostic",
        "kl_specific",
        "discriminative_loss",
        "regressor_term",
        "classifier_term",
        "independence_loss",
        "total",
        "beta1",
        "beta2",
    ])
    .map_err(csv_err)?;
    for e in log {
        let l = &e.loss;
        let mut row = vec![e.epoch.to_string()];
        row.extend(
            [
                l.vae_loss,
                l.reconstruction_term,
                l.kl_agnostic,
                l.kl_specific,
                l.discriminative_loss,
                l.regressor_term,
                l.classifier_term,
                l.independence_loss,
                l.total,
                l.beta1,
                l.beta2,
            ]
            .iter()
            .map(|v| v.to_string()),
        );
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
