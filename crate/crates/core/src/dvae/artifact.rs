use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::train::{write_training_log, LOG_FILE};
use super::{ArchConfig, DecoderVariance, Dvae, Mode, TrainConfig, TrainedModel};
use crate::error::{Error, Result};
use crate::nn::Module;
use crate::signal::ChannelStat;
use crate::tensorfile::{read_tensors, write_tensors};

pub const MODEL_FILE: &str = "model.json";
pub const PARAMS_FILE: &str = "params.f32";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ModelManifest {
    format_version: u32,
    mode: Mode,
    arch: ArchConfig,
    decoder_variance: DecoderVariance,
    beta1: f64,
    beta2: f64,
    train_config: TrainConfig,
    channel_names: Vec<String>,
    channel_stats: Vec<ChannelStat>,
    target_mean: f64,
    target_std: f64,
}

/// Writes `model.json`, `params.f32` and the training log into `dir`.
pub fn save_model(dir: &Path, trained: &TrainedModel) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let m = &trained.model;
    let manifest = ModelManifest {
        format_version: FORMAT_VERSION,
        mode: m.mode,
        arch: m.arch.clone(),
        decoder_variance: m.variance(),
        beta1: trained.config.beta1,
        beta2: trained.config.beta2,
        train_config: trained.config.clone(),
        channel_names: trained.channel_names.clone(),
        channel_stats: trained.channel_stats.clone(),
        target_mean: trained.target_mean,
        target_std: trained.target_std,
    };
    let path = dir.join(MODEL_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    let tensors: Vec<_> = m.params().into_iter().chain(m.buffers()).collect();
    write_tensors(
        &dir.join(PARAMS_FILE),
        tensors.iter().map(|(n, t)| (n.as_str(), &t.shape[..], &t.data[..])),
    )?;
    write_training_log(&dir.join(LOG_FILE), &trained.log)
}

/// Reads a model saved by [`save_model`]. Parameters come back at `f32`
/// precision; the training log is not reloaded.
pub fn load_model(dir: &Path) -> Result<TrainedModel> {
    let path = dir.join(MODEL_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: ModelManifest = serde_json::from_str(&text)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Data(format!(
            "unsupported model format version {}",
            manifest.format_version
        )));
    }
    let mut model = Dvae::new(
        manifest.arch,
        manifest.mode,
        manifest.decoder_variance,
        &mut ChaCha8Rng::seed_from_u64(0),
    )?;
    let mut stored: HashMap<String, _> = read_tensors(&dir.join(PARAMS_FILE))?
        .into_iter()
        .map(|t| (t.name.clone(), t))
        .collect();
    let mut fill = |name: String, slot: &mut crate::nn::Tensor| -> Result<()> {
        let t = stored
            .remove(&name)
            .ok_or_else(|| Error::Data(format!("tensor {name} missing from {PARAMS_FILE}")))?;
        if t.shape != slot.shape {
            return Err(Error::Shape(format!(
                "tensor {name}: stored shape {:?}, expected {:?}",
                t.shape, slot.shape
            )));
        }
        slot.data = t.data;
        Ok(())
    };
    for (name, slot) in model.params_mut() {
        fill(name, slot)?;
    }
    for (name, slot) in model.buffers_mut() {
        fill(name, slot)?;
    }
    if let Some(name) = stored.keys().next() {
        return Err(Error::Data(format!("unexpected tensor {name} in {PARAMS_FILE}")));
    }
    let buffers = model.buffers();
    let bad_var = buffers
        .iter()
        .find(|(n, t)| n.ends_with("running_var") && t.data.iter().any(|v| !(v.is_finite() && *v >= 0.0)));
    if let Some(bad) = bad_var {
        return Err(Error::Data(format!("{} holds a negative or non-finite variance", bad.0)));
    }
    Ok(TrainedModel {
        model,
        config: manifest.train_config,
        channel_names: manifest.channel_names,
        channel_stats: manifest.channel_stats,
        target_mean: manifest.target_mean,
        target_std: manifest.target_std,
        log: Vec::new(),
    })
}
