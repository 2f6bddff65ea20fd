//! Dataset directory: `manifest.json` plus a flat little-endian f32 tensor.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{ChannelStat, Dataset, GaitCycle, RawTrial, SensorSlot, Sex, SubjectEntry, CYCLE_LEN};
use crate::tensorfile::{read_tensors, write_tensors};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CYCLES_FILE: &str = "cycles.f32";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    n_cycles: usize,
    cycle_length: usize,
    n_channels: usize,
    channel_names: Vec<String>,
    subjects: Vec<SubjectEntry>,
    labels: Vec<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    channel_stats: Option<Vec<ChannelStat>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Label {
    cycle_index: usize,
    subject_id: String,
    trial_id: String,
    weight_kg: f64,
    sex: Sex,
}

pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    dataset.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        n_cycles: dataset.len(),
        cycle_length: CYCLE_LEN,
        n_channels: dataset.n_channels,
        channel_names: dataset.channel_names.clone(),
        subjects: dataset.subjects.clone(),
        labels: dataset
            .cycles
            .iter()
            .map(|c| Label {
                cycle_index: c.cycle_index,
                subject_id: c.subject_id.clone(),
                trial_id: c.trial_id.clone(),
                weight_kg: c.weight_kg,
                sex: c.sex,
            })
            .collect(),
        channel_stats: dataset.channel_stats.clone(),
    };
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;

    let mut bytes = Vec::with_capacity(dataset.len() * CYCLE_LEN * dataset.n_channels * 4);
    for c in &dataset.cycles {
        for &v in &c.data {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let path = dir.join(CYCLES_FILE);
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_slice(&text)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Data(format!(
            "unsupported dataset format version {}",
            manifest.format_version
        )));
    }
    if manifest.cycle_length != CYCLE_LEN {
        return Err(Error::Data(format!(
            "cycle length {} differs from {CYCLE_LEN}",
            manifest.cycle_length
        )));
    }
    if manifest.labels.len() != manifest.n_cycles {
        return Err(Error::Data(format!(
            "{} labels for {} cycles",
            manifest.labels.len(),
            manifest.n_cycles
        )));
    }
    let path = dir.join(CYCLES_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let per_cycle = CYCLE_LEN * manifest.n_channels;
    if bytes.len() != manifest.n_cycles * per_cycle * 4 {
        return Err(Error::Data(format!(
            "{CYCLES_FILE} holds {} bytes, expected {}",
            bytes.len(),
            manifest.n_cycles * per_cycle * 4
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    let cycles = manifest
        .labels
        .into_iter()
        .zip(values.chunks_exact(per_cycle.max(1)))
        .map(|(l, data)| GaitCycle {
            data: data.to_vec(),
            subject_id: l.subject_id,
            sex: l.sex,
            weight_kg: l.weight_kg,
            trial_id: l.trial_id,
            cycle_index: l.cycle_index,
        })
        .collect();
    let dataset = Dataset {
        n_channels: manifest.n_channels,
        channel_names: manifest.channel_names,
        cycles,
        subjects: manifest.subjects,
        channel_stats: manifest.channel_stats,
    };
    dataset.validate()?;
    Ok(dataset)
}

pub const RAW_MANIFEST_FILE: &str = "trials.json";
pub const RAW_SAMPLES_FILE: &str = "samples.f32";

#[derive(Debug, Serialize, Deserialize)]
struct RawTrialMeta {
    trial_id: String,
    subject_id: String,
    sex: Sex,
    weight_kg: f64,
    sample_rate_hz: f64,
    n_channels: usize,
    sensor_layout: Vec<SensorSlot>,
}

/// Raw recordings: `trials.json` with per-trial metadata and `samples.f32`
/// holding one `[n_samples × n_channels]` tensor per trial, named by trial id.
pub fn write_raw_trials(dir: &Path, trials: &[RawTrial]) -> Result<()> {
    for t in trials {
        t.validate()?;
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta: Vec<RawTrialMeta> = trials
        .iter()
        .map(|t| RawTrialMeta {
            trial_id: t.trial_id.clone(),
            subject_id: t.subject_id.clone(),
            sex: t.sex,
            weight_kg: t.weight_kg,
            sample_rate_hz: t.sample_rate_hz,
            n_channels: t.n_channels,
            sensor_layout: t.sensor_layout.clone(),
        })
        .collect();
    let path = dir.join(RAW_MANIFEST_FILE);
    fs::write(&path, serde_json::to_vec_pretty(&meta)?).map_err(|e| Error::io(&path, e))?;
    let shapes: Vec<[usize; 2]> = trials.iter().map(|t| [t.n_samples(), t.n_channels]).collect();
    write_tensors(
        &dir.join(RAW_SAMPLES_FILE),
        trials
            .iter()
            .zip(&shapes)
            .map(|(t, s)| (t.trial_id.as_str(), &s[..], &t.samples[..])),
    )
}

pub fn read_raw_trials(dir: &Path) -> Result<Vec<RawTrial>> {
    let path = dir.join(RAW_MANIFEST_FILE);
    let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let meta: Vec<RawTrialMeta> = serde_json::from_slice(&text)?;
    let tensors = read_tensors(&dir.join(RAW_SAMPLES_FILE))?;
    if tensors.len() != meta.len() {
        return Err(Error::Data(format!(
            "{RAW_SAMPLES_FILE} holds {} trials, {RAW_MANIFEST_FILE} lists {}",
            tensors.len(),
            meta.len()
        )));
    }
    meta.into_iter()
        .zip(tensors)
        .map(|(m, t)| {
            if t.name != m.trial_id || t.shape.len() != 2 || t.shape[1] != m.n_channels {
                return Err(Error::Data(format!("samples for trial {} do not match its metadata", m.trial_id)));
            }
            let trial = RawTrial {
                samples: t.data,
                n_channels: m.n_channels,
                sample_rate_hz: m.sample_rate_hz,
                sensor_layout: m.sensor_layout,
                subject_id: m.subject_id,
                sex: m.sex,
                weight_kg: m.weight_kg,
                trial_id: m.trial_id,
            };
            trial.validate()?;
            Ok(trial)
        })
        .collect()
}
