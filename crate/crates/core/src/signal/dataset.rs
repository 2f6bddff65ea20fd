use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{
    channel_names, detect_gait_events, resample_cycle, segment_cycles, DetectionParams, RawTrial,
    Sex, ZeroPhaseLowpass, CYCLE_LEN, LEFT_SHANK, RIGHT_SHANK,
};

/// Channels whose spread falls below this are centred but not scaled.
const DEGENERATE_STD: f64 = 1e-8;

/// One resampled stride, `[CYCLE_LEN × n_channels]` time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GaitCycle {
    pub data: Vec<f64>,
    pub subject_id: String,
    pub sex: Sex,
    pub weight_kg: f64,
    pub trial_id: String,
    pub cycle_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub id: String,
    pub sex: Sex,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStat {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n_channels: usize,
    pub channel_names: Vec<String>,
    pub cycles: Vec<GaitCycle>,
    pub subjects: Vec<SubjectEntry>,
    pub channel_stats: Option<Vec<ChannelStat>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.cycles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cycles.is_empty()
    }

    pub fn subject_sex(&self, id: &str) -> Option<Sex> {
        self.subjects.iter().find(|s| s.id == id).map(|s| s.sex)
    }

    /// Checks roster consistency, tensor shapes and channel statistics.
    pub fn validate(&self) -> Result<()> {
        let expect = CYCLE_LEN * self.n_channels;
        for (i, c) in self.cycles.iter().enumerate() {
            if c.data.len() != expect {
                return Err(Error::Shape(format!(
                    "cycle {i} holds {} values, expected {expect}",
                    c.data.len()
                )));
            }
            match self.subject_sex(&c.subject_id) {
                None => {
                    return Err(Error::Data(format!(
                        "cycle {i}: subject {} missing from roster",
                        c.subject_id
                    )))
                }
                Some(s) if s != c.sex => {
                    return Err(Error::Data(format!(
                        "cycle {i}: sex {} disagrees with roster for {}",
                        c.sex, c.subject_id
                    )))
                }
                _ => {}
            }
        }
        if let Some(stats) = &self.channel_stats {
            if stats.len() != self.n_channels {
                return Err(Error::Shape(format!(
                    "{} channel stats for {} channels",
                    stats.len(),
                    self.n_channels
                )));
            }
            if stats.iter().any(|s| !(s.std > 0.0) || !s.mean.is_finite()) {
                return Err(Error::Data("channel std must be positive".into()));
            }
        }
        Ok(())
    }

    /// New dataset holding the cycles selected by `keep`, with a pruned roster.
    pub fn filter(&self, mut keep: impl FnMut(&GaitCycle) -> bool) -> Dataset {
        let cycles: Vec<GaitCycle> = self.cycles.iter().filter(|c| keep(c)).cloned().collect();
        let subjects = self
            .subjects
            .iter()
            .filter(|s| cycles.iter().any(|c| c.subject_id == s.id))
            .cloned()
            .collect();
        Dataset {
            n_channels: self.n_channels,
            channel_names: self.channel_names.clone(),
            cycles,
            subjects,
            channel_stats: self.channel_stats.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineParams {
    pub cutoff_hz: f64,
    pub detection: DetectionParams,
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams {
            cutoff_hz: 6.0,
            detection: DetectionParams::default(),
        }
    }
}

/// Filter, detect strides, segment and resample every trial.
///
/// The filtered copy of each trial feeds both event detection and the
/// cycle tensors.
pub fn build_dataset(trials: &[RawTrial], params: &PipelineParams) -> Result<Dataset> {
    let first = trials
        .first()
        .ok_or_else(|| Error::Parameter("no trials to process".into()))?;
    let n_channels = first.n_channels;
    let names = channel_names(&first.sensor_layout);
    let mut cycles = Vec::new();
    let mut subjects: Vec<SubjectEntry> = Vec::new();

    for trial in trials {
        trial.validate()?;
        if trial.n_channels != n_channels || trial.sensor_layout != first.sensor_layout {
            return Err(Error::Data(format!(
                "trial {} uses a different sensor layout",
                trial.trial_id
            )));
        }
        match subjects.iter().find(|s| s.id == trial.subject_id) {
            Some(s) if s.sex != trial.sex => {
                return Err(Error::Data(format!(
                    "subject {} labelled both {} and {}",
                    s.id, s.sex, trial.sex
                )))
            }
            Some(_) => {}
            None => subjects.push(SubjectEntry {
                id: trial.subject_id.clone(),
                sex: trial.sex,
            }),
        }

        let mut filtered = trial.clone();
        ZeroPhaseLowpass::new(trial.sample_rate_hz, params.cutoff_hz)?
            .apply_columns(&mut filtered.samples, n_channels)?;
        let right = filtered.channel(filtered.sagittal_gyro_channel(RIGHT_SHANK)?);
        let left = filtered.channel(filtered.sagittal_gyro_channel(LEFT_SHANK)?);
        let events = detect_gait_events(&right, &left, trial.sample_rate_hz, &params.detection)?;
        if events.cycles.is_empty() {
            log::warn!("trial {} yielded no complete gait cycles", trial.trial_id);
        }
        for (k, raw) in segment_cycles(&filtered, &events)?.into_iter().enumerate() {
            cycles.push(GaitCycle {
                data: resample_cycle(&raw.data, raw.n_rows, n_channels)?,
                subject_id: trial.subject_id.clone(),
                sex: trial.sex,
                weight_kg: trial.weight_kg,
                trial_id: trial.trial_id.clone(),
                cycle_index: k,
            });
        }
    }
    Ok(Dataset {
        n_channels,
        channel_names: names,
        cycles,
        subjects,
        channel_stats: None,
    })
}

/// Per-channel z-scoring.
///
/// Without `stats` the statistics are computed from this dataset (all
/// cycles, all time steps); with `stats` they are applied as given.
pub fn normalize(dataset: &Dataset, stats: Option<&[ChannelStat]>) -> Result<Dataset> {
    let c = dataset.n_channels;
    let stats: Vec<ChannelStat> = match stats {
        Some(s) => {
            if s.len() != c {
                return Err(Error::Shape(format!("{} channel stats for {c} channels", s.len())));
            }
            s.to_vec()
        }
        None => compute_stats(dataset)?,
    };
    let mut out = dataset.clone();
    for cycle in &mut out.cycles {
        for row in cycle.data.chunks_exact_mut(c) {
            for (v, s) in row.iter_mut().zip(&stats) {
                *v = (*v - s.mean) / s.std;
            }
        }
    }
    out.channel_stats = Some(stats);
    Ok(out)
}

/// `dataset` normalised with `stats`, first undoing any different
/// statistics it already carries. Channel names must match `names`.
pub fn renormalize(dataset: &Dataset, names: &[String], stats: &[ChannelStat]) -> Result<Dataset> {
    if dataset.channel_names != names {
        return Err(Error::Data("dataset channels differ from the model's".into()));
    }
    match &dataset.channel_stats {
        Some(s) if s == stats => Ok(dataset.clone()),
        Some(s) => normalize(&denormalize(dataset, s)?, Some(stats)),
        None => normalize(dataset, Some(stats)),
    }
}

/// Inverse of applying `stats`.
pub fn denormalize(dataset: &Dataset, stats: &[ChannelStat]) -> Result<Dataset> {
    let c = dataset.n_channels;
    if stats.len() != c {
        return Err(Error::Shape(format!("{} channel stats for {c} channels", stats.len())));
    }
    let mut out = dataset.clone();
    for cycle in &mut out.cycles {
        for row in cycle.data.chunks_exact_mut(c) {
            for (v, s) in row.iter_mut().zip(stats) {
                *v = *v * s.std + s.mean;
            }
        }
    }
    out.channel_stats = None;
    Ok(out)
}

fn compute_stats(dataset: &Dataset) -> Result<Vec<ChannelStat>> {
    if dataset.is_empty() {
        return Err(Error::Parameter(
            "cannot compute channel statistics of an empty dataset".into(),
        ));
    }
    let c = dataset.n_channels;
    let count = (dataset.len() * CYCLE_LEN) as f64;
    let mut mean = vec![0.0; c];
    for cycle in &dataset.cycles {
        for row in cycle.data.chunks_exact(c) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![0.0; c];
    for cycle in &dataset.cycles {
        for row in cycle.data.chunks_exact(c) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
    }
    Ok(mean
        .into_iter()
        .zip(var)
        .map(|(mean, v)| {
            let std = (v / count).sqrt();
            ChannelStat {
                mean,
                std: if std < DEGENERATE_STD { 1.0 } else { std },
            }
        })
        .collect())
}
