//! Seeded synthetic gait recordings with known stride events.
//!
//! Every channel except the two shank sagittal gyros is a three-harmonic
//! template of stride phase. The shank gyros are built from keypoints
//! (heel strike, mid-stance, toe-off, mid-swing) joined by half-cosine
//! segments, so each keypoint is an exact extremum and the embedded events
//! are the sample indices of those keypoints.
//!
//! Random draws come from ChaCha8 streams keyed by the experiment seed and
//! a stream id: `kind << 56 | sex << 55 | subject << 32 | trial`. Subjects
//! are numbered within their sex, so adding subjects of one sex leaves every
//! existing subject's draws untouched. Cycle-level jitter is drawn in cycle
//! order from the trial's stream; noise uses a separate per-trial stream.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{
    build_dataset, default_layout, Dataset, GaitEvents, PipelineParams, RawTrial, Sex,
    StrideEvents, CHANNELS_PER_SENSOR, SAGITTAL_GYRO_OFFSET,
};

const TEMPLATE_SEED: u64 = 0x6a17_c0de_5eed_0001;
const STREAM_SUBJECT: u64 = 1;
const STREAM_TRIAL: u64 = 2;
const STREAM_NOISE: u64 = 3;

/// Stride phase of each keypoint; left-leg keypoints are the right-leg ones
/// shifted by half a stride.
const PHASE_MID_STANCE: f64 = 0.3;
const PHASE_TOE_OFF: f64 = 0.6;
const PHASE_MID_SWING: f64 = 0.8;
/// Half-width of the symmetric neighbourhood around each extremum, as a
/// fraction of the stride. Symmetry keeps the extremum in place after
/// zero-phase low-pass filtering.
const GUARD_PHASE: f64 = 0.05;

#[derive(Debug, Clone, Copy)]
enum Keypoint {
    HeelStrike,
    MidStance,
    ToeOff,
    MidSwing,
}

impl Keypoint {
    /// Shank sagittal angular velocity at the keypoint and at its guard
    /// points, rad/s.
    fn values(self) -> (f64, f64) {
        match self {
            Keypoint::HeelStrike => (-1.0, -0.6),
            Keypoint::MidStance => (0.3, 0.0),
            Keypoint::ToeOff => (-1.5, -1.0),
            Keypoint::MidSwing => (3.0, 2.2),
        }
    }
}

fn guard_width(period: usize) -> usize {
    ((GUARD_PHASE * period as f64).round() as usize).max(2)
}

fn push_extremum(keys: &mut Vec<(usize, f64)>, t: usize, h: usize, kind: Keypoint) {
    let (peak, guard) = kind.values();
    if t >= h {
        keys.push((t - h, guard));
    }
    keys.push((t, peak));
    keys.push((t + h, guard));
}

/// Where each trial starts and stops, as a fraction of the padding strides.
const LEAD_IN_PHASE: f64 = 0.35;
const LEAD_OUT_PHASE: f64 = 0.55;
const MIN_PERIOD_SAMPLES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n_subjects_male: usize,
    pub n_subjects_female: usize,
    pub trials_per_condition: usize,
    pub weights_kg: Vec<f64>,
    pub cycles_per_trial: usize,
    pub sample_rate_hz: f64,
    pub n_channels: usize,
    /// Stride frequency of a male subject without random effects, Hz.
    pub base_cadence_hz: f64,
    /// Relative amplitude increase of load-bearing channels per kg.
    pub weight_amplitude_gain: f64,
    /// Added to the female stride frequency, Hz.
    pub sex_cadence_delta_hz: f64,
    /// Added to female samples on `sex_offset_channels`.
    pub sex_channel_offset: f64,
    /// Relative amplitude change of female load-bearing channels.
    pub sex_amplitude_delta: f64,
    /// Defaults to every third channel, skipping the event gyros.
    pub sex_offset_channels: Option<Vec<usize>>,
    /// Defaults to every even channel, skipping the event gyros.
    pub load_channels: Option<Vec<usize>>,
    pub subject_variability_std: f64,
    /// Relative stride-to-stride period jitter.
    pub cycle_jitter_std: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_subjects_male: 4,
            n_subjects_female: 4,
            trials_per_condition: 1,
            weights_kg: vec![4.5, 13.6, 22.7],
            cycles_per_trial: 5,
            sample_rate_hz: 80.0,
            n_channels: 72,
            base_cadence_hz: 0.9,
            weight_amplitude_gain: 0.02,
            sex_cadence_delta_hz: 0.1,
            sex_channel_offset: 0.3,
            sex_amplitude_delta: 0.0,
            sex_offset_channels: None,
            load_channels: None,
            subject_variability_std: 0.05,
            cycle_jitter_std: 0.02,
            noise_std: 0.02,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    /// All effects, variability and noise switched off.
    pub fn noiseless(self) -> Self {
        GeneratorConfig {
            weight_amplitude_gain: 0.0,
            sex_cadence_delta_hz: 0.0,
            sex_channel_offset: 0.0,
            sex_amplitude_delta: 0.0,
            subject_variability_std: 0.0,
            cycle_jitter_std: 0.0,
            noise_std: 0.0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_subjects_male + self.n_subjects_female == 0 {
            return Err(Error::Parameter("at least one subject required".into()));
        }
        if self.weights_kg.is_empty() {
            return Err(Error::Parameter("at least one load weight required".into()));
        }
        if self.weights_kg.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Parameter("weights must be non-negative".into()));
        }
        if self.trials_per_condition == 0 || self.cycles_per_trial == 0 {
            return Err(Error::Parameter(
                "trials_per_condition and cycles_per_trial must be positive".into(),
            ));
        }
        for (name, v) in [
            ("noise_std", self.noise_std),
            ("subject_variability_std", self.subject_variability_std),
            ("cycle_jitter_std", self.cycle_jitter_std),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Parameter(format!("{name} must be non-negative")));
            }
        }
        if !(self.sample_rate_hz > 0.0 && self.base_cadence_hz > 0.0) {
            return Err(Error::Parameter("rates must be positive".into()));
        }
        if self.n_channels < 2 * CHANNELS_PER_SENSOR {
            return Err(Error::Parameter(
                "at least two sensors (both shanks) are required".into(),
            ));
        }
        default_layout(self.n_channels)?;
        for list in [&self.sex_offset_channels, &self.load_channels].into_iter().flatten() {
            if let Some(c) = list.iter().find(|&&c| c >= self.n_channels) {
                return Err(Error::Parameter(format!("channel {c} out of range")));
            }
        }
        Ok(())
    }

    pub fn event_channels(&self) -> [usize; 2] {
        [
            SAGITTAL_GYRO_OFFSET,
            CHANNELS_PER_SENSOR + SAGITTAL_GYRO_OFFSET,
        ]
    }

    pub fn resolved_load_channels(&self) -> Vec<usize> {
        self.load_channels.clone().unwrap_or_else(|| {
            let ev = self.event_channels();
            (0..self.n_channels)
                .filter(|c| c % 2 == 0 && !ev.contains(c))
                .collect()
        })
    }

    pub fn resolved_sex_offset_channels(&self) -> Vec<usize> {
        self.sex_offset_channels.clone().unwrap_or_else(|| {
            let ev = self.event_channels();
            (0..self.n_channels)
                .filter(|c| c % 3 == 0 && !ev.contains(c))
                .collect()
        })
    }

    pub fn cadence_hz(&self, sex: Sex) -> f64 {
        match sex {
            Sex::Male => self.base_cadence_hz,
            Sex::Female => self.base_cadence_hz + self.sex_cadence_delta_hz,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleParams {
    pub cadence_hz: f64,
    pub period_samples: usize,
    /// Multiplier applied to load-bearing channels in this cycle.
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialTruth {
    pub trial_id: String,
    pub subject_id: String,
    pub events: GaitEvents,
    pub cycles: Vec<CycleParams>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub trials: Vec<TrialTruth>,
}

impl GroundTruth {
    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

/// Three-harmonic template of one channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarmonicTemplate {
    pub mean: f64,
    pub amplitude: [f64; 3],
    pub phase: [f64; 3],
}

impl HarmonicTemplate {
    pub fn eval(&self, phase: f64) -> f64 {
        let tau = std::f64::consts::TAU;
        self.mean
            + (0..3)
                .map(|h| self.amplitude[h] * (tau * (h + 1) as f64 * phase + self.phase[h]).sin())
                .sum::<f64>()
    }
}

/// Fixed per-channel templates (independent of the experiment seed).
pub fn channel_templates(n_channels: usize) -> Vec<HarmonicTemplate> {
    let mut rng = ChaCha8Rng::seed_from_u64(TEMPLATE_SEED);
    (0..n_channels)
        .map(|_| HarmonicTemplate {
            mean: rng.random_range(0.5..2.0),
            amplitude: [
                rng.random_range(0.5..1.5),
                rng.random_range(0.2..0.6),
                rng.random_range(0.05..0.3),
            ],
            phase: [
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.0..std::f64::consts::TAU),
            ],
        })
        .collect()
}

fn stream(seed: u64, kind: u64, sex: Sex, subject: usize, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let id = (kind << 56)
        | ((sex.class_index() as u64) << 55)
        | ((subject as u64 & 0x7f_ffff) << 32)
        | (trial as u64 & 0xffff_ffff);
    rng.set_stream(id);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

struct SubjectEffects {
    cadence_shift_hz: f64,
    amplitude: Vec<f64>,
    offset: Vec<f64>,
}

impl SubjectEffects {
    fn draw(config: &GeneratorConfig, sex: Sex, index: usize) -> Self {
        let mut rng = stream(config.seed, STREAM_SUBJECT, sex, index, 0);
        let s = config.subject_variability_std;
        let cadence_shift_hz = 0.1 * s * normal(&mut rng);
        let amplitude = (0..config.n_channels).map(|_| 1.0 + s * normal(&mut rng)).collect();
        let offset = (0..config.n_channels).map(|_| s * normal(&mut rng)).collect();
        SubjectEffects {
            cadence_shift_hz,
            amplitude,
            offset,
        }
    }
}

/// Value of a half-cosine interpolant through sorted `(time, value)` keypoints.
fn keypoint_wave(keys: &[(f64, f64)], t: f64) -> f64 {
    let i = keys.partition_point(|&(kt, _)| kt <= t);
    if i == 0 {
        return keys[0].1;
    }
    if i == keys.len() {
        return keys[keys.len() - 1].1;
    }
    let (t0, v0) = keys[i - 1];
    let (t1, v1) = keys[i];
    let u = (t - t0) / (t1 - t0);
    v0 + (v1 - v0) * 0.5 * (1.0 - (std::f64::consts::PI * u).cos())
}

/// Produces raw trials and the events embedded in them.
pub fn generate_dataset(config: &GeneratorConfig) -> Result<(Vec<RawTrial>, GroundTruth)> {
    config.validate()?;
    let layout = default_layout(config.n_channels)?;
    let templates = channel_templates(config.n_channels);
    let load = config.resolved_load_channels();
    let sex_offset = config.resolved_sex_offset_channels();
    let [right_gyro, left_gyro] = config.event_channels();
    let c = config.n_channels;

    let roster: Vec<(Sex, usize)> = (0..config.n_subjects_male)
        .map(|i| (Sex::Male, i))
        .chain((0..config.n_subjects_female).map(|i| (Sex::Female, i)))
        .collect();

    let mut trials = Vec::new();
    let mut truth = GroundTruth::default();
    for &(sex, index) in &roster {
        let subject_id = subject_name(sex, index);
        let effects = SubjectEffects::draw(config, sex, index);
        let cadence = config.cadence_hz(sex) + effects.cadence_shift_hz;
        let sex_amp = match sex {
            Sex::Male => 1.0,
            Sex::Female => 1.0 + config.sex_amplitude_delta,
        };
        for (w_idx, &weight) in config.weights_kg.iter().enumerate() {
            for rep in 0..config.trials_per_condition {
                let trial_index = w_idx * config.trials_per_condition + rep;
                let trial_id = format!("{subject_id}-w{w_idx}-r{rep}");
                let mut rng = stream(config.seed, STREAM_TRIAL, sex, index, trial_index);
                let mut noise_rng = stream(config.seed, STREAM_NOISE, sex, index, trial_index);

                // Strides -1 and cycles_per_trial are partial padding strides.
                let n_strides = config.cycles_per_trial + 2;
                let amplitude = (1.0 + config.weight_amplitude_gain * weight) * sex_amp;
                let mut params = Vec::with_capacity(n_strides);
                for _ in 0..n_strides {
                    let jitter = 1.0 + config.cycle_jitter_std * normal(&mut rng);
                    let cadence_hz = cadence * jitter;
                    if !(cadence_hz > 0.0) {
                        return Err(Error::Parameter(format!(
                            "non-positive cadence drawn for {trial_id}"
                        )));
                    }
                    let period = (config.sample_rate_hz / cadence_hz).round() as usize;
                    if period < MIN_PERIOD_SAMPLES {
                        return Err(Error::Parameter(format!(
                            "stride of {period} samples is too short"
                        )));
                    }
                    params.push(CycleParams {
                        cadence_hz,
                        period_samples: period,
                        amplitude,
                    });
                }
                let mut starts = Vec::with_capacity(n_strides + 1);
                let mut acc = 0usize;
                for p in &params {
                    starts.push(acc);
                    acc += p.period_samples;
                }
                starts.push(acc);
                let t0 = (LEAD_IN_PHASE * params[0].period_samples as f64).round() as usize;
                let last = n_strides - 1;
                let t_end =
                    starts[last] + (LEAD_OUT_PHASE * params[last].period_samples as f64).round() as usize;
                let n_samples = t_end - t0;

                let at = |k: usize, phase: f64| -> usize {
                    starts[k] + (phase * params[k].period_samples as f64).round() as usize
                };
                let mut right_keys = Vec::new();
                let mut left_keys = Vec::new();
                for k in 0..n_strides {
                    let h = guard_width(params[k].period_samples);
                    let ext = |keys: &mut Vec<(usize, f64)>, phase: f64, kind: Keypoint| {
                        push_extremum(keys, at(k, phase), h, kind)
                    };
                    ext(&mut right_keys, 0.0, Keypoint::HeelStrike);
                    ext(&mut right_keys, PHASE_MID_STANCE, Keypoint::MidStance);
                    ext(&mut right_keys, PHASE_TOE_OFF, Keypoint::ToeOff);
                    ext(&mut right_keys, PHASE_MID_SWING, Keypoint::MidSwing);
                    ext(&mut left_keys, PHASE_TOE_OFF - 0.5, Keypoint::ToeOff);
                    ext(&mut left_keys, PHASE_MID_SWING - 0.5, Keypoint::MidSwing);
                    ext(&mut left_keys, 0.5, Keypoint::HeelStrike);
                    ext(&mut left_keys, PHASE_MID_STANCE + 0.5, Keypoint::MidStance);
                }
                let h = guard_width(params[n_strides - 1].period_samples);
                push_extremum(&mut right_keys, starts[n_strides], h, Keypoint::HeelStrike);
                let right_keys: Vec<(f64, f64)> =
                    right_keys.into_iter().map(|(t, v)| (t as f64, v)).collect();
                let left_keys: Vec<(f64, f64)> =
                    left_keys.into_iter().map(|(t, v)| (t as f64, v)).collect();

                let events = GaitEvents {
                    cycles: (1..=config.cycles_per_trial)
                        .map(|k| StrideEvents {
                            rhs: at(k, 0.0) - t0,
                            lto: at(k, PHASE_TOE_OFF - 0.5) - t0,
                            lhs: at(k, 0.5) - t0,
                            rto: at(k, PHASE_TOE_OFF) - t0,
                            next_rhs: at(k + 1, 0.0) - t0,
                        })
                        .collect(),
                };

                let mut samples = vec![0.0; n_samples * c];
                let mut stride = 0usize;
                for i in 0..n_samples {
                    let t = t0 + i;
                    while t >= starts[stride + 1] {
                        stride += 1;
                    }
                    let phase = (t - starts[stride]) as f64 / params[stride].period_samples as f64;
                    let row = &mut samples[i * c..(i + 1) * c];
                    for (ch, v) in row.iter_mut().enumerate() {
                        *v = if ch == right_gyro {
                            effects.amplitude[ch] * keypoint_wave(&right_keys, t as f64)
                        } else if ch == left_gyro {
                            effects.amplitude[ch] * keypoint_wave(&left_keys, t as f64)
                        } else {
                            let mut x = templates[ch].eval(phase) * effects.amplitude[ch];
                            if load.contains(&ch) {
                                x *= params[stride].amplitude;
                            }
                            x += effects.offset[ch];
                            if sex == Sex::Female && sex_offset.contains(&ch) {
                                x += config.sex_channel_offset;
                            }
                            x
                        };
                    }
                }
                if config.noise_std > 0.0 {
                    for v in &mut samples {
                        *v += config.noise_std * normal(&mut noise_rng);
                    }
                }

                trials.push(RawTrial {
                    samples,
                    n_channels: c,
                    sample_rate_hz: config.sample_rate_hz,
                    sensor_layout: layout.clone(),
                    subject_id: subject_id.clone(),
                    sex,
                    weight_kg: weight,
                    trial_id: trial_id.clone(),
                });
                truth.trials.push(TrialTruth {
                    trial_id,
                    subject_id: subject_id.clone(),
                    events,
                    cycles: params[1..=config.cycles_per_trial].to_vec(),
                });
            }
        }
    }
    Ok((trials, truth))
}

/// Generates raw trials and runs them through the preprocessing pipeline.
pub fn generate_balanced_splits(config: &GeneratorConfig) -> Result<(Dataset, GroundTruth)> {
    let (trials, truth) = generate_dataset(config)?;
    let dataset = build_dataset(&trials, &PipelineParams::default())?;
    Ok((dataset, truth))
}

pub fn subject_name(sex: Sex, index: usize) -> String {
    match sex {
        Sex::Male => format!("M{:02}", index + 1),
        Sex::Female => format!("F{:02}", index + 1),
    }
}
