//! Raw IMU trials to fixed-length labelled gait cycles.

mod container;
mod dataset;
mod events;
pub mod filter;
mod segment;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use container::{
    read_dataset, read_raw_trials, write_dataset, write_raw_trials, CYCLES_FILE, MANIFEST_FILE,
    RAW_MANIFEST_FILE, RAW_SAMPLES_FILE,
};
pub use dataset::{
    build_dataset, denormalize, normalize, renormalize, ChannelStat, Dataset, GaitCycle, PipelineParams,
    SubjectEntry,
};
pub use events::{detect_gait_events, DetectionParams, GaitEvents, StrideEvents};
pub use filter::{butterworth_lowpass, Biquad, ZeroPhaseLowpass};
pub use segment::{resample_cycle, segment_cycles, RawCycle, CYCLE_LEN};

/// Channels per IMU: three accelerometer axes then three gyroscope axes.
pub const CHANNELS_PER_SENSOR: usize = 6;
/// Offset of the sagittal-plane angular velocity within a sensor's block.
pub const SAGITTAL_GYRO_OFFSET: usize = 5;
pub const RIGHT_SHANK: &str = "right_shank";
pub const LEFT_SHANK: &str = "left_shank";

/// The twelve body-worn sensors, shanks first so reduced layouts keep the
/// event-detection channels.
pub const SENSOR_NAMES: [&str; 12] = [
    RIGHT_SHANK,
    LEFT_SHANK,
    "right_thigh",
    "left_thigh",
    "right_foot",
    "l5s1",
    "t6",
    "sternum",
    "right_upper_arm",
    "left_upper_arm",
    "right_forearm",
    "left_forearm",
];

const AXIS_NAMES: [&str; CHANNELS_PER_SENSOR] =
    ["acc_x", "acc_y", "acc_z", "gyr_x", "gyr_y", "gyr_z"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Male,
    Female,
}

impl Sex {
    /// Class index used by the sex classifier (male 0, female 1).
    pub fn class_index(self) -> usize {
        match self {
            Sex::Male => 0,
            Sex::Female => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Sex::Male => "male",
            Sex::Female => "female",
        }
    }
}

impl std::fmt::Display for Sex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Sex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "male" | "m" => Ok(Sex::Male),
            "female" | "f" => Ok(Sex::Female),
            other => Err(Error::Data(format!("unknown sex label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSlot {
    pub name: String,
    pub offset: usize,
}

/// Sensor layout covering `n_channels` channels (must be a multiple of six).
pub fn default_layout(n_channels: usize) -> Result<Vec<SensorSlot>> {
    if n_channels == 0 || n_channels % CHANNELS_PER_SENSOR != 0 {
        return Err(Error::Parameter(format!(
            "channel count {n_channels} is not a positive multiple of {CHANNELS_PER_SENSOR}"
        )));
    }
    let n_sensors = n_channels / CHANNELS_PER_SENSOR;
    if n_sensors > SENSOR_NAMES.len() {
        return Err(Error::Parameter(format!(
            "at most {} sensors supported, got {n_sensors}",
            SENSOR_NAMES.len()
        )));
    }
    Ok(SENSOR_NAMES[..n_sensors]
        .iter()
        .enumerate()
        .map(|(i, name)| SensorSlot {
            name: name.to_string(),
            offset: i * CHANNELS_PER_SENSOR,
        })
        .collect())
}

pub fn channel_names(layout: &[SensorSlot]) -> Vec<String> {
    layout
        .iter()
        .flat_map(|s| AXIS_NAMES.iter().map(move |a| format!("{}.{a}", s.name)))
        .collect()
}

/// One continuous recording: time-major `[n_samples × n_channels]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTrial {
    pub samples: Vec<f64>,
    pub n_channels: usize,
    pub sample_rate_hz: f64,
    pub sensor_layout: Vec<SensorSlot>,
    pub subject_id: String,
    pub sex: Sex,
    pub weight_kg: f64,
    pub trial_id: String,
}

impl RawTrial {
    pub fn n_samples(&self) -> usize {
        if self.n_channels == 0 {
            0
        } else {
            self.samples.len() / self.n_channels
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_channels == 0 || self.n_channels % CHANNELS_PER_SENSOR != 0 {
            return Err(Error::Data(format!(
                "trial {}: channel count {} not a multiple of {CHANNELS_PER_SENSOR}",
                self.trial_id, self.n_channels
            )));
        }
        if self.samples.len() % self.n_channels != 0 {
            return Err(Error::Shape(format!(
                "trial {}: {} values do not fill {} channels",
                self.trial_id,
                self.samples.len(),
                self.n_channels
            )));
        }
        if self.n_samples() < 2 {
            return Err(Error::Length(format!(
                "trial {} has fewer than 2 samples",
                self.trial_id
            )));
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(Error::Data(format!(
                "trial {}: sample rate {} must be positive",
                self.trial_id, self.sample_rate_hz
            )));
        }
        if !(self.weight_kg.is_finite() && self.weight_kg >= 0.0) {
            return Err(Error::Data(format!(
                "trial {}: weight {} must be non-negative",
                self.trial_id, self.weight_kg
            )));
        }
        if let Some(i) = self.samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "trial {}: non-finite value at sample {}, channel {}",
                self.trial_id,
                i / self.n_channels,
                i % self.n_channels
            )));
        }
        Ok(())
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.samples
            .iter()
            .skip(c)
            .step_by(self.n_channels)
            .copied()
            .collect()
    }

    /// Column index of the sagittal angular velocity of the named sensor.
    pub fn sagittal_gyro_channel(&self, sensor: &str) -> Result<usize> {
        self.sensor_layout
            .iter()
            .find(|s| s.name == sensor)
            .map(|s| s.offset + SAGITTAL_GYRO_OFFSET)
            .filter(|&c| c < self.n_channels)
            .ok_or_else(|| {
                Error::Data(format!(
                    "trial {} has no sensor named {sensor}",
                    self.trial_id
                ))
            })
    }
}
