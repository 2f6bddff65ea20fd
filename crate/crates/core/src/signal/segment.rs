use crate::error::{Error, Result};

use super::{GaitEvents, RawTrial};

/// Fixed number of time steps per resampled cycle.
pub const CYCLE_LEN: usize = 128;

/// Rows `[rhs, next_rhs)` of a trial, time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCycle {
    pub data: Vec<f64>,
    pub n_rows: usize,
    pub n_channels: usize,
}

pub fn segment_cycles(trial: &RawTrial, events: &GaitEvents) -> Result<Vec<RawCycle>> {
    events.validate(trial.n_samples())?;
    let c = trial.n_channels;
    Ok(events
        .cycles
        .iter()
        .map(|ev| RawCycle {
            data: trial.samples[ev.rhs * c..ev.next_rhs * c].to_vec(),
            n_rows: ev.next_rhs - ev.rhs,
            n_channels: c,
        })
        .collect())
}

/// Linear interpolation of every channel onto `CYCLE_LEN` equispaced points
/// spanning `[0, n_rows - 1]`. Endpoints are copied exactly.
pub fn resample_cycle(data: &[f64], n_rows: usize, n_channels: usize) -> Result<Vec<f64>> {
    if n_rows < 2 {
        return Err(Error::Length(format!(
            "resampling needs at least 2 rows, got {n_rows}"
        )));
    }
    if data.len() != n_rows * n_channels {
        return Err(Error::Shape(format!(
            "expected {n_rows}x{n_channels} values, got {}",
            data.len()
        )));
    }
    let mut out = vec![0.0; CYCLE_LEN * n_channels];
    let span = (n_rows - 1) as f64;
    let steps = (CYCLE_LEN - 1) as f64;
    for j in 0..CYCLE_LEN {
        let pos = j as f64 * span / steps;
        let i0 = (pos.floor() as usize).min(n_rows - 2);
        let frac = pos - i0 as f64;
        let row = &mut out[j * n_channels..(j + 1) * n_channels];
        let a = &data[i0 * n_channels..(i0 + 1) * n_channels];
        let b = &data[(i0 + 1) * n_channels..(i0 + 2) * n_channels];
        for ((o, &va), &vb) in row.iter_mut().zip(a).zip(b) {
            *o = if frac == 0.0 {
                va
            } else if frac == 1.0 {
                vb
            } else {
                va + frac * (vb - va)
            };
        }
    }
    Ok(out)
}
