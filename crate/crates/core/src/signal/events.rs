//! Gait event detection from shank sagittal angular velocity.
//!
//! Each leg's signal shows a large positive swing peak once per stride.
//! Heel strike is the first local minimum after a swing peak and toe-off
//! the last local minimum before the next one. The right leg frames each
//! stride; the left leg's toe-off and heel strike must fall inside it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionParams {
    /// Minimum swing-peak angular velocity, rad/s.
    pub min_peak_height: f64,
    /// Minimum time between swing peaks of the same leg, seconds.
    pub min_peak_separation_s: f64,
}

impl Default for DetectionParams {
    fn default() -> Self {
        DetectionParams {
            min_peak_height: 0.8,
            min_peak_separation_s: 0.5,
        }
    }
}

/// Sample indices of one complete stride.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrideEvents {
    pub rhs: usize,
    pub lto: usize,
    pub lhs: usize,
    pub rto: usize,
    pub next_rhs: usize,
}

impl StrideEvents {
    pub fn is_ordered(&self) -> bool {
        self.rhs < self.lto && self.lto < self.lhs && self.lhs < self.rto && self.rto < self.next_rhs
    }

    pub fn as_array(&self) -> [usize; 5] {
        [self.rhs, self.lto, self.lhs, self.rto, self.next_rhs]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GaitEvents {
    pub cycles: Vec<StrideEvents>,
}

impl GaitEvents {
    /// Checks ordering within tuples, ordering between tuples and bounds.
    pub fn validate(&self, n_samples: usize) -> Result<()> {
        let mut prev_end = 0;
        for (i, c) in self.cycles.iter().enumerate() {
            if !c.is_ordered() {
                return Err(Error::Data(format!("stride {i} events out of order: {c:?}")));
            }
            if c.next_rhs >= n_samples {
                return Err(Error::Data(format!(
                    "stride {i} ends at {} beyond trial length {n_samples}",
                    c.next_rhs
                )));
            }
            if i > 0 && c.rhs < prev_end {
                return Err(Error::Data(format!("stride {i} overlaps its predecessor")));
            }
            prev_end = c.next_rhs;
        }
        Ok(())
    }
}

pub fn detect_gait_events(
    right: &[f64],
    left: &[f64],
    sample_rate_hz: f64,
    params: &DetectionParams,
) -> Result<GaitEvents> {
    if right.len() != left.len() {
        return Err(Error::Data(format!(
            "shank signals differ in length: {} vs {}",
            right.len(),
            left.len()
        )));
    }
    let min_len = (2.0 * sample_rate_hz).ceil() as usize;
    if right.len() < min_len {
        return Err(Error::Length(format!(
            "event detection needs at least 2 s ({min_len} samples), got {}",
            right.len()
        )));
    }
    let separation = (params.min_peak_separation_s * sample_rate_hz).round() as usize;
    let right_peaks = swing_peaks(right, params.min_peak_height, separation);
    let left_peaks = swing_peaks(left, params.min_peak_height, separation);
    let right_minima = local_minima(right);
    let left_minima = local_minima(left);
    let n = right.len();

    let mut cycles = Vec::new();
    for (i, pair) in right_peaks.windows(2).enumerate() {
        let (p0, p1) = (pair[0], pair[1]);
        let p2 = right_peaks.get(i + 2).copied().unwrap_or(n);
        let Some(rhs) = first_in(&right_minima, p0, p1) else {
            continue;
        };
        let Some(rto) = last_in(&right_minima, rhs, p1) else {
            continue;
        };
        let Some(next_rhs) = first_in(&right_minima, p1, p2) else {
            continue;
        };
        let Some(q) = first_in(&left_peaks, rhs, rto) else {
            continue;
        };
        let Some(lto) = last_in(&left_minima, rhs, q) else {
            continue;
        };
        let Some(lhs) = first_in(&left_minima, q, rto) else {
            continue;
        };
        let stride = StrideEvents {
            rhs,
            lto,
            lhs,
            rto,
            next_rhs,
        };
        if stride.is_ordered() {
            cycles.push(stride);
        }
    }
    Ok(GaitEvents { cycles })
}

/// First element strictly inside `(lo, hi)`.
fn first_in(sorted: &[usize], lo: usize, hi: usize) -> Option<usize> {
    let start = sorted.partition_point(|&v| v <= lo);
    sorted.get(start).copied().filter(|&v| v < hi)
}

/// Last element strictly inside `(lo, hi)`.
fn last_in(sorted: &[usize], lo: usize, hi: usize) -> Option<usize> {
    let end = sorted.partition_point(|&v| v < hi);
    end.checked_sub(1)
        .map(|i| sorted[i])
        .filter(|&v| v > lo)
}

fn local_minima(x: &[f64]) -> Vec<usize> {
    (1..x.len().saturating_sub(1))
        .filter(|&i| x[i] < x[i - 1] && x[i] <= x[i + 1])
        .collect()
}

/// Local maxima above `height`, thinned so kept peaks are at least
/// `separation` samples apart (taller peaks win).
fn swing_peaks(x: &[f64], height: f64, separation: usize) -> Vec<usize> {
    let mut candidates: Vec<usize> = (1..x.len().saturating_sub(1))
        .filter(|&i| x[i] > height && x[i] > x[i - 1] && x[i] >= x[i + 1])
        .collect();
    candidates.sort_by(|&a, &b| x[b].total_cmp(&x[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for c in candidates {
        if kept.iter().all(|&k| k.abs_diff(c) >= separation) {
            kept.push(c);
        }
    }
    kept.sort_unstable();
    kept
}
