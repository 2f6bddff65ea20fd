//! Second-order Butterworth low-pass applied forward and backward.
//!
//! The section is designed with the bilinear transform (pre-warped cutoff).
//! Running it forward then backward squares the magnitude response and
//! cancels the phase. Edges are extended by odd reflection and the initial
//! states of both passes are chosen with Gustafsson's method, which makes
//! the forward-backward result identical to the backward-forward one. That
//! gives exact time-reversal symmetry and exact pass-through of constants.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Order of the single biquad section.
pub const SECTION_ORDER: usize = 2;
/// Effective order after the forward and backward passes.
pub const EFFECTIVE_ORDER: usize = 2 * SECTION_ORDER;
/// Samples of odd-reflection padding added to each end.
pub const EDGE_PAD: usize = 3 * EFFECTIVE_ORDER;
/// Shortest signal the filter accepts.
pub const MIN_SIGNAL_LEN: usize = EDGE_PAD + 1;

/// Transfer function `b(z) / a(z)` of one second-order section, `a[0] == 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    pub fn butterworth_lowpass(sample_rate_hz: f64, cutoff_hz: f64) -> Result<Self> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::Parameter(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        let nyquist = sample_rate_hz / 2.0;
        if !(cutoff_hz > 0.0 && cutoff_hz < nyquist) {
            return Err(Error::Parameter(format!(
                "cutoff {cutoff_hz} Hz outside (0, {nyquist}) Hz"
            )));
        }
        let k = (std::f64::consts::PI * cutoff_hz / sample_rate_hz).tan();
        let k2 = k * k;
        let sqrt2 = std::f64::consts::SQRT_2;
        let norm = 1.0 / (1.0 + sqrt2 * k + k2);
        let b0 = k2 * norm;
        Ok(Biquad {
            b: [b0, 2.0 * b0, b0],
            a: [1.0, 2.0 * (k2 - 1.0) * norm, (1.0 - sqrt2 * k + k2) * norm],
        })
    }

    /// Direct form II transposed filtering starting from state `zi`.
    pub fn lfilter(&self, x: &[f64], zi: [f64; 2]) -> Vec<f64> {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        let (mut z0, mut z1) = (zi[0], zi[1]);
        x.iter()
            .map(|&xi| {
                let y = b0 * xi + z0;
                z0 = b1 * xi - a1 * y + z1;
                z1 = b2 * xi - a2 * y;
                y
            })
            .collect()
    }

    /// Squared magnitude of the frequency response at `freq_hz`.
    pub fn magnitude_squared(&self, freq_hz: f64, sample_rate_hz: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI * freq_hz / sample_rate_hz;
        let eval = |c: &[f64; 3]| {
            let re = c[0] + c[1] * w.cos() + c[2] * (2.0 * w).cos();
            let im = -c[1] * w.sin() - c[2] * (2.0 * w).sin();
            re * re + im * im
        };
        eval(&self.b) / eval(&self.a)
    }
}

/// Precomputed initial-state projection for one padded signal length.
struct GustafssonSolver {
    n: usize,
    /// Effect of the forward initial state on the forward-backward output (row reversed).
    sr: Vec<[f64; 2]>,
    /// Effect of the backward initial state on the forward-backward output (row reversed).
    obsr: Vec<[f64; 2]>,
    pinv: DMatrix<f64>,
}

impl GustafssonSolver {
    fn new(filter: &Biquad, n: usize) -> Self {
        let col0 = filter.lfilter(&vec![0.0; n], [1.0, 0.0]);
        let obs: Vec<[f64; 2]> = (0..n)
            .map(|i| [col0[i], if i >= 1 { col0[i - 1] } else { 0.0 }])
            .collect();
        let mut s = vec![[0.0; 2]; n];
        for k in 0..2 {
            let rev: Vec<f64> = obs.iter().rev().map(|r| r[k]).collect();
            for (i, v) in filter.lfilter(&rev, [0.0, 0.0]).into_iter().enumerate() {
                s[i][k] = v;
            }
        }
        let sr: Vec<[f64; 2]> = s.iter().rev().copied().collect();
        let obsr: Vec<[f64; 2]> = obs.iter().rev().copied().collect();
        let m = DMatrix::from_fn(n, 4, |i, j| match j {
            0 | 1 => sr[i][j] - obs[i][j],
            _ => obsr[i][j - 2] - s[i][j - 2],
        });
        let pinv = m
            .pseudo_inverse(1e-14)
            .expect("pseudo-inverse with non-negative epsilon");
        GustafssonSolver { n, sr, obsr, pinv }
    }

    fn filtfilt(&self, filter: &Biquad, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.n);
        let reversed = |v: Vec<f64>| -> Vec<f64> { v.into_iter().rev().collect() };
        let y_f = filter.lfilter(x, [0.0; 2]);
        let y_fb = reversed(filter.lfilter(&reversed(y_f), [0.0; 2]));
        let rx: Vec<f64> = x.iter().rev().copied().collect();
        let y_b = reversed(filter.lfilter(&rx, [0.0; 2]));
        let y_bf = filter.lfilter(&y_b, [0.0; 2]);
        let delta = DVector::from_iterator(self.n, y_bf.iter().zip(&y_fb).map(|(a, b)| a - b));
        let ic = &self.pinv * delta;
        y_fb.iter()
            .enumerate()
            .map(|(i, &y)| {
                y + self.sr[i][0] * ic[0]
                    + self.sr[i][1] * ic[1]
                    + self.obsr[i][0] * ic[2]
                    + self.obsr[i][1] * ic[3]
            })
            .collect()
    }
}

/// Zero-phase low-pass filter; reusable across channels of equal length.
pub struct ZeroPhaseLowpass {
    biquad: Biquad,
    solver: Option<GustafssonSolver>,
}

impl ZeroPhaseLowpass {
    pub fn new(sample_rate_hz: f64, cutoff_hz: f64) -> Result<Self> {
        Ok(ZeroPhaseLowpass {
            biquad: Biquad::butterworth_lowpass(sample_rate_hz, cutoff_hz)?,
            solver: None,
        })
    }

    pub fn biquad(&self) -> &Biquad {
        &self.biquad
    }

    pub fn apply(&mut self, signal: &[f64]) -> Result<Vec<f64>> {
        let n = signal.len();
        if n < MIN_SIGNAL_LEN {
            return Err(Error::Length(format!(
                "filter needs at least {MIN_SIGNAL_LEN} samples, got {n}"
            )));
        }
        if let Some(i) = signal.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite sample at index {i}")));
        }
        let padded = odd_reflect_pad(signal, EDGE_PAD);
        if self.solver.as_ref().map(|s| s.n) != Some(padded.len()) {
            self.solver = Some(GustafssonSolver::new(&self.biquad, padded.len()));
        }
        let solver = self.solver.as_ref().expect("solver initialised above");
        let out = solver.filtfilt(&self.biquad, &padded);
        Ok(out[EDGE_PAD..EDGE_PAD + n].to_vec())
    }

    /// Filters every column of a time-major `[rows × cols]` matrix in place.
    pub fn apply_columns(&mut self, data: &mut [f64], cols: usize) -> Result<()> {
        if cols == 0 || data.len() % cols != 0 {
            return Err(Error::Shape(format!(
                "buffer of {} values is not a multiple of {cols} columns",
                data.len()
            )));
        }
        let rows = data.len() / cols;
        let mut column = vec![0.0; rows];
        for c in 0..cols {
            for (t, v) in column.iter_mut().enumerate() {
                *v = data[t * cols + c];
            }
            let filtered = self.apply(&column)?;
            for (t, v) in filtered.into_iter().enumerate() {
                data[t * cols + c] = v;
            }
        }
        Ok(())
    }
}

/// One-shot zero-phase Butterworth low-pass of a single signal.
pub fn butterworth_lowpass(signal: &[f64], sample_rate_hz: f64, cutoff_hz: f64) -> Result<Vec<f64>> {
    ZeroPhaseLowpass::new(sample_rate_hz, cutoff_hz)?.apply(signal)
}

fn odd_reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    out.extend_from_slice(x);
    out.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_passes_through() {
        let x = vec![5.0; 200];
        let y = butterworth_lowpass(&x, 80.0, 6.0).unwrap();
        let dev = y.iter().map(|v| (v - 5.0).abs()).fold(0.0, f64::max);
        assert!(dev < 1e-9, "deviation {dev}");
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(matches!(
            butterworth_lowpass(&[1.0; 12], 80.0, 6.0),
            Err(Error::Length(_))
        ));
        assert!(matches!(
            butterworth_lowpass(&[1.0; 50], 80.0, 40.0),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            butterworth_lowpass(&[1.0; 50], 80.0, 0.0),
            Err(Error::Parameter(_))
        ));
        let mut x = vec![0.0; 50];
        x[7] = f64::NAN;
        assert!(matches!(
            butterworth_lowpass(&x, 80.0, 6.0),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn shortest_signal_is_accepted() {
        let x: Vec<f64> = (0..MIN_SIGNAL_LEN).map(|i| (i as f64).sin()).collect();
        assert_eq!(butterworth_lowpass(&x, 80.0, 6.0).unwrap().len(), x.len());
    }

    #[test]
    fn padding_is_odd_reflection() {
        let p = odd_reflect_pad(&[1.0, 2.0, 4.0, 7.0], 2);
        assert_eq!(p, vec![-2.0, 0.0, 1.0, 2.0, 4.0, 7.0, 10.0, 12.0]);
    }

    #[test]
    fn columns_match_single_channel() {
        let rows = 60;
        let data: Vec<f64> = (0..rows * 3).map(|i| ((i * 7 % 13) as f64).cos()).collect();
        let mut filtered = data.clone();
        let mut f = ZeroPhaseLowpass::new(80.0, 6.0).unwrap();
        f.apply_columns(&mut filtered, 3).unwrap();
        let col1: Vec<f64> = (0..rows).map(|t| data[t * 3 + 1]).collect();
        let expect = butterworth_lowpass(&col1, 80.0, 6.0).unwrap();
        for t in 0..rows {
            assert_eq!(filtered[t * 3 + 1], expect[t]);
        }
    }
}
