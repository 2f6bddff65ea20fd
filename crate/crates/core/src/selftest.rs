//! Numerical self-checks runnable from the command line.
//!
//! Each check recomputes a quantity independently of the code under test
//! and reports the largest deviation it saw.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dvae::{
    kl_diag_gaussian, ArchConfig, Batch, DecoderVariance, Dvae, IeRouting, LossBreakdown,
    LossWeights, Mode, Noise, StepOptions,
};
use crate::metrics::{
    mae, negative_residual_difference, positive_residual_difference, statistical_parity,
    PredictionRecord,
};
use crate::nn::Module;
use crate::signal::{butterworth_lowpass, detect_gait_events, DetectionParams, Sex, ZeroPhaseLowpass, LEFT_SHANK, RIGHT_SHANK};
use crate::synth::{generate_dataset, GeneratorConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name, passed, detail }
}

/// Runs every check in order.
pub fn run_all() -> Vec<CheckResult> {
    vec![kl_check(), metric_check(), gradient_check(), filter_check(), event_check()]
}

pub fn kl_check() -> CheckResult {
    let zero = kl_diag_gaussian(&[0.0; 8], &[0.0; 8]);
    let shifted = kl_diag_gaussian(&[1.0], &[0.0]);
    check(
        "kl",
        zero == 0.0 && (shifted - 0.5).abs() < 1e-9,
        format!("KL(N(0,I)|N(0,I)) = {zero:e}, KL(N(1,1)|N(0,1)) = {shifted}"),
    )
}

/// Metrics against a direct two-pass recomputation on random instances.
pub fn metric_check() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(2..40);
        let mut recs: Vec<PredictionRecord> = (0..n)
            .map(|i| PredictionRecord {
                subject_id: format!("s{i}"),
                trial_id: format!("t{i}"),
                sex: if rng.random_bool(0.5) { Sex::Female } else { Sex::Male },
                y_true: rng.random_range(0.0..30.0),
                y_pred: rng.random_range(-5.0..35.0),
            })
            .collect();
        recs[0].sex = Sex::Female;
        recs[1].sex = Sex::Male;
        let (mut sum_f, mut sum_m, mut pos_f, mut pos_m, mut neg_f, mut neg_m, mut abs) =
            (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let (mut nf, mut nm) = (0.0, 0.0);
        for r in &recs {
            let e = r.y_true - r.y_pred;
            abs += e.abs();
            if r.sex == Sex::Female {
                nf += 1.0;
                sum_f += r.y_pred;
                pos_f += if e > 0.0 { e } else { 0.0 };
                neg_f += if e < 0.0 { e } else { 0.0 };
            } else {
                nm += 1.0;
                sum_m += r.y_pred;
                pos_m += if e > 0.0 { e } else { 0.0 };
                neg_m += if e < 0.0 { e } else { 0.0 };
            }
        }
        let pairs = [
            (mae(&recs).unwrap_or(f64::NAN), abs / n as f64),
            (statistical_parity(&recs).unwrap_or(f64::NAN), sum_f / nf - sum_m / nm),
            (positive_residual_difference(&recs).unwrap_or(f64::NAN), (pos_f / nf - pos_m / nm).abs()),
            (negative_residual_difference(&recs).unwrap_or(f64::NAN), (neg_f / nf - neg_m / nm).abs()),
        ];
        for (got, want) in pairs {
            worst = worst.max(if got.is_nan() { f64::INFINITY } else { (got - want).abs() });
        }
    }
    check("metrics", worst < 1e-9, format!("max deviation {worst:e} over 200 instances"))
}

fn reduced_arch() -> ArchConfig {
    ArchConfig {
        seq_len: 8,
        n_channels: 3,
        conv_filters: [1, 1, 1],
        kernel: 5,
        enc_hidden: [4, 3],
        latent_dim: 2,
        head_hidden: [4, 3],
        batch_norm: false,
        dropout: 0.0,
    }
}

fn component(l: &LossBreakdown, w: LossWeights) -> f64 {
    w.vae * l.vae_loss + w.dc * l.discriminative_loss + w.ie * l.independence_loss
}

fn loss_at(model: &Dvae, batch: &Batch, noise: &Noise, w: LossWeights) -> f64 {
    let opts = StepOptions { beta1: 1.0, beta2: 1.0, update_running: false };
    let mut m = model.clone();
    let (l, _) = m
        .forward_loss(batch, noise, &opts, &mut ChaCha8Rng::seed_from_u64(0))
        .expect("finite loss on the reduced model");
    component(&l, w)
}

/// Central differences against backpropagation on the reduced model, one
/// loss component at a time.
pub fn gradient_check() -> CheckResult {
    const H: f64 = 1e-5;
    const FLOOR: f64 = 1e-5;
    let arch = reduced_arch();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut model = Dvae::new(arch.clone(), Mode::Dvae, DecoderVariance::LearnedScalar, &mut rng)
        .expect("reduced architecture is valid");
    for (_, t) in model.params_mut() {
        for v in &mut t.data {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    let size = 4;
    let batch = Batch {
        x: (0..size * arch.cycle_len()).map(|_| rng.random_range(-1.5..1.5)).collect(),
        y: (0..size).map(|_| rng.random_range(-1.0..1.0)).collect(),
        sex: (0..size).map(|i| i % 2).collect(),
    };
    let noise = Noise::sample(&mut rng, 1, size, arch.latent_dim, Mode::Dvae);
    let opts = StepOptions { beta1: 1.0, beta2: 1.0, update_running: false };
    let mut worst = 0.0f64;
    let mut head_leak = 0.0f64;
    for w in [
        LossWeights { vae: 1.0, dc: 0.0, ie: 0.0 },
        LossWeights { vae: 0.0, dc: 1.0, ie: 0.0 },
        LossWeights { vae: 0.0, dc: 0.0, ie: 1.0 },
    ] {
        let mut m = model.clone();
        let (_, tape) = m
            .forward_loss(&batch, &noise, &opts, &mut ChaCha8Rng::seed_from_u64(0))
            .expect("finite loss on the reduced model");
        let mut grad = model.zeros_like();
        model.backward(&tape, w, IeRouting::Full, &mut grad);
        let grads = grad.params();
        for (k, (_, g)) in grads.iter().enumerate() {
            for i in 0..g.len() {
                let mut plus = model.clone();
                plus.params_mut()[k].1.data[i] += H;
                let mut minus = model.clone();
                minus.params_mut()[k].1.data[i] -= H;
                let fd = (loss_at(&plus, &batch, &noise, w) - loss_at(&minus, &batch, &noise, w)) / (2.0 * H);
                let a = g.data[i];
                worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(FLOOR));
            }
        }
        if w.ie == 1.0 {
            let mut routed = model.zeros_like();
            model.backward(&tape, w, IeRouting::EncodersOnly, &mut routed);
            for (name, t) in routed.params() {
                if name.starts_with("regressor") || name.starts_with("classifier") {
                    head_leak = head_leak.max(t.data.iter().fold(0.0f64, |m, v| m.max(v.abs())));
                }
            }
        }
    }
    check(
        "gradients",
        worst < 1e-4 && head_leak == 0.0,
        format!("max relative error {worst:e}, largest routed head gradient {head_leak:e}"),
    )
}

/// Sine attenuation against the analytic forward-backward response, plus
/// time-reversal symmetry.
pub fn filter_check() -> CheckResult {
    let (fs, fc) = (80.0, 6.0);
    let pi = std::f64::consts::PI;
    let mut ok = true;
    let mut detail = Vec::new();
    for (freq, tol) in [(1.0, 0.01), (20.0, 0.05)] {
        let x: Vec<f64> = (0..400).map(|i| (2.0 * pi * freq * i as f64 / fs).sin()).collect();
        let y = match butterworth_lowpass(&x, fs, fc) {
            Ok(y) => y,
            Err(e) => return check("filter", false, e.to_string()),
        };
        let amp = y[100..300].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let ratio = (pi * freq / fs).tan() / (pi * fc / fs).tan();
        let expect = 1.0 / (1.0 + ratio.powi(4));
        let rel = (amp - expect).abs() / expect;
        ok &= rel < tol;
        detail.push(format!("{freq} Hz off by {:.3}%", 100.0 * rel));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x: Vec<f64> = (0..257).map(|_| rng.random_range(-1.0..1.0)).collect();
    let rx: Vec<f64> = x.iter().rev().copied().collect();
    let asym = match (butterworth_lowpass(&x, fs, fc), butterworth_lowpass(&rx, fs, fc)) {
        (Ok(a), Ok(b)) => a.iter().zip(b.iter().rev()).fold(0.0f64, |m, (p, q)| m.max((p - q).abs())),
        _ => f64::INFINITY,
    };
    ok &= asym < 1e-9;
    detail.push(format!("reversal asymmetry {asym:e}"));
    check("filter", ok, detail.join(", "))
}

/// Noiseless synthetic trials: detected strides equal the embedded ones.
pub fn event_check() -> CheckResult {
    let cfg = GeneratorConfig {
        n_subjects_male: 1,
        n_subjects_female: 1,
        weights_kg: vec![4.5, 22.7],
        n_channels: 12,
        cycles_per_trial: 6,
        noise_std: 0.0,
        ..GeneratorConfig::default()
    };
    let run = || -> crate::Result<(usize, usize)> {
        let (trials, truth) = generate_dataset(&cfg)?;
        let mut f = ZeroPhaseLowpass::new(cfg.sample_rate_hz, 6.0)?;
        let (mut matched, mut total) = (0, 0);
        for (trial, tt) in trials.iter().zip(&truth.trials) {
            let r = f.apply(&trial.channel(trial.sagittal_gyro_channel(RIGHT_SHANK)?))?;
            let l = f.apply(&trial.channel(trial.sagittal_gyro_channel(LEFT_SHANK)?))?;
            let ev = detect_gait_events(&r, &l, trial.sample_rate_hz, &DetectionParams::default())?;
            total += 1;
            matched += usize::from(ev == tt.events);
        }
        Ok((matched, total))
    };
    match run() {
        Ok((m, t)) => check("events", m == t, format!("{m}/{t} trials recovered exactly")),
        Err(e) => check("events", false, e.to_string()),
    }
}
