//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

mod common;

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use fairload::dvae::{kl_diag_gaussian, train, DecoderVariance, IeRouting, Mode, Noise, StepOptions, TrainConfig};
use fairload::harness::{audit_run, run_experiment_on, seed_summaries, ExperimentConfig, ModelKind, SeedSummary, RESULTS_FILE};
use fairload::metrics::{
    mae, negative_residual_difference, positive_residual_difference, statistical_parity, PredictionRecord,
};
use fairload::probe::{fit_probe, ProbeConfig};
use fairload::signal::{
    butterworth_lowpass, detect_gait_events, normalize, Dataset, DetectionParams, RawTrial, Sex, ZeroPhaseLowpass,
    LEFT_SHANK, RIGHT_SHANK,
};
use fairload::synth::{generate_balanced_splits, generate_dataset, GeneratorConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn within(t: Instant, limit_s: u64) -> (bool, Duration) {
    let e = t.elapsed();
    (e < Duration::from_secs(limit_s), e)
}

// ---------------------------------------------------------------- 1

fn closed_form_losses() -> Outcome {
    let t = Instant::now();
    let zero = kl_diag_gaussian(&[0.0; 16], &[0.0; 16]);
    let unit_shift = kl_diag_gaussian(&[1.0], &[0.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for i in 0..100u64 {
        let mode = if i % 4 == 0 { Mode::PlainVae } else { Mode::Dvae };
        let mut model = randomized_model(mode, DecoderVariance::FixedUnit, i);
        let size = rng.random_range(2..8);
        let batch = tiny_batch(&model.arch, size, 500 + i);
        let draws = rng.random_range(1..3);
        let noise = Noise::sample(&mut rng, draws, size, 2, mode);
        let opts = StepOptions { beta1: rng.random_range(0.0..5.0), beta2: rng.random_range(0.0..2.0), update_running: false };
        let (l, _) = model.forward_loss(&batch, &noise, &opts, &mut ChaCha8Rng::seed_from_u64(i)).unwrap();
        let vae = l.reconstruction_term + l.kl_agnostic + l.kl_specific;
        let total = vae + opts.beta1 * l.discriminative_loss + opts.beta2 * l.independence_loss;
        worst = worst.max((l.total - total).abs()).max((l.vae_loss - vae).abs());
    }
    let (fast, e) = within(t, 10);
    outcome(
        zero == 0.0 && (unit_shift - 0.5).abs() < 1e-9 && worst < 1e-9 && fast,
        format!("KL0 = {zero:e}, KL1 = {unit_shift}, additivity error {worst:.1e} on 100 batches, {e:.1?}"),
    )
}

// ---------------------------------------------------------------- 2

fn gradient_oracle() -> Outcome {
    let t = Instant::now();
    let mut worst = (0.0f64, String::new());
    for seed in [3u64, 17] {
        for (mode, variance) in [
            (Mode::Dvae, DecoderVariance::FixedUnit),
            (Mode::Dvae, DecoderVariance::LearnedScalar),
            (Mode::PlainVae, DecoderVariance::FixedUnit),
        ] {
            let model = randomized_model(mode, variance, seed);
            let batch = tiny_batch(&model.arch, 4, seed + 1);
            let noise = Noise::sample(&mut ChaCha8Rng::seed_from_u64(seed + 2), 1, 4, 2, mode);
            for which in COMPONENTS {
                if mode == Mode::PlainVae && which == "ie" {
                    continue;
                }
                let a = analytic(&model, &batch, &noise, which, IeRouting::Full);
                let n = numeric(&model, &batch, &noise, which, 1e-5);
                for ((name, av), nv) in a.iter().zip(&n) {
                    let e = rel_err(*av, *nv);
                    if e > worst.0 {
                        worst = (e, format!("{which}/{name}"));
                    }
                }
            }
        }
    }
    let model = randomized_model(Mode::Dvae, DecoderVariance::FixedUnit, 5);
    let batch = tiny_batch(&model.arch, 6, 6);
    let noise = Noise::sample(&mut ChaCha8Rng::seed_from_u64(7), 1, 6, 2, Mode::Dvae);
    let routed = analytic(&model, &batch, &noise, "ie", IeRouting::EncodersOnly);
    let heads_zero = routed.iter().filter(|(n, _)| is_head(n)).all(|(_, g)| *g == 0.0);
    let (fast, e) = within(t, 120);
    outcome(
        worst.0 < 1e-4 && heads_zero && fast,
        format!("max relative error {:.1e} ({}), IE head gradient zero: {heads_zero}, {e:.1?}", worst.0, worst.1),
    )
}

// ---------------------------------------------------------------- 3

/// Squared magnitude of one bilinear second-order Butterworth pass, which
/// forward-backward filtering applies as the amplitude gain.
fn analytic_gain(freq: f64, fs: f64, cutoff: f64) -> f64 {
    let pi = std::f64::consts::PI;
    let r = (pi * freq / fs).tan() / (pi * cutoff / fs).tan();
    1.0 / (1.0 + r.powi(4))
}

fn filter_oracle() -> Outcome {
    let t = Instant::now();
    let fs = 80.0;
    let mut details = Vec::new();
    let mut ok = true;
    for (freq, tol) in [(1.0, 0.01), (20.0, 0.05)] {
        let x: Vec<f64> = (0..800).map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / fs).sin()).collect();
        let y = butterworth_lowpass(&x, fs, 6.0).unwrap();
        let amp = y[200..600].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let want = analytic_gain(freq, fs, 6.0);
        let rel = (amp - want).abs() / want;
        ok &= rel < tol;
        details.push(format!("{freq} Hz off by {:.2}%", 100.0 * rel));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n = rng.random_range(20..400);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let y = butterworth_lowpass(&x, fs, 6.0).unwrap();
        let rx: Vec<f64> = x.iter().rev().copied().collect();
        let ry = butterworth_lowpass(&rx, fs, 6.0).unwrap();
        for (a, b) in y.iter().zip(ry.iter().rev()) {
            worst = worst.max((a - b).abs());
        }
    }
    let (fast, e) = within(t, 5);
    outcome(ok && worst < 1e-9 && fast, format!("{}, reversal error {worst:.1e}, {e:.1?}", details.join(", ")))
}

// ---------------------------------------------------------------- 4

fn metric_oracle() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    let mut identity_exact = true;
    for _ in 0..1000 {
        let n = rng.random_range(2..50);
        let mut recs: Vec<PredictionRecord> = (0..n)
            .map(|i| PredictionRecord {
                subject_id: format!("s{}", i % 5),
                trial_id: format!("t{i}"),
                sex: if rng.random_bool(0.5) { Sex::Female } else { Sex::Male },
                y_true: rng.random_range(0.0..30.0),
                y_pred: rng.random_range(-5.0..35.0),
            })
            .collect();
        recs[0].sex = Sex::Female;
        recs[1].sex = Sex::Male;
        let mut acc = [[0.0f64; 4]; 2]; // per sex: count, sum pred, positive, negative
        let mut abs = 0.0;
        for r in &recs {
            let e = r.y_true - r.y_pred;
            let (p, q) = (e.max(0.0), e.min(0.0));
            identity_exact &= p + q == e && p - q == e.abs();
            let g = &mut acc[(r.sex == Sex::Female) as usize];
            g[0] += 1.0;
            g[1] += r.y_pred;
            g[2] += p;
            g[3] += q;
            abs += e.abs();
        }
        let [m, f] = acc;
        let want = [
            abs / n as f64,
            f[1] / f[0] - m[1] / m[0],
            (f[2] / f[0] - m[2] / m[0]).abs(),
            (f[3] / f[0] - m[3] / m[0]).abs(),
        ];
        let got = [
            mae(&recs).unwrap(),
            statistical_parity(&recs).unwrap(),
            positive_residual_difference(&recs).unwrap(),
            negative_residual_difference(&recs).unwrap(),
        ];
        for (g, w) in got.iter().zip(want) {
            worst = worst.max((g - w).abs());
        }
    }
    let (fast, e) = within(t, 10);
    outcome(
        worst < 1e-9 && identity_exact && fast,
        format!("max deviation {worst:.1e} on 1000 instances, residual identity exact: {identity_exact}, {e:.1?}"),
    )
}

// ---------------------------------------------------------------- 5

fn shank_gyros(trial: &RawTrial) -> (Vec<f64>, Vec<f64>) {
    let mut f = ZeroPhaseLowpass::new(trial.sample_rate_hz, 6.0).unwrap();
    let r = f.apply(&trial.channel(trial.sagittal_gyro_channel(RIGHT_SHANK).unwrap())).unwrap();
    let l = f.apply(&trial.channel(trial.sagittal_gyro_channel(LEFT_SHANK).unwrap())).unwrap();
    (r, l)
}

fn event_config(seed: u64, noise: f64) -> GeneratorConfig {
    GeneratorConfig {
        n_subjects_male: 1,
        n_subjects_female: 1,
        n_channels: 12,
        cycles_per_trial: 6,
        noise_std: noise,
        seed,
        ..GeneratorConfig::default()
    }
}

fn pipeline_fidelity() -> Outcome {
    let t = Instant::now();
    let params = DetectionParams::default();
    let mut exact = true;
    for seed in 0..5 {
        let (trials, truth) = generate_dataset(&event_config(seed, 0.0)).unwrap();
        for (trial, tt) in trials.iter().zip(&truth.trials) {
            let (r, l) = shank_gyros(trial);
            exact &= detect_gait_events(&r, &l, trial.sample_rate_hz, &params).map(|ev| ev == tt.events).unwrap_or(false);
        }
    }
    let (mut embedded, mut found) = (0usize, 0usize);
    for seed in 0..20 {
        let (trials, truth) = generate_dataset(&event_config(seed, 0.05)).unwrap();
        for (trial, tt) in trials.iter().zip(&truth.trials) {
            let (r, l) = shank_gyros(trial);
            let got = detect_gait_events(&r, &l, trial.sample_rate_hz, &params).map(|e| e.cycles).unwrap_or_default();
            for want in &tt.events.cycles {
                embedded += 1;
                found += got
                    .iter()
                    .any(|g| g.as_array().iter().zip(want.as_array()).all(|(a, b)| a.abs_diff(b) <= 3))
                    as usize;
            }
        }
    }
    let rate = found as f64 / embedded as f64;
    let (fast, e) = within(t, 60);
    outcome(
        exact && rate >= 0.95 && fast,
        format!("noiseless exact: {exact}, noisy recovery {found}/{embedded} = {:.3}, {e:.1?}", rate),
    )
}

// ---------------------------------------------------------------- 6-9

/// Desk-scale roster where sex shifts an offset channel group and scales the
/// load-bearing channels, so sex and load act on the same signals.
fn desk_dataset() -> Dataset {
    let cfg = GeneratorConfig {
        n_subjects_male: 8,
        n_subjects_female: 8,
        n_channels: 12,
        cycles_per_trial: 4,
        sex_amplitude_delta: -0.15,
        ..GeneratorConfig::default()
    };
    generate_balanced_splits(&cfg).unwrap().0
}

fn vae_config(mode: Mode, epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        learning_rate: 3e-3,
        beta1: 100.0,
        beta2: 0.1,
        arch_scale: 0.25,
        latent_dim: 16,
        head_dropout: 0.0,
        mode,
        ..TrainConfig::default()
    }
}

fn sweep_config(models: Vec<ModelKind>, ratios: Vec<(f64, f64)>, seeds: Vec<u64>, epochs: usize) -> ExperimentConfig {
    ExperimentConfig {
        models,
        ratios,
        seeds,
        dvae: vae_config(Mode::Dvae, epochs),
        plain_vae: vae_config(Mode::PlainVae, epochs),
        threads: 1,
        persist_models: false,
        ..ExperimentConfig::default()
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct Avg {
    mae: f64,
    gap: f64,
    abs_sp: f64,
}

fn average(s: &[SeedSummary], model: &str, ratios: &[(f64, f64)]) -> Avg {
    let v: Vec<&SeedSummary> =
        s.iter().filter(|r| r.model == model && ratios.contains(&(r.ratio_m, r.ratio_f))).collect();
    let n = v.len() as f64;
    let mean = |f: &dyn Fn(&SeedSummary) -> Option<f64>| v.iter().map(|r| f(r).unwrap_or(f64::NAN)).sum::<f64>() / n;
    Avg { mae: mean(&|r| r.mae_overall), gap: mean(&|r| r.mae_gap()), abs_sp: mean(&|r| r.sp.map(f64::abs)) }
}

fn knn_bias_direction(data: &Dataset, dir: &Path) -> Outcome {
    let t = Instant::now();
    let cfg = sweep_config(vec![ModelKind::Knn], vec![(0.9, 0.1), (0.5, 0.5)], vec![0, 1, 2], 1);
    let out = run_experiment_on(&cfg, data, dir).unwrap();
    let s = seed_summaries(&out.rows);
    let skewed = average(&s, "knn", &[(0.9, 0.1)]);
    let even = average(&s, "knn", &[(0.5, 0.5)]);
    let (fast, e) = within(t, 600);
    outcome(
        out.n_failed == 0 && skewed.gap > even.gap && fast,
        format!("k-NN MAE gap {:.3} at 0.9:0.1 vs {:.3} at 0.5:0.5, {e:.1?}", skewed.gap, even.gap),
    )
}

fn debiasing_direction(data: &Dataset, dir: &Path) -> Outcome {
    let t = Instant::now();
    let ratios = vec![(0.9, 0.1), (0.1, 0.9)];
    let cfg = sweep_config(ModelKind::ALL.to_vec(), ratios.clone(), vec![0, 1, 2], 100);
    let out = run_experiment_on(&cfg, data, dir).unwrap();
    let s = seed_summaries(&out.rows);
    let [d, p, k] = ["dvae", "plain_vae", "knn"].map(|m| average(&s, m, &ratios));
    let gap_ok = d.gap < p.gap && d.gap < k.gap;
    let sp_ok = d.abs_sp < p.abs_sp && d.abs_sp < k.abs_sp;
    let mae_ok = d.mae <= p.mae + 0.5;
    let (fast, e) = within(t, 1800);
    outcome(
        out.n_failed == 0 && gap_ok && sp_ok && mae_ok && fast,
        format!(
            "gap dvae {:.3} / plain {:.3} / knn {:.3} [{}]; |SP| {:.3} / {:.3} / {:.3} [{}]; MAE {:.3} vs plain {:.3} [{}]; {e:.1?}",
            d.gap,
            p.gap,
            k.gap,
            verdict(gap_ok),
            d.abs_sp,
            p.abs_sp,
            k.abs_sp,
            verdict(sp_ok),
            d.mae,
            p.mae,
            verdict(mae_ok),
        ),
    )
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "not met"
    }
}

fn latent_probe(data: &Dataset) -> Outcome {
    let held_out = ["M07", "M08", "F07", "F08"];
    let train_set = normalize(&data.filter(|c| !held_out.contains(&c.subject_id.as_str())), None).unwrap();
    let test_set = normalize(
        &data.filter(|c| held_out.contains(&c.subject_id.as_str())),
        train_set.channel_stats.as_deref(),
    )
    .unwrap();
    let labels = |d: &Dataset| -> Vec<usize> { d.cycles.iter().map(|c| c.sex.class_index()).collect() };
    let (train_labels, test_labels) = (labels(&train_set), labels(&test_set));
    let (mut z_acc, mut s_acc) = (Vec::new(), Vec::new());
    for seed in 0..3 {
        let m = train(&train_set, &TrainConfig { seed, ..vae_config(Mode::Dvae, 100) }).unwrap();
        let d = m.model.latent_dim();
        let (a, b) = (m.encode_dataset(&train_set).unwrap(), m.encode_dataset(&test_set).unwrap());
        let pc = ProbeConfig { seed, ..ProbeConfig::default() };
        let pz = fit_probe(&a.z_mean, d, &train_labels, &pc).unwrap();
        let ps = fit_probe(a.zsex_mean.as_ref().unwrap(), d, &train_labels, &pc).unwrap();
        z_acc.push(pz.accuracy(&b.z_mean, &test_labels).unwrap());
        s_acc.push(ps.accuracy(b.zsex_mean.as_ref().unwrap(), &test_labels).unwrap());
    }
    let (z, s) = (z_acc.iter().sum::<f64>() / 3.0, s_acc.iter().sum::<f64>() / 3.0);
    outcome(
        z <= 0.65 && s >= 0.85,
        format!("held-out sex accuracy from z {z:.3} {z_acc:.3?}, from zsex {s:.3} {s_acc:.3?}"),
    )
}

fn determinism_and_leakage(data: &Dataset, swept: &[&Path], scratch: &Path) -> Outcome {
    let cfg = sweep_config(ModelKind::ALL.to_vec(), vec![(0.9, 0.1)], vec![4], 5);
    let run = |d: &Path| {
        run_experiment_on(&cfg, data, d).unwrap();
        std::fs::read(d.join(RESULTS_FILE)).unwrap()
    };
    let identical = run(&scratch.join("a")) == run(&scratch.join("b"));
    let mut checked = 0;
    let mut violations = Vec::new();
    for dir in swept {
        let audit = audit_run(dir).unwrap();
        checked += audit.folds_checked;
        violations.extend(audit.violations);
    }
    outcome(
        identical && violations.is_empty() && checked > 0,
        format!("repeat bit-identical: {identical}, {checked} folds audited, {} leaks", violations.len()),
    )
}

fn main() -> ExitCode {
    let scratch = tempfile::tempdir().unwrap();
    let data = desk_dataset();
    let (dir6, dir7) = (scratch.path().join("bias"), scratch.path().join("debias"));
    let checks: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("closed-form losses", Box::new(closed_form_losses)),
        ("gradient oracle", Box::new(gradient_oracle)),
        ("filter oracle", Box::new(filter_oracle)),
        ("metric oracle", Box::new(metric_oracle)),
        ("pipeline fidelity", Box::new(pipeline_fidelity)),
        ("k-NN bias under imbalance", Box::new(|| knn_bias_direction(&data, &dir6))),
        ("DVAE debiasing", Box::new(|| debiasing_direction(&data, &dir7))),
        ("latent disentanglement probe", Box::new(|| latent_probe(&data))),
        (
            "determinism and leakage",
            Box::new(|| determinism_and_leakage(&data, &[&dir6, &dir7], &scratch.path().join("repeat"))),
        ),
    ];
    let mut failed = 0;
    for (i, (name, f)) in checks.iter().enumerate() {
        let o = f();
        failed += !o.passed as usize;
        println!("criterion {}: {} {name}: {}", i + 1, if o.passed { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {} of {} criteria passed", checks.len() - failed, checks.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
