use fairload::signal::{
    build_dataset, butterworth_lowpass, denormalize, detect_gait_events, normalize,
    resample_cycle, segment_cycles, DetectionParams, PipelineParams, RawTrial, Sex,
    ZeroPhaseLowpass, CYCLE_LEN, LEFT_SHANK, RIGHT_SHANK,
};
use fairload::synth::{generate_dataset, GeneratorConfig};
use proptest::prelude::*;

/// Forward-backward gain of a bilinear second-order Butterworth section,
/// from the analog prototype with pre-warped frequency axis.
fn analytic_gain(freq: f64, fs: f64, cutoff: f64) -> f64 {
    let pi = std::f64::consts::PI;
    let ratio = (pi * freq / fs).tan() / (pi * cutoff / fs).tan();
    1.0 / (1.0 + ratio.powi(4))
}

fn sine(freq: f64, fs: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / fs).sin())
        .collect()
}

fn central_amplitude(x: &[f64]) -> f64 {
    x[100..300].iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

#[test]
fn sine_attenuation_matches_analytic_response() {
    for (freq, tol) in [(1.0, 0.01), (20.0, 0.05)] {
        let y = butterworth_lowpass(&sine(freq, 80.0, 400), 80.0, 6.0).unwrap();
        let ratio = central_amplitude(&y);
        let expect = analytic_gain(freq, 80.0, 6.0);
        assert!(
            (ratio - expect).abs() / expect < tol,
            "{freq} Hz: ratio {ratio} vs {expect}"
        );
    }
}

#[test]
fn designed_biquad_matches_analytic_prototype() {
    let f = ZeroPhaseLowpass::new(80.0, 6.0).unwrap();
    for freq in [0.5, 3.0, 6.0, 12.0, 30.0] {
        let designed = f.biquad().magnitude_squared(freq, 80.0);
        assert!((designed - analytic_gain(freq, 80.0, 6.0)).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn filter_is_time_reversal_symmetric(x in prop::collection::vec(-10.0f64..10.0, 13..300)) {
        let y = butterworth_lowpass(&x, 80.0, 6.0).unwrap();
        let rx: Vec<f64> = x.iter().rev().copied().collect();
        let ry: Vec<f64> = butterworth_lowpass(&rx, 80.0, 6.0).unwrap().into_iter().rev().collect();
        for (a, b) in y.iter().zip(&ry) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn adding_a_constant_shifts_the_output(
        x in prop::collection::vec(-10.0f64..10.0, 13..300),
        c in -50.0f64..50.0,
    ) {
        let y = butterworth_lowpass(&x, 80.0, 6.0).unwrap();
        let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
        let ys = butterworth_lowpass(&shifted, 80.0, 6.0).unwrap();
        for (a, b) in y.iter().zip(&ys) {
            prop_assert!((b - a - c).abs() < 1e-9);
        }
    }

    #[test]
    fn resampling_keeps_endpoints_and_monotonicity(
        steps in prop::collection::vec(0.0f64..5.0, 1..200),
        start in -100.0f64..100.0,
    ) {
        let mut acc = start;
        let mut data = vec![acc];
        for s in &steps {
            acc += s;
            data.push(acc);
        }
        let n = data.len();
        let out = resample_cycle(&data, n, 1).unwrap();
        prop_assert_eq!(out[0], data[0]);
        prop_assert_eq!(out[CYCLE_LEN - 1], data[n - 1]);
        for w in out.windows(2) {
            prop_assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn detected_strides_are_always_ordered(seed in 0u64..1000, noise in 0.0f64..0.2) {
        let cfg = GeneratorConfig {
            n_subjects_male: 1,
            n_subjects_female: 0,
            weights_kg: vec![13.6],
            n_channels: 12,
            cycles_per_trial: 4,
            noise_std: noise,
            seed,
            ..GeneratorConfig::default()
        };
        let (trials, _) = generate_dataset(&cfg).unwrap();
        let (right, left) = filtered_shanks(&trials[0]);
        let ev = detect_gait_events(&right, &left, 80.0, &DetectionParams::default()).unwrap();
        prop_assert!(ev.validate(trials[0].n_samples()).is_ok());
    }
}

/// Piecewise-linear evaluation written independently of `resample_cycle`.
fn piecewise_linear(knots: &[f64], x: f64) -> f64 {
    let mut i = 0;
    while i + 1 < knots.len() - 1 && (i + 1) as f64 <= x {
        i += 1;
    }
    let t = x - i as f64;
    knots[i] * (1.0 - t) + knots[i + 1] * t
}

#[test]
fn triangle_resampling_matches_direct_evaluation() {
    let knots: Vec<f64> = (0..17).map(|i| 8.0 - (i as f64 - 8.0).abs()).collect();
    let out = resample_cycle(&knots, 17, 1).unwrap();
    for (j, v) in out.iter().enumerate() {
        let x = 16.0 * j as f64 / 127.0;
        assert!((v - piecewise_linear(&knots, x)).abs() < 1e-12, "query {j}");
    }
}

fn filtered_shanks(trial: &RawTrial) -> (Vec<f64>, Vec<f64>) {
    let mut f = ZeroPhaseLowpass::new(trial.sample_rate_hz, 6.0).unwrap();
    let r = f
        .apply(&trial.channel(trial.sagittal_gyro_channel(RIGHT_SHANK).unwrap()))
        .unwrap();
    let l = f
        .apply(&trial.channel(trial.sagittal_gyro_channel(LEFT_SHANK).unwrap()))
        .unwrap();
    (r, l)
}

fn event_config(seed: u64, noise: f64) -> GeneratorConfig {
    GeneratorConfig {
        n_subjects_male: 1,
        n_subjects_female: 1,
        weights_kg: vec![4.5, 22.7],
        n_channels: 12,
        cycles_per_trial: 6,
        noise_std: noise,
        seed,
        ..GeneratorConfig::default()
    }
}

#[test]
fn noiseless_events_are_recovered_exactly() {
    for seed in 0..5 {
        let (trials, truth) = generate_dataset(&event_config(seed, 0.0)).unwrap();
        for (trial, tt) in trials.iter().zip(&truth.trials) {
            let (r, l) = filtered_shanks(trial);
            let ev = detect_gait_events(&r, &l, 80.0, &DetectionParams::default()).unwrap();
            assert_eq!(ev, tt.events, "trial {}", trial.trial_id);
        }
    }
}

#[test]
fn noisy_events_are_mostly_recovered() {
    let mut embedded = 0usize;
    let mut recovered = 0usize;
    for seed in 0..20 {
        let (trials, truth) = generate_dataset(&event_config(seed, 0.05)).unwrap();
        for (trial, tt) in trials.iter().zip(&truth.trials) {
            let (r, l) = filtered_shanks(trial);
            let ev = detect_gait_events(&r, &l, 80.0, &DetectionParams::default()).unwrap();
            for want in &tt.events.cycles {
                embedded += 1;
                let hit = ev.cycles.iter().any(|got| {
                    got.as_array()
                        .iter()
                        .zip(want.as_array())
                        .all(|(g, w)| g.abs_diff(w) <= 3)
                });
                recovered += hit as usize;
            }
        }
    }
    let rate = recovered as f64 / embedded as f64;
    assert!(rate >= 0.95, "recovered {recovered}/{embedded}");
}

#[test]
fn segmenting_at_embedded_events_gives_cycles_per_trial() {
    let cfg = event_config(3, 0.02);
    let (trials, truth) = generate_dataset(&cfg).unwrap();
    for (trial, tt) in trials.iter().zip(&truth.trials) {
        let cycles = segment_cycles(trial, &tt.events).unwrap();
        assert_eq!(cycles.len(), cfg.cycles_per_trial);
        for (cy, p) in cycles.iter().zip(&tt.cycles) {
            assert_eq!(cy.n_rows, p.period_samples);
        }
    }
}

#[test]
fn noiseless_trial_yields_every_embedded_cycle() {
    let cfg = GeneratorConfig {
        n_subjects_male: 1,
        n_subjects_female: 0,
        weights_kg: vec![13.6],
        n_channels: 12,
        cycles_per_trial: 7,
        ..GeneratorConfig::default()
    }
    .noiseless();
    let (trials, _) = generate_dataset(&cfg).unwrap();
    let ds = build_dataset(&trials, &PipelineParams::default()).unwrap();
    assert_eq!(ds.len(), 7);
    assert!(ds.cycles.iter().all(|c| c.data.len() == CYCLE_LEN * 12));
}

#[test]
fn roster_is_deduplicated_per_subject() {
    let cfg = GeneratorConfig {
        n_subjects_male: 1,
        n_subjects_female: 0,
        weights_kg: vec![4.5, 13.6],
        n_channels: 12,
        cycles_per_trial: 2,
        ..GeneratorConfig::default()
    };
    let (trials, _) = generate_dataset(&cfg).unwrap();
    assert_eq!(trials.len(), 2);
    let ds = build_dataset(&trials, &PipelineParams::default()).unwrap();
    assert_eq!(ds.subjects.len(), 1);
    assert_eq!(ds.subjects[0].sex, Sex::Male);
}

#[test]
fn build_is_deterministic() {
    let cfg = event_config(11, 0.05);
    let (trials, _) = generate_dataset(&cfg).unwrap();
    let a = build_dataset(&trials, &PipelineParams::default()).unwrap();
    let b = build_dataset(&trials, &PipelineParams::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn applying_train_stats_is_an_affine_round_trip() {
    let cfg = event_config(5, 0.05);
    let (trials, _) = generate_dataset(&cfg).unwrap();
    let ds = build_dataset(&trials, &PipelineParams::default()).unwrap();
    let train = ds.filter(|c| c.sex == Sex::Male);
    let test = ds.filter(|c| c.sex == Sex::Female);
    let stats = normalize(&train, None).unwrap().channel_stats.unwrap();
    let once = normalize(&test, Some(&stats)).unwrap();
    let back = denormalize(&once, &stats).unwrap();
    for (a, b) in back.cycles.iter().zip(&test.cycles) {
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x - y).abs() < 1e-6);
        }
    }
}
