use fairload::knn::{knn_fit, knn_predict, load_knn, save_knn};
use fairload::metrics::{
    mae, negative_residual_difference, positive_residual_difference, report, statistical_parity,
    PredictionRecord,
};
use fairload::signal::{ChannelStat, Dataset, GaitCycle, Sex, SubjectEntry, CYCLE_LEN};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dataset(rows: &[(Vec<f64>, f64)]) -> Dataset {
    let cycles = rows
        .iter()
        .enumerate()
        .map(|(i, (data, w))| GaitCycle {
            data: data.clone(),
            subject_id: format!("S{i:02}"),
            sex: if i % 2 == 0 { Sex::Male } else { Sex::Female },
            weight_kg: *w,
            trial_id: format!("T{i:02}"),
            cycle_index: 0,
        })
        .collect::<Vec<_>>();
    let subjects = cycles
        .iter()
        .map(|c| SubjectEntry { id: c.subject_id.clone(), sex: c.sex })
        .collect();
    Dataset {
        n_channels: 1,
        channel_names: vec!["ch".into()],
        cycles,
        subjects,
        channel_stats: Some(vec![ChannelStat { mean: 0.0, std: 1.0 }]),
    }
}

fn random_rows(rng: &mut ChaCha8Rng, n: usize) -> Vec<(Vec<f64>, f64)> {
    (0..n)
        .map(|_| {
            let data = (0..CYCLE_LEN).map(|_| rng.random_range(-2.0..2.0)).collect();
            (data, rng.random_range(0.0..30.0))
        })
        .collect()
}

/// Full sort by (distance, index), then the mean of the first k targets.
fn brute_force(rows: &[(Vec<f64>, f64)], q: &[f64], k: usize) -> f64 {
    let mut d: Vec<(f64, usize)> = rows
        .iter()
        .enumerate()
        .map(|(i, (x, _))| (x.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum(), i))
        .collect();
    d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    d[..k].iter().map(|&(_, i)| rows[i].1).sum::<f64>() / k as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn knn_matches_brute_force(seed in 0u64..10_000, n in 1usize..25, k_pick in 0usize..25) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = random_rows(&mut rng, n);
        let k = 1 + k_pick % n;
        let model = knn_fit(&dataset(&rows), k).unwrap();
        let q: Vec<f64> = (0..CYCLE_LEN).map(|_| rng.random_range(-2.0..2.0)).collect();
        let got = knn_predict(&model, &q).unwrap();
        prop_assert!((got - brute_force(&rows, &q, k)).abs() < 1e-9);
        let lo = rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
        let hi = rows.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(got >= lo - 1e-12 && got <= hi + 1e-12);
    }
}

#[test]
fn knn_with_k_equal_to_n_returns_the_target_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let rows = random_rows(&mut rng, 9);
    let model = knn_fit(&dataset(&rows), 9).unwrap();
    let mean = rows.iter().map(|r| r.1).sum::<f64>() / 9.0;
    assert!((knn_predict(&model, &rows[3].0).unwrap() - mean).abs() < 1e-12);
}

#[test]
fn knn_ties_prefer_the_earlier_training_cycle() {
    let same = vec![0.5; CYCLE_LEN];
    let rows = vec![(same.clone(), 1.0), (same.clone(), 2.0), (vec![9.0; CYCLE_LEN], 3.0)];
    let model = knn_fit(&dataset(&rows), 1).unwrap();
    assert_eq!(knn_predict(&model, &same).unwrap(), 1.0);
}

#[test]
fn knn_rejects_bad_k_and_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rows = random_rows(&mut rng, 3);
    assert!(knn_fit(&dataset(&rows), 0).is_err());
    assert!(knn_fit(&dataset(&rows), 4).is_err());
    let mut raw = dataset(&rows);
    raw.channel_stats = None;
    assert!(knn_fit(&raw, 1).is_err());
    let model = knn_fit(&dataset(&rows), 2).unwrap();
    assert!(knn_predict(&model, &[0.0; 3]).is_err());
}

#[test]
fn knn_artifact_round_trips_at_f32_precision() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let rows = random_rows(&mut rng, 6);
    let model = knn_fit(&dataset(&rows), 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_knn(dir.path(), &model).unwrap();
    let back = load_knn(dir.path()).unwrap();
    assert_eq!((back.k, back.dim, back.n_rows()), (3, CYCLE_LEN, 6));
    for (a, b) in back.rows.iter().zip(&model.rows) {
        assert_eq!(*a, *b as f32 as f64);
    }
    let q = &rows[0].0;
    assert!((knn_predict(&back, q).unwrap() - knn_predict(&model, q).unwrap()).abs() < 1e-5);
}

fn random_records(rng: &mut ChaCha8Rng) -> Vec<PredictionRecord> {
    let n = rng.random_range(2..60);
    let mut recs: Vec<PredictionRecord> = (0..n)
        .map(|i| PredictionRecord {
            subject_id: format!("s{}", i % 7),
            trial_id: format!("t{i}"),
            sex: if rng.random_bool(0.4) { Sex::Female } else { Sex::Male },
            y_true: rng.random_range(0.0..30.0),
            y_pred: rng.random_range(-5.0..35.0),
        })
        .collect();
    recs[0].sex = Sex::Female;
    recs[n - 1].sex = Sex::Male;
    recs
}

/// Straight-line recomputation over explicit per-group lists.
fn oracle(recs: &[PredictionRecord]) -> (f64, f64, f64, f64) {
    let group = |s: Sex| -> Vec<&PredictionRecord> { recs.iter().filter(|r| r.sex == s).collect() };
    let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (f, m) = (group(Sex::Female), group(Sex::Male));
    let preds = |g: &[&PredictionRecord]| -> Vec<f64> { g.iter().map(|r| r.y_pred).collect() };
    let pos = |g: &[&PredictionRecord]| -> Vec<f64> {
        g.iter().map(|r| if r.y_true > r.y_pred { r.y_true - r.y_pred } else { 0.0 }).collect()
    };
    let neg = |g: &[&PredictionRecord]| -> Vec<f64> {
        g.iter().map(|r| if r.y_true < r.y_pred { r.y_true - r.y_pred } else { 0.0 }).collect()
    };
    let abs: Vec<f64> = recs.iter().map(|r| (r.y_true - r.y_pred).abs()).collect();
    (
        avg(&abs),
        avg(&preds(&f)) - avg(&preds(&m)),
        (avg(&pos(&f)) - avg(&pos(&m))).abs(),
        (avg(&neg(&f)) - avg(&neg(&m))).abs(),
    )
}

#[test]
fn metrics_match_straight_line_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..1000 {
        let recs = random_records(&mut rng);
        let (m, sp, prd, nrd) = oracle(&recs);
        assert!((mae(&recs).unwrap() - m).abs() < 1e-9);
        assert!((statistical_parity(&recs).unwrap() - sp).abs() < 1e-9);
        assert!((positive_residual_difference(&recs).unwrap() - prd).abs() < 1e-9);
        assert!((negative_residual_difference(&recs).unwrap() - nrd).abs() < 1e-9);
    }
}

#[test]
fn residual_splits_exactly_into_positive_and_negative_parts() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..1000 {
        for r in random_records(&mut rng) {
            let e = r.residual();
            let (p, n) = (e.max(0.0), e.min(0.0));
            assert_eq!(p + n, e);
            assert_eq!(p - n, e.abs());
        }
    }
}

proptest! {
    #[test]
    fn swapping_sexes_negates_parity_and_keeps_gaps(seed in 0u64..5000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let recs = random_records(&mut rng);
        let swapped: Vec<PredictionRecord> = recs
            .iter()
            .cloned()
            .map(|mut r| {
                r.sex = if r.sex == Sex::Male { Sex::Female } else { Sex::Male };
                r
            })
            .collect();
        let (a, b) = (report(&recs).unwrap(), report(&swapped).unwrap());
        prop_assert!((a.sp + b.sp).abs() < 1e-9);
        prop_assert!((a.prd - b.prd).abs() < 1e-9);
        prop_assert!((a.nrd - b.nrd).abs() < 1e-9);
        prop_assert_eq!(a.mae_overall, b.mae_overall);
    }

    #[test]
    fn perfect_predictions_have_zero_error_gaps(ys in prop::collection::vec(0.0f64..30.0, 2..30)) {
        let recs: Vec<PredictionRecord> = ys
            .iter()
            .enumerate()
            .map(|(i, &y)| PredictionRecord {
                subject_id: "s".into(),
                trial_id: format!("t{i}"),
                sex: if i % 2 == 0 { Sex::Male } else { Sex::Female },
                y_true: y,
                y_pred: y,
            })
            .collect();
        let m = report(&recs).unwrap();
        prop_assert_eq!((m.mae_overall, m.prd, m.nrd), (0.0, 0.0, 0.0));
    }
}
