mod common;

use common::*;
use fairload::dvae::{DecoderVariance, IeRouting, Mode, Noise};
use fairload::nn::Module;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn worst_error(mode: Mode, variance: DecoderVariance, seed: u64, which: &str) -> (f64, String) {
    let model = randomized_model(mode, variance, seed);
    let batch = tiny_batch(&model.arch, 4, seed + 1);
    let noise = Noise::sample(&mut ChaCha8Rng::seed_from_u64(seed + 2), 2, 4, 2, mode);
    let a = analytic(&model, &batch, &noise, which, IeRouting::Full);
    let n = numeric(&model, &batch, &noise, which, 1e-5);
    a.iter()
        .zip(&n)
        .map(|((name, av), nv)| (rel_err(*av, *nv), name.clone()))
        .fold((0.0, String::new()), |w, e| if e.0 > w.0 { e } else { w })
}

#[test]
fn analytic_gradients_match_central_differences() {
    for seed in [7, 21, 99] {
        for (mode, variance) in [
            (Mode::Dvae, DecoderVariance::FixedUnit),
            (Mode::Dvae, DecoderVariance::LearnedScalar),
            (Mode::PlainVae, DecoderVariance::FixedUnit),
        ] {
            for which in COMPONENTS {
                if mode == Mode::PlainVae && which == "ie" {
                    continue;
                }
                let (err, at) = worst_error(mode, variance, seed, which);
                println!("seed {seed} {mode:?} {variance:?} {which}: {err:.2e} at {at}");
                assert!(err < 1e-4, "{which} gradient off by {err:.2e} at {at}");
            }
        }
    }
}

#[test]
fn routed_independence_gradient_skips_the_heads() {
    let model = randomized_model(Mode::Dvae, DecoderVariance::FixedUnit, 3);
    let batch = tiny_batch(&model.arch, 6, 4);
    let noise = Noise::sample(&mut ChaCha8Rng::seed_from_u64(5), 1, 6, 2, Mode::Dvae);
    let routed = analytic(&model, &batch, &noise, "ie", IeRouting::EncodersOnly);
    let full = analytic(&model, &batch, &noise, "ie", IeRouting::Full);
    let mut heads_nonzero = 0;
    for ((name, r), (_, f)) in routed.iter().zip(&full) {
        if is_head(name) {
            assert_eq!(*r, 0.0, "{name}");
            heads_nonzero += (*f != 0.0) as usize;
        } else {
            assert_eq!(r, f, "{name}");
        }
    }
    // The unrouted gradient does reach the heads, so the check above is not vacuous.
    assert!(heads_nonzero > 0);
}

#[test]
fn head_gradient_of_total_ignores_independence_term() {
    let model = randomized_model(Mode::Dvae, DecoderVariance::FixedUnit, 11);
    let batch = tiny_batch(&model.arch, 4, 12);
    let noise = Noise::sample(&mut ChaCha8Rng::seed_from_u64(13), 1, 4, 2, Mode::Dvae);
    let run = |w| {
        let opts = fairload::dvae::StepOptions { beta1: 1.0, beta2: 0.1, update_running: false };
        let mut m = model.clone();
        let (_, tape) = m.forward_loss(&batch, &noise, &opts, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut g = model.zeros_like();
        model.backward(&tape, w, IeRouting::EncodersOnly, &mut g);
        g
    };
    let total = run(fairload::dvae::LossWeights::total(1.0, 0.1));
    let without = run(fairload::dvae::LossWeights { vae: 1.0, dc: 1.0, ie: 0.0 });
    for ((name, a), (_, b)) in total.params().iter().zip(without.params()) {
        if is_head(name) {
            assert_eq!(a.data, b.data, "{name}");
        }
    }
}

#[test]
fn batchnorm_and_dropout_heads_differentiate_correctly() {
    // Dropout masks come from a fixed seed inside `evaluate`, so each
    // perturbed evaluation sees the same mask.
    let mut model = randomized_model(Mode::Dvae, DecoderVariance::FixedUnit, 31);
    let mut arch = model.arch.clone();
    arch.batch_norm = true;
    arch.dropout = 0.25;
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    model.regressor = fairload::dvae::Head::new(&arch, 1, &mut rng);
    model.classifier = Some(fairload::dvae::Head::new(&arch, 2, &mut rng));
    model.arch = arch;
    let batch = tiny_batch(&model.arch, 6, 33);
    let noise = Noise::sample(&mut ChaCha8Rng::seed_from_u64(34), 1, 6, 2, Mode::Dvae);
    for which in ["dc", "ie"] {
        let a = analytic(&model, &batch, &noise, which, IeRouting::Full);
        let n = numeric(&model, &batch, &noise, which, 1e-5);
        for ((name, av), nv) in a.iter().zip(&n) {
            assert!(rel_err(*av, *nv) < 1e-4, "{which} {name}: {av} vs {nv}");
        }
    }
}
