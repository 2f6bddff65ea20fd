#![allow(dead_code)]

use fairload::dvae::{
    ArchConfig, Batch, DecoderVariance, Dvae, IeRouting, LossBreakdown, LossWeights, Mode, Noise,
    StepOptions,
};
use fairload::nn::Module;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The reduced architecture used for derivative checks.
pub fn reduced_arch() -> ArchConfig {
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

pub fn tiny_model(mode: Mode, variance: DecoderVariance, seed: u64) -> Dvae {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Dvae::new(reduced_arch(), mode, variance, &mut rng).unwrap()
}

/// Reduced model with every parameter drawn at random, biases included, so
/// that no ReLU input sits exactly on its kink.
pub fn randomized_model(mode: Mode, variance: DecoderVariance, seed: u64) -> Dvae {
    let mut model = tiny_model(mode, variance, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    for (_, t) in model.params_mut() {
        for v in &mut t.data {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    model
}

/// Random batch with both sexes present.
pub fn tiny_batch(arch: &ArchConfig, size: usize, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Batch {
        x: (0..size * arch.cycle_len()).map(|_| rng.random_range(-1.5..1.5)).collect(),
        y: (0..size).map(|_| rng.random_range(-1.0..1.0)).collect(),
        sex: (0..size).map(|i| i % 2).collect(),
    }
}

pub const COMPONENTS: [&str; 3] = ["vae", "dc", "ie"];

pub fn component(l: &LossBreakdown, which: &str) -> f64 {
    match which {
        "vae" => l.vae_loss,
        "dc" => l.discriminative_loss,
        "ie" => l.independence_loss,
        _ => unreachable!(),
    }
}

pub fn weights_for(which: &str) -> LossWeights {
    let mut w = LossWeights { vae: 0.0, dc: 0.0, ie: 0.0 };
    match which {
        "vae" => w.vae = 1.0,
        "dc" => w.dc = 1.0,
        "ie" => w.ie = 1.0,
        _ => unreachable!(),
    }
    w
}

pub fn evaluate(model: &Dvae, batch: &Batch, noise: &Noise) -> LossBreakdown {
    let opts = StepOptions { beta1: 1.0, beta2: 0.1, update_running: false };
    let mut m = model.clone();
    m.forward_loss(batch, noise, &opts, &mut ChaCha8Rng::seed_from_u64(0)).unwrap().0
}

/// Analytic gradient of one component, flattened in parameter order.
pub fn analytic(model: &Dvae, batch: &Batch, noise: &Noise, which: &str, routing: IeRouting) -> Vec<(String, f64)> {
    let opts = StepOptions { beta1: 1.0, beta2: 0.1, update_running: false };
    let mut m = model.clone();
    let (_, tape) = m.forward_loss(batch, noise, &opts, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let mut grad = model.zeros_like();
    model.backward(&tape, weights_for(which), routing, &mut grad);
    grad.params()
        .into_iter()
        .flat_map(|(n, t)| t.data.iter().map(move |v| (n.clone(), *v)).collect::<Vec<_>>())
        .collect()
}

/// Central differences of one component, flattened in parameter order.
pub fn numeric(model: &Dvae, batch: &Batch, noise: &Noise, which: &str, h: f64) -> Vec<f64> {
    let sizes: Vec<usize> = model.params().iter().map(|(_, t)| t.len()).collect();
    let mut out = Vec::new();
    for (k, &n) in sizes.iter().enumerate() {
        for i in 0..n {
            let mut plus = model.clone();
            plus.params_mut()[k].1.data[i] += h;
            let mut minus = model.clone();
            minus.params_mut()[k].1.data[i] -= h;
            let fp = component(&evaluate(&plus, batch, noise), which);
            let fm = component(&evaluate(&minus, batch, noise), which);
            out.push((fp - fm) / (2.0 * h));
        }
    }
    out
}

/// Relative error with a floor on the denominator. Central differences of a
/// loss near 30 with h = 1e-5 resolve gradients to about 1e-9, so values
/// smaller than the floor are compared at that absolute resolution instead.
pub const REL_FLOOR: f64 = 1e-5;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

pub fn is_head(name: &str) -> bool {
    name.starts_with("regressor") || name.starts_with("classifier")
}
