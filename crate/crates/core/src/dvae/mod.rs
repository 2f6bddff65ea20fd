//! Debiasing variational autoencoder.
//!
//! Two convolutional encoders map a gait cycle to a sex-agnostic latent `z`
//! and a sex-specific latent `zsex`. A shared decoder reconstructs the cycle
//! from both. A regressor reads load from `z` and a classifier reads sex
//! from `zsex`; the independence term then asks the same heads to fail on
//! the swapped latents, and only the encoders are updated by that term.
//!
//! The plain VAE ablation uses a single encoder and the regressor only.

mod artifact;
mod loss;
mod net;
mod train;

pub use artifact::{load_model, save_model, MODEL_FILE, PARAMS_FILE};
pub use loss::{
    discriminative_loss, gaussian_nll, independence_excitation_loss, kl_diag_gaussian,
    reparameterize, Batch, IeRouting, LossBreakdown, LossWeights, Noise, StepOptions, Tape,
};
pub use net::{Decoder, Encoder, Head};
pub use train::{
    export_latents, train, train_with_arch, write_training_log, EpochLog, TrainedModel, LOG_FILE,
};
pub(crate) use train::{check_single_trial, csv_err};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Module, Tensor};

/// Hard bounds applied to every encoder log-variance output.
pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Dvae,
    PlainVae,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Dvae => "dvae",
            Mode::PlainVae => "plain_vae",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderVariance {
    FixedUnit,
    LearnedScalar,
}

/// Layer widths of one model instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub seq_len: usize,
    pub n_channels: usize,
    pub conv_filters: [usize; 3],
    pub kernel: usize,
    pub enc_hidden: [usize; 2],
    pub latent_dim: usize,
    pub head_hidden: [usize; 2],
    pub batch_norm: bool,
    pub dropout: f64,
}

impl ArchConfig {
    /// Full-size widths multiplied by `arch_scale` (each at least 1).
    pub fn scaled(seq_len: usize, n_channels: usize, arch_scale: f64, latent_dim: usize) -> Result<Self> {
        if !(arch_scale.is_finite() && arch_scale > 0.0) {
            return Err(Error::Parameter(format!("arch_scale must be positive, got {arch_scale}")));
        }
        let w = |base: usize| ((base as f64 * arch_scale).round() as usize).max(1);
        let arch = ArchConfig {
            seq_len,
            n_channels,
            conv_filters: [w(64), w(128), w(256)],
            kernel: 5,
            enc_hidden: [w(128), w(64)],
            latent_dim,
            head_hidden: [w(128), w(64)],
            batch_norm: true,
            dropout: 0.25,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seq_len == 0 || self.seq_len % 8 != 0 {
            return Err(Error::Parameter(format!(
                "sequence length must be a positive multiple of 8, got {}",
                self.seq_len
            )));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Parameter(format!("kernel size must be odd, got {}", self.kernel)));
        }
        let widths = self
            .conv_filters
            .iter()
            .chain(&self.enc_hidden)
            .chain(&self.head_hidden)
            .chain([&self.n_channels, &self.latent_dim]);
        if widths.into_iter().any(|&w| w == 0) {
            return Err(Error::Parameter("layer widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Parameter(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }

    /// Length of the flattened encoder feature map.
    pub fn flat_dim(&self) -> usize {
        self.conv_filters[2] * self.seq_len / 8
    }

    pub fn cycle_len(&self) -> usize {
        self.seq_len * self.n_channels
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    pub mc_samples: usize,
    pub decoder_variance: DecoderVariance,
    pub target_standardization: bool,
    pub mode: Mode,
    pub arch_scale: f64,
    pub latent_dim: usize,
    /// Dropout rate of the regressor and classifier heads.
    pub head_dropout: f64,
    /// After the last epoch, reset head batch-norm statistics to those of
    /// the posterior means the heads see at inference.
    pub recalibrate_batch_norm: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 64,
            beta1: 1.0,
            beta2: 0.1,
            seed: 0,
            mc_samples: 1,
            decoder_variance: DecoderVariance::FixedUnit,
            target_standardization: true,
            mode: Mode::Dvae,
            arch_scale: 1.0,
            latent_dim: 16,
            head_dropout: 0.25,
            recalibrate_batch_norm: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Parameter(format!(
                "learning rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.mc_samples == 0 {
            return Err(Error::Parameter(
                "epochs, batch_size and mc_samples must be at least 1".into(),
            ));
        }
        if !(self.beta1 >= 0.0 && self.beta2 >= 0.0) {
            return Err(Error::Parameter(format!(
                "betas must be non-negative, got {} and {}",
                self.beta1, self.beta2
            )));
        }
        if self.latent_dim == 0 {
            return Err(Error::Parameter("latent_dim must be positive".into()));
        }
        Ok(())
    }
}

/// All trainable tensors and buffers of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct Dvae {
    pub arch: ArchConfig,
    pub mode: Mode,
    pub encoder: Encoder,
    pub encoder_sex: Option<Encoder>,
    pub decoder: Decoder,
    pub regressor: Head,
    pub classifier: Option<Head>,
}

/// Posterior parameters for a batch, row-major `[batch × latent_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Latents {
    pub z_mean: Vec<f64>,
    pub z_logvar: Vec<f64>,
    pub zsex_mean: Option<Vec<f64>>,
    pub zsex_logvar: Option<Vec<f64>>,
}

impl Dvae {
    pub fn new(arch: ArchConfig, mode: Mode, variance: DecoderVariance, rng: &mut impl Rng) -> Result<Self> {
        arch.validate()?;
        let encoder = Encoder::new(&arch, rng);
        let encoder_sex = (mode == Mode::Dvae).then(|| Encoder::new(&arch, rng));
        let decoder_in = match mode {
            Mode::Dvae => 2 * arch.latent_dim,
            Mode::PlainVae => arch.latent_dim,
        };
        let decoder = Decoder::new(&arch, decoder_in, variance, rng);
        let regressor = Head::new(&arch, 1, rng);
        let classifier = (mode == Mode::Dvae).then(|| Head::new(&arch, 2, rng));
        Ok(Dvae {
            arch,
            mode,
            encoder,
            encoder_sex,
            decoder,
            regressor,
            classifier,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    pub fn variance(&self) -> DecoderVariance {
        if self.decoder.log_variance.is_some() {
            DecoderVariance::LearnedScalar
        } else {
            DecoderVariance::FixedUnit
        }
    }

    /// A same-architecture instance with every tensor zeroed, used to hold gradients.
    pub fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        g.zero_params();
        for (_, t) in g.buffers_mut() {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
        g
    }

    pub(crate) fn check_input(&self, x: &[f64], batch: usize) -> Result<()> {
        if batch == 0 || x.len() != batch * self.arch.cycle_len() {
            return Err(Error::Shape(format!(
                "expected {batch} cycles of {} × {} values, got {} values",
                self.arch.seq_len,
                self.arch.n_channels,
                x.len()
            )));
        }
        Ok(())
    }

    /// Eval-mode posteriors for a batch of normalised cycles.
    pub fn encode(&self, x: &[f64], batch: usize) -> Result<Latents> {
        self.check_input(x, batch)?;
        let (z_mean, z_logvar, _) = self.encoder.forward(x, batch);
        let (zsex_mean, zsex_logvar) = match &self.encoder_sex {
            Some(enc) => {
                let (m, l, _) = enc.forward(x, batch);
                (Some(m), Some(l))
            }
            None => (None, None),
        };
        let out = Latents {
            z_mean,
            z_logvar,
            zsex_mean,
            zsex_logvar,
        };
        let finite = out
            .z_mean
            .iter()
            .chain(&out.z_logvar)
            .chain(out.zsex_mean.iter().flatten())
            .chain(out.zsex_logvar.iter().flatten())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Numeric("encoder produced non-finite activations".into()));
        }
        Ok(out)
    }

    /// Reconstruction mean for a batch of latents. `zsex` is required in
    /// dvae mode and rejected in plain mode.
    pub fn decode(&self, z: &[f64], zsex: Option<&[f64]>, batch: usize) -> Result<Vec<f64>> {
        let d = self.latent_dim();
        if z.len() != batch * d {
            return Err(Error::Shape(format!("expected {batch} × {d} latent values, got {}", z.len())));
        }
        let input = match (self.mode, zsex) {
            (Mode::Dvae, Some(s)) => {
                if s.len() != z.len() {
                    return Err(Error::Shape("latent blocks differ in size".into()));
                }
                concat_rows(z, s, d)
            }
            (Mode::Dvae, None) => {
                return Err(Error::Contract("dvae decoder needs the sex-specific latent".into()))
            }
            (Mode::PlainVae, None) => z.to_vec(),
            (Mode::PlainVae, Some(_)) => {
                return Err(Error::Contract("plain VAE has no sex-specific latent".into()))
            }
        };
        Ok(self.decoder.forward(&input, batch).0)
    }

    /// Eval-mode regressor output on `z_mean`, in standardised target units.
    pub fn predict_standardized(&self, x: &[f64], batch: usize) -> Result<Vec<f64>> {
        let lat = self.encode(x, batch)?;
        Ok(self.regressor.forward_eval(&lat.z_mean))
    }
}

impl Module for Dvae {
    fn visit_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        let p = |n: &str| crate::nn::join(prefix, n);
        self.encoder.visit_params(&p("encoder"), out);
        if let Some(e) = &self.encoder_sex {
            e.visit_params(&p("encoder_sex"), out);
        }
        self.decoder.visit_params(&p("decoder"), out);
        self.regressor.visit_params(&p("regressor"), out);
        if let Some(c) = &self.classifier {
            c.visit_params(&p("classifier"), out);
        }
    }

    fn visit_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        let p = |n: &str| crate::nn::join(prefix, n);
        self.encoder.visit_params_mut(&p("encoder"), out);
        if let Some(e) = &mut self.encoder_sex {
            e.visit_params_mut(&p("encoder_sex"), out);
        }
        self.decoder.visit_params_mut(&p("decoder"), out);
        self.regressor.visit_params_mut(&p("regressor"), out);
        if let Some(c) = &mut self.classifier {
            c.visit_params_mut(&p("classifier"), out);
        }
    }

    fn visit_buffers<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        let p = |n: &str| crate::nn::join(prefix, n);
        self.regressor.visit_buffers(&p("regressor"), out);
        if let Some(c) = &self.classifier {
            c.visit_buffers(&p("classifier"), out);
        }
    }

    fn visit_buffers_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        let p = |n: &str| crate::nn::join(prefix, n);
        self.regressor.visit_buffers_mut(&p("regressor"), out);
        if let Some(c) = &mut self.classifier {
            c.visit_buffers_mut(&p("classifier"), out);
        }
    }
}

/// Row-wise concatenation of two `[batch × d]` matrices.
pub(crate) fn concat_rows(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    for (ra, rb) in a.chunks_exact(d).zip(b.chunks_exact(d)) {
        out.extend_from_slice(ra);
        out.extend_from_slice(rb);
    }
    out
}
