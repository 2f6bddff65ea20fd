use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::net::{DecoderTape, EncoderTape, HeadTape};
use super::{concat_rows, Dvae, Mode};
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// One mini-batch of normalised cycles with standardised load targets and
/// sex class indices (male 0, female 1).
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub sex: Vec<usize>,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.y.len()
    }
}

/// Standard normal draws for the reparameterised samples, one
/// `[batch × latent_dim]` block per Monte Carlo draw.
#[derive(Debug, Clone, PartialEq)]
pub struct Noise {
    pub z: Vec<Vec<f64>>,
    pub zsex: Vec<Vec<f64>>,
}

impl Noise {
    pub fn sample(rng: &mut impl Rng, draws: usize, batch: usize, latent_dim: usize, mode: Mode) -> Self {
        let mut block = || -> Vec<f64> {
            (0..batch * latent_dim).map(|_| rng.sample(StandardNormal)).collect()
        };
        let z: Vec<Vec<f64>> = (0..draws).map(|_| block()).collect();
        let zsex = match mode {
            Mode::Dvae => (0..draws).map(|_| block()).collect(),
            Mode::PlainVae => Vec::new(),
        };
        Noise { z, zsex }
    }

    pub fn zeros(draws: usize, batch: usize, latent_dim: usize, mode: Mode) -> Self {
        let z = vec![vec![0.0; batch * latent_dim]; draws];
        let zsex = match mode {
            Mode::Dvae => z.clone(),
            Mode::PlainVae => Vec::new(),
        };
        Noise { z, zsex }
    }

    pub fn draws(&self) -> usize {
        self.z.len()
    }
}

/// Batch-averaged loss components. `total = vae_loss + beta1 *
/// discriminative_loss + beta2 * independence_loss`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub vae_loss: f64,
    pub reconstruction_term: f64,
    pub kl_agnostic: f64,
    pub kl_specific: f64,
    pub discriminative_loss: f64,
    pub regressor_term: f64,
    pub classifier_term: f64,
    pub independence_loss: f64,
    pub total: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl LossBreakdown {
    pub fn additivity_error(&self) -> f64 {
        (self.total - (self.vae_loss + self.beta1 * self.discriminative_loss + self.beta2 * self.independence_loss))
            .abs()
    }

    pub fn is_finite(&self) -> bool {
        [
            self.vae_loss,
            self.reconstruction_term,
            self.kl_agnostic,
            self.kl_specific,
            self.discriminative_loss,
            self.independence_loss,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Multipliers applied to each component when back-propagating.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub vae: f64,
    pub dc: f64,
    pub ie: f64,
}

impl LossWeights {
    pub fn total(beta1: f64, beta2: f64) -> Self {
        LossWeights { vae: 1.0, dc: beta1, ie: beta2 }
    }
}

/// Which parameters receive the independence-term gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IeRouting {
    /// Encoders only; the heads act as constants inside that term.
    EncodersOnly,
    /// Every parameter the term depends on. Only useful for checking.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOptions {
    pub beta1: f64,
    pub beta2: f64,
    pub update_running: bool,
}

struct HeadPass {
    out: Vec<f64>,
    tape: HeadTape,
}

struct Draw {
    dec: DecoderTape,
    residual: Vec<f64>,
}

/// Everything the backward pass needs from one forward evaluation.
pub struct Tape {
    batch: usize,
    enc: EncoderTape,
    enc_sex: Option<EncoderTape>,
    z_mean: Vec<f64>,
    z_logvar: Vec<f64>,
    s_mean: Vec<f64>,
    s_logvar: Vec<f64>,
    noise: Noise,
    draws: Vec<Draw>,
    reg_dc: HeadPass,
    cls_dc: Option<HeadPass>,
    reg_ie: Option<HeadPass>,
    cls_ie: Option<HeadPass>,
    y: Vec<f64>,
    sex: Vec<usize>,
}

/// `½ Σ (exp(logvar) + mean² − 1 − logvar)`, the KL divergence from a
/// diagonal Gaussian to the standard normal.
pub fn kl_diag_gaussian(mean: &[f64], logvar: &[f64]) -> f64 {
    assert_eq!(mean.len(), logvar.len());
    0.5 * mean
        .iter()
        .zip(logvar)
        .map(|(m, lv)| lv.exp_m1() - lv + m * m)
        .sum::<f64>()
}

pub fn reparameterize(mean: &[f64], logvar: &[f64], eps: &[f64]) -> Vec<f64> {
    mean.iter()
        .zip(logvar)
        .zip(eps)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect()
}

/// Negative log-likelihood of `x` under `N(xhat, exp(log_variance) I)`.
pub fn gaussian_nll(x: &[f64], xhat: &[f64], log_variance: f64) -> f64 {
    let inv = (-log_variance).exp();
    let sq: f64 = x.iter().zip(xhat).map(|(a, b)| (a - b) * (a - b)).sum();
    0.5 * (sq * inv + x.len() as f64 * (log_variance + LN_2PI))
}

/// Mean squared error and its gradient w.r.t. `pred`.
fn mse(pred: &[f64], y: &[f64]) -> (f64, Vec<f64>) {
    let n = y.len() as f64;
    let loss = pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n;
    let grad = pred.iter().zip(y).map(|(p, t)| 2.0 * (p - t) / n).collect();
    (loss, grad)
}

/// Mean two-class cross-entropy of `logits` (`[batch × 2]`) and its gradient.
fn cross_entropy(logits: &[f64], sex: &[usize]) -> (f64, Vec<f64>) {
    let n = sex.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (row, &s) in logits.chunks_exact(2).zip(sex) {
        let m = row[0].max(row[1]);
        let lse = m + ((row[0] - m).exp() + (row[1] - m).exp()).ln();
        loss += lse - row[s];
        for (k, &l) in row.iter().enumerate() {
            let p = (l - lse).exp();
            grad.push((p - if k == s { 1.0 } else { 0.0 }) / n);
        }
    }
    (loss / n, grad)
}

fn check_labels(z: &[f64], y: &[f64], sex: &[usize], d: usize) -> Result<()> {
    if z.len() != y.len() * d || sex.len() != y.len() {
        return Err(Error::Shape(format!(
            "{} latent values, {} targets and {} sex labels do not line up",
            z.len(),
            y.len(),
            sex.len()
        )));
    }
    if sex.iter().any(|&s| s > 1) {
        return Err(Error::Data("sex labels must be 0 or 1".into()));
    }
    Ok(())
}

/// Regressor MSE on `z` and classifier cross-entropy on `zsex`, with the
/// heads in eval mode. Returns `(regressor_term, classifier_term)`; the
/// classifier term is 0 in plain mode.
pub fn discriminative_loss(
    model: &Dvae,
    z: &[f64],
    zsex: Option<&[f64]>,
    y: &[f64],
    sex: &[usize],
) -> Result<(f64, f64)> {
    check_labels(z, y, sex, model.latent_dim())?;
    let reg = mse(&model.regressor.forward_eval(z), y).0;
    let cls = match (model.mode, &model.classifier, zsex) {
        (Mode::Dvae, Some(c), Some(s)) => cross_entropy(&c.forward_eval(s), sex).0,
        (Mode::Dvae, _, _) => {
            return Err(Error::Contract("dvae discriminative loss needs the sex-specific latent".into()))
        }
        (Mode::PlainVae, _, _) => 0.0,
    };
    Ok((reg, cls))
}

/// `−[MSE(r(zsex), y) + CE(c(z), sex)]` with the heads in eval mode.
pub fn independence_excitation_loss(
    model: &Dvae,
    z: &[f64],
    zsex: &[f64],
    y: &[f64],
    sex: &[usize],
) -> Result<f64> {
    let classifier = match (model.mode, &model.classifier) {
        (Mode::Dvae, Some(c)) => c,
        _ => return Err(Error::Contract("independence term is defined for dvae mode only".into())),
    };
    check_labels(z, y, sex, model.latent_dim())?;
    check_labels(zsex, y, sex, model.latent_dim())?;
    let reg = mse(&model.regressor.forward_eval(zsex), y).0;
    let cls = cross_entropy(&classifier.forward_eval(z), sex).0;
    Ok(-(reg + cls))
}

impl Dvae {
    /// Training-mode forward pass of the full objective.
    pub fn forward_loss(
        &mut self,
        batch: &Batch,
        noise: &Noise,
        opts: &StepOptions,
        rng: &mut impl Rng,
    ) -> Result<(LossBreakdown, Tape)> {
        let b = batch.size();
        self.check_input(&batch.x, b)?;
        let d = self.latent_dim();
        check_labels(&vec![0.0; b * d], &batch.y, &batch.sex, d)?;
        let dvae = self.mode == Mode::Dvae;
        if noise.draws() == 0
            || noise.z.iter().chain(&noise.zsex).any(|e| e.len() != b * d)
            || (dvae && noise.zsex.len() != noise.z.len())
        {
            return Err(Error::Shape("noise blocks do not match the batch".into()));
        }
        let bf = b as f64;

        let (z_mean, z_logvar, enc) = self.encoder.forward(&batch.x, b);
        let (s_mean, s_logvar, enc_sex) = match &self.encoder_sex {
            Some(e) => {
                let (m, l, t) = e.forward(&batch.x, b);
                (m, l, Some(t))
            }
            None => (Vec::new(), Vec::new(), None),
        };
        let kl_agnostic = kl_diag_gaussian(&z_mean, &z_logvar) / bf;
        let kl_specific = if dvae { kl_diag_gaussian(&s_mean, &s_logvar) / bf } else { 0.0 };

        let log_var = self.decoder.log_variance.as_ref().map_or(0.0, |t| t.data[0]);
        let mut draws = Vec::with_capacity(noise.draws());
        let mut recon = 0.0;
        let mut z0 = Vec::new();
        let mut s0 = Vec::new();
        for m in 0..noise.draws() {
            let z = reparameterize(&z_mean, &z_logvar, &noise.z[m]);
            let (input, s) = if dvae {
                let s = reparameterize(&s_mean, &s_logvar, &noise.zsex[m]);
                (concat_rows(&z, &s, d), s)
            } else {
                (z.clone(), Vec::new())
            };
            let (xhat, dec) = self.decoder.forward(&input, b);
            recon += gaussian_nll(&batch.x, &xhat, log_var) / bf;
            let residual = xhat.iter().zip(&batch.x).map(|(a, x)| a - x).collect();
            draws.push(Draw { dec, residual });
            if m == 0 {
                z0 = z;
                s0 = s;
            }
        }
        recon /= noise.draws() as f64;
        let vae_loss = recon + kl_agnostic + kl_specific;

        let (reg_out, reg_tape) = self.regressor.forward_train(&z0, opts.update_running, rng);
        let regressor_term = mse(&reg_out, &batch.y).0;
        let reg_dc = HeadPass { out: reg_out, tape: reg_tape };
        let (mut cls_dc, mut reg_ie, mut cls_ie) = (None, None, None);
        let mut classifier_term = 0.0;
        let mut independence_loss = 0.0;
        if dvae {
            let classifier = self.classifier.as_mut().expect("dvae mode has a classifier");
            let (out, tape) = classifier.forward_train(&s0, opts.update_running, rng);
            classifier_term = cross_entropy(&out, &batch.sex).0;
            cls_dc = Some(HeadPass { out, tape });
            let (c_out, c_tape) = classifier.forward_train(&z0, false, rng);
            let (r_out, r_tape) = self.regressor.forward_train(&s0, false, rng);
            independence_loss = -(mse(&r_out, &batch.y).0 + cross_entropy(&c_out, &batch.sex).0);
            reg_ie = Some(HeadPass { out: r_out, tape: r_tape });
            cls_ie = Some(HeadPass { out: c_out, tape: c_tape });
        }
        let discriminative_loss = regressor_term + classifier_term;
        let total = vae_loss + opts.beta1 * discriminative_loss + opts.beta2 * independence_loss;
        let breakdown = LossBreakdown {
            vae_loss,
            reconstruction_term: recon,
            kl_agnostic,
            kl_specific,
            discriminative_loss,
            regressor_term,
            classifier_term,
            independence_loss,
            total,
            beta1: opts.beta1,
            beta2: opts.beta2,
        };
        if !breakdown.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss: {breakdown:?}")));
        }
        let tape = Tape {
            batch: b,
            enc,
            enc_sex,
            z_mean,
            z_logvar,
            s_mean,
            s_logvar,
            noise: noise.clone(),
            draws,
            reg_dc,
            cls_dc,
            reg_ie,
            cls_ie,
            y: batch.y.clone(),
            sex: batch.sex.clone(),
        };
        Ok((breakdown, tape))
    }

    /// Accumulates `w.vae * dℓ_VAE + w.dc * dℓ_DC + w.ie * dℓ_IE` into `grad`.
    pub fn backward(&self, tape: &Tape, w: LossWeights, routing: IeRouting, grad: &mut Dvae) {
        let b = tape.batch;
        let bf = b as f64;
        let d = self.latent_dim();
        let dvae = self.mode == Mode::Dvae;

        // KL terms.
        let kl_grad = |mean: &[f64], logvar: &[f64]| -> (Vec<f64>, Vec<f64>) {
            (
                mean.iter().map(|m| w.vae * m / bf).collect(),
                logvar.iter().map(|lv| w.vae * 0.5 * lv.exp_m1() / bf).collect(),
            )
        };
        let (mut dz_mean, mut dz_logvar) = kl_grad(&tape.z_mean, &tape.z_logvar);
        let (mut ds_mean, mut ds_logvar) = if dvae {
            kl_grad(&tape.s_mean, &tape.s_logvar)
        } else {
            (Vec::new(), Vec::new())
        };

        // Gradients w.r.t. the sampled latents of every draw.
        let draws = tape.draws.len() as f64;
        let mut dz: Vec<Vec<f64>> = vec![vec![0.0; b * d]; tape.draws.len()];
        let mut ds: Vec<Vec<f64>> = if dvae { dz.clone() } else { Vec::new() };
        if w.vae != 0.0 {
            let log_var = self.decoder.log_variance.as_ref().map_or(0.0, |t| t.data[0]);
            let inv = (-log_var).exp();
            let scale = w.vae / (bf * draws);
            for (m, draw) in tape.draws.iter().enumerate() {
                let dxhat: Vec<f64> = draw.residual.iter().map(|r| scale * r * inv).collect();
                if let Some(g) = grad.decoder.log_variance.as_mut() {
                    let sq: f64 = draw.residual.iter().map(|r| r * r).sum();
                    g.data[0] += scale * 0.5 * (draw.residual.len() as f64 - sq * inv);
                }
                let dzc = self.decoder.backward(&draw.dec, &dxhat, &mut grad.decoder);
                if dvae {
                    for (row, zc) in dzc.chunks_exact(2 * d).enumerate() {
                        dz[m][row * d..(row + 1) * d].copy_from_slice(&zc[..d]);
                        ds[m][row * d..(row + 1) * d].copy_from_slice(&zc[d..]);
                    }
                } else {
                    dz[m] = dzc;
                }
            }
        }

        let add = |acc: &mut Vec<f64>, g: Vec<f64>| acc.iter_mut().zip(g).for_each(|(a, v)| *a += v);
        let scaled = |g: Vec<f64>, s: f64| -> Vec<f64> { g.into_iter().map(|v| v * s).collect() };

        if w.dc != 0.0 {
            let (_, g) = mse(&tape.reg_dc.out, &tape.y);
            let dzr = self.regressor.backward(&tape.reg_dc.tape, &scaled(g, w.dc), &mut grad.regressor);
            add(&mut dz[0], dzr);
            if let (Some(pass), Some(c)) = (&tape.cls_dc, &self.classifier) {
                let (_, g) = cross_entropy(&pass.out, &tape.sex);
                let gc = grad.classifier.as_mut().expect("gradient mirrors the model");
                add(&mut ds[0], c.backward(&pass.tape, &scaled(g, w.dc), gc));
            }
        }

        if w.ie != 0.0 && dvae {
            let classifier = self.classifier.as_ref().expect("dvae mode has a classifier");
            let mut scratch_reg = None;
            let mut scratch_cls = None;
            let (greg, gcls) = match routing {
                IeRouting::Full => (
                    &mut grad.regressor,
                    grad.classifier.as_mut().expect("gradient mirrors the model"),
                ),
                IeRouting::EncodersOnly => (
                    scratch_reg.insert(self.regressor.clone()),
                    scratch_cls.insert(classifier.clone()),
                ),
            };
            let pass = tape.reg_ie.as_ref().expect("dvae tape has cross passes");
            let (_, g) = mse(&pass.out, &tape.y);
            add(&mut ds[0], self.regressor.backward(&pass.tape, &scaled(g, -w.ie), greg));
            let pass = tape.cls_ie.as_ref().expect("dvae tape has cross passes");
            let (_, g) = cross_entropy(&pass.out, &tape.sex);
            add(&mut dz[0], classifier.backward(&pass.tape, &scaled(g, -w.ie), gcls));
        }

        // Through the reparameterisation into the posterior parameters.
        let through = |dmean: &mut [f64], dlogvar: &mut [f64], logvar: &[f64], dsamp: &[Vec<f64>], eps: &[Vec<f64>]| {
            for (g, e) in dsamp.iter().zip(eps) {
                for i in 0..g.len() {
                    dmean[i] += g[i];
                    dlogvar[i] += g[i] * e[i] * 0.5 * (0.5 * logvar[i]).exp();
                }
            }
        };
        through(&mut dz_mean, &mut dz_logvar, &tape.z_logvar, &dz, &tape.noise.z);
        self.encoder.backward(&tape.enc, &dz_mean, &dz_logvar, &mut grad.encoder);
        if let (Some(enc), Some(t)) = (&self.encoder_sex, &tape.enc_sex) {
            through(&mut ds_mean, &mut ds_logvar, &tape.s_logvar, &ds, &tape.noise.zsex);
            let g = grad.encoder_sex.as_mut().expect("gradient mirrors the model");
            enc.backward(t, &ds_mean, &ds_logvar, g);
        }
    }
}
