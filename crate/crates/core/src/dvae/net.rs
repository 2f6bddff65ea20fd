use rand::Rng;

use super::{ArchConfig, DecoderVariance, LOGVAR_MAX, LOGVAR_MIN};
use crate::nn::{
    join, relu_backward, relu_inplace, upsample2, upsample2_backward, BatchNorm, BatchNormCache,
    Conv1d, ConvCache, ConvTranspose1d, Dropout, Linear, MaxPool2, Module, PoolCache, Tensor,
};

/// Three conv/ReLU/pool stages, two dense layers, then mean and
/// log-variance projections.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub convs: [Conv1d; 3],
    pub fc: [Linear; 2],
    pub mean: Linear,
    pub logvar: Linear,
}

pub struct EncoderTape {
    batch: usize,
    conv: Vec<ConvCache>,
    conv_out: Vec<Vec<f64>>,
    pools: Vec<PoolCache>,
    flat: Vec<f64>,
    hidden: [Vec<f64>; 2],
    logvar_raw: Vec<f64>,
}

impl Encoder {
    pub fn new(arch: &ArchConfig, rng: &mut impl Rng) -> Self {
        let [f1, f2, f3] = arch.conv_filters;
        let [h1, h2] = arch.enc_hidden;
        let k = arch.kernel;
        Encoder {
            convs: [
                Conv1d::new(arch.n_channels, f1, k, rng),
                Conv1d::new(f1, f2, k, rng),
                Conv1d::new(f2, f3, k, rng),
            ],
            fc: [Linear::new(arch.flat_dim(), h1, rng), Linear::new(h1, h2, rng)],
            mean: Linear::new(h2, arch.latent_dim, rng),
            logvar: Linear::new(h2, arch.latent_dim, rng),
        }
    }

    /// Returns `(mean, clamped logvar, tape)` for a `[batch × len × ch]` input.
    pub fn forward(&self, x: &[f64], batch: usize) -> (Vec<f64>, Vec<f64>, EncoderTape) {
        let mut conv = Vec::with_capacity(3);
        let mut conv_out = Vec::with_capacity(3);
        let mut pools = Vec::with_capacity(3);
        let mut h = x.to_vec();
        for layer in &self.convs {
            let (mut a, cache) = layer.forward(&h, batch);
            relu_inplace(&mut a);
            let (p, pc) = MaxPool2::forward(&a, layer.out_ch());
            conv.push(cache);
            conv_out.push(a);
            pools.push(pc);
            h = p;
        }
        let flat = h;
        let mut h1 = self.fc[0].forward(&flat);
        relu_inplace(&mut h1);
        let mut h2 = self.fc[1].forward(&h1);
        relu_inplace(&mut h2);
        let mean = self.mean.forward(&h2);
        let logvar_raw = self.logvar.forward(&h2);
        let logvar = logvar_raw.iter().map(|v| v.clamp(LOGVAR_MIN, LOGVAR_MAX)).collect();
        let tape = EncoderTape {
            batch,
            conv,
            conv_out,
            pools,
            flat,
            hidden: [h1, h2],
            logvar_raw,
        };
        (mean, logvar, tape)
    }

    pub fn backward(&self, tape: &EncoderTape, dmean: &[f64], dlogvar: &[f64], grad: &mut Encoder) {
        let [h1, h2] = &tape.hidden;
        let dlv: Vec<f64> = dlogvar
            .iter()
            .zip(&tape.logvar_raw)
            .map(|(&g, &raw)| if (LOGVAR_MIN..=LOGVAR_MAX).contains(&raw) { g } else { 0.0 })
            .collect();
        let mut dh2 = self.mean.backward(h2, dmean, &mut grad.mean, true).unwrap();
        let dh2_lv = self.logvar.backward(h2, &dlv, &mut grad.logvar, true).unwrap();
        dh2.iter_mut().zip(dh2_lv).for_each(|(a, b)| *a += b);
        relu_backward(h2, &mut dh2);
        let mut dh1 = self.fc[1].backward(h1, &dh2, &mut grad.fc[1], true).unwrap();
        relu_backward(h1, &mut dh1);
        let mut dh = self.fc[0].backward(&tape.flat, &dh1, &mut grad.fc[0], true).unwrap();
        for i in (0..3).rev() {
            let mut da = MaxPool2::backward(&tape.pools[i], &dh);
            relu_backward(&tape.conv_out[i], &mut da);
            let want_dx = i > 0;
            match self.convs[i].backward(&tape.conv[i], &da, &mut grad.convs[i], want_dx) {
                Some(dx) => dh = dx,
                None => break,
            }
        }
        debug_assert!(tape.batch > 0);
    }
}

impl Module for Encoder {
    fn visit_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (i, c) in self.convs.iter().enumerate() {
            c.visit_params(&join(prefix, &format!("conv{i}")), out);
        }
        for (i, f) in self.fc.iter().enumerate() {
            f.visit_params(&join(prefix, &format!("fc{i}")), out);
        }
        self.mean.visit_params(&join(prefix, "mean"), out);
        self.logvar.visit_params(&join(prefix, "logvar"), out);
    }

    fn visit_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        for (i, c) in self.convs.iter_mut().enumerate() {
            c.visit_params_mut(&join(prefix, &format!("conv{i}")), out);
        }
        for (i, f) in self.fc.iter_mut().enumerate() {
            f.visit_params_mut(&join(prefix, &format!("fc{i}")), out);
        }
        self.mean.visit_params_mut(&join(prefix, "mean"), out);
        self.logvar.visit_params_mut(&join(prefix, "logvar"), out);
    }
}

/// Mirror of the encoder: three dense layers, then three
/// upsample/transposed-conv stages with a linear final stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    pub fc: [Linear; 3],
    pub deconvs: [ConvTranspose1d; 3],
    /// Learned scalar log-variance of the reconstruction, if enabled.
    pub log_variance: Option<Tensor>,
}

pub struct DecoderTape {
    batch: usize,
    fc_in: [Vec<f64>; 3],
    fc_out: Vec<f64>,
    deconv: Vec<ConvCache>,
    deconv_out: [Vec<f64>; 2],
}

impl Decoder {
    pub fn new(arch: &ArchConfig, input_dim: usize, variance: DecoderVariance, rng: &mut impl Rng) -> Self {
        let [f1, f2, f3] = arch.conv_filters;
        let [h1, h2] = arch.enc_hidden;
        let k = arch.kernel;
        Decoder {
            fc: [
                Linear::new(input_dim, h2, rng),
                Linear::new(h2, h1, rng),
                Linear::new(h1, arch.flat_dim(), rng),
            ],
            deconvs: [
                ConvTranspose1d::new(f3, f2, k, rng),
                ConvTranspose1d::new(f2, f1, k, rng),
                ConvTranspose1d::new(f1, arch.n_channels, k, rng),
            ],
            log_variance: (variance == DecoderVariance::LearnedScalar).then(|| Tensor::zeros(&[1])),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.fc[0].in_dim()
    }

    /// Reconstruction mean `[batch × len × ch]` for `[batch × input_dim]` latents.
    pub fn forward(&self, zc: &[f64], batch: usize) -> (Vec<f64>, DecoderTape) {
        let mut h = zc.to_vec();
        let mut fc_in: [Vec<f64>; 3] = Default::default();
        for (i, layer) in self.fc.iter().enumerate() {
            let mut a = layer.forward(&h);
            relu_inplace(&mut a);
            fc_in[i] = std::mem::replace(&mut h, a);
        }
        let fc_out = h.clone();
        let mut deconv = Vec::with_capacity(3);
        let mut deconv_out: [Vec<f64>; 2] = Default::default();
        for (i, layer) in self.deconvs.iter().enumerate() {
            let up = upsample2(&h, layer.in_ch());
            let (mut y, cache) = layer.forward(&up, batch);
            deconv.push(cache);
            if i < 2 {
                relu_inplace(&mut y);
                deconv_out[i] = y.clone();
            }
            h = y;
        }
        let tape = DecoderTape {
            batch,
            fc_in,
            fc_out,
            deconv,
            deconv_out,
        };
        (h, tape)
    }

    /// Back-propagates `dxhat` and returns the latent gradient.
    pub fn backward(&self, tape: &DecoderTape, dxhat: &[f64], grad: &mut Decoder) -> Vec<f64> {
        let mut dh = dxhat.to_vec();
        for i in (0..3).rev() {
            if i < 2 {
                relu_backward(&tape.deconv_out[i], &mut dh);
            }
            let layer = &self.deconvs[i];
            let dup = layer
                .backward(&tape.deconv[i], &dh, &mut grad.deconvs[i], true)
                .unwrap();
            dh = upsample2_backward(&dup, layer.in_ch());
        }
        for i in (0..3).rev() {
            let out = if i == 2 { &tape.fc_out } else { &tape.fc_in[i + 1] };
            relu_backward(out, &mut dh);
            dh = self.fc[i].backward(&tape.fc_in[i], &dh, &mut grad.fc[i], true).unwrap();
        }
        debug_assert!(tape.batch > 0);
        dh
    }
}

impl Module for Decoder {
    fn visit_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (i, f) in self.fc.iter().enumerate() {
            f.visit_params(&join(prefix, &format!("fc{i}")), out);
        }
        for (i, c) in self.deconvs.iter().enumerate() {
            c.visit_params(&join(prefix, &format!("deconv{i}")), out);
        }
        if let Some(t) = &self.log_variance {
            out.push((join(prefix, "log_variance"), t));
        }
    }

    fn visit_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        for (i, f) in self.fc.iter_mut().enumerate() {
            f.visit_params_mut(&join(prefix, &format!("fc{i}")), out);
        }
        for (i, c) in self.deconvs.iter_mut().enumerate() {
            c.visit_params_mut(&join(prefix, &format!("deconv{i}")), out);
        }
        if let Some(t) = &mut self.log_variance {
            out.push((join(prefix, "log_variance"), t));
        }
    }
}

/// Two hidden blocks of Linear, ReLU, BatchNorm and Dropout, then a linear
/// output layer. Used for both the load regressor and the sex classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub fc: [Linear; 3],
    pub bn: Option<[BatchNorm; 2]>,
    pub dropout: Dropout,
}

pub struct HeadTape {
    fc_in: [Vec<f64>; 3],
    relu_out: [Vec<f64>; 2],
    bn: [Option<BatchNormCache>; 2],
    masks: [Option<Vec<f64>>; 2],
}

impl Head {
    pub fn new(arch: &ArchConfig, outputs: usize, rng: &mut impl Rng) -> Self {
        let [a1, a2] = arch.head_hidden;
        Head {
            fc: [
                Linear::new(arch.latent_dim, a1, rng),
                Linear::new(a1, a2, rng),
                Linear::new(a2, outputs, rng),
            ],
            bn: arch.batch_norm.then(|| [BatchNorm::new(a1), BatchNorm::new(a2)]),
            dropout: Dropout { p: arch.dropout },
        }
    }

    pub fn outputs(&self) -> usize {
        self.fc[2].out_dim()
    }

    /// Training-mode pass: batch statistics and dropout. Running statistics
    /// are updated only when `update_running` is set.
    pub fn forward_train(&mut self, x: &[f64], update_running: bool, rng: &mut impl Rng) -> (Vec<f64>, HeadTape) {
        let mut fc_in: [Vec<f64>; 3] = Default::default();
        let mut relu_out: [Vec<f64>; 2] = Default::default();
        let mut bn_cache: [Option<BatchNormCache>; 2] = Default::default();
        let mut masks: [Option<Vec<f64>>; 2] = Default::default();
        let mut h = x.to_vec();
        for i in 0..2 {
            let mut a = self.fc[i].forward(&h);
            relu_inplace(&mut a);
            relu_out[i] = a.clone();
            if let Some(bn) = &mut self.bn {
                let (y, cache) = bn[i].forward_train(&a, update_running);
                a = y;
                bn_cache[i] = Some(cache);
            }
            masks[i] = self.dropout.forward_train(&mut a, rng);
            fc_in[i] = std::mem::replace(&mut h, a);
        }
        let out = self.fc[2].forward(&h);
        fc_in[2] = h;
        let tape = HeadTape {
            fc_in,
            relu_out,
            bn: bn_cache,
            masks,
        };
        (out, tape)
    }

    pub fn forward_eval(&self, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for i in 0..2 {
            h = self.fc[i].forward(&h);
            relu_inplace(&mut h);
            if let Some(bn) = &self.bn {
                h = bn[i].forward_eval(&h);
            }
        }
        self.fc[2].forward(&h)
    }

    /// Sets every batch-norm layer's running statistics to the population
    /// statistics its input takes when the head is fed `x` in eval mode.
    pub fn recalibrate(&mut self, x: &[f64]) {
        let Some(bn) = &mut self.bn else { return };
        let mut h = x.to_vec();
        for i in 0..2 {
            h = self.fc[i].forward(&h);
            relu_inplace(&mut h);
            bn[i].set_population_stats(&h);
            h = bn[i].forward_eval(&h);
        }
    }

    /// Returns the input gradient; parameter gradients go into `grad`.
    pub fn backward(&self, tape: &HeadTape, dout: &[f64], grad: &mut Head) -> Vec<f64> {
        let mut dh = self.fc[2].backward(&tape.fc_in[2], dout, &mut grad.fc[2], true).unwrap();
        for i in (0..2).rev() {
            if let Some(mask) = &tape.masks[i] {
                dh.iter_mut().zip(mask).for_each(|(g, m)| *g *= m);
            }
            if let (Some(bn), Some(cache)) = (&self.bn, &tape.bn[i]) {
                let gbn = &mut grad.bn.as_mut().expect("gradient mirrors the model")[i];
                dh = bn[i].backward(cache, &dh, gbn);
            }
            relu_backward(&tape.relu_out[i], &mut dh);
            dh = self.fc[i].backward(&tape.fc_in[i], &dh, &mut grad.fc[i], true).unwrap();
        }
        dh
    }
}

impl Module for Head {
    fn visit_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (i, f) in self.fc.iter().enumerate() {
            f.visit_params(&join(prefix, &format!("fc{i}")), out);
        }
        if let Some(bn) = &self.bn {
            for (i, b) in bn.iter().enumerate() {
                b.visit_params(&join(prefix, &format!("bn{i}")), out);
            }
        }
    }

    fn visit_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        for (i, f) in self.fc.iter_mut().enumerate() {
            f.visit_params_mut(&join(prefix, &format!("fc{i}")), out);
        }
        if let Some(bn) = &mut self.bn {
            for (i, b) in bn.iter_mut().enumerate() {
                b.visit_params_mut(&join(prefix, &format!("bn{i}")), out);
            }
        }
    }

    fn visit_buffers<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        if let Some(bn) = &self.bn {
            for (i, b) in bn.iter().enumerate() {
                b.visit_buffers(&join(prefix, &format!("bn{i}")), out);
            }
        }
    }

    fn visit_buffers_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        if let Some(bn) = &mut self.bn {
            for (i, b) in bn.iter_mut().enumerate() {
                b.visit_buffers_mut(&join(prefix, &format!("bn{i}")), out);
            }
        }
    }
}
