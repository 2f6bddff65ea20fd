use rand::Rng;

use super::{axpy, gemm, join, Module, Tensor, View};

/// Dense layer `y = W x + b`, weights stored `[out × in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        Linear {
            w: Tensor::fan_in_uniform(&[out_dim, in_dim], in_dim, rng),
            b: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.shape[1]
    }

    pub fn out_dim(&self) -> usize {
        self.w.shape[0]
    }

    /// Forward pass over a row-major `[batch × in]` matrix.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let (n_in, n_out) = (self.in_dim(), self.out_dim());
        let rows = x.len() / n_in;
        let mut y = bias_rows(&self.b.data, rows);
        gemm(rows, n_in, n_out, View::rows(x, n_in), View::transposed(&self.w.data, n_in), 1.0, &mut y);
        y
    }

    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Linear, want_dx: bool) -> Option<Vec<f64>> {
        let (n_in, n_out) = (self.in_dim(), self.out_dim());
        let rows = x.len() / n_in;
        add_column_sums(dy, n_out, &mut grad.b.data);
        gemm(n_out, rows, n_in, View::transposed(dy, n_out), View::rows(x, n_in), 1.0, &mut grad.w.data);
        want_dx.then(|| {
            let mut dx = vec![0.0; x.len()];
            gemm(rows, n_out, n_in, View::rows(dy, n_out), View::rows(&self.w.data, n_in), 0.0, &mut dx);
            dx
        })
    }
}

impl Module for Linear {
    fn visit_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((join(prefix, "weight"), &self.w));
        out.push((join(prefix, "bias"), &self.b));
    }

    fn visit_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((join(prefix, "weight"), &mut self.w));
        out.push((join(prefix, "bias"), &mut self.b));
    }
}

fn bias_rows(bias: &[f64], rows: usize) -> Vec<f64> {
    let mut y = Vec::with_capacity(rows * bias.len());
    for _ in 0..rows {
        y.extend_from_slice(bias);
    }
    y
}

fn add_column_sums(dy: &[f64], cols: usize, out: &mut [f64]) {
    for row in dy.chunks_exact(cols) {
        axpy(1.0, row, out);
    }
}

/// Unfolded input windows of a same-padded convolution: one row of
/// `kernel × channels` values per output position.
#[derive(Debug, Clone)]
pub struct ConvCache {
    cols: Vec<f64>,
    batch: usize,
    len: usize,
}

fn im2col(x: &[f64], batch: usize, ch: usize, kernel: usize) -> (Vec<f64>, usize) {
    let len = x.len() / (batch * ch);
    let half = kernel / 2;
    let width = kernel * ch;
    let mut cols = vec![0.0; batch * len * width];
    for b in 0..batch {
        let xs = &x[b * len * ch..(b + 1) * len * ch];
        for t in 0..len {
            let row = &mut cols[(b * len + t) * width..(b * len + t + 1) * width];
            for j in 0..kernel {
                let src = t + j;
                if src < half || src - half >= len {
                    continue;
                }
                let s = src - half;
                row[j * ch..(j + 1) * ch].copy_from_slice(&xs[s * ch..(s + 1) * ch]);
            }
        }
    }
    (cols, len)
}

fn col2im(dcols: &[f64], batch: usize, len: usize, ch: usize, kernel: usize) -> Vec<f64> {
    let half = kernel / 2;
    let width = kernel * ch;
    let mut dx = vec![0.0; batch * len * ch];
    for b in 0..batch {
        let dxs = &mut dx[b * len * ch..(b + 1) * len * ch];
        for t in 0..len {
            let row = &dcols[(b * len + t) * width..(b * len + t + 1) * width];
            for j in 0..kernel {
                let src = t + j;
                if src < half || src - half >= len {
                    continue;
                }
                let s = src - half;
                axpy(1.0, &row[j * ch..(j + 1) * ch], &mut dxs[s * ch..(s + 1) * ch]);
            }
        }
    }
    dx
}

/// Stride-1, same-padded 1-D convolution; weights `[out × kernel × in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub w: Tensor,
    pub b: Tensor,
}

impl Conv1d {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, rng: &mut impl Rng) -> Self {
        assert!(kernel % 2 == 1, "same padding needs an odd kernel");
        Conv1d {
            w: Tensor::fan_in_uniform(&[out_ch, kernel, in_ch], in_ch * kernel, rng),
            b: Tensor::zeros(&[out_ch]),
        }
    }

    pub fn out_ch(&self) -> usize {
        self.w.shape[0]
    }

    pub fn kernel(&self) -> usize {
        self.w.shape[1]
    }

    pub fn in_ch(&self) -> usize {
        self.w.shape[2]
    }

    /// `x` is `[batch × len × in]`; returns `[batch × len × out]`.
    pub fn forward(&self, x: &[f64], batch: usize) -> (Vec<f64>, ConvCache) {
        let (ci, co, k) = (self.in_ch(), self.out_ch(), self.kernel());
        let (cols, len) = im2col(x, batch, ci, k);
        let rows = batch * len;
        let mut y = bias_rows(&self.b.data, rows);
        gemm(rows, k * ci, co, View::rows(&cols, k * ci), View::transposed(&self.w.data, k * ci), 1.0, &mut y);
        (y, ConvCache { cols, batch, len })
    }

    pub fn backward(&self, cache: &ConvCache, dy: &[f64], grad: &mut Conv1d, want_dx: bool) -> Option<Vec<f64>> {
        let (ci, co, k) = (self.in_ch(), self.out_ch(), self.kernel());
        let rows = cache.batch * cache.len;
        let width = k * ci;
        add_column_sums(dy, co, &mut grad.b.data);
        gemm(co, rows, width, View::transposed(dy, co), View::rows(&cache.cols, width), 1.0, &mut grad.w.data);
        want_dx.then(|| {
            let mut dcols = vec![0.0; rows * width];
            gemm(rows, co, width, View::rows(dy, co), View::rows(&self.w.data, width), 0.0, &mut dcols);
            col2im(&dcols, cache.batch, cache.len, ci, k)
        })
    }
}

impl Module for Conv1d {
    fn visit_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((join(prefix, "weight"), &self.w));
        out.push((join(prefix, "bias"), &self.b));
    }

    fn visit_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((join(prefix, "weight"), &mut self.w));
        out.push((join(prefix, "bias"), &mut self.b));
    }
}

/// Stride-1 transposed convolution with padding `kernel / 2`, so output
/// length equals input length. Weights `[in × kernel × out]`.
///
/// At stride 1 this is a same-padded convolution with the kernel flipped in
/// time, which is how it is evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose1d {
    pub w: Tensor,
    pub b: Tensor,
}

impl ConvTranspose1d {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, rng: &mut impl Rng) -> Self {
        assert!(kernel % 2 == 1, "same padding needs an odd kernel");
        ConvTranspose1d {
            w: Tensor::fan_in_uniform(&[in_ch, kernel, out_ch], in_ch * kernel, rng),
            b: Tensor::zeros(&[out_ch]),
        }
    }

    pub fn in_ch(&self) -> usize {
        self.w.shape[0]
    }

    pub fn kernel(&self) -> usize {
        self.w.shape[1]
    }

    pub fn out_ch(&self) -> usize {
        self.w.shape[2]
    }

    /// Index into `w` of the flipped-kernel matrix entry `[(j, i), o]`.
    fn source(&self, j: usize, i: usize) -> usize {
        (i * self.kernel() + self.kernel() - 1 - j) * self.out_ch()
    }

    /// `[kernel·in × out]` matrix of the equivalent convolution.
    fn flipped(&self) -> Vec<f64> {
        let (ci, co, k) = (self.in_ch(), self.out_ch(), self.kernel());
        let mut m = Vec::with_capacity(k * ci * co);
        for j in 0..k {
            for i in 0..ci {
                let s = self.source(j, i);
                m.extend_from_slice(&self.w.data[s..s + co]);
            }
        }
        m
    }

    pub fn forward(&self, x: &[f64], batch: usize) -> (Vec<f64>, ConvCache) {
        let (ci, co, k) = (self.in_ch(), self.out_ch(), self.kernel());
        let (cols, len) = im2col(x, batch, ci, k);
        let rows = batch * len;
        let mut y = bias_rows(&self.b.data, rows);
        gemm(rows, k * ci, co, View::rows(&cols, k * ci), View::rows(&self.flipped(), co), 1.0, &mut y);
        (y, ConvCache { cols, batch, len })
    }

    pub fn backward(
        &self,
        cache: &ConvCache,
        dy: &[f64],
        grad: &mut ConvTranspose1d,
        want_dx: bool,
    ) -> Option<Vec<f64>> {
        let (ci, co, k) = (self.in_ch(), self.out_ch(), self.kernel());
        let rows = cache.batch * cache.len;
        let width = k * ci;
        add_column_sums(dy, co, &mut grad.b.data);
        let mut dm = vec![0.0; width * co];
        gemm(width, rows, co, View::transposed(&cache.cols, width), View::rows(dy, co), 0.0, &mut dm);
        for j in 0..k {
            for i in 0..ci {
                let s = self.source(j, i);
                let r = (j * ci + i) * co;
                axpy(1.0, &dm[r..r + co], &mut grad.w.data[s..s + co]);
            }
        }
        want_dx.then(|| {
            let mut dcols = vec![0.0; rows * width];
            gemm(rows, co, width, View::rows(dy, co), View::transposed(&self.flipped(), co), 0.0, &mut dcols);
            col2im(&dcols, cache.batch, cache.len, ci, k)
        })
    }
}

impl Module for ConvTranspose1d {
    fn visit_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((join(prefix, "weight"), &self.w));
        out.push((join(prefix, "bias"), &self.b));
    }

    fn visit_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((join(prefix, "weight"), &mut self.w));
        out.push((join(prefix, "bias"), &mut self.b));
    }
}

/// Max pooling with window and stride 2 along time.
pub struct MaxPool2;

#[derive(Debug, Clone)]
pub struct PoolCache {
    /// Input index chosen for every output element.
    argmax: Vec<usize>,
    input_len: usize,
}

impl MaxPool2 {
    pub fn forward(x: &[f64], channels: usize) -> (Vec<f64>, PoolCache) {
        let out_len = x.len() / channels / 2;
        let mut y = Vec::with_capacity(out_len * channels);
        let mut argmax = Vec::with_capacity(out_len * channels);
        for t in 0..out_len {
            for c in 0..channels {
                let a = (2 * t) * channels + c;
                let b = a + channels;
                let pick = if x[b] > x[a] { b } else { a };
                y.push(x[pick]);
                argmax.push(pick);
            }
        }
        (
            y,
            PoolCache {
                argmax,
                input_len: x.len(),
            },
        )
    }

    pub fn backward(cache: &PoolCache, dy: &[f64]) -> Vec<f64> {
        let mut dx = vec![0.0; cache.input_len];
        for (&i, &g) in cache.argmax.iter().zip(dy) {
            dx[i] += g;
        }
        dx
    }
}

/// Batch normalisation over the batch axis of `[batch × features]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

impl BatchNorm {
    pub fn new(dim: usize) -> Self {
        BatchNorm {
            gamma: Tensor::filled(&[dim], 1.0),
            beta: Tensor::zeros(&[dim]),
            running_mean: Tensor::zeros(&[dim]),
            running_var: Tensor::filled(&[dim], 1.0),
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    /// Normalises with batch statistics. Running statistics move towards the
    /// batch statistics only when `update_running` is set.
    pub fn forward_train(&mut self, x: &[f64], update_running: bool) -> (Vec<f64>, BatchNormCache) {
        let d = self.dim();
        let n = x.len() / d;
        let mut mean = vec![0.0; d];
        for row in x.chunks_exact(d) {
            axpy(1.0, row, &mut mean);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for row in x.chunks_exact(d) {
            for ((v, xi), m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (xi - m) * (xi - m);
            }
        }
        var.iter_mut().for_each(|v| *v /= n as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut xhat = Vec::with_capacity(x.len());
        let mut y = Vec::with_capacity(x.len());
        for row in x.chunks_exact(d) {
            for j in 0..d {
                let h = (row[j] - mean[j]) * inv_std[j];
                xhat.push(h);
                y.push(self.gamma.data[j] * h + self.beta.data[j]);
            }
        }
        if update_running {
            let unbiased = if n > 1 { n as f64 / (n - 1) as f64 } else { 1.0 };
            for j in 0..d {
                let rm = &mut self.running_mean.data[j];
                *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * mean[j];
                let rv = &mut self.running_var.data[j];
                *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * var[j] * unbiased;
            }
        }
        (y, BatchNormCache { xhat, inv_std })
    }

    /// Replaces the running statistics with the exact mean and unbiased
    /// variance of `x`.
    pub fn set_population_stats(&mut self, x: &[f64]) {
        let d = self.dim();
        let n = x.len() / d;
        if n == 0 {
            return;
        }
        for j in 0..d {
            let mean = x.iter().skip(j).step_by(d).sum::<f64>() / n as f64;
            let ss: f64 = x.iter().skip(j).step_by(d).map(|v| (v - mean) * (v - mean)).sum();
            self.running_mean.data[j] = mean;
            self.running_var.data[j] = if n > 1 { ss / (n - 1) as f64 } else { 0.0 };
        }
    }

    pub fn forward_eval(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut y = Vec::with_capacity(x.len());
        for row in x.chunks_exact(d) {
            for j in 0..d {
                let h = (row[j] - self.running_mean.data[j]) / (self.running_var.data[j] + BN_EPS).sqrt();
                y.push(self.gamma.data[j] * h + self.beta.data[j]);
            }
        }
        y
    }

    pub fn backward(&self, cache: &BatchNormCache, dy: &[f64], grad: &mut BatchNorm) -> Vec<f64> {
        let d = self.dim();
        let n = dy.len() / d;
        let mut sum_dxhat = vec![0.0; d];
        let mut sum_dxhat_xhat = vec![0.0; d];
        for (drow, hrow) in dy.chunks_exact(d).zip(cache.xhat.chunks_exact(d)) {
            for j in 0..d {
                grad.beta.data[j] += drow[j];
                grad.gamma.data[j] += drow[j] * hrow[j];
                let dxh = drow[j] * self.gamma.data[j];
                sum_dxhat[j] += dxh;
                sum_dxhat_xhat[j] += dxh * hrow[j];
            }
        }
        let nf = n as f64;
        let mut dx = Vec::with_capacity(dy.len());
        for (drow, hrow) in dy.chunks_exact(d).zip(cache.xhat.chunks_exact(d)) {
            for j in 0..d {
                let dxh = drow[j] * self.gamma.data[j];
                dx.push(
                    cache.inv_std[j] / nf * (nf * dxh - sum_dxhat[j] - hrow[j] * sum_dxhat_xhat[j]),
                );
            }
        }
        dx
    }
}

impl Module for BatchNorm {
    fn visit_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((join(prefix, "gamma"), &self.gamma));
        out.push((join(prefix, "beta"), &self.beta));
    }

    fn visit_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((join(prefix, "gamma"), &mut self.gamma));
        out.push((join(prefix, "beta"), &mut self.beta));
    }

    fn visit_buffers<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((join(prefix, "running_mean"), &self.running_mean));
        out.push((join(prefix, "running_var"), &self.running_var));
    }

    fn visit_buffers_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((join(prefix, "running_mean"), &mut self.running_mean));
        out.push((join(prefix, "running_var"), &mut self.running_var));
    }
}

/// Inverted dropout: kept units are scaled by `1 / (1 - p)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    pub p: f64,
}

impl Dropout {
    /// Applies dropout in place and returns the per-element scale used.
    pub fn forward_train(&self, x: &mut [f64], rng: &mut impl Rng) -> Option<Vec<f64>> {
        if self.p <= 0.0 {
            return None;
        }
        let keep = 1.0 / (1.0 - self.p);
        let mask: Vec<f64> = x
            .iter()
            .map(|_| if rng.random::<f64>() < self.p { 0.0 } else { keep })
            .collect();
        x.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
        Some(mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }
    use rand_chacha::ChaCha8Rng;

    /// Scatter form of a transposed convolution, written from the definition.
    fn naive_transposed(layer: &ConvTranspose1d, x: &[f64]) -> Vec<f64> {
        let (ci, co, k) = (layer.in_ch(), layer.out_ch(), layer.kernel());
        let len = x.len() / ci;
        let mut full = vec![0.0; (len + k - 1) * co];
        for t in 0..len {
            for i in 0..ci {
                for j in 0..k {
                    for o in 0..co {
                        full[(t + j) * co + o] += x[t * ci + i] * layer.w.data[(i * k + j) * co + o];
                    }
                }
            }
        }
        let pad = k / 2;
        (0..len * co)
            .map(|idx| full[pad * co + idx] + layer.b.data[idx % co])
            .collect()
    }

    /// Direct convolution written from the definition.
    fn naive_conv(layer: &Conv1d, x: &[f64]) -> Vec<f64> {
        let (ci, co, k) = (layer.in_ch(), layer.out_ch(), layer.kernel());
        let len = x.len() / ci;
        let half = (k / 2) as isize;
        let mut y = vec![0.0; len * co];
        for t in 0..len as isize {
            for o in 0..co {
                let mut s = layer.b.data[o];
                for j in 0..k as isize {
                    let src = t + j - half;
                    if src < 0 || src >= len as isize {
                        continue;
                    }
                    for i in 0..ci {
                        s += layer.w.data[(o * k + j as usize) * ci + i] * x[src as usize * ci + i];
                    }
                }
                y[t as usize * co + o] = s;
            }
        }
        y
    }

    #[test]
    fn conv_matches_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = Conv1d::new(3, 4, 5, &mut rng);
        let mut layer = layer;
        layer.b.data = vec![0.1, -0.2, 0.3, 0.0];
        let x: Vec<f64> = (0..2 * 10 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (y, _) = layer.forward(&x, 2);
        for b in 0..2 {
            let expect = naive_conv(&layer, &x[b * 30..(b + 1) * 30]);
            for (a, e) in y[b * 40..(b + 1) * 40].iter().zip(expect) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transposed_conv_matches_scatter_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut layer = ConvTranspose1d::new(3, 2, 5, &mut rng);
        layer.b.data = vec![0.5, -0.5];
        let x: Vec<f64> = (0..2 * 9 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (y, _) = layer.forward(&x, 2);
        for b in 0..2 {
            let expect = naive_transposed(&layer, &x[b * 27..(b + 1) * 27]);
            for (a, e) in y[b * 18..(b + 1) * 18].iter().zip(expect) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transposed_conv_is_the_adjoint_of_conv() {
        // <conv(x), y> == <x, convT(y)> with shared weights and zero biases.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let conv = Conv1d::new(3, 2, 5, &mut rng);
        let mut convt = ConvTranspose1d {
            w: Tensor::zeros(&[2, 5, 3]),
            b: Tensor::zeros(&[3]),
        };
        for o in 0..2 {
            for j in 0..5 {
                for i in 0..3 {
                    convt.w.data[(o * 5 + j) * 3 + i] = conv.w.data[(o * 5 + j) * 3 + i];
                }
            }
        }
        let x: Vec<f64> = (0..8 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..8 * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lhs = dot(&conv.forward(&x, 1).0, &y);
        let rhs = dot(&x, &convt.forward(&y, 1).0);
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn pool_routes_gradient_to_max() {
        let x = [1.0, 5.0, 3.0, 2.0, -1.0, 0.0, 4.0, 9.0];
        let (y, cache) = MaxPool2::forward(&x, 2);
        assert_eq!(y, vec![3.0, 5.0, 4.0, 9.0]);
        let dx = MaxPool2::backward(&cache, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(dx, vec![0.0, 2.0, 1.0, 0.0, 0.0, 0.0, 3.0, 4.0]);
    }

    #[test]
    fn batchnorm_eval_uses_running_stats() {
        let mut bn = BatchNorm::new(2);
        bn.running_mean.data = vec![1.0, -1.0];
        bn.running_var.data = vec![4.0, 1.0];
        let y = bn.forward_eval(&[3.0, -1.0]);
        assert!((y[0] - 2.0 / (4.0 + BN_EPS).sqrt()).abs() < 1e-12);
        assert!(y[1].abs() < 1e-12);
    }

    #[test]
    fn batchnorm_train_updates_running_stats_only_on_request() {
        let mut bn = BatchNorm::new(1);
        let x = [1.0, 3.0];
        bn.forward_train(&x, false);
        assert_eq!(bn.running_mean.data, vec![0.0]);
        bn.forward_train(&x, true);
        assert!((bn.running_mean.data[0] - 0.2).abs() < 1e-12);
        // unbiased batch variance is 2
        assert!((bn.running_var.data[0] - (0.9 + 0.2)).abs() < 1e-12);
    }

    #[test]
    fn dropout_zero_is_identity() {
        let mut x = vec![1.0, 2.0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(Dropout { p: 0.0 }.forward_train(&mut x, &mut rng).is_none());
        assert_eq!(x, vec![1.0, 2.0]);
    }
}
