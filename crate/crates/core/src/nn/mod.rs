//! Minimal layer library with explicit forward and backward passes.
//!
//! Activations are row-major batches: `[batch × len × channels]` for the
//! convolutional layers and `[batch × features]` for dense layers. Matrix
//! products go through `matrixmultiply`, which is single-threaded and
//! therefore bitwise reproducible.
//! Every layer's `backward` accumulates parameter gradients into a
//! same-shaped gradient instance of the layer and optionally returns the
//! input gradient.

mod adam;
mod layers;

pub use adam::Adam;
pub use layers::{
    BatchNorm, BatchNormCache, Conv1d, ConvCache, ConvTranspose1d, Dropout, Linear, MaxPool2,
    PoolCache, BN_EPS, BN_MOMENTUM,
};

use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Uniform in `[-bound, bound]` with `bound = 1 / sqrt(fan_in)`.
    pub fn fan_in_uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        Tensor {
            shape: shape.to_vec(),
            data: (0..shape.iter().product())
                .map(|_| rng.random_range(-bound..=bound))
                .collect(),
        }
    }
}

/// Named access to trainable tensors and non-trainable buffers.
///
/// Both lists are in a fixed order so that two instances of the same
/// architecture can be zipped tensor by tensor.
pub trait Module {
    fn visit_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>);
    fn visit_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>);

    fn visit_buffers<'a>(&'a self, _prefix: &str, _out: &mut Vec<(String, &'a Tensor)>) {}
    fn visit_buffers_mut<'a>(
        &'a mut self,
        _prefix: &str,
        _out: &mut Vec<(String, &'a mut Tensor)>,
    ) {
    }

    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.visit_params("", &mut out);
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        self.visit_params_mut("", &mut out);
        out
    }

    fn buffers(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.visit_buffers("", &mut out);
        out
    }

    fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        self.visit_buffers_mut("", &mut out);
        out
    }

    fn zero_params(&mut self) {
        for (_, t) in self.params_mut() {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Strided view of a row-major or transposed matrix operand.
#[derive(Debug, Clone, Copy)]
pub(crate) struct View<'a> {
    pub data: &'a [f64],
    pub rs: usize,
    pub cs: usize,
}

impl<'a> View<'a> {
    /// Row-major `[rows × cols]` matrix.
    pub fn rows(data: &'a [f64], cols: usize) -> Self {
        View { data, rs: cols, cs: 1 }
    }

    /// Transpose of a row-major matrix with `cols` columns.
    pub fn transposed(data: &'a [f64], cols: usize) -> Self {
        View { data, rs: 1, cs: cols }
    }
}

/// `c = a · b + beta · c` where `a` is `[m × k]`, `b` is `[k × n]` and `c`
/// is row-major `[m × n]`.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: View, b: View, beta: f64, c: &mut [f64]) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |v: &View, r: usize, q: usize| (r - 1) * v.rs + (q - 1) * v.cs;
    assert!(k == 0 || (last(&a, m, k) < a.data.len() && last(&b, k, n) < b.data.len()));
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `y += alpha * x`
#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn relu_inplace(x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Masks `grad` where the ReLU output was zero.
pub fn relu_backward(output: &[f64], grad: &mut [f64]) {
    for (g, &y) in grad.iter_mut().zip(output) {
        if y <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Nearest-neighbour upsampling by two along time.
pub fn upsample2(x: &[f64], channels: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len() * 2);
    for row in x.chunks_exact(channels) {
        out.extend_from_slice(row);
        out.extend_from_slice(row);
    }
    out
}

pub fn upsample2_backward(grad: &[f64], channels: usize) -> Vec<f64> {
    grad.chunks_exact(2 * channels)
        .flat_map(|pair| {
            let (a, b) = pair.split_at(channels);
            a.iter().zip(b).map(|(x, y)| x + y).collect::<Vec<_>>()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_handles_transposed_operands() {
        // a = [[1, 2], [3, 4]], b = [[5, 6], [7, 8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = vec![0.0; 4];
        gemm(2, 2, 2, View::rows(&a, 2), View::rows(&b, 2), 0.0, &mut c);
        assert_eq!(c, vec![19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, View::transposed(&a, 2), View::rows(&b, 2), 1.0, &mut c);
        assert_eq!(c, vec![19.0 + 26.0, 22.0 + 30.0, 43.0 + 38.0, 50.0 + 44.0]);
    }

    #[test]
    fn upsample_round_trip() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let up = upsample2(&x, 2);
        assert_eq!(up, vec![1.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 4.0]);
        assert_eq!(upsample2_backward(&up, 2), vec![2.0, 4.0, 6.0, 8.0]);
    }
}
