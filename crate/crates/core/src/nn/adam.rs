use super::Module;

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Updates `model` from `grad`, a same-architecture instance holding gradients.
    pub fn step<M: Module>(&mut self, model: &mut M, grad: &M) {
        let grads = grad.params();
        let mut params = model.params_mut();
        if self.m.is_empty() {
            self.m = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
            self.v = self.m.clone();
        }
        assert_eq!(params.len(), grads.len(), "model and gradient disagree");
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (k, ((_, p), (_, g))) in params.iter_mut().zip(&grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p.data[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Linear, Tensor};

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut model = Linear {
            w: Tensor::filled(&[1, 2], 1.0),
            b: Tensor::zeros(&[1]),
        };
        let grad = Linear {
            w: Tensor { shape: vec![1, 2], data: vec![3.0, -0.5] },
            b: Tensor::zeros(&[1]),
        };
        let mut opt = Adam::new(0.1);
        opt.step(&mut model, &grad);
        assert!((model.w.data[0] - 0.9).abs() < 1e-6);
        assert!((model.w.data[1] - 1.1).abs() < 1e-6);
        assert_eq!(model.b.data[0], 0.0);
    }
}
