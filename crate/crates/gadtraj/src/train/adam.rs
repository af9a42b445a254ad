//! Adam with decoupled weight decay.

use crate::model::ParamSet;

pub const ADAM_EPS: f64 = 1e-8;

pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
    beta1: f64,
    beta2: f64,
}

impl Adam {
    pub fn new(params: &ParamSet, betas: (f64, f64)) -> Self {
        let m = params.entries().iter().map(|e| vec![0.0; e.tensor.numel()]).collect();
        let v = params.entries().iter().map(|e| vec![0.0; e.tensor.numel()]).collect();
        Adam { m, v, t: 0, beta1: betas.0, beta2: betas.1 }
    }

    /// Bias-corrected moment update, then decoupled decay p -= lr * wd * p.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Vec<f64>], lr: f64, wd: f64) {
        assert_eq!(grads.len(), self.m.len(), "gradient set out of sync with optimizer state");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((tensor, grad), (m, v)) in params
            .tensors_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..tensor.data.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                tensor.data[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                if wd > 0.0 {
                    tensor.data[i] -= lr * wd * tensor.data[i];
                }
            }
        }
    }
}
