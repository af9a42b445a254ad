//! Named parameter registry shared by the encoder and the GRU baseline.
//!
//! Master parameters are plain tensors owned by the model; every training
//! step binds them onto a fresh tape as gradient-tracked leaves, and the
//! optimizer walks the registry in registration order.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn add(&mut self, name: impl Into<String>, mut tensor: Tensor) -> ParamId {
        tensor.requires_grad = true;
        self.entries.push(ParamEntry { name: name.into(), tensor });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.numel()).sum()
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|e| &mut e.tensor)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    /// Leaf every parameter onto the tape, in registration order.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let vars = self.entries.iter().map(|e| tape.leaf(e.tensor.clone())).collect();
        BoundParams { vars }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|e| e.tensor.all_finite())
    }
}

/// Tape handles for one binding of a `ParamSet`.
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Gradients for every parameter, aligned with registration order.
    pub fn gradients(&self, tape: &Tape) -> Vec<Vec<f64>> {
        self.vars.iter().map(|&v| tape.grad_of(v)).collect()
    }
}

/// Scaled uniform fan-based initialization: U(-b, b) with
/// b = sqrt(6 / (fan_in + fan_out)).
pub fn xavier_uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::matrix(rows, cols, data)
}

pub fn zeros_vec(n: usize) -> Tensor {
    Tensor::from_vec(vec![n], vec![0.0; n])
}

pub fn ones_vec(n: usize) -> Tensor {
    Tensor::from_vec(vec![n], vec![1.0; n])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn bind_and_read_gradients() {
        let mut params = ParamSet::new();
        let w = params.add("w", Tensor::from_vec(vec![2], vec![2.0, 3.0]));
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let sq = tape.mul(bound.var(w), bound.var(w)).unwrap();
        let loss = tape.sum_all(sq);
        tape.backward(loss).unwrap();
        let grads = bound.gradients(&tape);
        assert_eq!(grads[0], vec![4.0, 6.0]);
    }

    #[test]
    fn xavier_bound_scales_with_fan() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = xavier_uniform(100, 100, &mut rng);
        let bound = (6.0_f64 / 200.0).sqrt();
        assert!(t.data.iter().all(|v| v.abs() < bound));
        // not degenerate
        assert!(t.data.iter().any(|v| v.abs() > bound / 10.0));
    }
}
