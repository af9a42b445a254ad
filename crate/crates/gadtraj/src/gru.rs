//! Recurrent baseline: a single-layer unidirectional GRU over the projected
//! trajectory points, sharing the output head and loss with the encoder so
//! the comparison differs only in the sequence model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::PaddedGroup;
use crate::error::ModelError;
use crate::model::{
    head_from_vector, register_output_head, xavier_uniform, zeros_vec, AttentionStack,
    BatchForward, BoundParams, ForwardMode, GroupScorer, ModelKind, OutputHeadIds, ParamId,
    ParamSet,
};
use crate::seeds::mix_seed;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GruConfig {
    pub seq_len: usize,
    pub input_dim: usize,
    /// Hidden width, tied to the encoder's token_dim for parameter parity.
    pub token_dim: usize,
    pub head_hidden: usize,
}

impl Default for GruConfig {
    fn default() -> Self {
        GruConfig { seq_len: 72, input_dim: 2, token_dim: 32, head_hidden: 32 }
    }
}

impl GruConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.seq_len == 0 || self.input_dim == 0 || self.token_dim == 0 || self.head_hidden == 0 {
            return Err(ModelError::Config("dimensions must be positive".into()));
        }
        Ok(())
    }
}

struct GateIds {
    w: ParamId,
    u: ParamId,
    b: ParamId,
}

struct GruIds {
    in_w: ParamId,
    in_b: ParamId,
    update: GateIds,
    reset: GateIds,
    candidate: GateIds,
    head: OutputHeadIds,
}

pub struct GruModel {
    pub config: GruConfig,
    pub params: ParamSet,
    ids: GruIds,
}

impl GruModel {
    pub fn new(config: GruConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x6B00));
        let mut params = ParamSet::new();
        let e = config.token_dim;

        let in_w = params.add("in.w", xavier_uniform(config.input_dim, e, &mut rng));
        let in_b = params.add("in.b", zeros_vec(e));
        let gate = |name: &str, rng: &mut ChaCha8Rng, params: &mut ParamSet| GateIds {
            w: params.add(format!("{name}.w"), xavier_uniform(e, e, rng)),
            u: params.add(format!("{name}.u"), xavier_uniform(e, e, rng)),
            b: params.add(format!("{name}.b"), zeros_vec(e)),
        };
        let update = gate("update", &mut rng, &mut params);
        let reset = gate("reset", &mut rng, &mut params);
        let candidate = gate("candidate", &mut rng, &mut params);
        let head = register_output_head(&mut params, e, config.head_hidden, &mut rng);

        Ok(GruModel { config, params, ids: GruIds { in_w, in_b, update, reset, candidate, head } })
    }

    pub fn from_params(config: GruConfig, params: ParamSet) -> Result<Self, ModelError> {
        let fresh = GruModel::new(config.clone(), 0)?;
        if fresh.params.len() != params.len() {
            return Err(ModelError::ConfigMismatch(format!(
                "expected {} parameter tensors, checkpoint has {}",
                fresh.params.len(),
                params.len()
            )));
        }
        for (a, b) in fresh.params.entries().iter().zip(params.entries()) {
            if a.name != b.name || a.tensor.shape != b.tensor.shape {
                return Err(ModelError::ConfigMismatch(format!(
                    "parameter {} {:?} vs checkpoint {} {:?}",
                    a.name, a.tensor.shape, b.name, b.tensor.shape
                )));
            }
        }
        Ok(GruModel { params, ..fresh })
    }

    /// One cell step: z = sig(W_z x + U_z h + b_z), r = sig(W_r x + U_r h + b_r),
    /// h~ = tanh(W_h x + U_h (r*h) + b_h), h' = (1-z)*h + z*h~.
    pub fn cell_step(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        x_t: Var,
        h_prev: Var,
    ) -> Result<Var, ModelError> {
        let wrap = |e: crate::error::TensorError| ModelError::Config(e.to_string());
        let ids = &self.ids;

        let gate_pre = |tape: &mut Tape, g: &GateIds, x: Var, h: Var| -> Result<Var, ModelError> {
            let xs = tape.matmul(x, bound.var(g.w)).map_err(wrap)?;
            let hs = tape.matmul(h, bound.var(g.u)).map_err(wrap)?;
            let sum = tape.add(xs, hs).map_err(wrap)?;
            tape.add_row(sum, bound.var(g.b)).map_err(wrap)
        };

        let z_pre = gate_pre(tape, &ids.update, x_t, h_prev)?;
        let z = tape.sigmoid(z_pre);
        let r_pre = gate_pre(tape, &ids.reset, x_t, h_prev)?;
        let r = tape.sigmoid(r_pre);

        let rh = tape.mul(r, h_prev).map_err(wrap)?;
        let xc = tape.matmul(x_t, bound.var(ids.candidate.w)).map_err(wrap)?;
        let hc = tape.matmul(rh, bound.var(ids.candidate.u)).map_err(wrap)?;
        let c_pre = tape.add(xc, hc).map_err(wrap)?;
        let c_pre = tape.add_row(c_pre, bound.var(ids.candidate.b)).map_err(wrap)?;
        let h_tilde = tape.tanh(c_pre);

        let one_minus_z = tape.affine(z, -1.0, 1.0);
        let keep = tape.mul(one_minus_z, h_prev).map_err(wrap)?;
        let write = tape.mul(z, h_tilde).map_err(wrap)?;
        tape.add(keep, write).map_err(wrap)
    }

    /// Run the cell over the unmasked steps and apply the shared head to the
    /// final hidden state.
    pub fn forward_group(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        x: Var,
        mask: &[bool],
    ) -> Result<(Var, Var), ModelError> {
        let wrap = |e: crate::error::TensorError| ModelError::Config(e.to_string());
        if tape.shape(x) != [self.config.seq_len, self.config.input_dim] {
            return Err(ModelError::FeatureDim {
                got: tape.shape(x).last().copied().unwrap_or(0),
                expected: self.config.input_dim,
            });
        }
        let steps = mask.iter().filter(|&&m| m).count();
        if steps == 0 {
            return Err(ModelError::AllMasked);
        }

        let mut h = tape.constant(Tensor::matrix(1, self.config.token_dim, vec![0.0; self.config.token_dim]));
        for t in 0..steps {
            let x_t = tape.row(x, t);
            let xe = tape.matmul(x_t, bound.var(self.ids.in_w)).map_err(wrap)?;
            let xe = tape.add_row(xe, bound.var(self.ids.in_b)).map_err(wrap)?;
            h = self.cell_step(tape, bound, xe, h)?;
        }
        head_from_vector(tape, bound, &self.ids.head, h)
    }
}

impl GroupScorer for GruModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Gru
    }

    fn seq_len(&self) -> usize {
        self.config.seq_len
    }

    fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn config_value(&self) -> serde_json::Value {
        serde_json::to_value(&self.config).expect("config serializes")
    }

    fn forward_batch(
        &self,
        tape: &mut Tape,
        groups: &[PaddedGroup],
        _mode: &mut ForwardMode,
        _record: Option<&mut AttentionStack>,
    ) -> Result<BatchForward, ModelError> {
        let bound = self.params.bind(tape);
        let mut p_vars = Vec::with_capacity(groups.len());
        let mut z_vars = Vec::with_capacity(groups.len());
        for g in groups {
            let x = tape.constant(g.features.clone());
            let (z, p) = self.forward_group(tape, &bound, x, &g.mask)?;
            z_vars.push(z);
            p_vars.push(p);
        }
        Ok(BatchForward { p_vars, z_vars, bound })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Trajectory, TrajectoryPoint};
    use crate::model::score_groups;
    use crate::tensor::check_gradients;

    fn tiny_config() -> GruConfig {
        GruConfig { seq_len: 4, input_dim: 2, token_dim: 3, head_hidden: 3 }
    }

    fn group(points: &[(f64, f64)], seq_len: usize) -> PaddedGroup {
        let t = Trajectory::new(
            "g",
            points.iter().map(|&(x, y)| TrajectoryPoint::xy(x, y)).collect(),
            Some(0),
        )
        .unwrap();
        PaddedGroup::from_trajectory(&t, seq_len)
    }

    #[test]
    fn zero_weights_halve_previous_hidden() {
        let mut model = GruModel::new(tiny_config(), 3).unwrap();
        for e in model.params.entries_mut() {
            e.tensor.data.fill(0.0);
        }
        let mut tape = Tape::new();
        let bound = model.params.bind(&mut tape);
        let x_t = tape.constant(Tensor::matrix(1, 3, vec![0.4, -0.2, 0.9]));
        let h_prev = tape.constant(Tensor::matrix(1, 3, vec![1.0, -2.0, 0.5]));
        let h = model.cell_step(&mut tape, &bound, x_t, h_prev).unwrap();
        assert_eq!(tape.value(h), &[0.5, -1.0, 0.25]);
    }

    #[test]
    fn zero_hidden_zero_candidate_weights_is_fixed_point() {
        let mut model = GruModel::new(tiny_config(), 5).unwrap();
        for e in model.params.entries_mut() {
            if e.name.starts_with("candidate.") {
                e.tensor.data.fill(0.0);
            }
        }
        let mut tape = Tape::new();
        let bound = model.params.bind(&mut tape);
        let x_t = tape.constant(Tensor::matrix(1, 3, vec![0.4, -0.2, 0.9]));
        let h_prev = tape.constant(Tensor::matrix(1, 3, vec![0.0; 3]));
        let h = model.cell_step(&mut tape, &bound, x_t, h_prev).unwrap();
        assert!(tape.value(h).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_check_through_three_steps() {
        let model = GruModel::new(tiny_config(), 7).unwrap();
        let x = Tensor::matrix(4, 2, vec![0.3, -0.2, 0.8, 0.5, -0.6, 0.1, 0.0, 0.0]);
        let mask = vec![true, true, true, false];
        let err = check_gradients(
            |tape, xv| {
                let bound = model.params.bind(tape);
                let (z, _) = model.forward_group(tape, &bound, xv, &mask).unwrap();
                tape.sum_all(z)
            },
            &x,
            1e-5,
        );
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn padding_extension_leaves_p_hat_unchanged() {
        let short = GruModel::new(tiny_config(), 11).unwrap();
        let long = GruModel::new(GruConfig { seq_len: 7, ..tiny_config() }, 11).unwrap();
        let pts = [(0.2, 0.8), (1.5, -0.4), (0.0, 0.1)];
        let a = score_groups(&short, &[group(&pts, 4)], false).unwrap();
        let b = score_groups(&long, &[group(&pts, 7)], false).unwrap();
        assert!((a.p_hat[0] - b.p_hat[0]).abs() < 1e-9);
    }

    #[test]
    fn eval_is_deterministic() {
        let model = GruModel::new(tiny_config(), 13).unwrap();
        let g = group(&[(0.3, 0.1), (0.9, -0.2)], 4);
        let a = score_groups(&model, &[g.clone()], false).unwrap();
        let b = score_groups(&model, &[g], false).unwrap();
        assert_eq!(a.p_hat[0].to_bits(), b.p_hat[0].to_bits());
    }
}
