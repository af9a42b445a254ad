//! The GADFormer network: input embedding, sinusoidal positional encoding,
//! a stack of multi-head self-attention encoder blocks, and an output head
//! mapping the pooled group representation to an abnormality probability.

mod params;

pub use params::{ones_vec, xavier_uniform, zeros_vec, BoundParams, ParamId, ParamSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::PaddedGroup;
use crate::error::ModelError;
use crate::seeds::mix_seed;
use crate::tensor::{Tape, Tensor, Var};

/// Additive pre-softmax bias for padded key positions. Large enough that
/// exp underflows to exactly zero, small enough to stay finite.
const MASK_BIAS: f64 = -1e30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gadformer,
    Gru,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Gadformer => "gadformer",
            ModelKind::Gru => "gru",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gadformer" => Ok(ModelKind::Gadformer),
            "gru" => Ok(ModelKind::Gru),
            other => Err(format!("unknown model '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Padding length every group is brought to (dim_pe).
    pub seq_len: usize,
    /// Input feature dimensionality V.
    pub input_dim: usize,
    /// Token embedding width (dim_em).
    pub token_dim: usize,
    /// Feed-forward hidden width (dim_ffn).
    pub ffn_hidden: usize,
    pub heads: usize,
    pub blocks: usize,
    pub dropout: f64,
    /// Hidden width of the output head.
    pub head_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            seq_len: 72,
            input_dim: 2,
            token_dim: 32,
            ffn_hidden: 2048,
            heads: 8,
            blocks: 4,
            dropout: 0.0,
            head_hidden: 32,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.seq_len == 0 || self.input_dim == 0 || self.token_dim == 0 {
            return Err(ModelError::Config("dimensions must be positive".into()));
        }
        if self.heads == 0 || self.blocks == 0 || self.ffn_hidden == 0 || self.head_hidden == 0 {
            return Err(ModelError::Config("heads, blocks and hidden widths must be positive".into()));
        }
        if self.token_dim % self.heads != 0 {
            return Err(ModelError::Config(format!(
                "token_dim {} must be divisible by heads {} (width-1 heads are allowed)",
                self.token_dim, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout must lie in [0,1), got {}", self.dropout)));
        }
        Ok(())
    }

    pub fn head_width(&self) -> usize {
        self.token_dim / self.heads
    }
}

/// Recorded softmax attention matrices: per group, per block, per head.
#[derive(Debug, Clone, Default)]
pub struct AttentionStack {
    pub groups: Vec<GroupAttention>,
}

#[derive(Debug, Clone)]
pub struct GroupAttention {
    pub id: String,
    /// mats[block][head] is a seq_len x seq_len matrix.
    pub mats: Vec<Vec<Tensor>>,
    pub mask: Vec<bool>,
}

impl AttentionStack {
    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn num_blocks(&self) -> usize {
        self.groups.first().map(|g| g.mats.len()).unwrap_or(0)
    }

    pub fn num_heads(&self) -> usize {
        self.groups.first().and_then(|g| g.mats.first()).map(|h| h.len()).unwrap_or(0)
    }
}

/// Scores for a set of groups, in input order.
#[derive(Debug, Clone)]
pub struct ModelOutput {
    pub ids: Vec<String>,
    pub labels: Vec<Option<u8>>,
    /// Abnormality probability per group; equals sigmoid(z) exactly.
    pub p_hat: Vec<f64>,
    /// Pre-sigmoid task representation per group.
    pub z: Vec<f64>,
    pub attention: Option<AttentionStack>,
}

/// The group anomaly score is the abnormality probability itself.
pub fn anomaly_score(output: &ModelOutput) -> Vec<f64> {
    output.p_hat.clone()
}

/// Binary cross entropy against the fixed target p = 0, on plain values.
/// Mirrors the tape op bit for bit.
pub fn bce_loss_value(p_hat: &[f64]) -> f64 {
    let m = p_hat.len() as f64;
    -p_hat.iter().map(|&p| (1.0 - p).max(crate::tensor::BCE_CLAMP).ln()).sum::<f64>() / m
}

/// Tape-recorded binary cross entropy with the fixed target p = 0.
pub fn bce_loss(tape: &mut Tape, p_hat: Var) -> Var {
    tape.bce_fixed_zero(p_hat)
}

/// Entropy of a binary prediction in bits: 1 at p = 0.5, 0 at p in {0, 1}.
pub fn binary_entropy(p: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&p));
    let term = |q: f64| if q > 0.0 { -q * q.log2() } else { 0.0 };
    term(p) + term(1.0 - p)
}

pub enum ForwardMode<'a> {
    Train { dropout_rng: &'a mut ChaCha8Rng },
    Eval,
}

/// One batch forward: probability and logit vars per group, plus the
/// parameter binding used (for reading gradients after backward).
pub struct BatchForward {
    pub p_vars: Vec<Var>,
    pub z_vars: Vec<Var>,
    pub bound: BoundParams,
}

/// Common surface of the sequence models so training, scoring and
/// checkpointing treat GADFormer and the GRU baseline identically.
pub trait GroupScorer {
    fn kind(&self) -> ModelKind;
    fn seq_len(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
    fn config_value(&self) -> serde_json::Value;
    fn forward_batch(
        &self,
        tape: &mut Tape,
        groups: &[PaddedGroup],
        mode: &mut ForwardMode,
        record: Option<&mut AttentionStack>,
    ) -> Result<BatchForward, ModelError>;
}

/// Eval-mode scoring of a list of padded groups, chunked so tape memory
/// stays bounded. Set `record` to collect the attention stack.
pub fn score_groups(
    model: &dyn GroupScorer,
    groups: &[PaddedGroup],
    record: bool,
) -> Result<ModelOutput, ModelError> {
    let mut p_hat = Vec::with_capacity(groups.len());
    let mut z = Vec::with_capacity(groups.len());
    let mut stack = AttentionStack::default();
    for chunk in groups.chunks(64) {
        let mut tape = Tape::new();
        let fwd = model.forward_batch(
            &mut tape,
            chunk,
            &mut ForwardMode::Eval,
            if record { Some(&mut stack) } else { None },
        )?;
        for (&pv, &zv) in fwd.p_vars.iter().zip(&fwd.z_vars) {
            p_hat.push(tape.scalar_value(pv));
            z.push(tape.scalar_value(zv));
        }
    }
    Ok(ModelOutput {
        ids: groups.iter().map(|g| g.id.clone()).collect(),
        labels: groups.iter().map(|g| g.label).collect(),
        p_hat,
        z,
        attention: if record { Some(stack) } else { None },
    })
}

/// Sinusoidal positional encoding table [seq_len, dim].
pub fn positional_encoding(seq_len: usize, dim: usize) -> Tensor {
    let mut data = vec![0.0; seq_len * dim];
    for pos in 0..seq_len {
        for i in 0..dim {
            let pair = (i / 2) as f64;
            let rate = 1.0 / 10000f64.powf(2.0 * pair / dim as f64);
            let angle = pos as f64 * rate;
            data[pos * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::matrix(seq_len, dim, data)
}

struct HeadProjIds {
    w_q: ParamId,
    w_k: ParamId,
    w_v: ParamId,
}

struct BlockIds {
    heads: Vec<HeadProjIds>,
    w_o: ParamId,
    b_o: ParamId,
    ln1_gain: ParamId,
    ln1_bias: ParamId,
    ffn_w1: ParamId,
    ffn_b1: ParamId,
    ffn_w2: ParamId,
    ffn_b2: ParamId,
    ln2_gain: ParamId,
    ln2_bias: ParamId,
}

pub(crate) struct OutputHeadIds {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

struct GadformerIds {
    embed_w: ParamId,
    embed_b: ParamId,
    blocks: Vec<BlockIds>,
    head: OutputHeadIds,
}

pub struct GadformerModel {
    pub config: ModelConfig,
    pub params: ParamSet,
    ids: GadformerIds,
    pos_encoding: Tensor,
}

impl GadformerModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x6AD0));
        let mut params = ParamSet::new();
        let e = config.token_dim;
        let hw = config.head_width();

        let embed_w = params.add("embed.w", xavier_uniform(config.input_dim, e, &mut rng));
        let embed_b = params.add("embed.b", zeros_vec(e));

        let mut blocks = Vec::with_capacity(config.blocks);
        for b in 0..config.blocks {
            let mut heads = Vec::with_capacity(config.heads);
            for h in 0..config.heads {
                heads.push(HeadProjIds {
                    w_q: params.add(format!("block{b}.head{h}.w_q"), xavier_uniform(e, hw, &mut rng)),
                    w_k: params.add(format!("block{b}.head{h}.w_k"), xavier_uniform(e, hw, &mut rng)),
                    w_v: params.add(format!("block{b}.head{h}.w_v"), xavier_uniform(e, hw, &mut rng)),
                });
            }
            blocks.push(BlockIds {
                heads,
                w_o: params.add(format!("block{b}.w_o"), xavier_uniform(e, e, &mut rng)),
                b_o: params.add(format!("block{b}.b_o"), zeros_vec(e)),
                ln1_gain: params.add(format!("block{b}.ln1.gain"), ones_vec(e)),
                ln1_bias: params.add(format!("block{b}.ln1.bias"), zeros_vec(e)),
                ffn_w1: params.add(format!("block{b}.ffn.w1"), xavier_uniform(e, config.ffn_hidden, &mut rng)),
                ffn_b1: params.add(format!("block{b}.ffn.b1"), zeros_vec(config.ffn_hidden)),
                ffn_w2: params.add(format!("block{b}.ffn.w2"), xavier_uniform(config.ffn_hidden, e, &mut rng)),
                ffn_b2: params.add(format!("block{b}.ffn.b2"), zeros_vec(e)),
                ln2_gain: params.add(format!("block{b}.ln2.gain"), ones_vec(e)),
                ln2_bias: params.add(format!("block{b}.ln2.bias"), zeros_vec(e)),
            });
        }

        let head = OutputHeadIds {
            w1: params.add("head.w1", xavier_uniform(e, config.head_hidden, &mut rng)),
            b1: params.add("head.b1", zeros_vec(config.head_hidden)),
            w2: params.add("head.w2", xavier_uniform(config.head_hidden, 1, &mut rng)),
            b2: params.add("head.b2", zeros_vec(1)),
        };

        let pos_encoding = positional_encoding(config.seq_len, e);
        Ok(GadformerModel { config, params, ids: GadformerIds { embed_w, embed_b, blocks, head }, pos_encoding })
    }

    /// Rebuild a model around existing parameters (checkpoint loading).
    pub fn from_params(config: ModelConfig, params: ParamSet) -> Result<Self, ModelError> {
        let fresh = GadformerModel::new(config.clone(), 0)?;
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
        Ok(GadformerModel { params, ..fresh })
    }

    /// Forward for one group already on the tape as `x` [seq_len, input_dim].
    /// Returns (z, p) scalars and optionally pushes this group's attention
    /// matrices (per block, per head).
    pub fn forward_from_var(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        x: Var,
        mask: &[bool],
        mode: &mut ForwardMode,
        mut record: Option<&mut Vec<Vec<Tensor>>>,
    ) -> Result<(Var, Var), ModelError> {
        let cfg = &self.config;
        let s = cfg.seq_len;
        let e = cfg.token_dim;
        if tape.shape(x) != [s, cfg.input_dim] {
            return Err(ModelError::FeatureDim {
                got: tape.shape(x).last().copied().unwrap_or(0),
                expected: cfg.input_dim,
            });
        }
        if mask.iter().all(|&m| !m) {
            return Err(ModelError::AllMasked);
        }

        let wrap = |e: crate::error::TensorError| ModelError::Config(e.to_string());

        // Embedding + positional encoding; padded rows carry zero tokens.
        let embed_w = bound.var(self.ids.embed_w);
        let embed_b = bound.var(self.ids.embed_b);
        let projected = tape.matmul(x, embed_w).map_err(wrap)?;
        let projected = tape.add_row(projected, embed_b).map_err(wrap)?;
        let pe = tape.constant(self.pos_encoding.clone());
        let with_pe = tape.add(projected, pe).map_err(wrap)?;
        let mut row_mask = vec![0.0; s * e];
        for (i, &keep) in mask.iter().enumerate() {
            if keep {
                row_mask[i * e..(i + 1) * e].fill(1.0);
            }
        }
        let row_mask = tape.constant(Tensor::matrix(s, e, row_mask));
        let mut tokens = tape.mul(with_pe, row_mask).map_err(wrap)?;

        // Shared additive key mask: padded columns get a huge negative bias.
        let mut bias = vec![0.0; s * s];
        for j in 0..s {
            if !mask[j] {
                for i in 0..s {
                    bias[i * s + j] = MASK_BIAS;
                }
            }
        }
        let key_mask = tape.constant(Tensor::matrix(s, s, bias));
        let scale = 1.0 / (cfg.head_width() as f64).sqrt();

        for block in &self.ids.blocks {
            // Multi-head self-attention.
            let mut head_outs = Vec::with_capacity(block.heads.len());
            let mut head_mats = Vec::with_capacity(block.heads.len());
            for head in &block.heads {
                let q = tape.matmul(tokens, bound.var(head.w_q)).map_err(wrap)?;
                let k = tape.matmul(tokens, bound.var(head.w_k)).map_err(wrap)?;
                let v = tape.matmul(tokens, bound.var(head.w_v)).map_err(wrap)?;
                let kt = tape.transpose(k);
                let scores = tape.matmul(q, kt).map_err(wrap)?;
                let scores = tape.scale(scores, scale);
                let scores = tape.add(scores, key_mask).map_err(wrap)?;
                let attn = tape.softmax_rows(scores);
                if record.is_some() {
                    head_mats.push(tape.value_tensor(attn));
                }
                head_outs.push(tape.matmul(attn, v).map_err(wrap)?);
            }
            if let Some(rec) = record.as_deref_mut() {
                rec.push(head_mats);
            }
            let concat = if head_outs.len() == 1 {
                head_outs[0]
            } else {
                tape.concat_cols(&head_outs).map_err(wrap)?
            };
            let proj = tape.matmul(concat, bound.var(block.w_o)).map_err(wrap)?;
            let proj = tape.add_row(proj, bound.var(block.b_o)).map_err(wrap)?;
            let proj = self.apply_dropout(tape, proj, mode);
            let res = tape.add(tokens, proj).map_err(wrap)?;
            tokens = tape
                .layer_norm(res, bound.var(block.ln1_gain), bound.var(block.ln1_bias), 1e-5)
                .map_err(wrap)?;

            // Position-wise feed forward.
            let h1 = tape.matmul(tokens, bound.var(block.ffn_w1)).map_err(wrap)?;
            let h1 = tape.add_row(h1, bound.var(block.ffn_b1)).map_err(wrap)?;
            let h1 = tape.gelu(h1);
            let h2 = tape.matmul(h1, bound.var(block.ffn_w2)).map_err(wrap)?;
            let h2 = tape.add_row(h2, bound.var(block.ffn_b2)).map_err(wrap)?;
            let h2 = self.apply_dropout(tape, h2, mode);
            let res = tape.add(tokens, h2).map_err(wrap)?;
            tokens = tape
                .layer_norm(res, bound.var(block.ln2_gain), bound.var(block.ln2_bias), 1e-5)
                .map_err(wrap)?;
        }

        output_head(tape, bound, &self.ids.head, tokens, mask)
    }

    fn apply_dropout(&self, tape: &mut Tape, x: Var, mode: &mut ForwardMode) -> Var {
        apply_dropout(tape, x, self.config.dropout, mode)
    }
}

/// Masked mean-pool then a two-layer tanh map to a single logit;
/// p = sigmoid(z). Shared by the encoder and the GRU baseline.
pub(crate) fn output_head(
    tape: &mut Tape,
    bound: &BoundParams,
    ids: &OutputHeadIds,
    tokens: Var,
    mask: &[bool],
) -> Result<(Var, Var), ModelError> {
    let wrap = |e: crate::error::TensorError| ModelError::Config(e.to_string());
    let pooled = tape.masked_mean_rows(tokens, mask).map_err(|e| match e {
        crate::error::TensorError::Contract(_) => ModelError::AllMasked,
        other => wrap(other),
    })?;
    head_from_vector(tape, bound, ids, pooled)
}

/// The head map itself, for callers that already have a [1, E] vector.
pub(crate) fn head_from_vector(
    tape: &mut Tape,
    bound: &BoundParams,
    ids: &OutputHeadIds,
    pooled: Var,
) -> Result<(Var, Var), ModelError> {
    let wrap = |e: crate::error::TensorError| ModelError::Config(e.to_string());
    let h = tape.matmul(pooled, bound.var(ids.w1)).map_err(wrap)?;
    let h = tape.add_row(h, bound.var(ids.b1)).map_err(wrap)?;
    let h = tape.tanh(h);
    let z = tape.matmul(h, bound.var(ids.w2)).map_err(wrap)?;
    let z = tape.add_row(z, bound.var(ids.b2)).map_err(wrap)?;
    let p = tape.sigmoid(z);
    Ok((z, p))
}

pub(crate) fn apply_dropout(tape: &mut Tape, x: Var, rate: f64, mode: &mut ForwardMode) -> Var {
    match mode {
        ForwardMode::Train { dropout_rng } if rate > 0.0 => {
            use rand::Rng;
            let keep = 1.0 - rate;
            let mask: Vec<f64> = (0..tape.value(x).len())
                .map(|_| if dropout_rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect();
            tape.dropout(x, mask)
        }
        _ => x,
    }
}

/// Build the output-head id struct for another model sharing the head
/// layout (the GRU baseline).
pub(crate) fn register_output_head(
    params: &mut ParamSet,
    token_dim: usize,
    head_hidden: usize,
    rng: &mut ChaCha8Rng,
) -> OutputHeadIds {
    OutputHeadIds {
        w1: params.add("head.w1", xavier_uniform(token_dim, head_hidden, rng)),
        b1: params.add("head.b1", zeros_vec(head_hidden)),
        w2: params.add("head.w2", xavier_uniform(head_hidden, 1, rng)),
        b2: params.add("head.b2", zeros_vec(1)),
    }
}

impl GroupScorer for GadformerModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Gadformer
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
        mode: &mut ForwardMode,
        mut record: Option<&mut AttentionStack>,
    ) -> Result<BatchForward, ModelError> {
        let bound = self.params.bind(tape);
        let mut p_vars = Vec::with_capacity(groups.len());
        let mut z_vars = Vec::with_capacity(groups.len());
        for g in groups {
            let x = tape.constant(g.features.clone());
            let mut mats: Vec<Vec<Tensor>> = Vec::new();
            let rec_arg = record.as_deref_mut().map(|_| &mut mats);
            let (z, p) = self.forward_from_var(tape, &bound, x, &g.mask, mode, rec_arg)?;
            if let Some(stack) = record.as_deref_mut() {
                stack.groups.push(GroupAttention { id: g.id.clone(), mats, mask: g.mask.clone() });
            }
            z_vars.push(z);
            p_vars.push(p);
        }
        Ok(BatchForward { p_vars, z_vars, bound })
    }
}
