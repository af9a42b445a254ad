//! Wengert tape: operations are recorded in topological order during the
//! forward pass and replayed in reverse to accumulate gradients.

use crate::error::TensorError;

use super::{
    gelu, gelu_deriv, matmul_accum, sigmoid, softmax_rows_data, transpose_data, Tensor,
};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Probabilities are clamped to `1 - BCE_CLAMP` before the log so the loss
/// stays finite as p approaches 1.
pub const BCE_CLAMP: f64 = 1e-12;

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul { a: Var, b: Var },
    /// Same-shape elementwise sum.
    Add { a: Var, b: Var },
    /// Row broadcast: a is [r, c], bias is [c].
    AddRow { a: Var, bias: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    /// mul * a + add, elementwise with constants; only the slope matters
    /// for the backward rule.
    Affine { a: Var, mul: f64 },
    Transpose { a: Var },
    SoftmaxRows { a: Var },
    LayerNorm { x: Var, gain: Var, bias: Var, eps: f64 },
    Gelu { a: Var },
    Tanh { a: Var },
    Sigmoid { a: Var },
    SumAll { a: Var },
    MeanAll { a: Var },
    ConcatCols { parts: Vec<Var> },
    StackScalars { parts: Vec<Var> },
    MaskedMeanRows { x: Var, mask: Vec<bool> },
    RowSlice { x: Var, row: usize },
    Dropout { a: Var, scale_mask: Vec<f64> },
    BceFixedZero { p: Var },
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    needs_grad: bool,
    op: Op,
}

/// Ordered list of recorded operations; inputs always precede their outputs.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record a leaf. Gradients are accumulated for it iff `t.requires_grad`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs = t.requires_grad;
        self.push(t.shape, t.data, needs, Op::Leaf)
    }

    /// Leaf that never receives gradients (positional encodings, masks).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t.shape, t.data, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value_tensor(&self, v: Var) -> Tensor {
        Tensor::from_vec(self.nodes[v.0].shape.clone(), self.nodes[v.0].data.clone())
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0].data.len(), 1);
        self.nodes[v.0].data[0]
    }

    /// Gradient of a node after `backward`; zeros if nothing reached it.
    pub fn grad_of(&self, v: Var) -> Vec<f64> {
        match &self.nodes[v.0].grad {
            Some(g) => g.clone(),
            None => vec![0.0; self.nodes[v.0].data.len()],
        }
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, needs_grad: bool, op: Op) -> Var {
        self.nodes.push(Node { shape, data, grad: None, needs_grad, op });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn dims2(&self, v: Var) -> (usize, usize) {
        let s = &self.nodes[v.0].shape;
        match s.len() {
            1 => (s[0], 1),
            2 => (s[0], s[1]),
            _ => panic!("expected 1-d or 2-d tensor, got {s:?}"),
        }
    }

    // ── Operations ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.dims2(a);
        let (k2, n) = self.dims2(b);
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: self.nodes[a.0].shape.clone(),
                right: self.nodes[b.0].shape.clone(),
            });
        }
        let mut out = vec![0.0; m * n];
        matmul_accum(&self.nodes[a.0].data, &self.nodes[b.0].data, m, k, n, &mut out);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(vec![m, n], out, needs, Op::Matmul { a, b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                left: self.nodes[a.0].shape.clone(),
                right: self.nodes[b.0].shape.clone(),
            });
        }
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x + y)
            .collect();
        let needs = self.needs(a) || self.needs(b);
        let shape = self.nodes[a.0].shape.clone();
        Ok(self.push(shape, data, needs, Op::Add { a, b }))
    }

    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, TensorError> {
        let (r, c) = self.dims2(a);
        if self.nodes[bias.0].data.len() != c {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                left: self.nodes[a.0].shape.clone(),
                right: self.nodes[bias.0].shape.clone(),
            });
        }
        let bias_data = &self.nodes[bias.0].data;
        let mut data = self.nodes[a.0].data.clone();
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] += bias_data[j];
            }
        }
        let needs = self.needs(a) || self.needs(bias);
        let shape = self.nodes[a.0].shape.clone();
        Ok(self.push(shape, data, needs, Op::AddRow { a, bias }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(TensorError::ShapeMismatch {
                op: "sub",
                left: self.nodes[a.0].shape.clone(),
                right: self.nodes[b.0].shape.clone(),
            });
        }
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x - y)
            .collect();
        let needs = self.needs(a) || self.needs(b);
        let shape = self.nodes[a.0].shape.clone();
        Ok(self.push(shape, data, needs, Op::Sub { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                left: self.nodes[a.0].shape.clone(),
                right: self.nodes[b.0].shape.clone(),
            });
        }
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x * y)
            .collect();
        let needs = self.needs(a) || self.needs(b);
        let shape = self.nodes[a.0].shape.clone();
        Ok(self.push(shape, data, needs, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.affine(a, k, 0.0)
    }

    pub fn affine(&mut self, a: Var, mul: f64, add: f64) -> Var {
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|x| mul * x + add).collect();
        let needs = self.needs(a);
        let shape = self.nodes[a.0].shape.clone();
        self.push(shape, data, needs, Op::Affine { a, mul })
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (r, c) = self.dims2(a);
        let data = transpose_data(&self.nodes[a.0].data, r, c);
        let needs = self.needs(a);
        self.push(vec![c, r], data, needs, Op::Transpose { a })
    }

    /// Row-wise softmax; each output row sums to 1.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.dims2(a);
        let data = softmax_rows_data(&self.nodes[a.0].data, r, c);
        let needs = self.needs(a);
        let shape = self.nodes[a.0].shape.clone();
        self.push(shape, data, needs, Op::SoftmaxRows { a })
    }

    /// Per-row normalization with elementwise gain and bias of width C.
    pub fn layer_norm(
        &mut self,
        x: Var,
        gain: Var,
        bias: Var,
        eps: f64,
    ) -> Result<Var, TensorError> {
        let (r, c) = self.dims2(x);
        if self.nodes[gain.0].data.len() != c || self.nodes[bias.0].data.len() != c {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                left: self.nodes[x.0].shape.clone(),
                right: self.nodes[gain.0].shape.clone(),
            });
        }
        let xd = &self.nodes[x.0].data;
        let g = &self.nodes[gain.0].data;
        let b = &self.nodes[bias.0].data;
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            let row = &xd[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv_std = 1.0 / (var + eps).sqrt();
            for j in 0..c {
                data[i * c + j] = (row[j] - mean) * inv_std * g[j] + b[j];
            }
        }
        let needs = self.needs(x) || self.needs(gain) || self.needs(bias);
        let shape = self.nodes[x.0].shape.clone();
        Ok(self.push(shape, data, needs, Op::LayerNorm { x, gain, bias, eps }))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|&x| gelu(x)).collect();
        let needs = self.needs(a);
        let shape = self.nodes[a.0].shape.clone();
        self.push(shape, data, needs, Op::Gelu { a })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|x| x.tanh()).collect();
        let needs = self.needs(a);
        let shape = self.nodes[a.0].shape.clone();
        self.push(shape, data, needs, Op::Tanh { a })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|&x| sigmoid(x)).collect();
        let needs = self.needs(a);
        let shape = self.nodes[a.0].shape.clone();
        self.push(shape, data, needs, Op::Sigmoid { a })
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].data.iter().sum();
        let needs = self.needs(a);
        self.push(vec![1], vec![s], needs, Op::SumAll { a })
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].data.len() as f64;
        let s = self.nodes[a.0].data.iter().sum::<f64>() / n;
        let needs = self.needs(a);
        self.push(vec![1], vec![s], needs, Op::MeanAll { a })
    }

    /// Concatenate equal-row-count matrices side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        assert!(!parts.is_empty(), "concat_cols needs at least one part");
        let (r, _) = self.dims2(parts[0]);
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.dims2(p);
            if pr != r {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    left: self.nodes[parts[0].0].shape.clone(),
                    right: self.nodes[p.0].shape.clone(),
                });
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; r * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = &self.nodes[p.0].data;
            for i in 0..r {
                data[i * total + offset..i * total + offset + w]
                    .copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            offset += w;
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(vec![r, total], data, needs, Op::ConcatCols { parts: parts.to_vec() }))
    }

    /// Stack scalar nodes into an [n] vector.
    pub fn stack_scalars(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "stack_scalars needs at least one part");
        let data: Vec<f64> = parts
            .iter()
            .map(|&p| {
                debug_assert_eq!(self.nodes[p.0].data.len(), 1, "stack_scalars input not scalar");
                self.nodes[p.0].data[0]
            })
            .collect();
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(vec![parts.len()], data, needs, Op::StackScalars { parts: parts.to_vec() })
    }

    /// Mean over unmasked rows of x [r, c] -> [1, c].
    pub fn masked_mean_rows(&mut self, x: Var, mask: &[bool]) -> Result<Var, TensorError> {
        let (r, c) = self.dims2(x);
        if mask.len() != r {
            return Err(TensorError::ShapeMismatch {
                op: "masked_mean_rows",
                left: self.nodes[x.0].shape.clone(),
                right: vec![mask.len()],
            });
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(TensorError::Contract(
                "masked_mean_rows: every row is masked".to_string(),
            ));
        }
        let xd = &self.nodes[x.0].data;
        let mut data = vec![0.0; c];
        for (i, &keep) in mask.iter().enumerate() {
            if keep {
                for j in 0..c {
                    data[j] += xd[i * c + j];
                }
            }
        }
        for v in data.iter_mut() {
            *v /= count as f64;
        }
        let needs = self.needs(x);
        Ok(self.push(vec![1, c], data, needs, Op::MaskedMeanRows { x, mask: mask.to_vec() }))
    }

    /// Copy row `i` of x [r, c] out as a [1, c] node.
    pub fn row(&mut self, x: Var, i: usize) -> Var {
        let (r, c) = self.dims2(x);
        assert!(i < r, "row {i} out of bounds for {r} rows");
        let data = self.nodes[x.0].data[i * c..(i + 1) * c].to_vec();
        let needs = self.needs(x);
        self.push(vec![1, c], data, needs, Op::RowSlice { x, row: i })
    }

    /// Inverted dropout: `scale_mask` entries are 0.0 or 1/(1-p).
    pub fn dropout(&mut self, a: Var, scale_mask: Vec<f64>) -> Var {
        debug_assert_eq!(scale_mask.len(), self.nodes[a.0].data.len());
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&scale_mask)
            .map(|(x, s)| x * s)
            .collect();
        let needs = self.needs(a);
        let shape = self.nodes[a.0].shape.clone();
        self.push(shape, data, needs, Op::Dropout { a, scale_mask })
    }

    /// Binary cross entropy against the fixed target p = 0:
    /// `-(1/M) * sum(ln(1 - p_hat))` with p_hat clamped to 1 - 1e-12.
    pub fn bce_fixed_zero(&mut self, p: Var) -> Var {
        let pd = &self.nodes[p.0].data;
        let m = pd.len() as f64;
        let loss = -pd.iter().map(|&pi| (1.0 - pi).max(BCE_CLAMP).ln()).sum::<f64>() / m;
        let needs = self.needs(p);
        self.push(vec![1], vec![loss], needs, Op::BceFixedZero { p })
    }

    // ── Backward ────────────────────────────────────────────────────

    fn accum(&mut self, v: Var, contrib: &[f64]) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let node = &mut self.nodes[v.0];
        match &mut node.grad {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contrib) {
                    *gi += ci;
                }
            }
            None => node.grad = Some(contrib.to_vec()),
        }
    }

    /// Reverse sweep from a scalar loss. Visits every recorded operation at
    /// most once, in reverse topological order.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: self.nodes[loss.0].shape.clone(),
            });
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let dy = match &self.nodes[idx].grad {
                Some(g) => g.clone(),
                None => continue,
            };
            if !self.nodes[idx].needs_grad {
                continue;
            }
            // Ops are matched by value to keep borrows simple; the enum only
            // holds Vars and small saved buffers.
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::Matmul { a, b } => {
                    let (a, b) = (*a, *b);
                    let (m, k) = self.dims2(a);
                    let n = self.dims2(b).1;
                    if self.needs(a) {
                        // dA = dC · B^T
                        let bt = transpose_data(&self.nodes[b.0].data, k, n);
                        let mut da = vec![0.0; m * k];
                        matmul_accum(&dy, &bt, m, n, k, &mut da);
                        self.accum(a, &da);
                    }
                    if self.needs(b) {
                        // dB = A^T · dC
                        let at = transpose_data(&self.nodes[a.0].data, m, k);
                        let mut db = vec![0.0; k * n];
                        matmul_accum(&at, &dy, k, m, n, &mut db);
                        self.accum(b, &db);
                    }
                }
                Op::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    self.accum(a, &dy);
                    self.accum(b, &dy);
                }
                Op::AddRow { a, bias } => {
                    let (a, bias) = (*a, *bias);
                    let (r, c) = self.dims2(a);
                    self.accum(a, &dy);
                    if self.needs(bias) {
                        let mut db = vec![0.0; c];
                        for i in 0..r {
                            for j in 0..c {
                                db[j] += dy[i * c + j];
                            }
                        }
                        self.accum(bias, &db);
                    }
                }
                Op::Sub { a, b } => {
                    let (a, b) = (*a, *b);
                    self.accum(a, &dy);
                    let neg: Vec<f64> = dy.iter().map(|v| -v).collect();
                    self.accum(b, &neg);
                }
                Op::Mul { a, b } => {
                    let (a, b) = (*a, *b);
                    if self.needs(a) {
                        let da: Vec<f64> =
                            dy.iter().zip(&self.nodes[b.0].data).map(|(g, y)| g * y).collect();
                        self.accum(a, &da);
                    }
                    if self.needs(b) {
                        let db: Vec<f64> =
                            dy.iter().zip(&self.nodes[a.0].data).map(|(g, x)| g * x).collect();
                        self.accum(b, &db);
                    }
                }
                Op::Affine { a, mul } => {
                    let (a, mul) = (*a, *mul);
                    let da: Vec<f64> = dy.iter().map(|g| g * mul).collect();
                    self.accum(a, &da);
                }
                Op::Transpose { a } => {
                    let a = *a;
                    let (r, c) = self.dims2(a);
                    // dy has shape [c, r]; transpose back.
                    let da = transpose_data(&dy, c, r);
                    self.accum(a, &da);
                }
                Op::SoftmaxRows { a } => {
                    let a = *a;
                    let (r, c) = self.dims2(a);
                    let y = &self.nodes[idx].data;
                    let mut da = vec![0.0; r * c];
                    for i in 0..r {
                        let yr = &y[i * c..(i + 1) * c];
                        let gr = &dy[i * c..(i + 1) * c];
                        let dot: f64 = yr.iter().zip(gr).map(|(yv, gv)| yv * gv).sum();
                        for j in 0..c {
                            da[i * c + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    self.accum(a, &da);
                }
                Op::LayerNorm { x, gain, bias, eps } => {
                    let (x, gain, bias, eps) = (*x, *gain, *bias, *eps);
                    let (r, c) = self.dims2(x);
                    let xd = self.nodes[x.0].data.clone();
                    let g = self.nodes[gain.0].data.clone();
                    let cn = c as f64;
                    let mut dx = vec![0.0; r * c];
                    let mut dgain = vec![0.0; c];
                    let mut dbias = vec![0.0; c];
                    for i in 0..r {
                        let row = &xd[i * c..(i + 1) * c];
                        let gr = &dy[i * c..(i + 1) * c];
                        let mean = row.iter().sum::<f64>() / cn;
                        let var =
                            row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cn;
                        let inv_std = 1.0 / (var + eps).sqrt();
                        // dxhat, and the two row-level reductions it needs
                        let mut sum_dxhat = 0.0;
                        let mut sum_dxhat_xhat = 0.0;
                        let mut xhat = vec![0.0; c];
                        let mut dxhat = vec![0.0; c];
                        for j in 0..c {
                            xhat[j] = (row[j] - mean) * inv_std;
                            dxhat[j] = gr[j] * g[j];
                            sum_dxhat += dxhat[j];
                            sum_dxhat_xhat += dxhat[j] * xhat[j];
                            dgain[j] += gr[j] * xhat[j];
                            dbias[j] += gr[j];
                        }
                        for j in 0..c {
                            dx[i * c + j] = inv_std / cn
                                * (cn * dxhat[j] - sum_dxhat - xhat[j] * sum_dxhat_xhat);
                        }
                    }
                    self.accum(x, &dx);
                    self.accum(gain, &dgain);
                    self.accum(bias, &dbias);
                }
                Op::Gelu { a } => {
                    let a = *a;
                    let da: Vec<f64> = self.nodes[a.0]
                        .data
                        .iter()
                        .zip(&dy)
                        .map(|(&x, g)| g * gelu_deriv(x))
                        .collect();
                    self.accum(a, &da);
                }
                Op::Tanh { a } => {
                    let a = *a;
                    let y = &self.nodes[idx].data;
                    let da: Vec<f64> = y.iter().zip(&dy).map(|(t, g)| g * (1.0 - t * t)).collect();
                    self.accum(a, &da);
                }
                Op::Sigmoid { a } => {
                    let a = *a;
                    let y = &self.nodes[idx].data;
                    let da: Vec<f64> = y.iter().zip(&dy).map(|(s, g)| g * s * (1.0 - s)).collect();
                    self.accum(a, &da);
                }
                Op::SumAll { a } => {
                    let a = *a;
                    let n = self.nodes[a.0].data.len();
                    let da = vec![dy[0]; n];
                    self.accum(a, &da);
                }
                Op::MeanAll { a } => {
                    let a = *a;
                    let n = self.nodes[a.0].data.len();
                    let da = vec![dy[0] / n as f64; n];
                    self.accum(a, &da);
                }
                Op::ConcatCols { parts } => {
                    let parts = parts.clone();
                    let r = self.dims2(parts[0]).0;
                    let total = self.dims2(Var(idx)).1;
                    let mut offset = 0;
                    for p in parts {
                        let w = self.dims2(p).1;
                        if self.needs(p) {
                            let mut dp = vec![0.0; r * w];
                            for i in 0..r {
                                dp[i * w..(i + 1) * w].copy_from_slice(
                                    &dy[i * total + offset..i * total + offset + w],
                                );
                            }
                            self.accum(p, &dp);
                        }
                        offset += w;
                    }
                }
                Op::StackScalars { parts } => {
                    let parts = parts.clone();
                    for (i, p) in parts.into_iter().enumerate() {
                        self.accum(p, &[dy[i]]);
                    }
                }
                Op::MaskedMeanRows { x, mask } => {
                    let x = *x;
                    let mask = mask.clone();
                    let (r, c) = self.dims2(x);
                    let count = mask.iter().filter(|&&m| m).count() as f64;
                    let mut dx = vec![0.0; r * c];
                    for (i, keep) in mask.into_iter().enumerate() {
                        if keep {
                            for j in 0..c {
                                dx[i * c + j] = dy[j] / count;
                            }
                        }
                    }
                    self.accum(x, &dx);
                }
                Op::RowSlice { x, row } => {
                    let (x, row) = (*x, *row);
                    let (r, c) = self.dims2(x);
                    let mut dx = vec![0.0; r * c];
                    dx[row * c..(row + 1) * c].copy_from_slice(&dy);
                    self.accum(x, &dx);
                }
                Op::Dropout { a, scale_mask } => {
                    let a = *a;
                    let da: Vec<f64> =
                        dy.iter().zip(scale_mask).map(|(g, s)| g * s).collect();
                    self.accum(a, &da);
                }
                Op::BceFixedZero { p } => {
                    let p = *p;
                    let pd = &self.nodes[p.0].data;
                    let m = pd.len() as f64;
                    // d/dp of -(1/M) ln(1-p) is (1/M) / (1-p); zero once the
                    // clamp is active.
                    let dp: Vec<f64> = pd
                        .iter()
                        .map(|&pi| {
                            let q = 1.0 - pi;
                            if q > BCE_CLAMP {
                                dy[0] / (m * q)
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    self.accum(p, &dp);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(tape: &mut Tape, shape: Vec<usize>, data: Vec<f64>) -> Var {
        tape.leaf(Tensor::from_vec(shape, data).with_grad())
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let i2 = tape.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]));
        let c = tape.matmul(a, i2).unwrap();
        assert_eq!(tape.value(c), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_hand_case() {
        // [[1,2]] · [[3],[4]] = [[11]]
        let mut tape = Tape::new();
        let a = leaf(&mut tape, vec![1, 2], vec![1.0, 2.0]);
        let b = leaf(&mut tape, vec![2, 1], vec![3.0, 4.0]);
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c), &[11.0]);
    }

    #[test]
    fn matmul_zero_annihilates() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let z = tape.constant(Tensor::zeros(vec![2, 2]));
        let c = tape.matmul(a, z).unwrap();
        assert!(tape.value(c).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, vec![2, 3], vec![0.0; 6]);
        let b = leaf(&mut tape, vec![2, 2], vec![0.0; 4]);
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn softmax_known_row() {
        // [0, ln 2] -> [1/3, 2/3]
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![1, 2], vec![0.0, 2.0_f64.ln()]);
        let y = tape.softmax_rows(x);
        let v = tape.value(y);
        assert!((v[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((v[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![3, 4], vec![
            -50.0, 0.0, 12.5, 49.9, 1.0, 1.0, 1.0, 1.0, -3.0, 7.0, -7.0, 3.0,
        ]);
        let y = tape.softmax_rows(x);
        let v = tape.value(y);
        for r in 0..3 {
            let s: f64 = v[r * 4..(r + 1) * 4].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_constant_row_is_bias() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![1, 3], vec![5.0, 5.0, 5.0]);
        let gain = tape.constant(Tensor::from_vec(vec![3], vec![1.0; 3]));
        let bias = tape.constant(Tensor::from_vec(vec![3], vec![0.0; 3]));
        let y = tape.layer_norm(x, gain, bias, 1e-5).unwrap();
        assert!(tape.value(y).iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn layer_norm_unit_row() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![1, 2], vec![-1.0, 1.0]);
        let gain = tape.constant(Tensor::from_vec(vec![2], vec![1.0; 2]));
        let bias = tape.constant(Tensor::from_vec(vec![2], vec![0.0; 2]));
        let y = tape.layer_norm(x, gain, bias, 1e-12).unwrap();
        let v = tape.value(y);
        assert!((v[0] + 1.0).abs() < 1e-9);
        assert!((v[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn layer_norm_zero_gain_gives_bias() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![2, 2], vec![3.0, -1.0, 0.5, 9.0]);
        let gain = tape.constant(Tensor::from_vec(vec![2], vec![0.0; 2]));
        let bias = tape.constant(Tensor::from_vec(vec![2], vec![0.7, -0.2]));
        let y = tape.layer_norm(x, gain, bias, 1e-5).unwrap();
        let v = tape.value(y);
        assert_eq!(&v[0..2], &[0.7, -0.2]);
        assert_eq!(&v[2..4], &[0.7, -0.2]);
    }

    #[test]
    fn backward_sum_gives_ones() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![2, 3], vec![1.0, -2.0, 3.0, 0.0, 5.0, -6.0]);
        let loss = tape.sum_all(x);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad_of(x), vec![1.0; 6]);
    }

    #[test]
    fn backward_sigmoid_at_zero() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![1], vec![0.0]);
        let s = tape.sigmoid(x);
        let loss = tape.sum_all(s);
        tape.backward(loss).unwrap();
        assert!((tape.grad_of(x)[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn backward_disconnected_leaf_is_zero() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![2], vec![1.0, 2.0]);
        let unused = leaf(&mut tape, vec![2], vec![3.0, 4.0]);
        let loss = tape.sum_all(x);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad_of(unused), vec![0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![2], vec![1.0, 2.0]);
        assert!(matches!(
            tape.backward(x),
            Err(TensorError::NonScalarLoss { .. })
        ));
    }

    #[test]
    fn backward_is_deterministic() {
        let run = || {
            let mut tape = Tape::new();
            let x = leaf(&mut tape, vec![2, 2], vec![0.3, -1.2, 0.8, 2.2]);
            let s = tape.softmax_rows(x);
            let t = tape.tanh(s);
            let loss = tape.mean_all(t);
            tape.backward(loss).unwrap();
            tape.grad_of(x)
        };
        let a = run();
        let b = run();
        // bitwise identical
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn bce_fixed_zero_known_values() {
        let mut tape = Tape::new();
        let p = leaf(&mut tape, vec![3], vec![0.0, 0.0, 0.0]);
        let loss = tape.bce_fixed_zero(p);
        assert_eq!(tape.scalar_value(loss), 0.0);

        let mut tape = Tape::new();
        let p = leaf(&mut tape, vec![1], vec![0.5]);
        let loss = tape.bce_fixed_zero(p);
        assert!((tape.scalar_value(loss) - 2.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bce_clamp_keeps_loss_finite() {
        let mut tape = Tape::new();
        let p = leaf(&mut tape, vec![2], vec![1.0, 0.999999]);
        let loss = tape.bce_fixed_zero(p);
        assert!(tape.scalar_value(loss).is_finite());
        tape.backward(loss).unwrap();
        assert!(tape.grad_of(p).iter().all(|g| g.is_finite()));
    }

    #[test]
    fn masked_mean_rows_skips_masked() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![3, 2], vec![1.0, 2.0, 100.0, 200.0, 3.0, 4.0]);
        let pooled = tape.masked_mean_rows(x, &[true, false, true]).unwrap();
        assert_eq!(tape.value(pooled), &[2.0, 3.0]);
    }

    #[test]
    fn masked_mean_rows_all_masked_is_error() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![2, 2], vec![0.0; 4]);
        assert!(tape.masked_mean_rows(x, &[false, false]).is_err());
    }

    #[test]
    fn concat_cols_roundtrip() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, vec![2, 1], vec![1.0, 3.0]);
        let b = leaf(&mut tape, vec![2, 2], vec![10.0, 20.0, 30.0, 40.0]);
        let c = tape.concat_cols(&[a, b]).unwrap();
        assert_eq!(tape.value(c), &[1.0, 10.0, 20.0, 3.0, 30.0, 40.0]);
        let loss = tape.sum_all(c);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad_of(a), vec![1.0, 1.0]);
        assert_eq!(tape.grad_of(b), vec![1.0; 4]);
    }
}
