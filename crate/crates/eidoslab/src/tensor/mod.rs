//! Dense-tensor arithmetic with reverse-mode differentiation.
//!
//! A [`Tape`] records every operation in creation order; node ids are plain
//! indices, so parents always precede children and the backward pass is a
//! single reverse sweep that visits each node exactly once. Values are 64-bit
//! floats throughout and all iteration orders are fixed, so identical inputs
//! produce bit-identical outputs.

pub mod kernels;

use thiserror::Error;

pub type NodeId = usize;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    Contract { op: &'static str, msg: String },
    #[error("depthwise_conv1d: sequence length {t} shorter than kernel length {l}")]
    Window { t: usize, l: usize },
}

fn contract(op: &'static str, msg: impl Into<String>) -> TensorError {
    TensorError::Contract {
        op,
        msg: msg.into(),
    }
}

/// Operation that produced a node; doubles as the provenance tag and the
/// parent-edge list of the graph.
#[derive(Debug, Clone)]
pub enum Op {
    Leaf,
    StopGradient {
        src: NodeId,
    },
    Matmul {
        a: NodeId,
        b: NodeId,
        m: usize,
        k: usize,
        n: usize,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    /// `[rows x cols] + [cols]` broadcast over rows.
    AddRow {
        a: NodeId,
        row: NodeId,
        rows: usize,
        cols: usize,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        a: NodeId,
        c: f64,
    },
    Sin {
        a: NodeId,
    },
    Sigmoid {
        a: NodeId,
    },
    Silu {
        a: NodeId,
    },
    SoftmaxLastDim {
        a: NodeId,
        cols: usize,
    },
    /// Fused causal attention probabilities: softmax(scale * q k^T) with
    /// query row i attending to key rows j <= i + offset. Only the
    /// probabilities are stored; the raw scores are never materialized.
    AttnProbs {
        q: NodeId,
        k: NodeId,
        t_q: usize,
        t_k: usize,
        hd: usize,
        offset: usize,
        scale: f64,
    },
    /// probs @ values restricted to the causal band j <= i + offset.
    CausalWeightedSum {
        p: NodeId,
        v: NodeId,
        t_q: usize,
        t_k: usize,
        hd: usize,
        offset: usize,
    },
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        rows: usize,
        cols: usize,
        /// Per-row (mean, 1/std) captured during the forward pass.
        stats: Vec<(f64, f64)>,
    },
    DepthwiseConv {
        x: NodeId,
        kernel: NodeId,
        t_in: usize,
        l: usize,
        channels: usize,
    },
    Rope {
        x: NodeId,
        head_dim: usize,
        pos_start: usize,
        theta: f64,
        rows: usize,
    },
    L2NormRows {
        x: NodeId,
        eps: f64,
        rows: usize,
        cols: usize,
    },
    SliceRows {
        x: NodeId,
        start: usize,
        len: usize,
        width: usize,
    },
    SliceCols {
        x: NodeId,
        start: usize,
        len: usize,
        width_in: usize,
        rows: usize,
    },
    ConcatCols {
        parts: Vec<NodeId>,
        widths: Vec<usize>,
        rows: usize,
    },
    Reshape {
        x: NodeId,
    },
    Sum {
        x: NodeId,
    },
    Mean {
        x: NodeId,
    },
    /// Mean pinball loss over an [n x (horizon*levels)] prediction block
    /// against [n x horizon] targets.
    Pinball {
        pred: NodeId,
        target: NodeId,
        levels: Vec<f64>,
        horizon: usize,
        n: usize,
    },
}

impl Op {
    pub fn parents(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf | Op::StopGradient { .. } => Vec::new(),
            Op::Matmul { a, b, .. }
            | Op::Add { a, b }
            | Op::Mul { a, b } => vec![*a, *b],
            Op::AddRow { a, row, .. } => vec![*a, *row],
            Op::Scale { a, .. }
            | Op::Sin { a }
            | Op::Sigmoid { a }
            | Op::Silu { a }
            | Op::SoftmaxLastDim { a, .. } => vec![*a],
            Op::AttnProbs { q, k, .. } => vec![*q, *k],
            Op::CausalWeightedSum { p, v, .. } => vec![*p, *v],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::DepthwiseConv { x, kernel, .. } => vec![*x, *kernel],
            Op::Rope { x, .. }
            | Op::L2NormRows { x, .. }
            | Op::SliceRows { x, .. }
            | Op::SliceCols { x, .. }
            | Op::Reshape { x }
            | Op::Sum { x }
            | Op::Mean { x } => vec![*x],
            Op::ConcatCols { parts, .. } => parts.clone(),
            Op::Pinball { pred, target, .. } => vec![*pred, *target],
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::StopGradient { .. } => "stop_gradient",
            Op::Matmul { .. } => "matmul",
            Op::Add { .. } => "add",
            Op::AddRow { .. } => "add_row",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::Sin { .. } => "sin",
            Op::Sigmoid { .. } => "sigmoid",
            Op::Silu { .. } => "silu",
            Op::SoftmaxLastDim { .. } => "softmax_lastdim",
            Op::AttnProbs { .. } => "attn_probs",
            Op::CausalWeightedSum { .. } => "causal_weighted_sum",
            Op::LayerNorm { .. } => "layer_norm",
            Op::DepthwiseConv { .. } => "depthwise_conv1d",
            Op::Rope { .. } => "rope_rotate",
            Op::L2NormRows { .. } => "l2_normalize_rows",
            Op::SliceRows { .. } => "slice_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::ConcatCols { .. } => "concat_cols",
            Op::Reshape { .. } => "reshape",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::Pinball { .. } => "pinball",
        }
    }
}

#[derive(Debug)]
pub struct Node {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub requires_grad: bool,
    pub op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn dims2(shape: &[usize]) -> Option<(usize, usize)> {
    match shape {
        [r, c] => Some((*r, *c)),
        _ => None,
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn data(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].data
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id].shape
    }

    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.grads[id].as_deref()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id].requires_grad
    }

    pub fn parents(&self, id: NodeId) -> Vec<NodeId> {
        self.nodes[id].op.parents()
    }

    pub fn op_tag(&self, id: NodeId) -> &'static str {
        self.nodes[id].op.tag()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, op: Op) -> NodeId {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node {
            shape,
            data,
            requires_grad,
            op,
        });
        self.grads.push(None);
        self.nodes.len() - 1
    }

    fn any_grad(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    pub fn leaf(&mut self, data: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> NodeId {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "leaf data length must equal the product of the shape extents"
        );
        self.push(shape, data, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, data: Vec<f64>, shape: Vec<usize>) -> NodeId {
        self.leaf(data, shape, false)
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.push(vec![], vec![v], false, Op::Leaf)
    }

    /// Identity on values; blocks all gradient flow into `src`.
    pub fn stop_gradient(&mut self, src: NodeId) -> NodeId {
        let data = self.nodes[src].data.clone();
        let shape = self.nodes[src].shape.clone();
        self.push(shape, data, false, Op::StopGradient { src })
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (m, k) = dims2(self.shape(a)).ok_or_else(|| {
            contract("matmul", format!("left operand is not 2-d: {:?}", self.shape(a)))
        })?;
        let (k2, n) = dims2(self.shape(b)).ok_or_else(|| {
            contract("matmul", format!("right operand is not 2-d: {:?}", self.shape(b)))
        })?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul_acc(&mut out, self.data(a), self.data(b), m, k, n);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(vec![m, n], out, rg, Op::Matmul { a, b, m, k, n }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        let data: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(shape, data, rg, Op::Add { a, b }))
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId, TensorError> {
        let (rows, cols) = dims2(self.shape(a)).ok_or_else(|| {
            contract("add_row", format!("operand is not 2-d: {:?}", self.shape(a)))
        })?;
        if self.data(row).len() != cols {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                left: self.shape(a).to_vec(),
                right: self.shape(row).to_vec(),
            });
        }
        let mut data = self.data(a).to_vec();
        for r in 0..rows {
            for c in 0..cols {
                data[r * cols + c] += self.data(row)[c];
            }
        }
        let rg = self.any_grad(&[a, row]);
        Ok(self.push(vec![rows, cols], data, rg, Op::AddRow { a, row, rows, cols }))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        let data: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(shape, data, rg, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let data: Vec<f64> = self.data(a).iter().map(|x| x * c).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.nodes[a].requires_grad;
        self.push(shape, data, rg, Op::Scale { a, c })
    }

    pub fn sin(&mut self, a: NodeId) -> NodeId {
        let data: Vec<f64> = self.data(a).iter().map(|x| x.sin()).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.nodes[a].requires_grad;
        self.push(shape, data, rg, Op::Sin { a })
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let data: Vec<f64> = self.data(a).iter().map(|x| kernels::sigmoid(*x)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.nodes[a].requires_grad;
        self.push(shape, data, rg, Op::Sigmoid { a })
    }

    pub fn silu(&mut self, a: NodeId) -> NodeId {
        let data: Vec<f64> = self.data(a).iter().map(|x| kernels::silu(*x)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.nodes[a].requires_grad;
        self.push(shape, data, rg, Op::Silu { a })
    }

    /// Row-wise softmax over the last dimension, stabilized by max
    /// subtraction; `-inf` entries receive weight zero.
    pub fn softmax_lastdim(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let shape = self.shape(a).to_vec();
        let cols = *shape
            .last()
            .ok_or_else(|| contract("softmax_lastdim", "scalar input has no last dimension"))?;
        if cols == 0 {
            return Err(contract("softmax_lastdim", "last extent must be >= 1"));
        }
        let mut data = self.data(a).to_vec();
        for row in data.chunks_mut(cols) {
            kernels::softmax_row(row);
        }
        let rg = self.nodes[a].requires_grad;
        Ok(self.push(shape, data, rg, Op::SoftmaxLastDim { a, cols }))
    }

    /// Fused causal attention probabilities (see [`Op::AttnProbs`]).
    pub fn attn_probs(
        &mut self,
        q: NodeId,
        k: NodeId,
        offset: usize,
        scale: f64,
    ) -> Result<NodeId, TensorError> {
        let (t_q, hd) = dims2(self.shape(q))
            .ok_or_else(|| contract("attn_probs", "queries must be 2-d"))?;
        let (t_k, hd2) = dims2(self.shape(k))
            .ok_or_else(|| contract("attn_probs", "keys must be 2-d"))?;
        if hd != hd2 {
            return Err(TensorError::ShapeMismatch {
                op: "attn_probs",
                left: self.shape(q).to_vec(),
                right: self.shape(k).to_vec(),
            });
        }
        if t_k == 0 || offset >= t_k + t_q {
            return Err(contract("attn_probs", "empty key set"));
        }
        let mut probs = vec![0.0; t_q * t_k];
        kernels::attn_probs_causal(&mut probs, self.data(q), self.data(k), t_q, t_k, hd, offset, scale);
        let rg = self.any_grad(&[q, k]);
        Ok(self.push(
            vec![t_q, t_k],
            probs,
            rg,
            Op::AttnProbs {
                q,
                k,
                t_q,
                t_k,
                hd,
                offset,
                scale,
            },
        ))
    }

    /// probs @ values where probs is causally banded (entries beyond
    /// j = i + offset are known to be zero and are skipped).
    pub fn causal_weighted_sum(
        &mut self,
        p: NodeId,
        v: NodeId,
        offset: usize,
    ) -> Result<NodeId, TensorError> {
        let (t_q, t_k) = dims2(self.shape(p))
            .ok_or_else(|| contract("causal_weighted_sum", "probs must be 2-d"))?;
        let (t_k2, hd) = dims2(self.shape(v))
            .ok_or_else(|| contract("causal_weighted_sum", "values must be 2-d"))?;
        if t_k != t_k2 {
            return Err(TensorError::ShapeMismatch {
                op: "causal_weighted_sum",
                left: self.shape(p).to_vec(),
                right: self.shape(v).to_vec(),
            });
        }
        let mut out = vec![0.0; t_q * hd];
        {
            let pd = self.data(p);
            let vd = self.data(v);
            for i in 0..t_q {
                let lim = (i + offset).min(t_k - 1);
                let out_row = &mut out[i * hd..i * hd + hd];
                for j in 0..=lim {
                    let w = pd[i * t_k + j];
                    let v_row = &vd[j * hd..j * hd + hd];
                    for (o, &vv) in out_row.iter_mut().zip(v_row) {
                        *o += w * vv;
                    }
                }
            }
        }
        let rg = self.any_grad(&[p, v]);
        Ok(self.push(
            vec![t_q, hd],
            out,
            rg,
            Op::CausalWeightedSum {
                p,
                v,
                t_q,
                t_k,
                hd,
                offset,
            },
        ))
    }

    pub fn layer_norm(
        &mut self,
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        eps: f64,
    ) -> Result<NodeId, TensorError> {
        let shape = self.shape(x).to_vec();
        let cols = *shape
            .last()
            .ok_or_else(|| contract("layer_norm", "scalar input has no last dimension"))?;
        if self.data(gain).len() != cols || self.data(bias).len() != cols {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                left: shape,
                right: self.shape(gain).to_vec(),
            });
        }
        if eps <= 0.0 {
            return Err(contract("layer_norm", "eps must be positive"));
        }
        let rows = self.data(x).len() / cols;
        let mut data = vec![0.0; rows * cols];
        let mut stats = Vec::with_capacity(rows);
        for r in 0..rows {
            let (mean, rstd) = kernels::layer_norm_row(
                &mut data[r * cols..(r + 1) * cols],
                &self.data(x)[r * cols..(r + 1) * cols],
                self.data(gain),
                self.data(bias),
                eps,
            );
            stats.push((mean, rstd));
        }
        let rg = self.any_grad(&[x, gain, bias]);
        Ok(self.push(
            shape,
            data,
            rg,
            Op::LayerNorm {
                x,
                gain,
                bias,
                rows,
                cols,
                stats,
            },
        ))
    }

    /// Valid (unpadded) depthwise convolution: x [t x c], kernel [l x c],
    /// out[t, ch] = sum_j kernel[j, ch] * x[t + j, ch].
    pub fn depthwise_conv1d(&mut self, x: NodeId, kernel: NodeId) -> Result<NodeId, TensorError> {
        let (t_in, channels) = dims2(self.shape(x))
            .ok_or_else(|| contract("depthwise_conv1d", "input must be 2-d"))?;
        let (l, c2) = dims2(self.shape(kernel))
            .ok_or_else(|| contract("depthwise_conv1d", "kernel must be 2-d"))?;
        if channels != c2 {
            return Err(TensorError::ShapeMismatch {
                op: "depthwise_conv1d",
                left: self.shape(x).to_vec(),
                right: self.shape(kernel).to_vec(),
            });
        }
        if t_in < l {
            return Err(TensorError::Window { t: t_in, l });
        }
        let t_out = t_in - l + 1;
        let mut out = vec![0.0; t_out * channels];
        {
            let xd = self.data(x);
            let kd = self.data(kernel);
            for t in 0..t_out {
                let out_row = &mut out[t * channels..(t + 1) * channels];
                for j in 0..l {
                    let k_row = &kd[j * channels..(j + 1) * channels];
                    let x_row = &xd[(t + j) * channels..(t + j + 1) * channels];
                    for ((o, &kv), &xv) in out_row.iter_mut().zip(k_row).zip(x_row) {
                        *o += kv * xv;
                    }
                }
            }
        }
        let rg = self.any_grad(&[x, kernel]);
        Ok(self.push(
            vec![t_out, channels],
            out,
            rg,
            Op::DepthwiseConv {
                x,
                kernel,
                t_in,
                l,
                channels,
            },
        ))
    }

    /// Rotary position transform of head-major Q/K rows; row r uses position
    /// `pos_start + r`.
    pub fn rope(
        &mut self,
        x: NodeId,
        head_dim: usize,
        pos_start: usize,
        theta: f64,
    ) -> Result<NodeId, TensorError> {
        let (rows, width) = dims2(self.shape(x))
            .ok_or_else(|| contract("rope_rotate", "input must be 2-d"))?;
        if head_dim == 0 || head_dim % 2 != 0 {
            return Err(contract(
                "rope_rotate",
                format!("head_dim {head_dim} must be even"),
            ));
        }
        if width % head_dim != 0 {
            return Err(contract(
                "rope_rotate",
                format!("row width {width} is not a multiple of head_dim {head_dim}"),
            ));
        }
        let mut data = self.data(x).to_vec();
        for r in 0..rows {
            kernels::rope_rotate_row(
                &mut data[r * width..(r + 1) * width],
                head_dim,
                pos_start + r,
                theta,
                false,
            );
        }
        let rg = self.nodes[x].requires_grad;
        Ok(self.push(
            vec![rows, width],
            data,
            rg,
            Op::Rope {
                x,
                head_dim,
                pos_start,
                theta,
                rows,
            },
        ))
    }

    /// Row-wise L2 normalization with a norm floor of `eps`.
    pub fn l2_normalize_rows(&mut self, x: NodeId, eps: f64) -> Result<NodeId, TensorError> {
        let (rows, cols) = dims2(self.shape(x))
            .ok_or_else(|| contract("l2_normalize_rows", "input must be 2-d"))?;
        let mut data = self.data(x).to_vec();
        for r in 0..rows {
            let row = &mut data[r * cols..(r + 1) * cols];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(eps);
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
        let rg = self.nodes[x].requires_grad;
        Ok(self.push(
            vec![rows, cols],
            data,
            rg,
            Op::L2NormRows { x, eps, rows, cols },
        ))
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId, TensorError> {
        let (rows, width) = dims2(self.shape(x))
            .ok_or_else(|| contract("slice_rows", "input must be 2-d"))?;
        if start + len > rows {
            return Err(contract(
                "slice_rows",
                format!("range {start}..{} out of {rows} rows", start + len),
            ));
        }
        let data = self.data(x)[start * width..(start + len) * width].to_vec();
        let rg = self.nodes[x].requires_grad;
        Ok(self.push(
            vec![len, width],
            data,
            rg,
            Op::SliceRows {
                x,
                start,
                len,
                width,
            },
        ))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId, TensorError> {
        let (rows, width_in) = dims2(self.shape(x))
            .ok_or_else(|| contract("slice_cols", "input must be 2-d"))?;
        if start + len > width_in {
            return Err(contract(
                "slice_cols",
                format!("range {start}..{} out of {width_in} columns", start + len),
            ));
        }
        let mut data = vec![0.0; rows * len];
        for r in 0..rows {
            data[r * len..(r + 1) * len]
                .copy_from_slice(&self.data(x)[r * width_in + start..r * width_in + start + len]);
        }
        let rg = self.nodes[x].requires_grad;
        Ok(self.push(
            vec![rows, len],
            data,
            rg,
            Op::SliceCols {
                x,
                start,
                len,
                width_in,
                rows,
            },
        ))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, TensorError> {
        if parts.is_empty() {
            return Err(contract("concat_cols", "no parts"));
        }
        let mut widths = Vec::with_capacity(parts.len());
        let mut rows = None;
        for &p in parts {
            let (r, c) = dims2(self.shape(p))
                .ok_or_else(|| contract("concat_cols", "all parts must be 2-d"))?;
            if *rows.get_or_insert(r) != r {
                return Err(contract("concat_cols", "row counts differ"));
            }
            widths.push(c);
        }
        let rows = rows.unwrap();
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; rows * total];
        for r in 0..rows {
            let mut at = 0;
            for (&p, &w) in parts.iter().zip(&widths) {
                data[r * total + at..r * total + at + w]
                    .copy_from_slice(&self.data(p)[r * w..(r + 1) * w]);
                at += w;
            }
        }
        let rg = self.any_grad(parts);
        Ok(self.push(
            vec![rows, total],
            data,
            rg,
            Op::ConcatCols {
                parts: parts.to_vec(),
                widths,
                rows,
            },
        ))
    }

    /// Reinterpret the data under a new shape with the same element count.
    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId, TensorError> {
        if shape.iter().product::<usize>() != self.data(x).len() {
            return Err(contract(
                "reshape",
                format!(
                    "cannot reshape {:?} ({} elements) to {shape:?}",
                    self.shape(x),
                    self.data(x).len()
                ),
            ));
        }
        let data = self.data(x).to_vec();
        let rg = self.nodes[x].requires_grad;
        Ok(self.push(shape, data, rg, Op::Reshape { x }))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total: f64 = self.data(x).iter().sum();
        let rg = self.nodes[x].requires_grad;
        self.push(vec![], vec![total], rg, Op::Sum { x })
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let len = self.data(x).len().max(1);
        let total: f64 = self.data(x).iter().sum::<f64>() / len as f64;
        let rg = self.nodes[x].requires_grad;
        self.push(vec![], vec![total], rg, Op::Mean { x })
    }

    /// Mean pinball loss: pred holds `n` rows of `horizon * levels` entries
    /// (step-major: column t * |Q| + q), target holds `n` rows of `horizon`.
    pub fn pinball(
        &mut self,
        pred: NodeId,
        target: NodeId,
        levels: &[f64],
        horizon: usize,
    ) -> Result<NodeId, TensorError> {
        let (n, w) = dims2(self.shape(pred))
            .ok_or_else(|| contract("pinball", "pred must be 2-d"))?;
        let nq = levels.len();
        if w != horizon * nq {
            return Err(contract(
                "pinball",
                format!("pred width {w} != horizon {horizon} * levels {nq}"),
            ));
        }
        let (n2, h2) = dims2(self.shape(target))
            .ok_or_else(|| contract("pinball", "target must be 2-d"))?;
        if n2 != n || h2 != horizon {
            return Err(TensorError::ShapeMismatch {
                op: "pinball",
                left: self.shape(pred).to_vec(),
                right: self.shape(target).to_vec(),
            });
        }
        let mut total = 0.0;
        {
            let pd = self.data(pred);
            let td = self.data(target);
            for row in 0..n {
                for t in 0..horizon {
                    let y = td[row * horizon + t];
                    for (qi, &q) in levels.iter().enumerate() {
                        let yh = pd[row * w + t * nq + qi];
                        let under = q * (y - yh);
                        let over = (1.0 - q) * (yh - y);
                        total += under.max(over);
                    }
                }
            }
        }
        let count = (n * horizon * nq) as f64;
        let rg = self.any_grad(&[pred, target]);
        Ok(self.push(
            vec![],
            vec![total / count],
            rg,
            Op::Pinball {
                pred,
                target,
                levels: levels.to_vec(),
                horizon,
                n,
            },
        ))
    }

    /// Reverse sweep: populates the gradient of every `requires_grad`
    /// ancestor of `loss`. Nodes behind a stop-gradient receive nothing.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), TensorError> {
        if self.nodes[loss].data.len() != 1 {
            return Err(contract(
                "backward",
                format!("loss must be scalar-shaped, got {:?}", self.nodes[loss].shape),
            ));
        }
        if !self.nodes[loss].requires_grad {
            return Ok(());
        }
        self.grads[loss] = Some(vec![1.0]);
        for id in (0..=loss).rev() {
            if self.grads[id].is_none() || !self.nodes[id].requires_grad {
                continue;
            }
            let op = self.nodes[id].op.clone();
            let dout = self.grads[id].take().expect("grad present");
            self.backward_op(id, &op, &dout);
            self.grads[id] = Some(dout);
        }
        Ok(())
    }

    fn backward_op(&mut self, out_id: NodeId, op: &Op, dout: &[f64]) {
        let Tape { nodes, grads } = self;
        let rg = |id: NodeId| nodes[id].requires_grad;
        // Allocates the accumulator on first touch. `nodes` is only borrowed
        // immutably here, so parent data stays readable while accumulating.
        macro_rules! gbuf {
            ($id:expr) => {{
                let len = nodes[$id].data.len();
                grads[$id].get_or_insert_with(|| vec![0.0; len])
            }};
        }
        match op {
            Op::Leaf | Op::StopGradient { .. } => {}
            Op::Matmul { a, b, m, k, n } => {
                if rg(*a) {
                    let bd = &nodes[*b].data;
                    kernels::matmul_nt_acc(gbuf!(*a), dout, bd, *m, *n, *k);
                }
                if rg(*b) {
                    let ad = &nodes[*a].data;
                    kernels::matmul_tn_acc(gbuf!(*b), ad, dout, *m, *k, *n);
                }
            }
            Op::Add { a, b } => {
                for &id in &[*a, *b] {
                    if rg(id) {
                        for (g, d) in gbuf!(id).iter_mut().zip(dout) {
                            *g += d;
                        }
                    }
                }
            }
            Op::AddRow { a, row, rows, cols } => {
                if rg(*a) {
                    for (g, d) in gbuf!(*a).iter_mut().zip(dout) {
                        *g += d;
                    }
                }
                if rg(*row) {
                    let g = gbuf!(*row);
                    for r in 0..*rows {
                        for c in 0..*cols {
                            g[c] += dout[r * cols + c];
                        }
                    }
                }
            }
            Op::Mul { a, b } => {
                if rg(*a) {
                    let bd = &nodes[*b].data;
                    for ((g, d), v) in gbuf!(*a).iter_mut().zip(dout).zip(bd) {
                        *g += d * v;
                    }
                }
                if rg(*b) {
                    let ad = &nodes[*a].data;
                    for ((g, d), v) in gbuf!(*b).iter_mut().zip(dout).zip(ad) {
                        *g += d * v;
                    }
                }
            }
            Op::Scale { a, c } => {
                if rg(*a) {
                    for (g, d) in gbuf!(*a).iter_mut().zip(dout) {
                        *g += c * d;
                    }
                }
            }
            Op::Sin { a } => {
                if rg(*a) {
                    let ad = &nodes[*a].data;
                    for ((g, d), x) in gbuf!(*a).iter_mut().zip(dout).zip(ad) {
                        *g += d * x.cos();
                    }
                }
            }
            Op::Sigmoid { a } => {
                if rg(*a) {
                    let yd = &nodes[out_id].data;
                    for ((g, d), y) in gbuf!(*a).iter_mut().zip(dout).zip(yd) {
                        *g += d * y * (1.0 - y);
                    }
                }
            }
            Op::Silu { a } => {
                if rg(*a) {
                    let ad = &nodes[*a].data;
                    for ((g, d), x) in gbuf!(*a).iter_mut().zip(dout).zip(ad) {
                        *g += d * kernels::silu_grad(*x);
                    }
                }
            }
            Op::SoftmaxLastDim { a, cols } => {
                if rg(*a) {
                    let yd = &nodes[out_id].data;
                    let g = gbuf!(*a);
                    for r in 0..yd.len() / cols {
                        let y = &yd[r * cols..(r + 1) * cols];
                        let dy = &dout[r * cols..(r + 1) * cols];
                        let dot: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
                        for c in 0..*cols {
                            g[r * cols + c] += y[c] * (dy[c] - dot);
                        }
                    }
                }
            }
            Op::AttnProbs {
                q,
                k,
                t_q,
                t_k,
                hd,
                offset,
                scale,
            } => {
                let probs = &nodes[out_id].data;
                let qd = &nodes[*q].data;
                let kd = &nodes[*k].data;
                // dS = P o (dP - rowdot(P, dP)), then dQ = scale * dS K and
                // dK = scale * dS^T Q, all restricted to the causal band.
                let mut ds_row = vec![0.0; *t_k];
                for i in 0..*t_q {
                    let lim = (i + offset).min(t_k - 1);
                    let p_row = &probs[i * t_k..i * t_k + t_k];
                    let d_row = &dout[i * t_k..i * t_k + t_k];
                    let mut dot = 0.0;
                    for j in 0..=lim {
                        dot += p_row[j] * d_row[j];
                    }
                    for j in 0..=lim {
                        ds_row[j] = p_row[j] * (d_row[j] - dot) * scale;
                    }
                    if rg(*q) {
                        let gq = gbuf!(*q);
                        let gq_row = &mut gq[i * hd..i * hd + hd];
                        for j in 0..=lim {
                            let s = ds_row[j];
                            let k_row = &kd[j * hd..j * hd + hd];
                            for (g, &kv) in gq_row.iter_mut().zip(k_row) {
                                *g += s * kv;
                            }
                        }
                    }
                    if rg(*k) {
                        let gk = gbuf!(*k);
                        let q_row = &qd[i * hd..i * hd + hd];
                        for j in 0..=lim {
                            let s = ds_row[j];
                            let gk_row = &mut gk[j * hd..j * hd + hd];
                            for (g, &qv) in gk_row.iter_mut().zip(q_row) {
                                *g += s * qv;
                            }
                        }
                    }
                }
            }
            Op::CausalWeightedSum {
                p,
                v,
                t_q,
                t_k,
                hd,
                offset,
            } => {
                let pd = &nodes[*p].data;
                let vd = &nodes[*v].data;
                for i in 0..*t_q {
                    let lim = (i + offset).min(t_k - 1);
                    let d_row = &dout[i * hd..i * hd + hd];
                    if rg(*p) {
                        let gp = gbuf!(*p);
                        for j in 0..=lim {
                            gp[i * t_k + j] += kernels::dot(d_row, &vd[j * hd..j * hd + hd]);
                        }
                    }
                    if rg(*v) {
                        let gv = gbuf!(*v);
                        for j in 0..=lim {
                            let w = pd[i * t_k + j];
                            let gv_row = &mut gv[j * hd..j * hd + hd];
                            for (g, &d) in gv_row.iter_mut().zip(d_row) {
                                *g += w * d;
                            }
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                rows,
                cols,
                stats,
            } => {
                let xd = &nodes[*x].data;
                let gaind = &nodes[*gain].data;
                for r in 0..*rows {
                    let (mean, rstd) = stats[r];
                    let x_row = &xd[r * cols..(r + 1) * cols];
                    let d_row = &dout[r * cols..(r + 1) * cols];
                    if rg(*gain) {
                        let gg = gbuf!(*gain);
                        for c in 0..*cols {
                            gg[c] += d_row[c] * (x_row[c] - mean) * rstd;
                        }
                    }
                    if rg(*bias) {
                        let gb = gbuf!(*bias);
                        for c in 0..*cols {
                            gb[c] += d_row[c];
                        }
                    }
                    if rg(*x) {
                        // dyhat = dout o gain; dx = rstd (dyhat - mean(dyhat)
                        // - xhat * mean(dyhat o xhat)).
                        let mut mean_dy = 0.0;
                        let mut mean_dyx = 0.0;
                        for c in 0..*cols {
                            let dyh = d_row[c] * gaind[c];
                            let xh = (x_row[c] - mean) * rstd;
                            mean_dy += dyh;
                            mean_dyx += dyh * xh;
                        }
                        mean_dy /= *cols as f64;
                        mean_dyx /= *cols as f64;
                        let gx = gbuf!(*x);
                        for c in 0..*cols {
                            let dyh = d_row[c] * gaind[c];
                            let xh = (x_row[c] - mean) * rstd;
                            gx[r * cols + c] += rstd * (dyh - mean_dy - xh * mean_dyx);
                        }
                    }
                }
            }
            Op::DepthwiseConv {
                x,
                kernel,
                t_in,
                l,
                channels,
            } => {
                let t_out = t_in - l + 1;
                let xd = &nodes[*x].data;
                let kd = &nodes[*kernel].data;
                if rg(*kernel) {
                    let gk = gbuf!(*kernel);
                    for t in 0..t_out {
                        let d_row = &dout[t * channels..(t + 1) * channels];
                        for j in 0..*l {
                            let x_row = &xd[(t + j) * channels..(t + j + 1) * channels];
                            let gk_row = &mut gk[j * channels..(j + 1) * channels];
                            for ((g, &d), &xv) in gk_row.iter_mut().zip(d_row).zip(x_row) {
                                *g += d * xv;
                            }
                        }
                    }
                }
                if rg(*x) {
                    let gx = gbuf!(*x);
                    for t in 0..t_out {
                        let d_row = &dout[t * channels..(t + 1) * channels];
                        for j in 0..*l {
                            let k_row = &kd[j * channels..(j + 1) * channels];
                            let gx_row = &mut gx[(t + j) * channels..(t + j + 1) * channels];
                            for ((g, &d), &kv) in gx_row.iter_mut().zip(d_row).zip(k_row) {
                                *g += d * kv;
                            }
                        }
                    }
                }
            }
            Op::Rope {
                x,
                head_dim,
                pos_start,
                theta,
                rows,
            } => {
                if rg(*x) {
                    let width = nodes[*x].data.len() / rows;
                    let gx = gbuf!(*x);
                    let mut row_buf = vec![0.0; width];
                    for r in 0..*rows {
                        row_buf.copy_from_slice(&dout[r * width..(r + 1) * width]);
                        // Rotation is orthogonal: the adjoint rotates by the
                        // negated angle.
                        kernels::rope_rotate_row(&mut row_buf, *head_dim, pos_start + r, *theta, true);
                        for (g, &d) in gx[r * width..(r + 1) * width].iter_mut().zip(&row_buf) {
                            *g += d;
                        }
                    }
                }
            }
            Op::L2NormRows { x, eps, rows, cols } => {
                if rg(*x) {
                    let xd = &nodes[*x].data;
                    let yd = &nodes[out_id].data;
                    let gx = gbuf!(*x);
                    for r in 0..*rows {
                        let x_row = &xd[r * cols..(r + 1) * cols];
                        let y_row = &yd[r * cols..(r + 1) * cols];
                        let d_row = &dout[r * cols..(r + 1) * cols];
                        let norm = x_row.iter().map(|v| v * v).sum::<f64>().sqrt();
                        let g_row = &mut gx[r * cols..(r + 1) * cols];
                        if norm < *eps {
                            // Norm floor active: y = x / eps is linear.
                            for (g, &d) in g_row.iter_mut().zip(d_row) {
                                *g += d / eps;
                            }
                        } else {
                            let proj = kernels::dot(y_row, d_row);
                            for c in 0..*cols {
                                g_row[c] += (d_row[c] - y_row[c] * proj) / norm;
                            }
                        }
                    }
                }
            }
            Op::SliceRows {
                x,
                start,
                len,
                width,
            } => {
                if rg(*x) {
                    let gx = gbuf!(*x);
                    for (g, &d) in gx[start * width..(start + len) * width]
                        .iter_mut()
                        .zip(dout)
                    {
                        *g += d;
                    }
                }
            }
            Op::SliceCols {
                x,
                start,
                len,
                width_in,
                rows,
            } => {
                if rg(*x) {
                    let gx = gbuf!(*x);
                    for r in 0..*rows {
                        for c in 0..*len {
                            gx[r * width_in + start + c] += dout[r * len + c];
                        }
                    }
                }
            }
            Op::ConcatCols {
                parts,
                widths,
                rows,
            } => {
                let total: usize = widths.iter().sum();
                let mut at = 0;
                for (&p, &w) in parts.iter().zip(widths) {
                    if rg(p) {
                        let gp = gbuf!(p);
                        for r in 0..*rows {
                            for c in 0..w {
                                gp[r * w + c] += dout[r * total + at + c];
                            }
                        }
                    }
                    at += w;
                }
            }
            Op::Reshape { x } => {
                if rg(*x) {
                    for (g, d) in gbuf!(*x).iter_mut().zip(dout) {
                        *g += d;
                    }
                }
            }
            Op::Sum { x } => {
                if rg(*x) {
                    let d = dout[0];
                    for g in gbuf!(*x).iter_mut() {
                        *g += d;
                    }
                }
            }
            Op::Mean { x } => {
                if rg(*x) {
                    let len = nodes[*x].data.len().max(1);
                    let d = dout[0] / len as f64;
                    for g in gbuf!(*x).iter_mut() {
                        *g += d;
                    }
                }
            }
            Op::Pinball {
                pred,
                target,
                levels,
                horizon,
                n,
            } => {
                let nq = levels.len();
                let w = horizon * nq;
                let scale_fac = dout[0] / (n * horizon * nq) as f64;
                let pd = &nodes[*pred].data;
                let td = &nodes[*target].data;
                if rg(*pred) {
                    let gp = gbuf!(*pred);
                    for row in 0..*n {
                        for t in 0..*horizon {
                            let y = td[row * horizon + t];
                            for (qi, &q) in levels.iter().enumerate() {
                                let idx = row * w + t * nq + qi;
                                let yh = pd[idx];
                                // Subgradient at the kink resolves to the
                                // over-prediction branch.
                                gp[idx] += if y > yh { -q } else { 1.0 - q } * scale_fac;
                            }
                        }
                    }
                }
                if rg(*target) {
                    let gt = gbuf!(*target);
                    for row in 0..*n {
                        for t in 0..*horizon {
                            let y = td[row * horizon + t];
                            for (qi, &q) in levels.iter().enumerate() {
                                let yh = pd[row * w + t * nq + qi];
                                gt[row * horizon + t] +=
                                    if y > yh { q } else { -(1.0 - q) } * scale_fac;
                            }
                        }
                    }
                }
            }
        }
    }
}
