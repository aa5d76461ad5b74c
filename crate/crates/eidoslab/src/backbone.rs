//! Decoder-only causal transformer: Pre-LN blocks with rotary positions,
//! SiLU-gated MLPs, and KV-cached stepwise generation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{kernels, NodeId, Tape, TensorError};

#[derive(Debug, Error)]
pub enum BackboneError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub d_intermediate: usize,
    pub n_heads: usize,
    pub rope_theta: f64,
    pub ln_eps: f64,
}

impl BackboneConfig {
    pub fn new(n_layers: usize, d_model: usize, d_intermediate: usize, n_heads: usize) -> Self {
        Self {
            n_layers,
            d_model,
            d_intermediate,
            n_heads,
            rope_theta: 10_000.0,
            ln_eps: 1e-6,
        }
    }

    /// Named scaling variants.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "small" => Some(Self::new(6, 384, 1024, 12)),
            "base" => Some(Self::new(12, 384, 1024, 12)),
            "large" => Some(Self::new(12, 768, 2048, 12)),
            _ => None,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<(), BackboneError> {
        if self.n_layers == 0 || self.d_model == 0 || self.n_heads == 0 {
            return Err(BackboneError::Config(
                "layers, width and heads must be positive".into(),
            ));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(BackboneError::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.head_dim() % 2 != 0 {
            return Err(BackboneError::Config(format!(
                "head_dim {} must be even for rotary pairs",
                self.head_dim()
            )));
        }
        if self.ln_eps <= 0.0 {
            return Err(BackboneError::Config("ln_eps must be positive".into()));
        }
        Ok(())
    }
}

/// Per-layer attention keys/values for incremental decoding. Entries are
/// append-only; `filled_len` grows by exactly the positions appended.
#[derive(Debug, Clone)]
pub struct KvCache {
    pub keys: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
    filled_len: usize,
    d_model: usize,
}

impl KvCache {
    pub fn new(n_layers: usize, d_model: usize) -> Self {
        Self {
            keys: vec![Vec::new(); n_layers],
            values: vec![Vec::new(); n_layers],
            filled_len: 0,
            d_model,
        }
    }

    pub fn n_layers(&self) -> usize {
        self.keys.len()
    }

    pub fn filled_len(&self) -> usize {
        self.filled_len
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    /// Append one position's rotated key and value rows for layer `layer`.
    pub fn append_row(&mut self, layer: usize, k_row: &[f64], v_row: &[f64]) {
        debug_assert_eq!(k_row.len(), self.d_model);
        self.keys[layer].extend_from_slice(k_row);
        self.values[layer].extend_from_slice(v_row);
    }

    /// Bulk-seed the cache from a full forward pass (rows of [t x d]).
    pub fn append_block(&mut self, layer: usize, k_rows: &[f64], v_rows: &[f64]) {
        debug_assert_eq!(k_rows.len() % self.d_model, 0);
        self.keys[layer].extend_from_slice(k_rows);
        self.values[layer].extend_from_slice(v_rows);
    }

    /// Commit `n` appended positions after all layers have been written.
    pub fn advance(&mut self, n: usize) {
        self.filled_len += n;
    }
}

/// Tape node ids of one decoder layer's parameters.
#[derive(Debug, Clone, Copy)]
pub struct LayerNodes {
    pub ln1_gain: NodeId,
    pub ln1_bias: NodeId,
    pub wq: NodeId,
    pub wk: NodeId,
    pub wv: NodeId,
    pub wo: NodeId,
    pub ln2_gain: NodeId,
    pub ln2_bias: NodeId,
    pub mlp_gate: NodeId,
    pub mlp_up: NodeId,
    pub mlp_down: NodeId,
}

/// Tape output of one decoder layer, keeping the rotated keys and values so
/// generation can seed a [`KvCache`] from a full pass.
pub struct LayerForward {
    pub output: NodeId,
    pub k_rot: NodeId,
    pub v: NodeId,
}

/// One Pre-LN block: attention with rotary positions and causal masking,
/// then a SiLU-gated MLP, residual connections around both.
pub fn block_forward(
    tape: &mut Tape,
    x: NodeId,
    layer: &LayerNodes,
    cfg: &BackboneConfig,
    pos_start: usize,
) -> Result<LayerForward, BackboneError> {
    let hd = cfg.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();

    let h1 = tape.layer_norm(x, layer.ln1_gain, layer.ln1_bias, cfg.ln_eps)?;
    let q = tape.matmul(h1, layer.wq)?;
    let k = tape.matmul(h1, layer.wk)?;
    let v = tape.matmul(h1, layer.wv)?;
    let q = tape.rope(q, hd, pos_start, cfg.rope_theta)?;
    let k_rot = tape.rope(k, hd, pos_start, cfg.rope_theta)?;

    let mut head_outs = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let qh = tape.slice_cols(q, h * hd, hd)?;
        let kh = tape.slice_cols(k_rot, h * hd, hd)?;
        let vh = tape.slice_cols(v, h * hd, hd)?;
        let probs = tape.attn_probs(qh, kh, 0, scale)?;
        let oh = tape.causal_weighted_sum(probs, vh, 0)?;
        head_outs.push(oh);
    }
    let merged = tape.concat_cols(&head_outs)?;
    let attn = tape.matmul(merged, layer.wo)?;
    let x = tape.add(x, attn)?;

    let h2 = tape.layer_norm(x, layer.ln2_gain, layer.ln2_bias, cfg.ln_eps)?;
    let gate = tape.matmul(h2, layer.mlp_gate)?;
    let up = tape.matmul(h2, layer.mlp_up)?;
    let act = tape.silu(gate);
    let gated = tape.mul(act, up)?;
    let mlp = tape.matmul(gated, layer.mlp_down)?;
    let output = tape.add(x, mlp)?;

    Ok(LayerForward { output, k_rot, v })
}

/// Borrowed raw parameter slices of one layer, for the cached step path.
#[derive(Debug, Clone, Copy)]
pub struct LayerView<'a> {
    pub ln1_gain: &'a [f64],
    pub ln1_bias: &'a [f64],
    pub wq: &'a [f64],
    pub wk: &'a [f64],
    pub wv: &'a [f64],
    pub wo: &'a [f64],
    pub ln2_gain: &'a [f64],
    pub ln2_bias: &'a [f64],
    pub mlp_gate: &'a [f64],
    pub mlp_up: &'a [f64],
    pub mlp_down: &'a [f64],
}

/// Advance one layer for a single new position at global index `pos`,
/// reading history from (and appending to) the cache. Returns the layer
/// output row. Matches `block_forward` bit-for-bit up to summation order.
pub fn block_step(
    x_row: &[f64],
    layer: &LayerView<'_>,
    cache_k: &mut Vec<f64>,
    cache_v: &mut Vec<f64>,
    cfg: &BackboneConfig,
    pos: usize,
) -> Vec<f64> {
    let d = cfg.d_model;
    let hd = cfg.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();

    let mut h1 = vec![0.0; d];
    kernels::layer_norm_row(&mut h1, x_row, layer.ln1_gain, layer.ln1_bias, cfg.ln_eps);

    let mut q = vec![0.0; d];
    let mut k = vec![0.0; d];
    let mut v = vec![0.0; d];
    kernels::matmul_acc(&mut q, &h1, layer.wq, 1, d, d);
    kernels::matmul_acc(&mut k, &h1, layer.wk, 1, d, d);
    kernels::matmul_acc(&mut v, &h1, layer.wv, 1, d, d);
    kernels::rope_rotate_row(&mut q, hd, pos, cfg.rope_theta, false);
    kernels::rope_rotate_row(&mut k, hd, pos, cfg.rope_theta, false);

    cache_k.extend_from_slice(&k);
    cache_v.extend_from_slice(&v);
    let t_k = cache_k.len() / d;

    let mut merged = vec![0.0; d];
    let mut probs = vec![0.0; t_k];
    for h in 0..cfg.n_heads {
        let q_head = &q[h * hd..(h + 1) * hd];
        for (j, p) in probs.iter_mut().enumerate() {
            let k_head = &cache_k[j * d + h * hd..j * d + (h + 1) * hd];
            *p = scale * kernels::dot(q_head, k_head);
        }
        kernels::softmax_row(&mut probs);
        let out_head = &mut merged[h * hd..(h + 1) * hd];
        for (j, &w) in probs.iter().enumerate() {
            let v_head = &cache_v[j * d + h * hd..j * d + (h + 1) * hd];
            for (o, &vv) in out_head.iter_mut().zip(v_head) {
                *o += w * vv;
            }
        }
    }

    let mut attn = vec![0.0; d];
    kernels::matmul_acc(&mut attn, &merged, layer.wo, 1, d, d);
    let x1: Vec<f64> = x_row.iter().zip(&attn).map(|(a, b)| a + b).collect();

    let mut h2 = vec![0.0; d];
    kernels::layer_norm_row(&mut h2, &x1, layer.ln2_gain, layer.ln2_bias, cfg.ln_eps);
    let dff = cfg.d_intermediate;
    let mut gate = vec![0.0; dff];
    let mut up = vec![0.0; dff];
    kernels::matmul_acc(&mut gate, &h2, layer.mlp_gate, 1, d, dff);
    kernels::matmul_acc(&mut up, &h2, layer.mlp_up, 1, d, dff);
    let gated: Vec<f64> = gate
        .iter()
        .zip(&up)
        .map(|(g, u)| kernels::silu(*g) * u)
        .collect();
    let mut mlp = vec![0.0; d];
    kernels::matmul_acc(&mut mlp, &gated, layer.mlp_down, 1, dff, d);

    x1.iter().zip(&mlp).map(|(a, b)| a + b).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_match_scaling_table() {
        let small = BackboneConfig::preset("small").unwrap();
        assert_eq!(
            (small.n_layers, small.d_model, small.d_intermediate, small.n_heads),
            (6, 384, 1024, 12)
        );
        let base = BackboneConfig::preset("base").unwrap();
        assert_eq!(
            (base.n_layers, base.d_model, base.d_intermediate, base.n_heads),
            (12, 384, 1024, 12)
        );
        let large = BackboneConfig::preset("large").unwrap();
        assert_eq!(
            (large.n_layers, large.d_model, large.d_intermediate, large.n_heads),
            (12, 768, 2048, 12)
        );
        assert_eq!(small.rope_theta, 10_000.0);
        assert_eq!(small.ln_eps, 1e-6);
        assert!(BackboneConfig::preset("huge").is_none());
        small.validate().unwrap();
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = BackboneConfig::new(2, 65, 128, 4);
        assert!(c.validate().is_err());
        c.d_model = 64;
        c.n_heads = 32; // head_dim 2 is fine
        c.validate().unwrap();
        c.n_heads = 64; // head_dim 1 is odd
        assert!(c.validate().is_err());
    }

    #[test]
    fn cache_bookkeeping() {
        let mut cache = KvCache::new(2, 4);
        assert_eq!(cache.filled_len(), 0);
        cache.append_row(0, &[1.0; 4], &[2.0; 4]);
        cache.append_row(1, &[3.0; 4], &[4.0; 4]);
        cache.advance(1);
        assert_eq!(cache.filled_len(), 1);
        assert_eq!(cache.keys[0], vec![1.0; 4]);
    }
}
