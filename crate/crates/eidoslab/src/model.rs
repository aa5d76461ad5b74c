//! Model composition: tokenizer, decoder backbone, future aggregator and the
//! residual quantile head, with parameter initialization, tape binding for
//! training, and a cached raw path for autoregressive generation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbone::{self, BackboneConfig, BackboneError, KvCache, LayerNodes, LayerView};
use crate::params::ParamStore;
use crate::tensor::{kernels, NodeId, Tape, TensorError};
use crate::tokenizer::{self, TokenizerError, TokenizerNodes, TokenizerView};

pub const RNG_STREAM_INIT: u64 = 0x1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Backbone(#[from] BackboneError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub fn default_quantile_levels() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    /// Hidden width of the tokenizer's gated unit; defaults to the backbone
    /// intermediate size.
    pub tokenizer_width: usize,
    /// Training horizon l: aggregator window and quantile-head block length.
    pub horizon: usize,
    pub quantile_levels: Vec<f64>,
}

impl ModelConfig {
    pub fn new(backbone: BackboneConfig, horizon: usize) -> Self {
        let tokenizer_width = backbone.d_intermediate;
        Self {
            backbone,
            tokenizer_width,
            horizon,
            quantile_levels: default_quantile_levels(),
        }
    }

    pub fn n_quantiles(&self) -> usize {
        self.quantile_levels.len()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.backbone.validate()?;
        if self.horizon == 0 {
            return Err(ModelError::Config("horizon must be >= 1".into()));
        }
        if self.tokenizer_width == 0 {
            return Err(ModelError::Config("tokenizer_width must be >= 1".into()));
        }
        if self.quantile_levels.is_empty()
            || !self
                .quantile_levels
                .windows(2)
                .all(|w| w[0] < w[1])
            || self.quantile_levels.iter().any(|q| *q <= 0.0 || *q >= 1.0)
        {
            return Err(ModelError::Config(
                "quantile levels must be strictly increasing in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// All learnable weights plus the configuration they belong to.
#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamStore,
}

/// Node ids for the aggregator: depthwise kernel and the residual
/// channel-mixing MLP.
#[derive(Debug, Clone, Copy)]
pub struct AggregatorNodes {
    pub conv: NodeId,
    pub w1: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
}

/// Node ids for the residual quantile head.
#[derive(Debug, Clone, Copy)]
pub struct HeadNodes {
    pub w1: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
}

impl HeadNodes {
    /// A gradient-blocked view of the same weights: identical values, no
    /// gradient flow into the head.
    pub fn frozen(&self, tape: &mut Tape) -> HeadNodes {
        HeadNodes {
            w1: tape.stop_gradient(self.w1),
            b1: tape.stop_gradient(self.b1),
            w2: tape.stop_gradient(self.w2),
            b2: tape.stop_gradient(self.b2),
        }
    }
}

/// Every parameter of the model registered on a tape, in store order.
pub struct BoundModel {
    pub tok: TokenizerNodes,
    pub layers: Vec<LayerNodes>,
    pub final_gain: NodeId,
    pub final_bias: NodeId,
    pub agg: AggregatorNodes,
    pub head: HeadNodes,
    /// Leaf ids aligned with the parameter store entries.
    pub ids: Vec<NodeId>,
}

fn layer_param(i: usize, part: &str) -> String {
    format!("backbone.{i}.{part}")
}

impl Model {
    /// Initialize all weights from the given seed. The tokenizer's first
    /// projection spreads sine frequencies uniformly over (-pi, pi); other
    /// tokenizer projections use std 1/sqrt(fan_in); backbone weights use
    /// std 0.02 with output projections shrunk by 1/sqrt(2 n_layers); the
    /// aggregator starts as mean pooling with an identity mixing MLP.
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(RNG_STREAM_INIT);
        let d = cfg.backbone.d_model;
        let w = cfg.tokenizer_width;
        let dff = cfg.backbone.d_intermediate;
        let l = cfg.horizon;
        let out_w = l * cfg.n_quantiles();
        let n_layers = cfg.backbone.n_layers;

        let mut params = ParamStore::new();
        let uniform_pi = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * std::f64::consts::PI)
                .collect()
        };
        let normal = |rng: &mut ChaCha8Rng, n: usize, std: f64| -> Vec<f64> {
            let dist = Normal::new(0.0, std).expect("valid std");
            (0..n).map(|_| dist.sample(rng)).collect()
        };

        params.insert("tokenizer.w1", vec![1, w], uniform_pi(&mut rng, w));
        params.insert("tokenizer.b", vec![w], vec![0.0; w]);
        let tok_std = 1.0 / (w as f64).sqrt();
        params.insert("tokenizer.w2", vec![w, w], normal(&mut rng, w * w, tok_std));
        params.insert("tokenizer.w3", vec![w, w], normal(&mut rng, w * w, tok_std));
        params.insert("tokenizer.w4", vec![w, d], normal(&mut rng, w * d, tok_std));

        let std = 0.02;
        let out_std = std / (2.0 * n_layers as f64).sqrt();
        for i in 0..n_layers {
            params.insert(layer_param(i, "ln1.gain"), vec![d], vec![1.0; d]);
            params.insert(layer_param(i, "ln1.bias"), vec![d], vec![0.0; d]);
            params.insert(layer_param(i, "attn.wq"), vec![d, d], normal(&mut rng, d * d, std));
            params.insert(layer_param(i, "attn.wk"), vec![d, d], normal(&mut rng, d * d, std));
            params.insert(layer_param(i, "attn.wv"), vec![d, d], normal(&mut rng, d * d, std));
            params.insert(layer_param(i, "attn.wo"), vec![d, d], normal(&mut rng, d * d, out_std));
            params.insert(layer_param(i, "ln2.gain"), vec![d], vec![1.0; d]);
            params.insert(layer_param(i, "ln2.bias"), vec![d], vec![0.0; d]);
            params.insert(layer_param(i, "mlp.gate"), vec![d, dff], normal(&mut rng, d * dff, std));
            params.insert(layer_param(i, "mlp.up"), vec![d, dff], normal(&mut rng, d * dff, std));
            params.insert(
                layer_param(i, "mlp.down"),
                vec![dff, d],
                normal(&mut rng, dff * d, out_std),
            );
        }
        params.insert("backbone.final_ln.gain", vec![d], vec![1.0; d]);
        params.insert("backbone.final_ln.bias", vec![d], vec![0.0; d]);

        params.insert("aggregator.conv", vec![l, d], vec![1.0 / l as f64; l * d]);
        params.insert("aggregator.mlp.w1", vec![d, d], normal(&mut rng, d * d, std));
        params.insert("aggregator.mlp.b1", vec![d], vec![0.0; d]);
        params.insert("aggregator.mlp.w2", vec![d, d], vec![0.0; d * d]);
        params.insert("aggregator.mlp.b2", vec![d], vec![0.0; d]);

        params.insert("head.w1", vec![d, d], normal(&mut rng, d * d, std));
        params.insert("head.b1", vec![d], vec![0.0; d]);
        params.insert("head.w2", vec![d, out_w], normal(&mut rng, d * out_w, std));
        params.insert("head.b2", vec![out_w], vec![0.0; out_w]);

        Ok(Self { cfg, params })
    }

    /// Register every parameter as a tape leaf, in store order.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundModel {
        let ids: Vec<NodeId> = self
            .params
            .entries()
            .iter()
            .map(|e| tape.leaf(e.data.clone(), e.shape.clone(), trainable))
            .collect();
        let id = |name: &str| ids[self.params.index_of(name)];
        let layers = (0..self.cfg.backbone.n_layers)
            .map(|i| LayerNodes {
                ln1_gain: id(&layer_param(i, "ln1.gain")),
                ln1_bias: id(&layer_param(i, "ln1.bias")),
                wq: id(&layer_param(i, "attn.wq")),
                wk: id(&layer_param(i, "attn.wk")),
                wv: id(&layer_param(i, "attn.wv")),
                wo: id(&layer_param(i, "attn.wo")),
                ln2_gain: id(&layer_param(i, "ln2.gain")),
                ln2_bias: id(&layer_param(i, "ln2.bias")),
                mlp_gate: id(&layer_param(i, "mlp.gate")),
                mlp_up: id(&layer_param(i, "mlp.up")),
                mlp_down: id(&layer_param(i, "mlp.down")),
            })
            .collect();
        BoundModel {
            tok: TokenizerNodes {
                w1: id("tokenizer.w1"),
                b: id("tokenizer.b"),
                w2: id("tokenizer.w2"),
                w3: id("tokenizer.w3"),
                w4: id("tokenizer.w4"),
            },
            layers,
            final_gain: id("backbone.final_ln.gain"),
            final_bias: id("backbone.final_ln.bias"),
            agg: AggregatorNodes {
                conv: id("aggregator.conv"),
                w1: id("aggregator.mlp.w1"),
                b1: id("aggregator.mlp.b1"),
                w2: id("aggregator.mlp.w2"),
                b2: id("aggregator.mlp.b2"),
            },
            head: HeadNodes {
                w1: id("head.w1"),
                b1: id("head.b1"),
                w2: id("head.w2"),
                b2: id("head.b2"),
            },
            ids,
        }
    }

    fn layer_view(&self, i: usize) -> LayerView<'_> {
        LayerView {
            ln1_gain: self.params.data(&layer_param(i, "ln1.gain")),
            ln1_bias: self.params.data(&layer_param(i, "ln1.bias")),
            wq: self.params.data(&layer_param(i, "attn.wq")),
            wk: self.params.data(&layer_param(i, "attn.wk")),
            wv: self.params.data(&layer_param(i, "attn.wv")),
            wo: self.params.data(&layer_param(i, "attn.wo")),
            ln2_gain: self.params.data(&layer_param(i, "ln2.gain")),
            ln2_bias: self.params.data(&layer_param(i, "ln2.bias")),
            mlp_gate: self.params.data(&layer_param(i, "mlp.gate")),
            mlp_up: self.params.data(&layer_param(i, "mlp.up")),
            mlp_down: self.params.data(&layer_param(i, "mlp.down")),
        }
    }

    pub fn tokenizer_view(&self) -> TokenizerView<'_> {
        TokenizerView {
            w1: self.params.data("tokenizer.w1"),
            b: self.params.data("tokenizer.b"),
            w2: self.params.data("tokenizer.w2"),
            w3: self.params.data("tokenizer.w3"),
            w4: self.params.data("tokenizer.w4"),
            width: self.cfg.tokenizer_width,
            d_model: self.cfg.backbone.d_model,
        }
    }
}

/// Tape node ids produced by a full forward pass.
pub struct TapeForward {
    /// Tokenizer embeddings [T x d].
    pub z: NodeId,
    /// Post-residual output of each block, in order.
    pub block_outputs: Vec<NodeId>,
    /// Final-norm states [T x d]; row t is the prediction for position t+1
    /// and what the quantile head consumes.
    pub final_states: NodeId,
    /// Per layer (rotated keys, values), for seeding a generation cache.
    pub layer_kv: Vec<(NodeId, NodeId)>,
}

/// Hidden-state intervention applied during a full forward pass.
#[derive(Debug, Clone)]
pub struct Injection {
    /// 0 = tokenizer output, 1..n_layers-1 = block outputs, n_layers = the
    /// final-norm states the head consumes.
    pub layer: usize,
    /// Added to the hidden state(s); length d.
    pub delta: Vec<f64>,
    /// Apply to every position of the block, or only the last one.
    pub all_positions: bool,
}

fn apply_injection(
    tape: &mut Tape,
    states: NodeId,
    inj: &Injection,
) -> Result<NodeId, TensorError> {
    let t = tape.shape(states)[0];
    let d = tape.shape(states)[1];
    let mut delta = vec![0.0; t * d];
    if inj.all_positions {
        for row in delta.chunks_mut(d) {
            row.copy_from_slice(&inj.delta);
        }
    } else {
        delta[(t - 1) * d..].copy_from_slice(&inj.delta);
    }
    let delta = tape.constant(delta, vec![t, d]);
    tape.add(states, delta)
}

/// Full-sequence forward on the tape. Output row t depends only on input
/// rows <= t.
pub fn forward_tape(
    tape: &mut Tape,
    x: &[f64],
    bound: &BoundModel,
    cfg: &ModelConfig,
) -> Result<TapeForward, ModelError> {
    forward_tape_with_injection(tape, x, bound, cfg, None)
}

pub fn forward_tape_with_injection(
    tape: &mut Tape,
    x: &[f64],
    bound: &BoundModel,
    cfg: &ModelConfig,
    inject: Option<&Injection>,
) -> Result<TapeForward, ModelError> {
    let mut z = tokenizer::embed_series(tape, x, &bound.tok)?;
    if let Some(inj) = inject {
        if inj.layer == 0 {
            z = apply_injection(tape, z, inj)?;
        }
    }
    let mut cur = z;
    let mut block_outputs = Vec::with_capacity(cfg.backbone.n_layers);
    let mut layer_kv = Vec::with_capacity(cfg.backbone.n_layers);
    for (i, layer) in bound.layers.iter().enumerate() {
        let fwd = backbone::block_forward(tape, cur, layer, &cfg.backbone, 0)?;
        cur = fwd.output;
        if let Some(inj) = inject {
            if inj.layer == i + 1 && inj.layer < cfg.backbone.n_layers {
                cur = apply_injection(tape, cur, inj)?;
            }
        }
        block_outputs.push(cur);
        layer_kv.push((fwd.k_rot, fwd.v));
    }
    let mut final_states = tape.layer_norm(cur, bound.final_gain, bound.final_bias, cfg.backbone.ln_eps)?;
    if let Some(inj) = inject {
        if inj.layer == cfg.backbone.n_layers {
            final_states = apply_injection(tape, final_states, inj)?;
        }
    }
    Ok(TapeForward {
        z,
        block_outputs,
        final_states,
        layer_kv,
    })
}

/// Residual quantile head on the tape: out = (h + silu(h w1 + b1)) w2 + b2,
/// one row of horizon * |Q| step-major quantiles per input row.
pub fn head_forward(tape: &mut Tape, h: NodeId, head: &HeadNodes) -> Result<NodeId, TensorError> {
    let mid = tape.matmul(h, head.w1)?;
    let mid = tape.add_row(mid, head.b1)?;
    let mid = tape.silu(mid);
    let res = tape.add(h, mid)?;
    let out = tape.matmul(res, head.w2)?;
    tape.add_row(out, head.b2)
}

/// Owned results of encoding a (normalized) context outside training.
pub struct ContextEncoding {
    /// Last-position hidden state per probe layer: index 0 is the tokenizer
    /// output, n_layers is the final-norm state the head consumes.
    pub layer_last_rows: Vec<Vec<f64>>,
    /// Final-norm states, [t x d].
    pub final_states: Vec<f64>,
    /// Per layer (rotated keys, values) blocks, [t x d] each.
    pub kv: Vec<(Vec<f64>, Vec<f64>)>,
    pub t: usize,
}

impl Model {
    /// Encode a normalized context; optionally add an injection at one layer.
    pub fn encode_context(
        &self,
        ctx_norm: &[f64],
        inject: Option<&Injection>,
    ) -> Result<ContextEncoding, ModelError> {
        if let Some(inj) = inject {
            if inj.layer > self.cfg.backbone.n_layers {
                return Err(ModelError::Config(format!(
                    "injection layer {} out of range 0..={}",
                    inj.layer,
                    self.cfg.backbone.n_layers
                )));
            }
            if inj.delta.len() != self.cfg.backbone.d_model {
                return Err(ModelError::Config(format!(
                    "injection dimension {} != d_model {}",
                    inj.delta.len(),
                    self.cfg.backbone.d_model
                )));
            }
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let fwd = forward_tape_with_injection(&mut tape, ctx_norm, &bound, &self.cfg, inject)?;
        let t = ctx_norm.len();
        let d = self.cfg.backbone.d_model;
        let last_row = |id: NodeId| tape.data(id)[(t - 1) * d..t * d].to_vec();
        let mut layer_last_rows = Vec::with_capacity(self.cfg.backbone.n_layers + 1);
        layer_last_rows.push(last_row(fwd.z));
        for (i, &b) in fwd.block_outputs.iter().enumerate() {
            if i + 1 < self.cfg.backbone.n_layers {
                layer_last_rows.push(last_row(b));
            }
        }
        layer_last_rows.push(last_row(fwd.final_states));
        let kv = fwd
            .layer_kv
            .iter()
            .map(|&(k, v)| (tape.data(k).to_vec(), tape.data(v).to_vec()))
            .collect();
        Ok(ContextEncoding {
            layer_last_rows,
            final_states: tape.data(fwd.final_states).to_vec(),
            kv,
            t,
        })
    }

    /// Seed a generation cache from an encoded context.
    pub fn seed_cache(&self, enc: &ContextEncoding) -> KvCache {
        let mut cache = KvCache::new(self.cfg.backbone.n_layers, self.cfg.backbone.d_model);
        for (layer, (k, v)) in enc.kv.iter().enumerate() {
            cache.append_block(layer, k, v);
        }
        cache.advance(enc.t);
        cache
    }

    /// Advance one position given its embedding row; appends this position's
    /// keys/values and returns the final-norm hidden state. Equals the last
    /// row of a fresh full forward over the whole prefix.
    pub fn step_embedded(&self, cache: &mut KvCache, z_row: &[f64]) -> Result<Vec<f64>, ModelError> {
        if cache.n_layers() != self.cfg.backbone.n_layers {
            return Err(ModelError::Config(format!(
                "cache has {} layers, model has {}",
                cache.n_layers(),
                self.cfg.backbone.n_layers
            )));
        }
        if z_row.len() != self.cfg.backbone.d_model {
            return Err(ModelError::Config(format!(
                "token embedding width {} != d_model {}",
                z_row.len(),
                self.cfg.backbone.d_model
            )));
        }
        let pos = cache.filled_len();
        let mut cur = z_row.to_vec();
        for i in 0..self.cfg.backbone.n_layers {
            let view = self.layer_view(i);
            // Split borrows: keys and values are separate vectors per layer.
            let (keys, values) = (&mut cache.keys[i], &mut cache.values[i]);
            cur = backbone::block_step(&cur, &view, keys, values, &self.cfg.backbone, pos);
        }
        cache.advance(1);
        let mut out = vec![0.0; cur.len()];
        kernels::layer_norm_row(
            &mut out,
            &cur,
            self.params.data("backbone.final_ln.gain"),
            self.params.data("backbone.final_ln.bias"),
            self.cfg.backbone.ln_eps,
        );
        Ok(out)
    }

    /// Embed one scalar observation and advance the cache.
    pub fn step_scalar(&self, cache: &mut KvCache, x: f64) -> Result<Vec<f64>, ModelError> {
        let z = tokenizer::embed_scalar(&self.tokenizer_view(), x);
        self.step_embedded(cache, &z)
    }

    /// Apply the quantile head to one hidden row: horizon * |Q| step-major
    /// outputs.
    pub fn head_apply_row(&self, h_row: &[f64]) -> Vec<f64> {
        let d = self.cfg.backbone.d_model;
        let out_w = self.cfg.horizon * self.cfg.n_quantiles();
        let w1 = self.params.data("head.w1");
        let b1 = self.params.data("head.b1");
        let w2 = self.params.data("head.w2");
        let b2 = self.params.data("head.b2");
        let mut mid = b1.to_vec();
        kernels::matmul_acc(&mut mid, h_row, w1, 1, d, d);
        let res: Vec<f64> = h_row
            .iter()
            .zip(&mid)
            .map(|(h, m)| h + kernels::silu(*m))
            .collect();
        let mut out = b2.to_vec();
        kernels::matmul_acc(&mut out, &res, w2, 1, d, out_w);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub fn tiny_config() -> ModelConfig {
        let mut cfg = ModelConfig::new(BackboneConfig::new(2, 8, 16, 2), 4);
        cfg.tokenizer_width = 8;
        cfg
    }

    #[test]
    fn init_is_deterministic_and_finite() {
        let m1 = Model::init(tiny_config(), 7).unwrap();
        let m2 = Model::init(tiny_config(), 7).unwrap();
        for (a, b) in m1.params.entries().iter().zip(m2.params.entries()) {
            assert_eq!(a.data, b.data, "param {} differs", a.name);
        }
        assert!(m1.params.all_finite());
        let m3 = Model::init(tiny_config(), 8).unwrap();
        assert_ne!(m1.params.data("head.w2"), m3.params.data("head.w2"));
    }

    #[test]
    fn forward_is_causal_bitwise() {
        let model = Model::init(tiny_config(), 3).unwrap();
        let t = 12;
        let x: Vec<f64> = (0..t).map(|i| (i as f64 * 0.4).sin()).collect();
        let mut perturbed = x.clone();
        let t0 = 6;
        for v in perturbed[t0 + 1..].iter_mut() {
            *v += 3.5;
        }
        let enc_a = model.encode_context(&x, None).unwrap();
        let enc_b = model.encode_context(&perturbed, None).unwrap();
        let d = model.cfg.backbone.d_model;
        for row in 0..=t0 {
            let a = &enc_a.final_states[row * d..(row + 1) * d];
            let b = &enc_b.final_states[row * d..(row + 1) * d];
            assert_eq!(a, b, "row {row} changed despite causal mask");
        }
    }

    #[test]
    fn single_token_forward_equals_first_step() {
        let model = Model::init(tiny_config(), 11).unwrap();
        let enc = model.encode_context(&[0.37], None).unwrap();
        let d = model.cfg.backbone.d_model;
        let mut cache = KvCache::new(model.cfg.backbone.n_layers, d);
        let step = model.step_scalar(&mut cache, 0.37).unwrap();
        assert_eq!(cache.filled_len(), 1);
        for (a, b) in enc.final_states.iter().zip(&step) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cached_generation_matches_full_recompute() {
        let model = Model::init(tiny_config(), 5).unwrap();
        let steps = 32;
        let xs: Vec<f64> = (0..steps).map(|i| (i as f64 * 0.21).cos() * 0.8).collect();
        let d = model.cfg.backbone.d_model;

        // Cached: feed one value at a time.
        let mut cache = KvCache::new(model.cfg.backbone.n_layers, d);
        let mut cached_rows = Vec::new();
        for &x in &xs {
            cached_rows.push(model.step_scalar(&mut cache, x).unwrap());
        }
        assert_eq!(cache.filled_len(), steps);

        // Oracle: a fresh full forward per prefix.
        for n in 1..=steps {
            let enc = model.encode_context(&xs[..n], None).unwrap();
            let full_last = &enc.final_states[(n - 1) * d..n * d];
            for (a, b) in full_last.iter().zip(&cached_rows[n - 1]) {
                assert!(
                    (a - b).abs() <= 1e-9,
                    "prefix {n}: cached {b} vs full {a}"
                );
            }
        }
    }

    #[test]
    fn cache_layer_mismatch_is_config_error() {
        let model = Model::init(tiny_config(), 5).unwrap();
        let mut cache = KvCache::new(1, model.cfg.backbone.d_model);
        assert!(model.step_scalar(&mut cache, 0.0).is_err());
    }

    #[test]
    fn probe_rows_cover_all_layers() {
        let model = Model::init(tiny_config(), 5).unwrap();
        let enc = model.encode_context(&[0.1, 0.2, 0.3], None).unwrap();
        assert_eq!(enc.layer_last_rows.len(), model.cfg.backbone.n_layers + 1);
    }
}
