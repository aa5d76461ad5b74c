//! Optimization loop: per-window tapes fan out across workers, gradients
//! reduce in fixed batch order, AdamW updates with warmup-plus-cosine
//! learning rate, NaN guards, CSV metric logging and checkpointing.

pub mod checkpoint;
pub mod optimizer;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{config_hash, Checkpoint};
pub use optimizer::{adamw_step, clip_global_norm, lr_at, OptimHyper, OptimState};

use crate::datagen::{znorm, Corpus, DatagenError, NORM_EPS};
use crate::model::{HeadNodes, Model, ModelConfig, ModelError};
use crate::objectives::{
    window_joint_loss, ComponentValues, GroundingMode, LossWeights, ObjectiveError,
};
use crate::params::ParamStore;
use crate::tensor::Tape;
use crate::threads;

const RNG_STREAM_TRAIN: u64 = 0x2;
const RNG_STREAM_SAMPLER: u64 = 0x3;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config error: {0}")]
    Config(String),
    #[error("non-finite loss component '{component}' at step {step}")]
    NonFinite { component: String, step: u64 },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DatagenError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default)]
    pub grounding: GroundingMode,
    /// Training window length L.
    pub context_len: usize,
    pub batch_size: usize,
    pub total_steps: usize,
    /// None resolves to 10% of total_steps.
    #[serde(default)]
    pub warmup_steps: Option<usize>,
    #[serde(default = "default_lr_peak")]
    pub lr_peak: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_eps_opt")]
    pub eps_opt: f64,
    /// Global-norm gradient cap; None disables clipping.
    #[serde(default = "default_clip_norm")]
    pub clip_norm: Option<f64>,
    pub seed: u64,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
}

fn default_lr_peak() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.95
}
fn default_weight_decay() -> f64 {
    0.01
}
fn default_eps_opt() -> f64 {
    1e-8
}
fn default_clip_norm() -> Option<f64> {
    Some(1.0)
}
fn default_log_every() -> usize {
    10
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.model
            .validate()
            .map_err(|e| TrainError::Config(e.to_string()))?;
        self.weights
            .validate()
            .map_err(|e| TrainError::Config(e.to_string()))?;
        if self.context_len <= self.model.horizon {
            return Err(TrainError::Config(format!(
                "context_len {} must exceed the horizon {}",
                self.context_len, self.model.horizon
            )));
        }
        if self.batch_size == 0 || self.total_steps == 0 {
            return Err(TrainError::Config(
                "batch_size and total_steps must be positive".into(),
            ));
        }
        if self.log_every == 0 {
            return Err(TrainError::Config("log_every must be positive".into()));
        }
        Ok(())
    }

    pub fn resolved_warmup(&self) -> usize {
        self.warmup_steps.unwrap_or(self.total_steps / 10)
    }

    pub fn optim_hyper(&self) -> OptimHyper {
        OptimHyper {
            lr_peak: self.lr_peak,
            beta1: self.beta1,
            beta2: self.beta2,
            weight_decay: self.weight_decay,
            eps: self.eps_opt,
            warmup_steps: self.resolved_warmup(),
            total_steps: self.total_steps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub lr: f64,
    pub total: f64,
    pub pred: f64,
    pub latent: f64,
    pub gnd: f64,
}

#[derive(Debug)]
pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub log: Vec<StepLog>,
}

fn shuffle_rng(seed: u64, source: usize, epoch: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(
        RNG_STREAM_SAMPLER
            .wrapping_add((source as u64 + 1) << 40)
            .wrapping_add(epoch << 8),
    );
    rng
}

struct SourceQueue {
    /// Record indices (within the source) long enough for a training window.
    eligible: Vec<u32>,
    perm: Vec<u32>,
    cursor: usize,
    epoch: u64,
}

/// Without-replacement series sampler per source; on exhaustion it cycles
/// with a fresh epoch-keyed reshuffle. State is (epoch, cursor) per source,
/// so a resumed run rebuilds the exact permutation.
struct WindowSampler {
    seed: u64,
    queues: Vec<SourceQueue>,
    weights: Vec<f64>,
    total_weight: f64,
}

impl WindowSampler {
    fn new(corpus: &Corpus, context_len: usize, seed: u64) -> Result<Self, TrainError> {
        let mut queues = Vec::with_capacity(corpus.sources.len());
        let mut weights = Vec::with_capacity(corpus.sources.len());
        for (s, src) in corpus.sources.iter().enumerate() {
            let eligible: Vec<u32> = src
                .records
                .iter()
                .enumerate()
                .filter(|(_, r)| r.target.len() >= context_len)
                .map(|(i, _)| i as u32)
                .collect();
            if eligible.is_empty() {
                return Err(TrainError::Config(format!(
                    "source {s} has no series of length >= {context_len}"
                )));
            }
            queues.push(SourceQueue {
                eligible,
                perm: Vec::new(),
                cursor: 0,
                epoch: 0,
            });
            weights.push(src.weight);
        }
        let total_weight = weights.iter().sum();
        let mut sampler = Self {
            seed,
            queues,
            weights,
            total_weight,
        };
        for s in 0..sampler.queues.len() {
            sampler.reshuffle(s);
        }
        Ok(sampler)
    }

    fn reshuffle(&mut self, source: usize) {
        let q = &mut self.queues[source];
        let mut perm = q.eligible.clone();
        let mut rng = shuffle_rng(self.seed, source, q.epoch);
        // Fisher-Yates, fixed order.
        for i in (1..perm.len()).rev() {
            let j = rng.random_range(0..=i);
            perm.swap(i, j);
        }
        q.perm = perm;
    }

    fn state(&self) -> Vec<(u64, u64)> {
        self.queues.iter().map(|q| (q.epoch, q.cursor as u64)).collect()
    }

    fn restore(&mut self, state: &[(u64, u64)]) -> Result<(), TrainError> {
        if state.len() != self.queues.len() {
            return Err(TrainError::Checkpoint(
                "sampler state does not match the configured sources".into(),
            ));
        }
        for (s, &(epoch, cursor)) in state.iter().enumerate() {
            self.queues[s].epoch = epoch;
            self.queues[s].cursor = cursor as usize;
            self.reshuffle(s);
        }
        Ok(())
    }

    fn pick_source(&self, u: f64) -> usize {
        let mut acc = 0.0;
        let target = u * self.total_weight;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if target < acc {
                return i;
            }
        }
        self.weights.len() - 1
    }

    /// Next (source, record) pair; cycles with reshuffle on exhaustion.
    fn next_series(&mut self, rng: &mut ChaCha8Rng) -> (usize, usize) {
        let source = self.pick_source(rng.random::<f64>());
        let q = &mut self.queues[source];
        if q.cursor >= q.perm.len() {
            q.epoch += 1;
            q.cursor = 0;
            self.reshuffle(source);
        }
        let q = &mut self.queues[source];
        let record = q.perm[q.cursor] as usize;
        q.cursor += 1;
        (source, record)
    }
}

/// Bind a head parameter snapshot as tape constants.
fn bind_frozen_snapshot(tape: &mut Tape, snap: &ParamStore) -> HeadNodes {
    let mut get = |name: &str| {
        let e = snap.get(name);
        tape.leaf(e.data.clone(), e.shape.clone(), false)
    };
    HeadNodes {
        w1: get("head.w1"),
        b1: get("head.b1"),
        w2: get("head.w2"),
        b2: get("head.b2"),
    }
}

fn window_pass(
    model: &Model,
    weights: &LossWeights,
    x_norm: &[f64],
    frozen_snapshot: Option<&ParamStore>,
) -> Result<(ComponentValues, Vec<Vec<f64>>), ObjectiveError> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, true);
    let frozen = match frozen_snapshot {
        Some(snap) => bind_frozen_snapshot(&mut tape, snap),
        None => bound.head.frozen(&mut tape),
    };
    let wl = window_joint_loss(&mut tape, x_norm, &bound, &model.cfg, weights, &frozen)?;
    tape.backward(wl.comps.total)?;
    let values = wl.comps.values(&tape);
    let grads: Vec<Vec<f64>> = bound
        .ids
        .iter()
        .enumerate()
        .map(|(i, &id)| {
            tape.grad(id)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; model.params.entry(i).data.len()])
        })
        .collect();
    Ok((values, grads))
}

/// Run (or resume) training over the corpus. `limit` caps how many steps
/// this invocation performs; the schedule always spans `total_steps`.
pub fn train(
    cfg: &TrainConfig,
    corpus: &Corpus,
    resume: Option<Checkpoint>,
    limit: Option<usize>,
    metrics_path: Option<&Path>,
) -> Result<TrainOutput, TrainError> {
    cfg.validate()?;
    threads::init_thread_pool();

    let mut sampler = WindowSampler::new(corpus, cfg.context_len, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(RNG_STREAM_TRAIN);

    let (mut model, mut opt, start_step, frozen_snapshot) = match resume {
        Some(ckpt) => {
            if config_hash(&ckpt.config) != config_hash(cfg) {
                return Err(TrainError::Checkpoint(format!(
                    "checkpoint config hash {} does not match requested config hash {}",
                    config_hash(&ckpt.config),
                    config_hash(cfg)
                )));
            }
            rng.set_word_pos(ckpt.rng_word_pos);
            sampler.restore(&ckpt.sampler_state)?;
            if ckpt.config.grounding == GroundingMode::FrozenAtInit && ckpt.frozen_head.is_none() {
                return Err(TrainError::Checkpoint(
                    "frozen-at-init checkpoint is missing its head snapshot".into(),
                ));
            }
            let model = Model {
                cfg: cfg.model.clone(),
                params: ckpt.params,
            };
            (model, ckpt.opt, ckpt.step, ckpt.frozen_head)
        }
        None => {
            let model = Model::init(cfg.model.clone(), cfg.seed)?;
            let opt = OptimState::new(&model.params, cfg.optim_hyper());
            let frozen = match cfg.grounding {
                GroundingMode::PerStepSynced => None,
                GroundingMode::FrozenAtInit => {
                    let mut snap = ParamStore::new();
                    for name in ["head.w1", "head.b1", "head.w2", "head.b2"] {
                        let e = model.params.get(name);
                        snap.insert(name, e.shape.clone(), e.data.clone());
                    }
                    Some(snap)
                }
            };
            (model, opt, 0, frozen)
        }
    };

    let end_step = match limit {
        Some(n) => (start_step + n as u64).min(cfg.total_steps as u64),
        None => cfg.total_steps as u64,
    };
    let hyper = cfg.optim_hyper();
    let mut log = Vec::new();
    let mut metrics_file = match metrics_path {
        Some(p) => {
            let mut f = BufWriter::new(File::create(p)?);
            writeln!(f, "step,lr,loss_total,loss_pred,loss_latent,loss_gnd")?;
            Some(f)
        }
        None => None,
    };

    let mut step = start_step;
    while step < end_step {
        // Draw the whole batch on the control thread, in order.
        let mut windows: Vec<Vec<f64>> = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let (source, record) = sampler.next_series(&mut rng);
            let series = &corpus.sources[source].records[record];
            let max_start = series.target.len() - cfg.context_len;
            let start = if max_start == 0 {
                0
            } else {
                rng.random_range(0..=max_start)
            };
            let raw = &series.target[start..start + cfg.context_len];
            let (norm, _) = znorm(raw, NORM_EPS);
            windows.push(norm);
        }

        let lr = lr_at(step as usize + 1, &hyper);
        let results: Vec<Result<(ComponentValues, Vec<Vec<f64>>), ObjectiveError>> = windows
            .par_iter()
            .map(|w| window_pass(&model, &cfg.weights, w, frozen_snapshot.as_ref()))
            .collect();

        // Fixed-order reduction keeps results independent of worker count.
        let mut batch_grads = model.params.zeros_like();
        let mut sums = (0.0, 0.0, 0.0, 0.0);
        for res in results {
            let (vals, grads) = res.map_err(|e| match e {
                ObjectiveError::NonFinite { component } => TrainError::NonFinite {
                    component: component.to_string(),
                    step: step + 1,
                },
                other => TrainError::Objective(other),
            })?;
            sums.0 += vals.total;
            sums.1 += vals.pred;
            sums.2 += vals.latent;
            sums.3 += vals.gnd;
            for (acc, g) in batch_grads.iter_mut().zip(&grads) {
                for (a, v) in acc.iter_mut().zip(g) {
                    *a += v;
                }
            }
        }
        let b = cfg.batch_size as f64;
        let means = (sums.0 / b, sums.1 / b, sums.2 / b, sums.3 / b);
        for (value, component) in [
            (means.0, "total"),
            (means.1, "pred"),
            (means.2, "latent"),
            (means.3, "gnd"),
        ] {
            if !value.is_finite() {
                return Err(TrainError::NonFinite {
                    component: component.to_string(),
                    step: step + 1,
                });
            }
        }
        for g in batch_grads.iter_mut() {
            for v in g.iter_mut() {
                *v /= b;
            }
        }
        if let Some(cap) = cfg.clip_norm {
            clip_global_norm(&mut batch_grads, cap);
        }
        adamw_step(&mut model.params, &batch_grads, &mut opt, lr);
        step += 1;

        if step % cfg.log_every as u64 == 0 || step == end_step || step == 1 {
            let entry = StepLog {
                step,
                lr,
                total: means.0,
                pred: means.1,
                latent: means.2,
                gnd: means.3,
            };
            if let Some(f) = metrics_file.as_mut() {
                writeln!(
                    f,
                    "{},{},{},{},{},{}",
                    entry.step, entry.lr, entry.total, entry.pred, entry.latent, entry.gnd
                )?;
            }
            log.push(entry);
        }
    }
    if let Some(f) = metrics_file.as_mut() {
        f.flush()?;
    }

    let checkpoint = Checkpoint {
        config: cfg.clone(),
        step,
        params: model.params,
        opt,
        rng_seed: cfg.seed,
        rng_word_pos: rng.get_word_pos(),
        sampler_state: sampler.state(),
        frozen_head: frozen_snapshot,
    };
    Ok(TrainOutput { checkpoint, log })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::backbone::BackboneConfig;
    use crate::datagen::{build_corpus, GeneratorSpec, SourceSpec};

    pub fn toy_train_config() -> TrainConfig {
        let mut model = ModelConfig::new(BackboneConfig::new(1, 16, 32, 2), 6);
        model.tokenizer_width = 16;
        TrainConfig {
            model,
            weights: LossWeights::default(),
            grounding: GroundingMode::PerStepSynced,
            context_len: 24,
            batch_size: 2,
            total_steps: 40,
            warmup_steps: None,
            lr_peak: 1e-3,
            beta1: 0.9,
            beta2: 0.95,
            weight_decay: 0.01,
            eps_opt: 1e-8,
            clip_norm: Some(1.0),
            seed: 42,
            log_every: 5,
        }
    }

    fn toy_corpus(length: usize) -> Corpus {
        build_corpus(
            &[SourceSpec {
                weight: 1.0,
                generator: GeneratorSpec::SineTrend {
                    count: 6,
                    length,
                    freq_min: 1.0,
                    freq_max: 3.0,
                    amp: 1.0,
                    slope_min: -1.0,
                    slope_max: 1.0,
                    noise_sigma: 0.05,
                },
            }],
            7,
        )
        .unwrap()
    }

    #[test]
    fn same_seed_gives_identical_loss_curves() {
        let cfg = toy_train_config();
        let corpus = toy_corpus(48);
        let a = train(&cfg, &corpus, None, Some(10), None).unwrap();
        let b = train(&cfg, &corpus, None, Some(10), None).unwrap();
        assert_eq!(a.log, b.log);
        for (x, y) in a
            .checkpoint
            .params
            .entries()
            .iter()
            .zip(b.checkpoint.params.entries())
        {
            assert_eq!(x.data, y.data, "param {} drifted", x.name);
        }
    }

    #[test]
    fn checkpoint_resume_is_bitwise_identical() {
        let cfg = toy_train_config();
        let corpus = toy_corpus(48);
        let full = train(&cfg, &corpus, None, None, None).unwrap();

        let half = train(&cfg, &corpus, None, Some(20), None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("half.ckpt");
        half.checkpoint.save(&path).unwrap();
        let reloaded = Checkpoint::load(&path).unwrap();
        let resumed = train(&cfg, &corpus, Some(reloaded), None, None).unwrap();

        assert_eq!(full.checkpoint.step, resumed.checkpoint.step);
        for (a, b) in full
            .checkpoint
            .params
            .entries()
            .iter()
            .zip(resumed.checkpoint.params.entries())
        {
            let bits_a: Vec<u64> = a.data.iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b, "param {} not bitwise equal", a.name);
        }
        assert_eq!(
            full.checkpoint.rng_word_pos,
            resumed.checkpoint.rng_word_pos
        );
    }

    #[test]
    fn overfitting_one_fixed_batch_collapses_pred_loss() {
        // A single window (series length == context length) makes every
        // batch identical.
        let mut cfg = toy_train_config();
        cfg.total_steps = 600;
        cfg.warmup_steps = Some(30);
        cfg.log_every = 20;
        let corpus = build_corpus(
            &[SourceSpec {
                weight: 1.0,
                generator: GeneratorSpec::SineTrend {
                    count: 1,
                    length: cfg.context_len,
                    freq_min: 2.0,
                    freq_max: 2.0,
                    amp: 1.0,
                    slope_min: 0.5,
                    slope_max: 0.5,
                    noise_sigma: 0.0,
                },
            }],
            3,
        )
        .unwrap();
        let out = train(&cfg, &corpus, None, None, None).unwrap();
        let first = out.log.first().unwrap().pred;
        let best = out.log.iter().map(|l| l.pred).fold(f64::INFINITY, f64::min);
        assert!(
            best < 0.1 * first,
            "pred loss {best} did not drop below 10% of {first}"
        );
    }

    #[test]
    fn mismatched_resume_config_is_refused() {
        let cfg = toy_train_config();
        let corpus = toy_corpus(48);
        let half = train(&cfg, &corpus, None, Some(5), None).unwrap();
        let mut other = cfg.clone();
        other.lr_peak = 5e-4;
        let err = train(&other, &corpus, Some(half.checkpoint), None, None).unwrap_err();
        assert!(matches!(err, TrainError::Checkpoint(_)));
    }

    #[test]
    fn frozen_at_init_grounding_trains_and_checkpoints() {
        let mut cfg = toy_train_config();
        cfg.grounding = GroundingMode::FrozenAtInit;
        let corpus = toy_corpus(48);
        let out = train(&cfg, &corpus, None, Some(5), None).unwrap();
        assert!(out.checkpoint.frozen_head.is_some());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fi.ckpt");
        out.checkpoint.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        let snap = back.frozen_head.as_ref().unwrap();
        assert_eq!(
            snap.data("head.w1"),
            out.checkpoint.frozen_head.as_ref().unwrap().data("head.w1")
        );
        let resumed = train(&cfg, &corpus, Some(back), Some(5), None).unwrap();
        assert_eq!(resumed.checkpoint.step, 10);
    }

    #[test]
    fn metrics_csv_has_the_contracted_columns() {
        let cfg = toy_train_config();
        let corpus = toy_corpus(48);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        train(&cfg, &corpus, None, Some(5), Some(&path)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "step,lr,loss_total,loss_pred,loss_latent,loss_gnd"
        );
        assert!(lines.next().is_some());
    }
}
