//! Run configuration: JSON file with documented defaults, flag overrides
//! win, unknown keys are rejected. The resolved form is persisted alongside
//! every artifact it produces.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::BackboneConfig;
use crate::datagen::{GeneratorSpec, SourceSpec};
use crate::model::ModelConfig;
use crate::objectives::{GroundingMode, LossWeights};
use crate::trainer::TrainConfig;

use super::CliError;

fn default_horizon() -> usize {
    64
}
fn default_context_len() -> usize {
    512
}
fn default_batch_size() -> usize {
    16
}
fn default_total_steps() -> usize {
    5000
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
fn default_preset() -> Option<String> {
    Some("small".to_string())
}
fn default_seed() -> u64 {
    42
}
fn default_lambda_latent() -> f64 {
    0.1
}
fn default_lambda_gnd() -> f64 {
    0.1
}
fn default_lambda_pred() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Named scaling variant: "small", "base" or "large".
    #[serde(default = "default_preset")]
    pub preset: Option<String>,
    /// Explicit backbone; overrides the preset when set.
    #[serde(default)]
    pub backbone: Option<BackboneConfig>,
    /// Gated-unit width of the tokenizer; defaults to the backbone
    /// intermediate size.
    #[serde(default)]
    pub tokenizer_width: Option<usize>,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            preset: default_preset(),
            backbone: None,
            tokenizer_width: None,
            horizon: default_horizon(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    #[serde(default = "default_lambda_latent")]
    pub lambda_latent: f64,
    #[serde(default = "default_lambda_gnd")]
    pub lambda_gnd: f64,
    #[serde(default = "default_lambda_pred")]
    pub lambda_pred: f64,
    #[serde(default)]
    pub grounding: GroundingMode,
}

impl Default for LossSection {
    fn default() -> Self {
        Self {
            lambda_latent: default_lambda_latent(),
            lambda_gnd: default_lambda_gnd(),
            lambda_pred: default_lambda_pred(),
            grounding: GroundingMode::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerSection {
    #[serde(default = "default_context_len")]
    pub context_len: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_total_steps")]
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
    /// Global-norm gradient cap, null disables.
    #[serde(default = "default_clip_norm")]
    pub clip_norm: Option<f64>,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
}

impl Default for TrainerSection {
    fn default() -> Self {
        Self {
            context_len: default_context_len(),
            batch_size: default_batch_size(),
            total_steps: default_total_steps(),
            warmup_steps: None,
            lr_peak: default_lr_peak(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            weight_decay: default_weight_decay(),
            eps_opt: default_eps_opt(),
            clip_norm: default_clip_norm(),
            log_every: default_log_every(),
        }
    }
}

fn default_sources() -> Vec<SourceSpec> {
    vec![SourceSpec {
        weight: 1.0,
        generator: GeneratorSpec::SineTrend {
            count: 256,
            length: 1024,
            freq_min: 1.0,
            freq_max: 5.0,
            amp: 1.0,
            slope_min: -2.0,
            slope_max: 2.0,
            noise_sigma: 0.1,
        },
    }]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Sources with mixing weights; generators or JSONL files.
    #[serde(default = "default_sources")]
    pub sources: Vec<SourceSpec>,
    /// Seed for corpus generation; defaults to the run seed.
    #[serde(default)]
    pub data_seed: Option<u64>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            sources: default_sources(),
            data_seed: None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Held-out horizon; defaults to the model horizon.
    #[serde(default)]
    pub horizon: Option<usize>,
    /// Quantile block length per forward pass; defaults to the model
    /// horizon.
    #[serde(default)]
    pub block: Option<usize>,
    /// Post-hoc non-decreasing sort of emitted quantiles.
    #[serde(default)]
    pub sort_quantiles: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub loss: LossSection,
    #[serde(default)]
    pub trainer: TrainerSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))
    }

    pub fn model_config(&self) -> Result<ModelConfig, CliError> {
        let backbone = match (&self.model.backbone, &self.model.preset) {
            (Some(b), _) => b.clone(),
            (None, Some(name)) => BackboneConfig::preset(name)
                .ok_or_else(|| CliError::Config(format!("unknown model preset '{name}'")))?,
            (None, None) => {
                return Err(CliError::Config(
                    "config needs either model.preset or model.backbone".into(),
                ))
            }
        };
        let mut cfg = ModelConfig::new(backbone, self.model.horizon);
        if let Some(w) = self.model.tokenizer_width {
            cfg.tokenizer_width = w;
        }
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        Ok(TrainConfig {
            model: self.model_config()?,
            weights: LossWeights {
                lambda_latent: self.loss.lambda_latent,
                lambda_gnd: self.loss.lambda_gnd,
                lambda_pred: self.loss.lambda_pred,
            },
            grounding: self.loss.grounding,
            context_len: self.trainer.context_len,
            batch_size: self.trainer.batch_size,
            total_steps: self.trainer.total_steps,
            warmup_steps: self.trainer.warmup_steps,
            lr_peak: self.trainer.lr_peak,
            beta1: self.trainer.beta1,
            beta2: self.trainer.beta2,
            weight_decay: self.trainer.weight_decay,
            eps_opt: self.trainer.eps_opt,
            clip_norm: self.trainer.clip_norm,
            seed: self.seed,
            log_every: self.trainer.log_every,
        })
    }

    pub fn data_seed(&self) -> u64 {
        self.data.data_seed.unwrap_or(self.seed)
    }

    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve_to_the_small_preset() {
        let cfg = RunConfig::default();
        let model = cfg.model_config().unwrap();
        assert_eq!(model.backbone.n_layers, 6);
        assert_eq!(model.backbone.d_model, 384);
        assert_eq!(model.horizon, 64);
        assert_eq!(model.tokenizer_width, 1024);
        let tc = cfg.train_config().unwrap();
        assert_eq!(tc.context_len, 512);
        assert_eq!(tc.batch_size, 16);
        assert_eq!(tc.total_steps, 5000);
        assert_eq!(tc.resolved_warmup(), 500);
        tc.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let raw = r#"{"seed": 1, "bogus_knob": true}"#;
        assert!(serde_json::from_str::<RunConfig>(raw).is_err());
        let nested = r#"{"trainer": {"learning_rate": 0.1}}"#;
        assert!(serde_json::from_str::<RunConfig>(nested).is_err());
    }

    #[test]
    fn explicit_backbone_overrides_preset() {
        let raw = r#"{
            "model": {
                "preset": "small",
                "backbone": {"n_layers": 2, "d_model": 64, "d_intermediate": 128,
                             "n_heads": 4, "rope_theta": 10000.0, "ln_eps": 1e-6},
                "tokenizer_width": 64,
                "horizon": 8
            }
        }"#;
        let cfg: RunConfig = serde_json::from_str(raw).unwrap();
        let model = cfg.model_config().unwrap();
        assert_eq!(model.backbone.n_layers, 2);
        assert_eq!(model.tokenizer_width, 64);
        assert_eq!(model.horizon, 8);
    }

    #[test]
    fn resolved_json_roundtrips() {
        let cfg = RunConfig::default();
        let json = cfg.to_pretty_json();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back.seed, cfg.seed);
        assert_eq!(back.trainer.total_steps, cfg.trainer.total_steps);
    }
}
