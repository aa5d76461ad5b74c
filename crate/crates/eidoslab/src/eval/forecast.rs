//! Autoregressive probabilistic inference: z-score the context, emit
//! quantile blocks from the last position's head output, feed the median
//! back (normalized scale) through the KV cache for longer horizons, then
//! denormalize.

use crate::datagen::{znorm, NormStats, NORM_EPS};
use crate::model::{Injection, Model};

use super::EvalError;

/// Per-step quantile matrix over a horizon, plus denormalization metadata.
#[derive(Debug, Clone)]
pub struct ForecastResult {
    /// [horizon x |Q|] row-major, original scale.
    pub quantiles: Vec<f64>,
    pub levels: Vec<f64>,
    pub norm_stats: NormStats,
    pub horizon: usize,
}

impl ForecastResult {
    pub fn row(&self, t: usize) -> &[f64] {
        let q = self.levels.len();
        &self.quantiles[t * q..(t + 1) * q]
    }

    /// Index of the 0.5 level (the point forecast).
    pub fn median_index(levels: &[f64]) -> usize {
        levels
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                (*a - 0.5).abs().partial_cmp(&(*b - 0.5).abs()).expect("finite levels")
            })
            .map(|(i, _)| i)
            .expect("non-empty levels")
    }

    pub fn median(&self) -> Vec<f64> {
        let idx = Self::median_index(&self.levels);
        (0..self.horizon).map(|t| self.row(t)[idx]).collect()
    }

    /// Fraction of adjacent level pairs that invert (cross) across all steps.
    pub fn crossing_rate(&self) -> f64 {
        let q = self.levels.len();
        if q < 2 || self.horizon == 0 {
            return 0.0;
        }
        let mut crossings = 0usize;
        for t in 0..self.horizon {
            let row = self.row(t);
            crossings += row.windows(2).filter(|w| w[0] > w[1]).count();
        }
        crossings as f64 / (self.horizon * (q - 1)) as f64
    }

    /// Optional post-hoc repair: sort each step's quantiles non-decreasing.
    pub fn sort_rows(&mut self) {
        let q = self.levels.len();
        for t in 0..self.horizon {
            self.quantiles[t * q..(t + 1) * q]
                .sort_by(|a, b| a.partial_cmp(b).expect("finite quantiles"));
        }
    }
}

pub fn forecast(
    model: &Model,
    context: &[f64],
    horizon: usize,
    block_l: usize,
) -> Result<ForecastResult, EvalError> {
    forecast_with_hook(model, context, horizon, block_l, None)
}

/// Forecast with an optional hidden-state injection applied during the
/// first generation block only; subsequent autoregressive blocks run
/// unmodified.
pub fn forecast_with_hook(
    model: &Model,
    context: &[f64],
    horizon: usize,
    block_l: usize,
    hook: Option<&Injection>,
) -> Result<ForecastResult, EvalError> {
    if context.is_empty() {
        return Err(EvalError::Input("context is empty".into()));
    }
    if context.iter().any(|v| !v.is_finite()) {
        return Err(EvalError::Input("context contains non-finite values".into()));
    }
    if horizon == 0 {
        return Err(EvalError::Input("horizon must be >= 1".into()));
    }
    let l = model.cfg.horizon;
    if block_l == 0 || block_l > l {
        return Err(EvalError::Config(format!(
            "block length {block_l} must be in 1..={l}"
        )));
    }
    let levels = model.cfg.quantile_levels.clone();
    let nq = levels.len();
    let median_idx = ForecastResult::median_index(&levels);

    let (ctx_norm, stats) = znorm(context, NORM_EPS);
    let enc = model.encode_context(&ctx_norm, hook)?;
    let mut cache = model.seed_cache(&enc);
    let d = model.cfg.backbone.d_model;
    let mut state = enc.final_states[(enc.t - 1) * d..enc.t * d].to_vec();

    // Normalized-scale quantiles, accumulated block by block.
    let mut collected: Vec<f64> = Vec::with_capacity((horizon + block_l) * nq);
    while collected.len() < horizon * nq {
        let block = model.head_apply_row(&state);
        let take = block_l.min(horizon - collected.len() / nq);
        collected.extend_from_slice(&block[..block_l * nq]);
        if collected.len() >= horizon * nq {
            break;
        }
        // Feed this block's medians back in normalized scale.
        let from = collected.len() - block_l * nq;
        for t in 0..block_l {
            let median = collected[from + t * nq + median_idx];
            state = model.step_scalar(&mut cache, median)?;
        }
        let _ = take;
    }
    collected.truncate(horizon * nq);

    let divisor = stats.divisor(NORM_EPS);
    let quantiles: Vec<f64> = collected.iter().map(|v| v * divisor + stats.mean).collect();
    Ok(ForecastResult {
        quantiles,
        levels,
        norm_stats: stats,
        horizon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::BackboneConfig;
    use crate::model::ModelConfig;

    fn small_model() -> Model {
        let mut cfg = ModelConfig::new(BackboneConfig::new(2, 8, 16, 2), 4);
        cfg.tokenizer_width = 8;
        Model::init(cfg, 5).unwrap()
    }

    fn context() -> Vec<f64> {
        (0..24).map(|i| (i as f64 * 0.3).sin() * 2.0 + 5.0).collect()
    }

    #[test]
    fn shapes_and_truncation() {
        let model = small_model();
        let f = forecast(&model, &context(), 3, 4).unwrap();
        assert_eq!(f.quantiles.len(), 3 * 9);
        assert_eq!(f.horizon, 3);
        // Truncation contract: a short horizon is a prefix of the block.
        let full = forecast(&model, &context(), 4, 4).unwrap();
        assert_eq!(&full.quantiles[..27], &f.quantiles[..]);
    }

    #[test]
    fn multi_block_prefix_matches_single_block() {
        let model = small_model();
        let one = forecast(&model, &context(), 4, 4).unwrap();
        let two = forecast(&model, &context(), 8, 4).unwrap();
        assert_eq!(&two.quantiles[..36], &one.quantiles[..]);
    }

    #[test]
    fn cached_multi_block_matches_full_recompute_oracle() {
        let model = small_model();
        let h = 12;
        let block = 4;
        let cached = forecast(&model, &context(), h, block).unwrap();

        // Straight-line oracle: rebuild the whole prefix from scratch for
        // every block, no cache.
        let (mut ctx_ext, stats) = znorm(&context(), NORM_EPS);
        let nq = 9;
        let median_idx = ForecastResult::median_index(&model.cfg.quantile_levels);
        let d = model.cfg.backbone.d_model;
        let mut collected: Vec<f64> = Vec::new();
        while collected.len() < h * nq {
            let enc = model.encode_context(&ctx_ext, None).unwrap();
            let state = &enc.final_states[(enc.t - 1) * d..enc.t * d];
            let out = model.head_apply_row(state);
            collected.extend_from_slice(&out[..block * nq]);
            let from = collected.len() - block * nq;
            for t in 0..block {
                ctx_ext.push(collected[from + t * nq + median_idx]);
            }
        }
        collected.truncate(h * nq);
        let divisor = stats.divisor(NORM_EPS);
        for (c, o) in cached.quantiles.iter().zip(
            collected
                .iter()
                .map(|v| v * divisor + stats.mean)
                .collect::<Vec<f64>>()
                .iter(),
        ) {
            assert!((c - o).abs() <= 1e-9, "cached {c} vs oracle {o}");
        }
    }

    #[test]
    fn denormalization_is_shift_scale_equivariant() {
        let model = small_model();
        let ctx = context();
        let f1 = forecast(&model, &ctx, 6, 4).unwrap();
        let (a, b) = (3.5, 2.0);
        let shifted: Vec<f64> = ctx.iter().map(|v| a + b * v).collect();
        let f2 = forecast(&model, &shifted, 6, 4).unwrap();
        for (x, y) in f1.quantiles.iter().zip(&f2.quantiles) {
            assert!(
                (y - (a + b * x)).abs() < 1e-9,
                "expected {} got {y}",
                a + b * x
            );
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let model = small_model();
        assert!(forecast(&model, &[], 4, 4).is_err());
        assert!(forecast(&model, &[1.0, f64::NAN], 4, 4).is_err());
        assert!(forecast(&model, &[1.0, 2.0], 0, 4).is_err());
        assert!(forecast(&model, &[1.0, 2.0], 4, 99).is_err());
    }

    #[test]
    fn crossing_rate_and_sorting() {
        let mut f = ForecastResult {
            quantiles: vec![1.0, 3.0, 2.0, 4.0, 5.0, 6.0],
            levels: vec![0.25, 0.5, 0.75],
            norm_stats: crate::datagen::NormStats { mean: 0.0, std: 1.0 },
            horizon: 2,
        };
        assert!((f.crossing_rate() - 0.25).abs() < 1e-12);
        f.sort_rows();
        assert_eq!(f.quantiles, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(f.crossing_rate(), 0.0);
    }
}
