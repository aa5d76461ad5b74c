//! Noise-robustness benchmark: perturb evaluation contexts at a grid of
//! intensities, re-normalize with the noisy statistics (per-window
//! z-scoring inside the forecaster), and report CRPS relative to the clean
//! baseline.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{gaussian_noise, impulse_noise};
use crate::model::Model;
use crate::threads;

use super::metrics::{crps_quantile, geometric_mean};
use super::report::EvalTask;
use super::{forecast::forecast, EvalError};

/// Default intensity grids.
pub const GAUSSIAN_LEVELS: [f64; 5] = [0.0, 0.2, 0.4, 0.6, 0.8];
pub const IMPULSE_LEVELS: [f64; 5] = [0.0, 0.05, 0.1, 0.15, 0.2];
/// Default seed for noise injection.
pub const NOISE_SEED: u64 = 42;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Gaussian,
    Impulse,
}

impl NoiseKind {
    pub fn parse(s: &str) -> Result<Self, EvalError> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "impulse" => Ok(Self::Impulse),
            other => Err(EvalError::Config(format!("unknown noise kind '{other}'"))),
        }
    }

    pub fn default_levels(&self) -> Vec<f64> {
        match self {
            Self::Gaussian => GAUSSIAN_LEVELS.to_vec(),
            Self::Impulse => IMPULSE_LEVELS.to_vec(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Gaussian => "gaussian",
            Self::Impulse => "impulse",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseBenchRow {
    pub level: f64,
    /// Geometric mean of per-task normalized CRPS at this level.
    pub agg_crps: f64,
    /// agg_crps divided by the clean level's value; exactly 1.0 at level 0.
    pub relative_crps: f64,
    pub excluded: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseBenchReport {
    pub kind: NoiseKind,
    pub seed: u64,
    pub rows: Vec<NoiseBenchRow>,
}

fn level_crps(
    model: &Model,
    tasks: &[EvalTask],
    kind: NoiseKind,
    level: f64,
    seed: u64,
    block_l: usize,
) -> Result<(f64, usize), EvalError> {
    let per_task: Result<Vec<Option<f64>>, EvalError> = tasks
        .par_iter()
        .enumerate()
        .map(|(idx, task)| {
            // Per-task seeds are shared across levels, pairing the draws.
            let task_seed = seed.wrapping_add(idx as u64);
            let noisy = match kind {
                NoiseKind::Gaussian => gaussian_noise(&task.context, level, task_seed),
                NoiseKind::Impulse => impulse_noise(&task.context, level, task_seed),
            };
            let fc = forecast(model, &noisy, task.truth.len(), block_l)?;
            let crps = crps_quantile(&fc.quantiles, &task.truth, &fc.levels)?;
            Ok(crps.normalized)
        })
        .collect();
    let per_task = per_task?;
    let (geo, excluded) = geometric_mean(per_task.iter().map(|v| v.unwrap_or(f64::NAN)));
    let geo = geo.ok_or(EvalError::EmptyReport)?;
    Ok((geo, excluded))
}

/// Sweep the grid. Levels must include the clean level 0; results are
/// deterministic under the seed.
pub fn noise_bench(
    model: &Model,
    tasks: &[EvalTask],
    kind: NoiseKind,
    levels: &[f64],
    seed: u64,
    block_l: usize,
) -> Result<NoiseBenchReport, EvalError> {
    if tasks.is_empty() {
        return Err(EvalError::EmptyReport);
    }
    if !levels.contains(&0.0) {
        return Err(EvalError::Config(
            "noise levels must include the clean level 0".into(),
        ));
    }
    threads::init_thread_pool();
    let mut agg = Vec::with_capacity(levels.len());
    for &level in levels {
        agg.push(level_crps(model, tasks, kind, level, seed, block_l)?);
    }
    let clean_idx = levels.iter().position(|l| *l == 0.0).expect("validated");
    let clean = agg[clean_idx].0;
    let rows = levels
        .iter()
        .zip(&agg)
        .map(|(&level, &(crps, excluded))| NoiseBenchRow {
            level,
            agg_crps: crps,
            relative_crps: crps / clean,
            excluded,
        })
        .collect();
    Ok(NoiseBenchReport {
        kind,
        seed,
        rows,
    })
}

impl NoiseBenchReport {
    /// Level-by-metric CSV.
    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "kind,level,agg_crps,relative_crps,excluded")?;
        for r in &self.rows {
            writeln!(
                f,
                "{},{},{},{},{}",
                self.kind.name(),
                r.level,
                r.agg_crps,
                r.relative_crps,
                r.excluded
            )?;
        }
        f.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::BackboneConfig;
    use crate::model::ModelConfig;

    fn tiny_tasks() -> Vec<EvalTask> {
        (0..4)
            .map(|i| {
                let series: Vec<f64> = (0..40)
                    .map(|t| ((t + i) as f64 * 0.4).sin() * 2.0 + 3.0)
                    .collect();
                EvalTask {
                    id: format!("t{i}"),
                    context: series[..32].to_vec(),
                    truth: series[32..].to_vec(),
                    season_m: 8,
                }
            })
            .collect()
    }

    fn tiny_model() -> Model {
        let mut cfg = ModelConfig::new(BackboneConfig::new(1, 8, 16, 2), 8);
        cfg.tokenizer_width = 8;
        Model::init(cfg, 3).unwrap()
    }

    #[test]
    fn clean_level_relative_crps_is_exactly_one() {
        let model = tiny_model();
        let tasks = tiny_tasks();
        let report = noise_bench(
            &model,
            &tasks,
            NoiseKind::Gaussian,
            &GAUSSIAN_LEVELS,
            NOISE_SEED,
            8,
        )
        .unwrap();
        assert_eq!(report.rows.len(), 5);
        assert_eq!(report.rows[0].level, 0.0);
        assert_eq!(report.rows[0].relative_crps, 1.0);
    }

    #[test]
    fn default_grids_match_the_protocol() {
        assert_eq!(NoiseKind::Gaussian.default_levels(), vec![0.0, 0.2, 0.4, 0.6, 0.8]);
        assert_eq!(NoiseKind::Impulse.default_levels(), vec![0.0, 0.05, 0.1, 0.15, 0.2]);
    }

    #[test]
    fn missing_clean_level_is_rejected() {
        let model = tiny_model();
        let tasks = tiny_tasks();
        assert!(matches!(
            noise_bench(&model, &tasks, NoiseKind::Impulse, &[0.1, 0.2], 42, 8),
            Err(EvalError::Config(_))
        ));
    }

    #[test]
    fn deterministic_under_seed() {
        let model = tiny_model();
        let tasks = tiny_tasks();
        let a = noise_bench(&model, &tasks, NoiseKind::Impulse, &IMPULSE_LEVELS, 42, 8).unwrap();
        let b = noise_bench(&model, &tasks, NoiseKind::Impulse, &IMPULSE_LEVELS, 42, 8).unwrap();
        for (x, y) in a.rows.iter().zip(&b.rows) {
            assert_eq!(x.agg_crps.to_bits(), y.agg_crps.to_bits());
        }
    }
}
