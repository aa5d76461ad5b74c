//! Per-task evaluation against the seasonal-naive baseline, ratio
//! aggregation by geometric mean, and report serialization.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::SeriesRecord;
use crate::model::Model;
use crate::threads;

use super::forecast::forecast;
use super::metrics::{
    crps_quantile, effective_season, geometric_mean, mase, seasonal_naive, wql,
};
use super::EvalError;

/// One evaluation unit: held-out truth split off the end of a series.
#[derive(Debug, Clone)]
pub struct EvalTask {
    pub id: String,
    pub context: Vec<f64>,
    pub truth: Vec<f64>,
    pub season_m: usize,
}

/// Split records into (context, truth) tasks with an h-step holdout.
/// Records too short to leave a context are skipped.
pub fn tasks_from_records(records: &[SeriesRecord], horizon: usize) -> Vec<EvalTask> {
    records
        .iter()
        .filter(|r| r.target.len() > horizon + 1)
        .map(|r| {
            let split = r.target.len() - horizon;
            EvalTask {
                id: r.id.clone(),
                context: r.target[..split].to_vec(),
                truth: r.target[split..].to_vec(),
                season_m: r.season_m,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskRow {
    pub id: String,
    pub mase: Option<f64>,
    pub crps_raw: f64,
    pub crps_norm: Option<f64>,
    pub wql: Option<f64>,
    pub baseline_mase: Option<f64>,
    pub baseline_crps_norm: Option<f64>,
    pub mase_ratio: Option<f64>,
    pub crps_ratio: Option<f64>,
    pub crossing_rate: f64,
    pub season_fallback: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalAggregates {
    /// exp(mean(log ratio)) over valid rows, model / seasonal-naive.
    pub mase_ratio_geomean: Option<f64>,
    pub crps_ratio_geomean: Option<f64>,
    /// Average rank of the model against the baseline (1 = always better).
    pub avg_rank_mase: Option<f64>,
    pub avg_rank_crps: Option<f64>,
    pub excluded_mase: usize,
    pub excluded_crps: usize,
    pub mean_crossing_rate: f64,
    pub n_tasks: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ReportMeta {
    pub model_hash: String,
    pub seed: u64,
    pub noise: Option<String>,
}

/// Per-task metric rows, baseline-relative ratios and geometric-mean
/// aggregates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<TaskRow>,
    pub aggregates: EvalAggregates,
    pub meta: ReportMeta,
}

/// Aggregate finished rows: geometric means over strictly positive ratios
/// plus model-vs-baseline average ranks. Errors if nothing is valid.
pub fn aggregate(rows: Vec<TaskRow>, meta: ReportMeta) -> Result<EvalReport, EvalError> {
    if rows.is_empty() {
        return Err(EvalError::EmptyReport);
    }
    let (mase_geo, mase_excl) =
        geometric_mean(rows.iter().map(|r| r.mase_ratio.unwrap_or(f64::NAN)));
    let (crps_geo, crps_excl) =
        geometric_mean(rows.iter().map(|r| r.crps_ratio.unwrap_or(f64::NAN)));
    if mase_geo.is_none() && crps_geo.is_none() {
        return Err(EvalError::EmptyReport);
    }
    let rank = |pairs: Vec<(f64, f64)>| -> Option<f64> {
        if pairs.is_empty() {
            return None;
        }
        let total: f64 = pairs
            .iter()
            .map(|(model, base)| {
                if model < base {
                    1.0
                } else if model > base {
                    2.0
                } else {
                    1.5
                }
            })
            .sum();
        Some(total / pairs.len() as f64)
    };
    let avg_rank_mase = rank(
        rows.iter()
            .filter_map(|r| Some((r.mase?, r.baseline_mase?)))
            .collect(),
    );
    let avg_rank_crps = rank(
        rows.iter()
            .filter_map(|r| Some((r.crps_norm?, r.baseline_crps_norm?)))
            .collect(),
    );
    let mean_crossing_rate =
        rows.iter().map(|r| r.crossing_rate).sum::<f64>() / rows.len() as f64;
    let aggregates = EvalAggregates {
        mase_ratio_geomean: mase_geo,
        crps_ratio_geomean: crps_geo,
        avg_rank_mase,
        avg_rank_crps,
        excluded_mase: mase_excl,
        excluded_crps: crps_excl,
        mean_crossing_rate,
        n_tasks: rows.len(),
    };
    Ok(EvalReport {
        rows,
        aggregates,
        meta,
    })
}

/// Score one task: model forecast vs seasonal-naive baseline. Undefined
/// metrics become None and are excluded (and counted) at aggregation.
pub fn evaluate_task(
    model: &Model,
    task: &EvalTask,
    block_l: usize,
    sort_quantiles: bool,
) -> Result<TaskRow, EvalError> {
    let horizon = task.truth.len();
    let mut fc = forecast(model, &task.context, horizon, block_l)?;
    let crossing_rate = fc.crossing_rate();
    if sort_quantiles {
        fc.sort_rows();
    }
    let median = fc.median();
    let levels = fc.levels.clone();

    let season = effective_season(task.context.len(), task.season_m);
    let season_fallback = season != task.season_m;
    let naive = seasonal_naive(&task.context, horizon, task.season_m);
    let naive_q: Vec<f64> = naive
        .iter()
        .flat_map(|v| std::iter::repeat(*v).take(levels.len()))
        .collect();

    let model_mase = mase(&median, &task.truth, &task.context, season).ok();
    let base_mase = mase(&naive, &task.truth, &task.context, season).ok();
    let crps = crps_quantile(&fc.quantiles, &task.truth, &levels)?;
    let base_crps = crps_quantile(&naive_q, &task.truth, &levels)?;
    let model_wql = wql(&fc.quantiles, &task.truth, &levels).ok();

    let ratio = |m: Option<f64>, b: Option<f64>| -> Option<f64> {
        match (m, b) {
            (Some(m), Some(b)) if b > 0.0 => Some(m / b),
            _ => None,
        }
    };
    Ok(TaskRow {
        id: task.id.clone(),
        mase: model_mase,
        crps_raw: crps.raw,
        crps_norm: crps.normalized,
        wql: model_wql,
        baseline_mase: base_mase,
        baseline_crps_norm: base_crps.normalized,
        mase_ratio: ratio(model_mase, base_mase),
        crps_ratio: ratio(crps.normalized, base_crps.normalized),
        crossing_rate,
        season_fallback,
    })
}

/// Evaluate all tasks (parallel, merged in task order) and aggregate.
pub fn evaluate(
    model: &Model,
    tasks: &[EvalTask],
    block_l: usize,
    sort_quantiles: bool,
    meta: ReportMeta,
) -> Result<EvalReport, EvalError> {
    if tasks.is_empty() {
        return Err(EvalError::EmptyReport);
    }
    threads::init_thread_pool();
    let rows: Result<Vec<TaskRow>, EvalError> = tasks
        .par_iter()
        .map(|t| evaluate_task(model, t, block_l, sort_quantiles))
        .collect();
    aggregate(rows?, meta)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl EvalReport {
    /// One CSV row per task.
    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(
            f,
            "task_id,mase,crps_raw,crps_norm,wql,baseline_mase,baseline_crps_norm,mase_ratio,crps_ratio,crossing_rate,season_fallback"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.id,
                fmt_opt(r.mase),
                r.crps_raw,
                fmt_opt(r.crps_norm),
                fmt_opt(r.wql),
                fmt_opt(r.baseline_mase),
                fmt_opt(r.baseline_crps_norm),
                fmt_opt(r.mase_ratio),
                fmt_opt(r.crps_ratio),
                r.crossing_rate,
                r.season_fallback,
            )?;
        }
        f.flush()
    }

    /// Aggregates, exclusion counts and metadata as JSON.
    pub fn write_json_summary(&self, path: &Path) -> std::io::Result<()> {
        #[derive(Serialize)]
        struct Summary<'a> {
            aggregates: &'a EvalAggregates,
            meta: &'a ReportMeta,
        }
        let json = serde_json::to_string_pretty(&Summary {
            aggregates: &self.aggregates,
            meta: &self.meta,
        })
        .expect("summary serializes");
        std::fs::write(path, json)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, mase_ratio: Option<f64>, crps_ratio: Option<f64>) -> TaskRow {
        TaskRow {
            id: id.into(),
            mase: mase_ratio,
            crps_raw: 1.0,
            crps_norm: crps_ratio,
            wql: None,
            baseline_mase: Some(1.0),
            baseline_crps_norm: Some(1.0),
            mase_ratio,
            crps_ratio,
            crossing_rate: 0.0,
            season_fallback: false,
        }
    }

    #[test]
    fn aggregate_parity_symmetry_singleton() {
        let meta = ReportMeta::default();
        // All ratios 1 aggregate to 1.
        let rep = aggregate(
            vec![row("a", Some(1.0), Some(1.0)), row("b", Some(1.0), Some(1.0))],
            meta.clone(),
        )
        .unwrap();
        assert_eq!(rep.aggregates.mase_ratio_geomean, Some(1.0));
        // Log symmetry: {0.5, 2} -> 1.
        let rep = aggregate(
            vec![row("a", Some(0.5), None), row("b", Some(2.0), None)],
            meta.clone(),
        )
        .unwrap();
        assert!((rep.aggregates.mase_ratio_geomean.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(rep.aggregates.excluded_crps, 2);
        // Singleton returns its own ratio.
        let rep = aggregate(vec![row("a", Some(0.7), Some(0.9))], meta.clone()).unwrap();
        assert!((rep.aggregates.mase_ratio_geomean.unwrap() - 0.7).abs() < 1e-15);
        // All-invalid rows are an empty-report error.
        assert!(matches!(
            aggregate(vec![row("a", None, None)], meta),
            Err(EvalError::EmptyReport)
        ));
    }

    #[test]
    fn tasks_split_contexts_and_truths() {
        let records = vec![SeriesRecord {
            id: "s".into(),
            freq: "H".into(),
            season_m: 4,
            target: (0..20).map(|i| i as f64).collect(),
        }];
        let tasks = tasks_from_records(&records, 5);
        assert_eq!(tasks.len(), 1);
        assert_eq!(tasks[0].context.len(), 15);
        assert_eq!(tasks[0].truth, vec![15.0, 16.0, 17.0, 18.0, 19.0]);
        // Too-short records are skipped.
        let short = vec![SeriesRecord {
            id: "t".into(),
            freq: "H".into(),
            season_m: 1,
            target: vec![1.0, 2.0],
        }];
        assert!(tasks_from_records(&short, 5).is_empty());
    }
}
