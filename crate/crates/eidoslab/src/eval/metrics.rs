//! Point and probabilistic forecast metrics with seasonal-naive baselining.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("{metric} undefined: {reason}")]
    Undefined { metric: &'static str, reason: String },
    #[error("{metric}: length mismatch ({left} vs {right})")]
    LengthMismatch {
        metric: &'static str,
        left: usize,
        right: usize,
    },
}

const DENOM_FLOOR: f64 = 1e-12;

/// Pinball loss for one level: max[q (y - yhat), (1 - q)(yhat - y)].
pub fn pinball(q: f64, y: f64, yhat: f64) -> f64 {
    (q * (y - yhat)).max((1.0 - q) * (yhat - y))
}

/// Seasonal-naive point forecast: repeat the value one season back,
/// wrapping over the horizon. Contexts shorter than the period fall back to
/// last-value naive (m = 1); callers can detect that via
/// [`effective_season`].
pub fn seasonal_naive(context: &[f64], horizon: usize, m: usize) -> Vec<f64> {
    let m = effective_season(context.len(), m);
    let t = context.len();
    (1..=horizon)
        .map(|h| {
            let steps_back = m * h.div_ceil(m);
            context[t + h - steps_back - 1]
        })
        .collect()
}

pub fn effective_season(context_len: usize, m: usize) -> usize {
    if m == 0 || m > context_len {
        1
    } else {
        m
    }
}

/// Mean absolute scaled error: forecast MAE over the in-sample mean
/// absolute seasonal difference.
pub fn mase(forecast: &[f64], truth: &[f64], insample: &[f64], m: usize) -> Result<f64, MetricError> {
    if forecast.len() != truth.len() {
        return Err(MetricError::LengthMismatch {
            metric: "mase",
            left: forecast.len(),
            right: truth.len(),
        });
    }
    if truth.is_empty() {
        return Err(MetricError::Undefined {
            metric: "mase",
            reason: "empty horizon".into(),
        });
    }
    if insample.len() <= m || m == 0 {
        return Err(MetricError::Undefined {
            metric: "mase",
            reason: format!("in-sample length {} must exceed period {m}", insample.len()),
        });
    }
    let num = forecast
        .iter()
        .zip(truth)
        .map(|(f, y)| (f - y).abs())
        .sum::<f64>()
        / truth.len() as f64;
    let den = insample
        .windows(m + 1)
        .map(|w| (w[m] - w[0]).abs())
        .sum::<f64>()
        / (insample.len() - m) as f64;
    if den < DENOM_FLOOR {
        return Err(MetricError::Undefined {
            metric: "mase",
            reason: "seasonal-naive in-sample error is zero".into(),
        });
    }
    Ok(num / den)
}

/// Quantile-approximated CRPS: mean over steps and levels of twice the
/// pinball loss. `normalized` (by mean absolute truth) feeds ratio
/// aggregation and is undefined for all-zero truths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrpsValue {
    pub raw: f64,
    pub normalized: Option<f64>,
}

pub fn crps_quantile(pred_q: &[f64], truth: &[f64], levels: &[f64]) -> Result<CrpsValue, MetricError> {
    let nq = levels.len();
    if pred_q.len() != truth.len() * nq {
        return Err(MetricError::LengthMismatch {
            metric: "crps",
            left: pred_q.len(),
            right: truth.len() * nq,
        });
    }
    if truth.is_empty() {
        return Err(MetricError::Undefined {
            metric: "crps",
            reason: "empty horizon".into(),
        });
    }
    let mut total = 0.0;
    for (t, y) in truth.iter().enumerate() {
        for (qi, q) in levels.iter().enumerate() {
            total += 2.0 * pinball(*q, *y, pred_q[t * nq + qi]);
        }
    }
    let raw = total / (truth.len() * nq) as f64;
    let scale = truth.iter().map(|y| y.abs()).sum::<f64>() / truth.len() as f64;
    let normalized = if scale < DENOM_FLOOR { None } else { Some(raw / scale) };
    Ok(CrpsValue { raw, normalized })
}

/// Weighted quantile loss: total doubled pinball mass over total absolute
/// truth.
pub fn wql(pred_q: &[f64], truth: &[f64], levels: &[f64]) -> Result<f64, MetricError> {
    let nq = levels.len();
    if pred_q.len() != truth.len() * nq {
        return Err(MetricError::LengthMismatch {
            metric: "wql",
            left: pred_q.len(),
            right: truth.len() * nq,
        });
    }
    let denom: f64 = truth.iter().map(|y| y.abs()).sum();
    if denom < DENOM_FLOOR {
        return Err(MetricError::Undefined {
            metric: "wql",
            reason: "total absolute truth is zero".into(),
        });
    }
    let mut total = 0.0;
    for (t, y) in truth.iter().enumerate() {
        for (qi, q) in levels.iter().enumerate() {
            total += 2.0 * pinball(*q, *y, pred_q[t * nq + qi]);
        }
    }
    Ok(total / denom)
}

/// Geometric mean over strictly positive ratios; zero or invalid entries
/// are excluded and counted.
pub fn geometric_mean(ratios: impl IntoIterator<Item = f64>) -> (Option<f64>, usize) {
    let mut log_sum = 0.0;
    let mut n = 0usize;
    let mut excluded = 0usize;
    for r in ratios {
        if r.is_finite() && r > 0.0 {
            log_sum += r.ln();
            n += 1;
        } else {
            excluded += 1;
        }
    }
    if n == 0 {
        (None, excluded)
    } else {
        (Some((log_sum / n as f64).exp()), excluded)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nine_levels() -> Vec<f64> {
        (1..=9).map(|i| i as f64 / 10.0).collect()
    }

    fn flat(pred_rows: &[Vec<f64>]) -> Vec<f64> {
        pred_rows.concat()
    }

    #[test]
    fn seasonal_naive_cases() {
        assert_eq!(seasonal_naive(&[1.0, 2.0, 3.0], 4, 1), vec![3.0; 4]);
        assert_eq!(
            seasonal_naive(&[1.0, 2.0, 3.0, 4.0], 4, 4),
            vec![1.0, 2.0, 3.0, 4.0]
        );
        assert_eq!(
            seasonal_naive(&[1.0, 2.0, 3.0, 4.0], 6, 4),
            vec![1.0, 2.0, 3.0, 4.0, 1.0, 2.0]
        );
        // Context shorter than the period falls back to last-value naive.
        assert_eq!(seasonal_naive(&[1.0, 2.0], 3, 5), vec![2.0; 3]);
        assert_eq!(effective_season(2, 5), 1);
        assert_eq!(effective_season(10, 5), 5);
    }

    #[test]
    fn mase_cases() {
        // Perfect forecast.
        assert_eq!(
            mase(&[6.0, 7.0], &[6.0, 7.0], &[1.0, 2.0, 3.0, 4.0, 5.0], 1).unwrap(),
            0.0
        );
        // Hand arithmetic: num 0.5, den 1.
        let v = mase(&[6.0, 8.0], &[6.0, 7.0], &[1.0, 2.0, 3.0, 4.0, 5.0], 1).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
        // Constant in-sample series has a zero denominator.
        assert!(matches!(
            mase(&[1.0], &[2.0], &[3.0, 3.0, 3.0], 1),
            Err(MetricError::Undefined { .. })
        ));
    }

    #[test]
    fn crps_cases() {
        let levels = nine_levels();
        // All quantiles equal the truth.
        let truth = vec![1.5, -2.0];
        let pred = flat(&[vec![1.5; 9], vec![-2.0; 9]]);
        let v = crps_quantile(&pred, &truth, &levels).unwrap();
        assert_eq!(v.raw, 0.0);
        // Constant over-prediction by 1: 2 * mean_q(1 - q) = 1.0.
        let truth = vec![2.0];
        let pred = vec![3.0; 9];
        let v = crps_quantile(&pred, &truth, &levels).unwrap();
        assert!((v.raw - 1.0).abs() < 1e-12);
        assert!((v.normalized.unwrap() - 0.5).abs() < 1e-12);
        // All-zero truth has no normalized form.
        let v = crps_quantile(&vec![0.1; 9], &[0.0], &levels).unwrap();
        assert!(v.normalized.is_none());
    }

    #[test]
    fn wql_cases() {
        let levels = nine_levels();
        let truth = vec![1.5, -2.0];
        let pred = flat(&[vec![1.5; 9], vec![-2.0; 9]]);
        assert_eq!(wql(&pred, &truth, &levels).unwrap(), 0.0);
        // Single median level: 2 * 0.5 * 1 / 1 = 1.
        let v = wql(&[0.0], &[1.0], &[0.5]).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
        // Scale equivariance at degree zero.
        let p: Vec<f64> = (0..18).map(|i| i as f64 * 0.3 - 2.0).collect();
        let t = vec![1.2, -0.7];
        let a = wql(&p, &t, &levels).unwrap();
        let p2: Vec<f64> = p.iter().map(|v| v * 7.0).collect();
        let t2: Vec<f64> = t.iter().map(|v| v * 7.0).collect();
        let b = wql(&p2, &t2, &levels).unwrap();
        assert!((a - b).abs() < 1e-12);
        // All-zero truth is undefined.
        assert!(matches!(
            wql(&[0.1], &[0.0], &[0.5]),
            Err(MetricError::Undefined { .. })
        ));
    }

    #[test]
    fn geometric_mean_cases() {
        let (g, ex) = geometric_mean([1.0, 1.0, 1.0]);
        assert_eq!(g, Some(1.0));
        assert_eq!(ex, 0);
        let (g, _) = geometric_mean([0.5, 2.0]);
        assert!((g.unwrap() - 1.0).abs() < 1e-12);
        let (g, _) = geometric_mean([0.7]);
        assert!((g.unwrap() - 0.7).abs() < 1e-15);
        let (g, ex) = geometric_mean([0.0, f64::NAN]);
        assert_eq!(g, None);
        assert_eq!(ex, 2);
    }
}
