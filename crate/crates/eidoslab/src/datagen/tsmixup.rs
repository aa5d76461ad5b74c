//! TSMixup augmentation: convex Dirichlet-weighted mixtures of z-scored
//! series segments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use super::{znorm, DatagenError, SeriesRecord, NORM_EPS};

const MAX_RESAMPLE_ATTEMPTS: usize = 256;

/// Symmetric Dirichlet(alpha) weights via normalized Gamma draws:
/// non-negative, summing to one.
pub fn sample_mixture_weights(rng: &mut ChaCha8Rng, alpha: f64, k: usize) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("valid concentration");
    let mut draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = draws.iter().sum();
    if sum <= 0.0 {
        // All-zero draws are astronomically unlikely; fall back to uniform.
        return vec![1.0 / k as f64; k];
    }
    for d in draws.iter_mut() {
        *d /= sum;
    }
    draws
}

/// x_mix = sum_i lambda_i * segment_i over already z-scored segments.
pub fn mix_with_weights(segments: &[Vec<f64>], weights: &[f64]) -> Vec<f64> {
    assert_eq!(segments.len(), weights.len());
    let len = segments[0].len();
    let mut out = vec![0.0; len];
    for (seg, &w) in segments.iter().zip(weights) {
        for (o, &v) in out.iter_mut().zip(seg) {
            *o += w * v;
        }
    }
    out
}

/// Draw k ~ uniform{1..k_max} z-scored segments of length `l` from the pool
/// and mix them with Dirichlet(alpha) weights. Series shorter than `l` are
/// resampled, up to a bounded number of attempts.
pub fn tsmixup(
    pool: &[SeriesRecord],
    k_max: usize,
    alpha: f64,
    l: usize,
    seed: u64,
) -> Result<SeriesRecord, DatagenError> {
    if pool.is_empty() {
        return Err(DatagenError::EmptyPool);
    }
    if k_max == 0 || l == 0 {
        return Err(DatagenError::Config(
            "k_max and segment length must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.random_range(1..=k_max);
    let mut segments = Vec::with_capacity(k);
    let mut attempts = 0;
    while segments.len() < k {
        attempts += 1;
        if attempts > MAX_RESAMPLE_ATTEMPTS {
            return Err(DatagenError::SegmentTooShort {
                required: l,
                attempts,
            });
        }
        let series = &pool[rng.random_range(0..pool.len())];
        if series.target.len() < l {
            continue;
        }
        let start = if series.target.len() == l {
            0
        } else {
            rng.random_range(0..=series.target.len() - l)
        };
        let (seg, _) = znorm(&series.target[start..start + l], NORM_EPS);
        segments.push(seg);
    }
    let weights = sample_mixture_weights(&mut rng, alpha, k);
    let target = mix_with_weights(&segments, &weights);
    Ok(SeriesRecord {
        id: format!("tsmixup-{seed}"),
        freq: "H".to_string(),
        season_m: 1,
        target,
    })
}
