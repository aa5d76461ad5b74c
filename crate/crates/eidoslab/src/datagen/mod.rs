//! Synthetic corpus generation, instance normalization, noise injection and
//! dataset file I/O.
//!
//! Every generator is deterministic under its seed; per-series randomness is
//! split as (seed, series_index) so generation order and worker count never
//! change the output.

pub mod cauker;
pub mod config;
pub mod io;
pub mod tsmixup;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cauker::{cauker_lite, ScmGraph};
pub use config::{build_corpus, Corpus, CorpusSource, GeneratorSpec, SourceSpec};
pub use io::{read_jsonl, write_jsonl, JsonlReader};
pub use tsmixup::{mix_with_weights, sample_mixture_weights, tsmixup};

/// Default eps for per-window z-score normalization, applied to every
/// training window and every inference context.
pub const NORM_EPS: f64 = 1e-8;

/// Impulse magnitude in units of the local standard deviation.
pub const IMPULSE_MAGNITUDE: f64 = 8.0;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("config error: {0}")]
    Config(String),
    #[error("series pool is empty")]
    EmptyPool,
    #[error("no segment of length {required} found after {attempts} attempts")]
    SegmentTooShort { required: usize, attempts: usize },
    #[error("graph error: {0}")]
    Graph(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("non-finite value in {context}")]
    NonFinite { context: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One univariate series: the dataset unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesRecord {
    pub id: String,
    /// Frequency tag, e.g. "H", "D", "5T".
    pub freq: String,
    pub season_m: usize,
    pub target: Vec<f64>,
}

impl SeriesRecord {
    pub fn is_finite(&self) -> bool {
        self.target.iter().all(|v| v.is_finite())
    }
}

/// Normalization statistics of one window; `std` is the raw population
/// standard deviation (zero for constant windows), the divisor applies the
/// eps floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    pub fn divisor(&self, eps: f64) -> f64 {
        self.std.max(eps)
    }

    pub fn denormalize(&self, v: &[f64], eps: f64) -> Vec<f64> {
        let d = self.divisor(eps);
        v.iter().map(|x| x * d + self.mean).collect()
    }
}

/// Z-score a window: (x - mean) / max(std, eps). Returns the statistics for
/// exact denormalization.
pub fn znorm(x: &[f64], eps: f64) -> (Vec<f64>, NormStats) {
    let n = x.len().max(1) as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    let stats = NormStats { mean, std };
    let d = stats.divisor(eps);
    let normalized = x.iter().map(|v| (v - mean) / d).collect();
    (normalized, stats)
}

/// Population standard deviation of the valid context window, the scale unit
/// for both noise protocols.
pub fn local_std(x: &[f64]) -> f64 {
    let n = x.len().max(1) as f64;
    let mean = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Additive Gaussian noise scaled by the local standard deviation:
/// x + eps with eps ~ N(0, (sigma_level * std(x))^2). The zero level returns
/// the input bit-for-bit.
pub fn gaussian_noise(x: &[f64], sigma_level: f64, seed: u64) -> Vec<f64> {
    if sigma_level == 0.0 {
        return x.to_vec();
    }
    let sigma = sigma_level * local_std(x);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(0.0, 1.0).expect("unit normal");
    x.iter().map(|v| v + sigma * dist.sample(&mut rng)).collect()
}

/// Impulse noise: with probability p per step, add a spike of exactly
/// 8 * std(x) with random sign. The zero level returns the input
/// bit-for-bit.
pub fn impulse_noise(x: &[f64], p: f64, seed: u64) -> Vec<f64> {
    if p == 0.0 {
        return x.to_vec();
    }
    let magnitude = IMPULSE_MAGNITUDE * local_std(x);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    x.iter()
        .map(|v| {
            if rng.random::<f64>() < p {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                v + sign * magnitude
            } else {
                *v
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimitiveKind {
    Sine,
    Trend,
    SineTrend,
    Noise,
}

impl PrimitiveKind {
    pub fn parse(s: &str) -> Result<Self, DatagenError> {
        match s {
            "sine" => Ok(Self::Sine),
            "trend" => Ok(Self::Trend),
            "sine_trend" | "sine+trend" => Ok(Self::SineTrend),
            "noise" => Ok(Self::Noise),
            other => Err(DatagenError::Config(format!(
                "unknown generator kind '{other}'"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Sine => "sine",
            Self::Trend => "trend",
            Self::SineTrend => "sine_trend",
            Self::Noise => "noise",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveParams {
    /// Cycles over the full series length.
    pub freq: f64,
    pub amp: f64,
    pub phase: f64,
    /// Total rise over the series: value gains `slope` from first to last.
    pub slope: f64,
    pub noise_sigma: f64,
}

impl Default for PrimitiveParams {
    fn default() -> Self {
        Self {
            freq: 1.0,
            amp: 1.0,
            phase: 0.0,
            slope: 1.0,
            noise_sigma: 0.0,
        }
    }
}

/// Deterministic signal generator: sine uses amp * sin(2 pi f t / T +
/// phase), trend rises linearly by `slope` end to end, Gaussian noise of the
/// configured sigma is added last.
pub fn gen_primitive(
    kind: PrimitiveKind,
    params: &PrimitiveParams,
    t_len: usize,
    seed: u64,
) -> Result<SeriesRecord, DatagenError> {
    if t_len < 2 {
        return Err(DatagenError::Config(format!(
            "series length {t_len} must be >= 2"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = primitive_values(kind, params, t_len, &mut rng);
    Ok(SeriesRecord {
        id: format!("{}-{seed}", kind.name()),
        freq: "H".to_string(),
        season_m: primitive_season(kind, params, t_len),
        target,
    })
}

pub(crate) fn primitive_season(kind: PrimitiveKind, params: &PrimitiveParams, t_len: usize) -> usize {
    match kind {
        PrimitiveKind::Sine | PrimitiveKind::SineTrend => {
            ((t_len as f64 / params.freq).round() as usize).max(1)
        }
        _ => 1,
    }
}

pub(crate) fn primitive_values(
    kind: PrimitiveKind,
    params: &PrimitiveParams,
    t_len: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let t_f = t_len as f64;
    let mut values: Vec<f64> = (0..t_len)
        .map(|t| {
            let mut v = 0.0;
            if matches!(kind, PrimitiveKind::Sine | PrimitiveKind::SineTrend) {
                v += params.amp
                    * (2.0 * std::f64::consts::PI * params.freq * t as f64 / t_f + params.phase)
                        .sin();
            }
            if matches!(kind, PrimitiveKind::Trend | PrimitiveKind::SineTrend) {
                v += params.slope * t as f64 / (t_len - 1) as f64;
            }
            v
        })
        .collect();
    if params.noise_sigma > 0.0 || matches!(kind, PrimitiveKind::Noise) {
        let sigma = if matches!(kind, PrimitiveKind::Noise) && params.noise_sigma == 0.0 {
            1.0
        } else {
            params.noise_sigma
        };
        let dist = Normal::new(0.0, sigma).expect("valid sigma");
        for v in values.iter_mut() {
            *v += dist.sample(rng);
        }
    }
    values
}

/// Derive the per-series generator rng from a corpus seed and series index.
pub fn series_rng(seed: u64, series_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(series_index.wrapping_add(0x10));
    rng
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn znorm_constant_and_roundtrip() {
        let (z, stats) = znorm(&[5.0, 5.0, 5.0], NORM_EPS);
        assert_eq!(z, vec![0.0, 0.0, 0.0]);
        assert_eq!(stats.std, 0.0, "raw std must be reported");

        let x = vec![1.0, -2.0, 4.5, 0.25, 9.0];
        let (z, stats) = znorm(&x, NORM_EPS);
        let mean: f64 = z.iter().sum::<f64>() / z.len() as f64;
        assert!(mean.abs() < 1e-12);
        let var: f64 = z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / z.len() as f64;
        assert!((var.sqrt() - 1.0).abs() < 1e-9);
        let back = stats.denormalize(&z, NORM_EPS);
        for (a, b) in back.iter().zip(&x) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn gaussian_noise_zero_level_is_bitwise_identity() {
        let x = vec![0.5, -0.0, 3.75, 1e-300];
        let y = gaussian_noise(&x, 0.0, 42);
        assert_eq!(
            x.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            y.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn gaussian_noise_is_deterministic_under_seed() {
        let x: Vec<f64> = (0..256).map(|i| (i as f64 * 0.1).sin()).collect();
        let a = gaussian_noise(&x, 0.4, 42);
        let b = gaussian_noise(&x, 0.4, 42);
        assert_eq!(a, b);
        let c = gaussian_noise(&x, 0.4, 43);
        assert_ne!(a, c);
    }

    #[test]
    fn gaussian_noise_empirical_sigma() {
        let x: Vec<f64> = (0..100_000).map(|i| (i as f64 * 0.01).sin()).collect();
        let sigma_x = local_std(&x);
        let level = 0.4;
        let noisy = gaussian_noise(&x, level, 42);
        let diffs: Vec<f64> = noisy.iter().zip(&x).map(|(n, c)| n - c).collect();
        let emp = local_std(&diffs) / sigma_x;
        assert!(
            (emp - level).abs() / level < 0.02,
            "empirical sigma {emp} deviates from {level}"
        );
    }

    #[test]
    fn impulse_noise_zero_probability_is_bitwise_identity() {
        let x = vec![1.0, 2.0, 3.0];
        let y = impulse_noise(&x, 0.0, 42);
        assert_eq!(x, y);
    }

    #[test]
    fn impulse_noise_magnitude_is_exactly_eight_sigma() {
        let x: Vec<f64> = (0..4096).map(|i| (i as f64 * 0.37).sin() * 2.5).collect();
        let sigma_x = local_std(&x);
        let noisy = impulse_noise(&x, 0.1, 42);
        let mut spikes = 0;
        for (n, c) in noisy.iter().zip(&x) {
            if n != c {
                spikes += 1;
                let up = c + IMPULSE_MAGNITUDE * sigma_x;
                let down = c - IMPULSE_MAGNITUDE * sigma_x;
                assert!(
                    n.to_bits() == up.to_bits() || n.to_bits() == down.to_bits(),
                    "spike is not exactly +-8 sigma"
                );
            }
        }
        assert!(spikes > 0);
    }

    #[test]
    fn impulse_noise_empirical_rate() {
        let x = vec![0.0; 1_000_000];
        // Zero variance would make spikes invisible; use a ramp instead.
        let x: Vec<f64> = x.iter().enumerate().map(|(i, _)| i as f64 * 1e-3).collect();
        let p = 0.1;
        let noisy = impulse_noise(&x, p, 42);
        let rate = noisy.iter().zip(&x).filter(|(n, c)| n != c).count() as f64 / x.len() as f64;
        assert!((rate - p).abs() / p < 0.01, "empirical rate {rate}");
    }

    #[test]
    fn sine_endpoints_and_trend_ramp() {
        let t = 64;
        let p = PrimitiveParams {
            freq: 1.0,
            amp: 1.0,
            phase: 0.0,
            slope: 2.0,
            noise_sigma: 0.0,
        };
        let s = gen_primitive(PrimitiveKind::Sine, &p, t, 1).unwrap();
        assert!(s.target[0].abs() < 1e-12);
        assert!((s.target[t / 4] - 1.0).abs() < 1e-12);

        let tr = gen_primitive(PrimitiveKind::Trend, &p, t, 1).unwrap();
        assert!((tr.target[t - 1] - tr.target[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn primitives_are_deterministic_under_seed() {
        let p = PrimitiveParams {
            noise_sigma: 0.3,
            ..Default::default()
        };
        let a = gen_primitive(PrimitiveKind::SineTrend, &p, 128, 7).unwrap();
        let b = gen_primitive(PrimitiveKind::SineTrend, &p, 128, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unknown_kind_is_config_error() {
        assert!(PrimitiveKind::parse("sawtooth").is_err());
        assert!(PrimitiveKind::parse("sine").is_ok());
    }

    #[test]
    fn distinct_seeds_decorrelate() {
        let t = 4096;
        let p = PrimitiveParams::default();
        let a = gen_primitive(PrimitiveKind::Noise, &p, t, 1).unwrap().target;
        let b = gen_primitive(PrimitiveKind::Noise, &p, t, 2).unwrap().target;
        let ma = a.iter().sum::<f64>() / t as f64;
        let mb = b.iter().sum::<f64>() / t as f64;
        let cov: f64 = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - ma) * (y - mb))
            .sum::<f64>()
            / t as f64;
        let corr = cov / (local_std(&a) * local_std(&b));
        assert!(corr.abs() < 0.1, "seed correlation {corr}");
    }
}
