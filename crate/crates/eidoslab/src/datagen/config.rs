//! Generator configuration: named sources with parameter blocks and mixing
//! weights, resolved into an in-memory corpus.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

use super::{
    cauker, io, primitive_season, primitive_values, DatagenError, PrimitiveKind, PrimitiveParams,
    SeriesRecord,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn default_weight() -> f64 {
    1.0
}
fn default_freq_min() -> f64 {
    1.0
}
fn default_freq_max() -> f64 {
    5.0
}
fn default_amp() -> f64 {
    1.0
}
fn default_noise_sigma() -> f64 {
    0.1
}
fn default_slope_min() -> f64 {
    -2.0
}
fn default_slope_max() -> f64 {
    2.0
}
fn default_sigma() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorSpec {
    Sine {
        count: usize,
        length: usize,
        #[serde(default = "default_freq_min")]
        freq_min: f64,
        #[serde(default = "default_freq_max")]
        freq_max: f64,
        #[serde(default = "default_amp")]
        amp: f64,
        #[serde(default = "default_noise_sigma")]
        noise_sigma: f64,
    },
    Trend {
        count: usize,
        length: usize,
        #[serde(default = "default_slope_min")]
        slope_min: f64,
        #[serde(default = "default_slope_max")]
        slope_max: f64,
        #[serde(default = "default_noise_sigma")]
        noise_sigma: f64,
    },
    SineTrend {
        count: usize,
        length: usize,
        #[serde(default = "default_freq_min")]
        freq_min: f64,
        #[serde(default = "default_freq_max")]
        freq_max: f64,
        #[serde(default = "default_amp")]
        amp: f64,
        #[serde(default = "default_slope_min")]
        slope_min: f64,
        #[serde(default = "default_slope_max")]
        slope_max: f64,
        #[serde(default = "default_noise_sigma")]
        noise_sigma: f64,
    },
    Noise {
        count: usize,
        length: usize,
        #[serde(default = "default_sigma")]
        sigma: f64,
    },
    Cauker {
        count: usize,
        length: usize,
    },
    File {
        path: PathBuf,
    },
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<(), DatagenError> {
        match self {
            Self::File { .. } => Ok(()),
            Self::Sine { count, length, .. }
            | Self::Trend { count, length, .. }
            | Self::SineTrend { count, length, .. }
            | Self::Noise { count, length, .. }
            | Self::Cauker { count, length } => {
                if *count == 0 {
                    return Err(DatagenError::Config(
                        "empty spec: generator count must be >= 1".into(),
                    ));
                }
                if *length < 2 {
                    return Err(DatagenError::Config(format!(
                        "series length {length} must be >= 2"
                    )));
                }
                Ok(())
            }
        }
    }
}

/// One registered source with its sampling weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    #[serde(default = "default_weight")]
    pub weight: f64,
    pub generator: GeneratorSpec,
}

/// Generate all records of one source. Per-series rngs split on
/// (seed, source_index, series_index), so worker order never matters.
pub fn synth_records(
    spec: &GeneratorSpec,
    seed: u64,
    source_index: usize,
) -> Result<Vec<SeriesRecord>, DatagenError> {
    spec.validate()?;
    let per_series_rng = |i: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(((source_index as u64 + 1) << 32) | i as u64);
        rng
    };
    let make = |count: usize,
                length: usize,
                kind: PrimitiveKind,
                draw: &dyn Fn(&mut ChaCha8Rng) -> PrimitiveParams|
     -> Vec<SeriesRecord> {
        (0..count)
            .map(|i| {
                let mut rng = per_series_rng(i);
                let params = draw(&mut rng);
                let target = primitive_values(kind, &params, length, &mut rng);
                SeriesRecord {
                    id: format!("{}-{source_index}-{i}", kind.name()),
                    freq: "H".to_string(),
                    season_m: primitive_season(kind, &params, length),
                    target,
                }
            })
            .collect()
    };
    match spec {
        GeneratorSpec::Sine {
            count,
            length,
            freq_min,
            freq_max,
            amp,
            noise_sigma,
        } => Ok(make(*count, *length, PrimitiveKind::Sine, &|rng| {
            PrimitiveParams {
                freq: rng.random_range(*freq_min..=*freq_max),
                amp: *amp,
                phase: rng.random::<f64>() * std::f64::consts::TAU,
                slope: 0.0,
                noise_sigma: *noise_sigma,
            }
        })),
        GeneratorSpec::Trend {
            count,
            length,
            slope_min,
            slope_max,
            noise_sigma,
        } => Ok(make(*count, *length, PrimitiveKind::Trend, &|rng| {
            PrimitiveParams {
                freq: 1.0,
                amp: 0.0,
                phase: 0.0,
                slope: rng.random_range(*slope_min..=*slope_max),
                noise_sigma: *noise_sigma,
            }
        })),
        GeneratorSpec::SineTrend {
            count,
            length,
            freq_min,
            freq_max,
            amp,
            slope_min,
            slope_max,
            noise_sigma,
        } => Ok(make(*count, *length, PrimitiveKind::SineTrend, &|rng| {
            PrimitiveParams {
                freq: rng.random_range(*freq_min..=*freq_max),
                amp: *amp,
                phase: rng.random::<f64>() * std::f64::consts::TAU,
                slope: rng.random_range(*slope_min..=*slope_max),
                noise_sigma: *noise_sigma,
            }
        })),
        GeneratorSpec::Noise { count, length, sigma } => {
            Ok(make(*count, *length, PrimitiveKind::Noise, &|_| {
                PrimitiveParams {
                    freq: 1.0,
                    amp: 0.0,
                    phase: 0.0,
                    slope: 0.0,
                    noise_sigma: *sigma,
                }
            }))
        }
        GeneratorSpec::Cauker { count, length } => {
            cauker::cauker_lite(seed.wrapping_add(source_index as u64), *length, *count)
        }
        GeneratorSpec::File { path } => io::load_records(path),
    }
}

/// A resolved corpus: per-source record lists plus sampling weights.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub sources: Vec<CorpusSource>,
}

#[derive(Debug, Clone)]
pub struct CorpusSource {
    pub weight: f64,
    pub records: Vec<SeriesRecord>,
}

impl Corpus {
    pub fn total_records(&self) -> usize {
        self.sources.iter().map(|s| s.records.len()).sum()
    }

    pub fn total_points(&self) -> usize {
        self.sources
            .iter()
            .flat_map(|s| s.records.iter())
            .map(|r| r.target.len())
            .sum()
    }

    pub fn all_records(&self) -> impl Iterator<Item = &SeriesRecord> {
        self.sources.iter().flat_map(|s| s.records.iter())
    }
}

pub fn build_corpus(sources: &[SourceSpec], seed: u64) -> Result<Corpus, DatagenError> {
    if sources.is_empty() {
        return Err(DatagenError::Config("no data sources configured".into()));
    }
    let mut out = Vec::with_capacity(sources.len());
    for (i, src) in sources.iter().enumerate() {
        if src.weight <= 0.0 {
            return Err(DatagenError::Config(format!(
                "source {i}: weight must be positive"
            )));
        }
        let records = synth_records(&src.generator, seed, i)?;
        if records.is_empty() {
            return Err(DatagenError::Config(format!("source {i} produced no series")));
        }
        out.push(CorpusSource {
            weight: src.weight,
            records,
        });
    }
    Ok(Corpus { sources: out })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_deterministic_under_seed() {
        let sources = vec![
            SourceSpec {
                weight: 1.0,
                generator: GeneratorSpec::SineTrend {
                    count: 4,
                    length: 64,
                    freq_min: 1.0,
                    freq_max: 5.0,
                    amp: 1.0,
                    slope_min: -2.0,
                    slope_max: 2.0,
                    noise_sigma: 0.1,
                },
            },
            SourceSpec {
                weight: 2.0,
                generator: GeneratorSpec::Cauker {
                    count: 3,
                    length: 64,
                },
            },
        ];
        let a = build_corpus(&sources, 42).unwrap();
        let b = build_corpus(&sources, 42).unwrap();
        for (sa, sb) in a.sources.iter().zip(&b.sources) {
            assert_eq!(sa.records, sb.records);
        }
        assert_eq!(a.total_records(), 7);
    }

    #[test]
    fn zero_count_is_an_empty_spec_error() {
        let spec = GeneratorSpec::Sine {
            count: 0,
            length: 64,
            freq_min: 1.0,
            freq_max: 5.0,
            amp: 1.0,
            noise_sigma: 0.1,
        };
        assert!(matches!(
            synth_records(&spec, 1, 0),
            Err(DatagenError::Config(_))
        ));
    }

    #[test]
    fn unknown_keys_in_specs_are_rejected() {
        let raw = r#"{"weight": 1.0, "generator": {"kind": "sine", "count": 2, "length": 32, "bogus": 1}}"#;
        assert!(serde_json::from_str::<SourceSpec>(raw).is_err());
        let ok = r#"{"generator": {"kind": "sine", "count": 2, "length": 32}}"#;
        let parsed: SourceSpec = serde_json::from_str(ok).unwrap();
        assert_eq!(parsed.weight, 1.0);
    }
}
