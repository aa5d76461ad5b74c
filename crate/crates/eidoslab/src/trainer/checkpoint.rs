//! Single-file checkpoint container: magic bytes, format version, a JSON
//! header (config, step, rng and sampler state, parameter manifest) and
//! little-endian 64-bit float payloads. Reloading restores training
//! bit-for-bit on the same platform.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::params::ParamStore;
use crate::trainer::optimizer::{OptimHyper, OptimState};
use crate::trainer::{TrainConfig, TrainError};

const MAGIC: &[u8; 8] = b"EIDOSCKP";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: TrainConfig,
    step: u64,
    rng_seed: u64,
    /// ChaCha word position, split to stay within JSON-safe integers.
    rng_word_pos_hi: u64,
    rng_word_pos_lo: u64,
    sampler_state: Vec<(u64, u64)>,
    optim_step: u64,
    optim_hyper: OptimHyper,
    params: Vec<ParamMeta>,
    frozen_head: Vec<ParamMeta>,
}

/// Everything needed to resume or serve a training run.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub step: u64,
    pub params: ParamStore,
    pub opt: OptimState,
    pub rng_seed: u64,
    pub rng_word_pos: u128,
    /// Per-source (epoch, cursor) of the window sampler.
    pub sampler_state: Vec<(u64, u64)>,
    /// Present when the grounding head is frozen at initialization.
    pub frozen_head: Option<ParamStore>,
}

impl Checkpoint {
    /// Hash of the resolved training config; commands refuse mismatched
    /// checkpoint/config pairs by comparing these.
    pub fn config_hash(&self) -> String {
        config_hash(&self.config)
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let header = Header {
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            step: self.step,
            rng_seed: self.rng_seed,
            rng_word_pos_hi: (self.rng_word_pos >> 64) as u64,
            rng_word_pos_lo: self.rng_word_pos as u64,
            sampler_state: self.sampler_state.clone(),
            optim_step: self.opt.step,
            optim_hyper: self.opt.hyper,
            params: self
                .params
                .entries()
                .iter()
                .map(|e| ParamMeta {
                    name: e.name.clone(),
                    shape: e.shape.clone(),
                })
                .collect(),
            frozen_head: self
                .frozen_head
                .as_ref()
                .map(|s| {
                    s.entries()
                        .iter()
                        .map(|e| ParamMeta {
                            name: e.name.clone(),
                            shape: e.shape.clone(),
                        })
                        .collect()
                })
                .unwrap_or_default(),
        };
        let header_bytes = serde_json::to_vec(&header)
            .map_err(|e| TrainError::Checkpoint(format!("header encode: {e}")))?;
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        out.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
        out.write_all(&header_bytes)?;
        let mut write_array = |data: &[f64]| -> std::io::Result<()> {
            for v in data {
                out.write_all(&v.to_le_bytes())?;
            }
            Ok(())
        };
        for e in self.params.entries() {
            write_array(&e.data)?;
        }
        for m in &self.opt.m {
            write_array(m)?;
        }
        for v in &self.opt.v {
            write_array(v)?;
        }
        if let Some(snap) = &self.frozen_head {
            for e in snap.entries() {
                write_array(&e.data)?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let mut input = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(TrainError::Checkpoint(format!(
                "bad magic bytes in {}",
                path.display()
            )));
        }
        let mut v4 = [0u8; 4];
        input.read_exact(&mut v4)?;
        let version = u32::from_le_bytes(v4);
        if version != FORMAT_VERSION {
            return Err(TrainError::Checkpoint(format!(
                "unsupported checkpoint format version {version}"
            )));
        }
        let mut l8 = [0u8; 8];
        input.read_exact(&mut l8)?;
        let header_len = u64::from_le_bytes(l8) as usize;
        let mut header_bytes = vec![0u8; header_len];
        input.read_exact(&mut header_bytes)?;
        let header: Header = serde_json::from_slice(&header_bytes)
            .map_err(|e| TrainError::Checkpoint(format!("header decode: {e}")))?;

        let mut read_array = |len: usize| -> Result<Vec<f64>, TrainError> {
            let mut buf = vec![0u8; len * 8];
            input.read_exact(&mut buf)?;
            Ok(buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect())
        };
        let mut params = ParamStore::new();
        for meta in &header.params {
            let len = meta.shape.iter().product::<usize>();
            params.insert(meta.name.clone(), meta.shape.clone(), read_array(len)?);
        }
        let mut m = Vec::with_capacity(header.params.len());
        for meta in &header.params {
            m.push(read_array(meta.shape.iter().product())?);
        }
        let mut v = Vec::with_capacity(header.params.len());
        for meta in &header.params {
            v.push(read_array(meta.shape.iter().product())?);
        }
        let frozen_head = if header.frozen_head.is_empty() {
            None
        } else {
            let mut snap = ParamStore::new();
            for meta in &header.frozen_head {
                let len = meta.shape.iter().product::<usize>();
                snap.insert(meta.name.clone(), meta.shape.clone(), read_array(len)?);
            }
            Some(snap)
        };
        Ok(Checkpoint {
            config: header.config,
            step: header.step,
            params,
            opt: OptimState {
                m,
                v,
                step: header.optim_step,
                hyper: header.optim_hyper,
            },
            rng_seed: header.rng_seed,
            rng_word_pos: ((header.rng_word_pos_hi as u128) << 64)
                | header.rng_word_pos_lo as u128,
            sampler_state: header.sampler_state,
            frozen_head,
        })
    }
}

/// SHA-256 over the canonical JSON of a resolved config.
pub fn config_hash(config: &TrainConfig) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    let digest = Sha256::digest(json.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::tests::toy_train_config;

    #[test]
    fn save_load_roundtrip_is_bitwise() {
        let cfg = toy_train_config();
        let model = crate::model::Model::init(cfg.model.clone(), cfg.seed).unwrap();
        let opt = OptimState::new(&model.params, cfg.optim_hyper());
        let ckpt = Checkpoint {
            config: cfg,
            step: 17,
            params: model.params,
            opt,
            rng_seed: 42,
            rng_word_pos: (7u128 << 64) | 12345u128,
            sampler_state: vec![(2, 5)],
            frozen_head: None,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.step, 17);
        assert_eq!(back.rng_word_pos, ckpt.rng_word_pos);
        assert_eq!(back.sampler_state, ckpt.sampler_state);
        assert_eq!(back.config_hash(), ckpt.config_hash());
        for (a, b) in back.params.entries().iter().zip(ckpt.params.entries()) {
            assert_eq!(a.name, b.name);
            let bits_a: Vec<u64> = a.data.iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"NOTACKPTxxxxxxxxxxxx").unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(TrainError::Checkpoint(_))
        ));
    }
}
