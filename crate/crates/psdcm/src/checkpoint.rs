//! Binary checkpoints.
//!
//! Layout: magic `CTWK`, `u32` format version, `u64` header length, a JSON
//! header, then every parameter array followed by the Adam first and second
//! moments, all as little-endian `f64` in header order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelConfig, ModelError, Param, PsDcmModel};
use crate::optim::AdamState;

const MAGIC: &[u8; 4] = b"CTWK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("checkpoint is truncated")]
    Truncated,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{what} hash {got} does not match expected {expected}")]
    HashMismatch {
        what: &'static str,
        expected: String,
        got: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ParamShape {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config_hash: String,
    preprocessing_hash: String,
    iteration: u64,
    /// Producing configuration, stored verbatim.
    config: serde_json::Value,
    model: ModelConfig,
    params: Vec<ParamShape>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Hash of the configuration that produced the checkpoint.
    pub config_hash: String,
    pub preprocessing_hash: String,
    pub config: serde_json::Value,
    pub model: PsDcmModel,
    pub state: AdamState,
}

impl Checkpoint {
    pub fn iteration(&self) -> u64 {
        self.state.step
    }

    pub fn check_preprocessing(&self, hash: &str) -> Result<(), CheckpointError> {
        if self.preprocessing_hash != hash {
            return Err(CheckpointError::HashMismatch {
                what: "preprocessing",
                expected: self.preprocessing_hash.clone(),
                got: hash.to_string(),
            });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CheckpointError> {
        let header = Header {
            config_hash: self.config_hash.clone(),
            preprocessing_hash: self.preprocessing_hash.clone(),
            iteration: self.state.step,
            config: self.config.clone(),
            model: self.model.config.clone(),
            params: self
                .model
                .params
                .iter()
                .map(|p| ParamShape {
                    name: p.name.clone(),
                    rows: p.rows,
                    cols: p.cols,
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(json.len() + 24 * self.model.n_parameters() + 16);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let arrays = self
            .model
            .params
            .iter()
            .map(|p| &p.values)
            .chain(&self.state.m)
            .chain(&self.state.v);
        for a in arrays {
            for x in a {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| CheckpointError::BadMagic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)
            .map_err(|_| CheckpointError::Truncated)?;
        let version = u32::from_le_bytes(word);
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)
            .map_err(|_| CheckpointError::Truncated)?;
        let len = u64::from_le_bytes(len) as usize;
        if r.len() < len {
            return Err(CheckpointError::Truncated);
        }
        let header: Header = serde_json::from_slice(&r[..len])?;
        r = &r[len..];
        let mut read_array = |n: usize| -> Result<Vec<f64>, CheckpointError> {
            if r.len() < 8 * n {
                return Err(CheckpointError::Truncated);
            }
            let (head, rest) = r.split_at(8 * n);
            r = rest;
            Ok(head
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect())
        };
        let mut params = Vec::with_capacity(header.params.len());
        for s in &header.params {
            params.push(Param {
                name: s.name.clone(),
                rows: s.rows,
                cols: s.cols,
                values: read_array(s.rows * s.cols)?,
            });
        }
        let sizes: Vec<usize> = header.params.iter().map(|s| s.rows * s.cols).collect();
        let m = sizes
            .iter()
            .map(|&n| read_array(n))
            .collect::<Result<Vec<_>, _>>()?;
        let v = sizes
            .iter()
            .map(|&n| read_array(n))
            .collect::<Result<Vec<_>, _>>()?;
        if !r.is_empty() {
            return Err(CheckpointError::Truncated);
        }
        Ok(Checkpoint {
            config_hash: header.config_hash,
            preprocessing_hash: header.preprocessing_hash,
            config: header.config,
            model: PsDcmModel::from_params(header.model, params)?,
            state: AdamState {
                step: header.iteration,
                m,
                v,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Checkpoint::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Checkpoint {
        let cfg = ModelConfig {
            n_points: 16,
            n_coarse: 8,
            n_dense: 16,
            latent: 4,
            hidden: [8, 6],
            seed: 2,
        };
        let model = PsDcmModel::new(cfg).unwrap();
        let mut state = AdamState::new(model.params.iter().map(|p| p.values.len()));
        state.step = 17;
        state.m[0][0] = 0.25;
        state.v[1][0] = -1.5e-300;
        Checkpoint {
            config_hash: "abc".into(),
            preprocessing_hash: "def".into(),
            config: serde_json::json!({"epochs": 3}),
            model,
            state,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let c = small();
        let back = Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.iteration(), 17);
    }

    #[test]
    fn rejects_damage() {
        let bytes = small().to_bytes().unwrap();
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 3]),
            Err(CheckpointError::Truncated)
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            Checkpoint::from_bytes(&bad),
            Err(CheckpointError::BadMagic)
        ));
        let mut bad = bytes;
        bad[4] = 9;
        assert!(matches!(
            Checkpoint::from_bytes(&bad),
            Err(CheckpointError::Version(9))
        ));
    }
}
