//! Single-file model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! | offset | size | content                                   |
//! |--------|------|-------------------------------------------|
//! | 0      | 8    | magic `THERMODA`                          |
//! | 8      | 4    | format version (`u32`)                    |
//! | 12     | 4    | reserved, zero                            |
//! | 16     | 8    | manifest length `m` in bytes (`u64`)      |
//! | 24     | m    | UTF-8 JSON manifest                       |
//! | 24 + m | 8·n  | `n` parameters as `f64`, in block order   |
//!
//! The manifest records the model shape, the normalization statistics of
//! the training domain, the block index, training provenance and a SHA-256
//! of the payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thermoda_core::params::BLOCK_NAMES;
use thermoda_core::{ModelShape, NormStats, Seq2SeqParams};

use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const MAGIC: [u8; 8] = *b"THERMODA";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

#[derive(Debug, PartialEq, Eq, thiserror::Error)]
pub enum CheckpointError {
    #[error("corrupt checkpoint: file is truncated ({actual} bytes, at least {needed} expected)")]
    Truncated { needed: usize, actual: usize },
    #[error("corrupt checkpoint: bad magic bytes, not a checkpoint file")]
    BadMagic,
    #[error(
        "unsupported checkpoint format version {found} (this build reads version {supported})"
    )]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("corrupt checkpoint: unreadable manifest: {0}")]
    Manifest(String),
    #[error("checkpoint integrity check failed: {0}")]
    Integrity(String),
}

/// How a checkpoint was produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    /// SHA-256 of the resolved run configuration.
    pub config_digest: String,
    pub epochs: usize,
    pub final_loss: Option<f64>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: Seq2SeqParams,
    /// Normalization of the domain the parameters were trained on.
    pub norm: NormStats,
    pub feature_names: Vec<String>,
    pub target_names: Vec<String>,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockEntry {
    name: String,
    rows: usize,
    cols: usize,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    shape: ModelShape,
    feature_names: Vec<String>,
    target_names: Vec<String>,
    norm: NormStats,
    provenance: Provenance,
    blocks: Vec<BlockEntry>,
    payload_values: usize,
    payload_sha256: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Checkpoint {
    pub fn shape(&self) -> &ModelShape {
        self.params.shape()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let flat = self.params.flatten();
        let payload: Vec<u8> = flat.iter().flat_map(|v| v.to_le_bytes()).collect();
        let mut offset = 0;
        let blocks = BLOCK_NAMES
            .iter()
            .zip(self.params.blocks())
            .map(|(name, m)| {
                let entry = BlockEntry {
                    name: name.to_string(),
                    rows: m.rows(),
                    cols: m.cols(),
                    offset,
                };
                offset += m.len();
                entry
            })
            .collect();
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            shape: *self.shape(),
            feature_names: self.feature_names.clone(),
            target_names: self.target_names.clone(),
            norm: self.norm.clone(),
            provenance: self.provenance.clone(),
            blocks,
            payload_values: flat.len(),
            payload_sha256: sha256_hex(&payload),
        };
        let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(HEADER_LEN + 8 + json.len() + payload.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let need = |needed: usize| {
            if bytes.len() < needed {
                Err(CheckpointError::Truncated {
                    needed,
                    actual: bytes.len(),
                })
            } else {
                Ok(())
            }
        };
        need(MAGIC.len())?;
        if bytes[..8] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        need(HEADER_LEN + 8)?;
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        let manifest_len = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes"));
        let manifest_end = usize::try_from(manifest_len)
            .ok()
            .and_then(|m| m.checked_add(HEADER_LEN + 8))
            .ok_or_else(|| {
                CheckpointError::Manifest(format!("manifest length {manifest_len} is implausible"))
            })?;
        need(manifest_end)?;
        let manifest: Manifest = serde_json::from_slice(&bytes[HEADER_LEN + 8..manifest_end])
            .map_err(|e| CheckpointError::Manifest(e.to_string()))?;
        let bad = |msg: String| Err(CheckpointError::Integrity(msg));
        if manifest.format_version != version {
            return bad(format!(
                "manifest version {} disagrees with header version {version}",
                manifest.format_version
            ));
        }

        let payload_len = manifest
            .payload_values
            .checked_mul(8)
            .ok_or_else(|| CheckpointError::Integrity("payload size overflows".into()))?;
        need(manifest_end + payload_len)?;
        let payload = &bytes[manifest_end..];
        if payload.len() != payload_len {
            return bad(format!(
                "payload has {} trailing bytes beyond the {} declared values",
                payload.len() - payload_len,
                manifest.payload_values
            ));
        }
        if sha256_hex(payload) != manifest.payload_sha256 {
            return bad("payload checksum mismatch".into());
        }

        let shape = manifest.shape;
        shape
            .validate()
            .map_err(|e| CheckpointError::Integrity(format!("declared shape: {e}")))?;
        let expected = Seq2SeqParams::zeros(&shape);
        if manifest.blocks.len() != BLOCK_NAMES.len() {
            return bad(format!(
                "expected {} parameter blocks, manifest lists {}",
                BLOCK_NAMES.len(),
                manifest.blocks.len()
            ));
        }
        let mut offset = 0;
        for ((entry, name), m) in manifest
            .blocks
            .iter()
            .zip(BLOCK_NAMES)
            .zip(expected.blocks())
        {
            if entry.name != name {
                return bad(format!(
                    "block `{}` found where `{name}` was expected",
                    entry.name
                ));
            }
            if (entry.rows, entry.cols) != (m.rows(), m.cols()) {
                return bad(format!(
                    "block `{name}` is {}x{} but the declared shape implies {}x{}",
                    entry.rows,
                    entry.cols,
                    m.rows(),
                    m.cols()
                ));
            }
            if entry.offset != offset {
                return bad(format!(
                    "block `{name}` starts at {} instead of {offset}",
                    entry.offset
                ));
            }
            offset += m.len();
        }
        if offset != manifest.payload_values {
            return bad(format!(
                "declared shape needs {offset} values, payload holds {}",
                manifest.payload_values
            ));
        }
        let n = manifest.norm.names.len();
        if manifest.norm.mean.len() != n
            || manifest.norm.std.len() != n
            || manifest.norm.constant.len() != n
        {
            return bad("normalization statistics have inconsistent lengths".into());
        }
        if manifest.feature_names.len() != shape.input_dim
            || manifest.target_names.len() != shape.output_dim
        {
            return bad(format!(
                "{} feature and {} target names for a {}-input, {}-output model",
                manifest.feature_names.len(),
                manifest.target_names.len(),
                shape.input_dim,
                shape.output_dim
            ));
        }

        let flat: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let params = Seq2SeqParams::unflatten(&shape, &flat)
            .map_err(|e| CheckpointError::Integrity(e.to_string()))?;
        Ok(Checkpoint {
            params,
            norm: manifest.norm,
            feature_names: manifest.feature_names,
            target_names: manifest.target_names,
            provenance: manifest.provenance,
        })
    }

    /// Writes the checkpoint atomically.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
            .map_err(|e| Error::from(e).context(path.display().to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use thermoda_core::init_params;

    fn sample() -> Checkpoint {
        let shape = ModelShape::new(2, 1, 3, 4, 2).unwrap();
        Checkpoint {
            params: init_params(&shape, 7).unwrap(),
            norm: NormStats {
                names: vec!["a".into(), "b".into(), "y".into()],
                mean: vec![0.1, -3.25, 20.0 / 3.0],
                std: vec![1.0, 0.3, 1e-7],
                constant: vec![true, false, false],
            },
            feature_names: vec!["a".into(), "b".into()],
            target_names: vec!["y".into()],
            provenance: Provenance {
                config_digest: "00".into(),
                epochs: 3,
                final_loss: Some(0.123456789012345),
                seed: 42,
            },
        }
    }

    #[test]
    fn bytes_round_trip() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn every_truncation_is_rejected() {
        let bytes = sample().to_bytes();
        for len in 0..bytes.len() {
            assert!(
                Checkpoint::from_bytes(&bytes[..len]).is_err(),
                "length {len}"
            );
        }
    }

    #[test]
    fn header_checks() {
        let mut bytes = sample().to_bytes();
        bytes[8] = 9;
        assert_eq!(
            Checkpoint::from_bytes(&bytes).unwrap_err(),
            CheckpointError::UnsupportedVersion {
                found: 9,
                supported: 1
            }
        );
        bytes[0] = b'X';
        assert_eq!(
            Checkpoint::from_bytes(&bytes).unwrap_err(),
            CheckpointError::BadMagic
        );
    }

    #[test]
    fn flipped_payload_bit_is_detected() {
        let mut bytes = sample().to_bytes();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(CheckpointError::Integrity(_))
        ));
    }
}
