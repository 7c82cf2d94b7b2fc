//! Checkpoint files (`.ckpt`): named f32 tensors plus the configuration
//! they were trained with.
//!
//! ```text
//! "HVCK" | version u32 | header_len u64 | header JSON | tensor payloads
//! ```
//!
//! The header maps each tensor name to its shape, dtype and byte offset
//! within the payload section; payloads are row-major little-endian f32.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::neural::Tensor;
use crate::restoration::{NetworkSpec, StepWeights};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HVCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub weights: StepWeights,
    pub train: Option<TrainConfig>,
    /// Digest of the step-1 tensors when step-2 training started.
    pub step1_frozen_hash: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    network: NetworkSpec,
    #[serde(default)]
    train: Option<TrainConfig>,
    #[serde(default)]
    step1_frozen_hash: Option<String>,
    tensors: BTreeMap<String, TensorEntry>,
}

impl Checkpoint {
    pub fn new(weights: StepWeights) -> Self {
        Checkpoint {
            weights,
            train: None,
            step1_frozen_hash: None,
        }
    }

    pub fn spec(&self) -> &NetworkSpec {
        self.weights.spec()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = BTreeMap::new();
        let mut offset = 0u64;
        for (name, t) in self.weights.tensors() {
            tensors.insert(
                name.clone(),
                TensorEntry {
                    shape: t.shape().to_vec(),
                    dtype: "f32".into(),
                    offset,
                },
            );
            offset += 4 * t.len() as u64;
        }
        let header = serde_json::to_vec(&Header {
            network: self.spec().clone(),
            train: self.train.clone(),
            step1_frozen_hash: self.step1_frozen_hash.clone(),
            tensors,
        })?;
        let mut out = Vec::with_capacity(16 + header.len() + offset as usize);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in self.weights.tensors().values() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::format("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(format!("unsupported checkpoint version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let header_end = usize::try_from(header_len)
            .ok()
            .and_then(|l| l.checked_add(16))
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::format("truncated checkpoint header"))?;
        let header: Header = serde_json::from_slice(&bytes[16..header_end])?;
        let payload = &bytes[header_end..];
        let mut tensors = BTreeMap::new();
        for (name, entry) in header.tensors {
            if entry.dtype != "f32" {
                return Err(Error::format(format!("tensor {name} has unsupported dtype {}", entry.dtype)));
            }
            let shape: [usize; 4] = entry
                .shape
                .as_slice()
                .try_into()
                .map_err(|_| Error::format(format!("tensor {name} is not 4-D")))?;
            let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let range = len
                .and_then(|l| l.checked_mul(4))
                .and_then(|bytes_len| {
                    let start = usize::try_from(entry.offset).ok()?;
                    Some((start, start.checked_add(bytes_len)?))
                })
                .filter(|&(_, end)| end <= payload.len())
                .ok_or_else(|| Error::format(format!("payload of tensor {name} is truncated")))?;
            let data = payload[range.0..range.1]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.insert(name, Tensor::from_vec(shape, data)?);
        }
        let weights = StepWeights::from_tensors(&header.network, tensors)
            .map_err(|e| Error::format(format!("checkpoint tensors do not match its own spec: {e}")))?;
        Ok(Checkpoint {
            weights,
            train: header.train,
            step1_frozen_hash: header.step1_frozen_hash,
        })
    }

    /// Writes atomically: a temporary file in the target directory is
    /// renamed over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let dir = match path.parent() {
            Some(d) if !d.as_os_str().is_empty() => d,
            _ => Path::new("."),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(&bytes)?;
        tmp.as_file().sync_all()?;
        tmp.persist(path).map_err(|e| Error::Io(e.error))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Loads a checkpoint and insists it was built for `spec`.
    pub fn load_for(path: &Path, spec: &NetworkSpec) -> Result<Self> {
        let ck = Self::load(path)?;
        if ck.spec() != spec {
            return Err(Error::validation(format!(
                "checkpoint network {:?} does not match the requested {:?}",
                ck.spec(),
                spec
            )));
        }
        Ok(ck)
    }

    /// SHA-256 of the serialized checkpoint.
    pub fn file_hash(&self) -> Result<String> {
        Ok(format!("{:x}", Sha256::digest(self.to_bytes()?)))
    }

    /// True when the step-1 tensors still match the recorded freeze digest.
    pub fn freeze_holds(&self) -> Option<bool> {
        self.step1_frozen_hash.as_ref().map(|h| *h == self.weights.step1_digest())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut ck = Checkpoint::new(StepWeights::init(&NetworkSpec::desk(), 4).unwrap());
        ck.train = Some(TrainConfig::desk());
        ck.step1_frozen_hash = Some(ck.weights.step1_digest());
        ck
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        for (name, t) in ck.weights.tensors() {
            let b = back.weights.get(name).unwrap();
            assert!(t.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(back.freeze_holds(), Some(true));
    }

    #[test]
    fn truncated_file_is_format_error() {
        let bytes = sample().to_bytes().unwrap();
        for cut in [3, 15, 40, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Format(_))), "cut {cut}");
        }
    }

    #[test]
    fn spec_mismatch_is_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        sample().save(&path).unwrap();
        let wide = NetworkSpec {
            channels: 64,
            ..NetworkSpec::desk()
        };
        assert!(matches!(Checkpoint::load_for(&path, &wide), Err(Error::Validation(_))));
        assert!(Checkpoint::load_for(&path, &NetworkSpec::desk()).is_ok());
    }
}
