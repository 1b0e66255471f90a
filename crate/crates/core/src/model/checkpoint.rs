//! Binary checkpoint format.
//!
//! ```text
//! "WMTC"  u32 LE version  u64 LE header length  JSON header  tensor blobs
//! ```
//!
//! Blobs are little-endian and laid out in header index order. 64-bit
//! storage round-trips bit-exactly; 32-bit storage halves the file and
//! rounds every value to the nearest `f32`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use super::network::WoundModel;
use super::ModelError;
use crate::autodiff::ParamStore;
use crate::tensor::NdArray;

pub const MAGIC: &[u8; 4] = b"WMTC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StorageDtype {
    #[default]
    F64,
    F32,
}

impl StorageDtype {
    fn width(self) -> usize {
        match self {
            StorageDtype::F64 => 8,
            StorageDtype::F32 => 4,
        }
    }
}

/// Pixel scaling applied before the network: `(v / 255 - mean) / std`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub scale: f64,
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization {
            scale: 1.0 / 255.0,
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    /// Byte offset from the start of the blob section.
    pub offset: u64,
    pub shape: Vec<usize>,
    pub dtype: StorageDtype,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model_version: String,
    pub config: ModelConfig,
    pub task_names: Vec<String>,
    pub thresholds: Vec<f64>,
    pub normalization: Normalization,
    pub params: Vec<TensorEntry>,
}

/// A model plus the metadata needed to serve it.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: WoundModel,
    pub thresholds: Vec<f64>,
    pub model_version: String,
}

fn param_digest(store: &ParamStore) -> String {
    let mut h = Sha256::new();
    for p in store.iter() {
        h.update(p.name.as_bytes());
        for v in p.value.data() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(&h.finalize()[..6])
}

impl Checkpoint {
    /// Wraps `model` with a 0.5 threshold per task. The version string
    /// embeds a digest of the parameter values.
    pub fn new(model: WoundModel) -> Self {
        let thresholds = vec![0.5; model.config().num_tasks];
        let model_version = format!(
            "woundnet-{}+{}",
            env!("CARGO_PKG_VERSION"),
            param_digest(model.params())
        );
        Checkpoint {
            model,
            thresholds,
            model_version,
        }
    }

    pub fn with_thresholds(mut self, thresholds: Vec<f64>) -> Result<Self, ModelError> {
        if thresholds.len() != self.model.config().num_tasks {
            return Err(ModelError::Checkpoint(format!(
                "{} thresholds for {} tasks",
                thresholds.len(),
                self.model.config().num_tasks
            )));
        }
        if thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(ModelError::Checkpoint("thresholds must lie in [0, 1]".into()));
        }
        self.thresholds = thresholds;
        Ok(self)
    }

    pub fn task_names(&self) -> &[String] {
        &self.model.config().task_names
    }

    pub fn to_bytes(&self, dtype: StorageDtype) -> Vec<u8> {
        let store = self.model.params();
        let mut offset = 0u64;
        let params = store
            .iter()
            .map(|p| {
                let e = TensorEntry {
                    name: p.name.clone(),
                    offset,
                    shape: p.value.shape().to_vec(),
                    dtype,
                    trainable: p.trainable,
                };
                offset += (p.value.len() * dtype.width()) as u64;
                e
            })
            .collect();
        let header = CheckpointHeader {
            model_version: self.model_version.clone(),
            config: self.model.config().clone(),
            task_names: self.task_names().to_vec(),
            thresholds: self.thresholds.clone(),
            normalization: Normalization::default(),
            params,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for p in store.iter() {
            for &v in p.value.data() {
                match dtype {
                    StorageDtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
                    StorageDtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let bad = |m: String| ModelError::Checkpoint(m);
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad("not a woundnet checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let blobs_start = 16usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated header".into()))?;
        let header: CheckpointHeader =
            serde_json::from_slice(&bytes[16..blobs_start]).map_err(|e| bad(format!("header: {e}")))?;
        header.config.validate()?;
        if header.task_names != header.config.task_names || header.thresholds.len() != header.task_names.len() {
            return Err(bad("task names and thresholds disagree with the model config".into()));
        }
        let blobs = &bytes[blobs_start..];
        let mut store = ParamStore::new();
        for e in &header.params {
            let n: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let end = start
                .checked_add(n * e.dtype.width())
                .filter(|&end| end <= blobs.len())
                .ok_or_else(|| bad(format!("tensor `{}` runs past the end of the file", e.name)))?;
            let raw = &blobs[start..end];
            let data: Vec<f64> = match e.dtype {
                StorageDtype::F64 => raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
                StorageDtype::F32 => raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect(),
            };
            let value =
                NdArray::new(e.shape.clone(), data).map_err(|err| bad(format!("tensor `{}`: {err}", e.name)))?;
            if !value.is_finite() {
                return Err(bad(format!("tensor `{}` holds non-finite values", e.name)));
            }
            store
                .register(e.name.clone(), value, e.trainable)
                .map_err(|err| bad(err.to_string()))?;
        }
        let model = WoundModel::from_parts(header.config, store)?;
        Ok(Checkpoint {
            model,
            thresholds: header.thresholds,
            model_version: header.model_version,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>, dtype: StorageDtype) -> Result<(), ModelError> {
        std::fs::write(path, self.to_bytes(dtype))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> WoundModel {
        WoundModel::new(
            ModelConfig {
                input_size: 16,
                stage_channels: vec![4, 8],
                classifier_hidden: 6,
                ..ModelConfig::default()
            },
            3,
        )
        .unwrap()
    }

    #[test]
    fn f64_round_trip_is_bit_exact() {
        let ck = Checkpoint::new(small())
            .with_thresholds(vec![0.5, 0.4, 0.3, 0.2, 0.1])
            .unwrap();
        let back = Checkpoint::from_bytes(&ck.to_bytes(StorageDtype::F64)).unwrap();
        assert_eq!(back.thresholds, ck.thresholds);
        assert_eq!(back.model_version, ck.model_version);
        for (a, b) in ck.model.params().iter().zip(back.model.params().iter()) {
            assert_eq!(a.name, b.name);
            let bits = |p: &crate::autodiff::Parameter| p.value.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn f32_round_trip_is_close() {
        let ck = Checkpoint::new(small());
        let bytes = ck.to_bytes(StorageDtype::F32);
        assert!(bytes.len() < ck.to_bytes(StorageDtype::F64).len());
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        for (a, b) in ck.model.params().iter().zip(back.model.params().iter()) {
            assert!(a.value.rel_diff(&b.value) < 1e-6);
        }
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = Checkpoint::new(small()).to_bytes(StorageDtype::F64);
        assert!(Checkpoint::from_bytes(b"nope").is_err());
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 8]).is_err());
        let mut wrong = bytes.clone();
        wrong[4] = 9;
        assert!(Checkpoint::from_bytes(&wrong).is_err());
    }
}
