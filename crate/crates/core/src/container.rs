//! Versioned binary model container.
//!
//! ```text
//! magic      8 bytes  "CSOFCMDL"
//! version    u32 LE
//! header_len u64 LE
//! header     UTF-8 JSON {config, meta, params: [{name, shape, offset}]}
//! data       little-endian f64 values; `offset` is in bytes from here
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{AnyModel, ModelConfig};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"CSOFCMDL";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    #[serde(default)]
    meta: serde_json::Value,
    params: Vec<ManifestEntry>,
}

/// Serializes `model` with free-form metadata (digests, normalization).
pub fn to_bytes<T: Scalar>(model: &AnyModel<T>, meta: &serde_json::Value) -> Result<Vec<u8>> {
    let mut params = Vec::new();
    let mut data = Vec::new();
    if let Some(store) = model.params() {
        for (_, name, t) in store.iter() {
            params.push(ManifestEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                offset: data.len() as u64,
            });
            for v in t.values() {
                data.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
            }
        }
    }
    let header = serde_json::to_vec(&Header {
        config: model.config(),
        meta: meta.clone(),
        params,
    })?;
    let mut out = Vec::with_capacity(20 + header.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&data);
    Ok(out)
}

pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<(AnyModel<T>, serde_json::Value)> {
    let bad = |m: String| Error::Container(m);
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a model container (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(format!("unsupported container version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let header_end = 20usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated header".into()))?;
    let header: Header = serde_json::from_slice(&bytes[20..header_end])?;
    let data = &bytes[header_end..];
    let mut model = AnyModel::<T>::new(header.config)?;
    let expected = model.params().map_or(0, |p| p.len());
    if header.params.len() != expected {
        return Err(bad(format!(
            "manifest lists {} tensors, config expects {expected}",
            header.params.len()
        )));
    }
    if let Some(store) = model.params_mut() {
        for entry in &header.params {
            let id = store
                .id(&entry.name)
                .ok_or_else(|| bad(format!("unexpected tensor {:?}", entry.name)))?;
            let t = store.get_mut(id);
            if t.shape() != entry.shape.as_slice() {
                return Err(bad(format!(
                    "tensor {:?} has shape {:?}, config expects {:?}",
                    entry.name,
                    entry.shape,
                    t.shape()
                )));
            }
            let start = entry.offset as usize;
            let end = start + 8 * t.len();
            if end > data.len() {
                return Err(bad(format!("tensor {:?} runs past end of data", entry.name)));
            }
            for (v, chunk) in t.values_mut().iter_mut().zip(data[start..end].chunks_exact(8)) {
                *v = T::lit(f64::from_le_bytes(chunk.try_into().expect("8 bytes")));
            }
        }
    }
    Ok((model, header.meta))
}

/// Writes the container and returns its size in bytes.
pub fn save<T: Scalar>(path: &Path, model: &AnyModel<T>, meta: &serde_json::Value) -> Result<u64> {
    let bytes = to_bytes(model, meta)?;
    std::fs::write(path, &bytes)?;
    Ok(bytes.len() as u64)
}

pub fn load<T: Scalar>(path: &Path) -> Result<(AnyModel<T>, serde_json::Value)> {
    from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::nhits::NHitsConfig;

    fn small() -> AnyModel<f64> {
        let mut cfg = NHitsConfig::new(8, 3, 1);
        cfg.hidden_size = 4;
        cfg.n_stacks = 2;
        cfg.pooling_sizes = vec![1, 2];
        cfg.downsample_ratios = vec![1, 2];
        cfg.seed = 9;
        AnyModel::new(ModelConfig::Nhits(cfg)).unwrap()
    }

    #[test]
    fn round_trip_preserves_parameters() {
        let m = small();
        let meta = serde_json::json!({"config_digest": "abc"});
        let bytes = to_bytes(&m, &meta).unwrap();
        let (back, meta2): (AnyModel<f64>, _) = from_bytes(&bytes).unwrap();
        assert_eq!(meta, meta2);
        assert_eq!(m.params().unwrap().flat_values(), back.params().unwrap().flat_values());
        assert_eq!(m.config(), back.config());
    }

    #[test]
    fn size_counts_header_and_data() {
        let m = small();
        let bytes = to_bytes(&m, &serde_json::Value::Null).unwrap();
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        assert_eq!(bytes.len(), 20 + hlen + 8 * m.params().unwrap().num_scalars());
    }

    #[test]
    fn corrupt_input_is_rejected() {
        assert!(from_bytes::<f64>(b"nope").is_err());
        let mut bytes = to_bytes(&small(), &serde_json::Value::Null).unwrap();
        bytes.truncate(bytes.len() - 8);
        assert!(from_bytes::<f64>(&bytes).is_err());
    }
}
