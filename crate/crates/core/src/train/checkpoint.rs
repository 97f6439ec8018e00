//! Single-file named-tensor checkpoint: an 8-byte little-endian header
//! length, a JSON header mapping tensor names to dtype/shape/offset, then
//! raw little-endian f64 data. The header also carries the model config,
//! format version, code version, step counter, and run metadata, so a run
//! can resume bit-exactly from the file alone plus the corpus.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::params::ParamSet;
use crate::model::ModelConfig;
use crate::tensor::Tensor;
use crate::train::adamw::OptimState;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorInfo {
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
    /// Number of f64 elements.
    len: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    decay: Option<bool>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    code_version: String,
    config: ModelConfig,
    step: usize,
    seed: u64,
    /// Free-form run metadata (train config, corpus path, flags).
    extra: serde_json::Value,
    /// Parameter creation order; optimizer moments are keyed by name.
    param_order: Vec<String>,
    has_optimizer: bool,
    tensors: BTreeMap<String, TensorInfo>,
}

/// In-memory checkpoint contents.
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub opt: Option<OptimState>,
    pub step: usize,
    pub seed: u64,
    pub code_version: String,
    pub extra: serde_json::Value,
}

pub fn save_checkpoint(
    path: &Path,
    config: &ModelConfig,
    params: &ParamSet,
    opt: Option<&OptimState>,
    step: usize,
    seed: u64,
    extra: serde_json::Value,
) -> Result<()> {
    let mut tensors = BTreeMap::new();
    let mut data: Vec<u8> = Vec::new();
    let push = |name: String, t: &Tensor, decay: Option<bool>, tensors: &mut BTreeMap<String, TensorInfo>, data: &mut Vec<u8>| {
        let offset = data.len() as u64;
        for v in t.data() {
            data.extend_from_slice(&v.to_le_bytes());
        }
        tensors.insert(
            name,
            TensorInfo {
                dtype: "f64".into(),
                shape: t.shape().to_vec(),
                offset,
                len: t.numel() as u64,
                decay,
            },
        );
    };

    let mut param_order = Vec::with_capacity(params.len());
    for (_, entry) in params.iter() {
        param_order.push(entry.name.clone());
        push(entry.name.clone(), &entry.tensor, Some(entry.decay), &mut tensors, &mut data);
    }
    if let Some(opt) = opt {
        for (pid, entry) in params.iter() {
            push(format!("opt.m.{}", entry.name), &opt.m[pid], None, &mut tensors, &mut data);
            push(format!("opt.v.{}", entry.name), &opt.v[pid], None, &mut tensors, &mut data);
        }
    }

    let header = Header {
        format_version: FORMAT_VERSION,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        step,
        seed,
        extra,
        param_order,
        has_optimizer: opt.is_some(),
        tensors,
    };
    let header_bytes = serde_json::to_vec(&header)?;

    let mut out = Vec::with_capacity(8 + header_bytes.len() + data.len());
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    out.extend_from_slice(&data);
    fs::write(path, out).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut len_bytes = [0u8; 8];
    file.read_exact(&mut len_bytes)
        .map_err(|e| Error::io(path, e))?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    file.read_exact(&mut header_bytes)
        .map_err(|e| Error::io(path, e))?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {}",
            header.format_version
        )));
    }
    let mut data = Vec::new();
    file.read_to_end(&mut data).map_err(|e| Error::io(path, e))?;

    let read_tensor = |info: &TensorInfo| -> Result<Tensor> {
        if info.dtype != "f64" {
            return Err(Error::Checkpoint(format!("unsupported dtype {}", info.dtype)));
        }
        let start = info.offset as usize;
        let end = start + info.len as usize * 8;
        if end > data.len() {
            return Err(Error::Checkpoint("tensor data out of bounds".into()));
        }
        let values: Vec<f64> = data[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Tensor::from_vec(&info.shape, values))
    };

    let mut params = ParamSet::new();
    for name in &header.param_order {
        let info = header
            .tensors
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        params.add(name, read_tensor(info)?, info.decay.unwrap_or(true));
    }

    let opt = if header.has_optimizer {
        let mut m = Vec::with_capacity(params.len());
        let mut v = Vec::with_capacity(params.len());
        for name in &header.param_order {
            let mi = header
                .tensors
                .get(&format!("opt.m.{name}"))
                .ok_or_else(|| Error::Checkpoint(format!("missing moment opt.m.{name}")))?;
            let vi = header
                .tensors
                .get(&format!("opt.v.{name}"))
                .ok_or_else(|| Error::Checkpoint(format!("missing moment opt.v.{name}")))?;
            m.push(read_tensor(mi)?);
            v.push(read_tensor(vi)?);
        }
        Some(OptimState {
            m,
            v,
            step: header.step,
        })
    } else {
        None
    };

    Ok(Checkpoint {
        config: header.config,
        params,
        opt,
        step: header.step,
        seed: header.seed,
        code_version: header.code_version,
        extra: header.extra,
    })
}

/// SHA-256 of a serialized config, for provenance fields in reports.
pub fn config_hash(config: &ModelConfig) -> String {
    let json = serde_json::to_vec(config).expect("config serializes");
    hex_digest(&json)
}

/// SHA-256 of a file's bytes.
pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex_digest(&bytes))
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::ModelParams;
    use crate::seeds;

    #[test]
    fn round_trip_is_bitwise_identical() {
        let cfg = ModelConfig::tiny();
        let mut pset = ParamSet::new();
        ModelParams::create(&mut pset, &cfg, &mut seeds::rng(3));
        let mut opt = OptimState::new(&pset);
        opt.step = 17;
        opt.m[0].data_mut()[0] = 0.125;
        opt.v[2].data_mut()[1] = -3.5e-17;

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(
            &path,
            &cfg,
            &pset,
            Some(&opt),
            17,
            42,
            serde_json::json!({"note": "test"}),
        )
        .unwrap();

        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.step, 17);
        assert_eq!(ck.seed, 42);
        assert_eq!(ck.config, cfg);
        assert_eq!(ck.params.len(), pset.len());
        for (pid, entry) in pset.iter() {
            assert_eq!(ck.params.entry(pid).name, entry.name);
            assert_eq!(ck.params.entry(pid).decay, entry.decay);
            assert_eq!(ck.params.get(pid), &entry.tensor, "tensor {}", entry.name);
        }
        let lop = ck.opt.unwrap();
        assert_eq!(lop.step, 17);
        assert_eq!(lop.m[0].data()[0], 0.125);
        assert_eq!(lop.v[2].data()[1], -3.5e-17);
    }

    #[test]
    fn checkpoint_without_optimizer_loads() {
        let cfg = ModelConfig::tiny();
        let mut pset = ParamSet::new();
        ModelParams::create(&mut pset, &cfg, &mut seeds::rng(4));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &cfg, &pset, None, 0, 1, serde_json::Value::Null).unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert!(ck.opt.is_none());
        assert_eq!(ck.params.total_elements(), pset.total_elements());
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        fs::write(&path, [1, 2, 3]).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let a = config_hash(&ModelConfig::tiny());
        let b = config_hash(&ModelConfig::tiny());
        let mut other = ModelConfig::tiny();
        other.hidden = 16;
        let c = config_hash(&other);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 64);
    }
}
