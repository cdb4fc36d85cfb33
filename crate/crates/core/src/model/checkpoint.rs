//! Single-file checkpoints.
//!
//! ```text
//! b"TV2TVCKP" | u32 LE version | u64 LE header length | JSON header | tensor data
//! ```
//!
//! The header carries the model config, a list of `{name, shape, offset,
//! len}` tensor records (offsets in elements into the data section), the
//! element dtype, optional optimizer state metadata and free-form metadata.
//! Data is little-endian in the recorded dtype, so a save/load round trip
//! is bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, Params};
use crate::error::{Error, Result};
use crate::kernels::Float;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"TV2TVCKP";

/// Optimizer state stored next to the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<F> {
    /// Number of completed optimizer steps.
    pub step: usize,
    pub m: Vec<F>,
    pub v: Vec<F>,
    pub config: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct Checkpoint<F> {
    pub params: Params<F>,
    pub train: Option<TrainState<F>>,
    pub meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: String,
    model: ModelConfig,
    tensors: Vec<TensorRecord>,
    train: Option<TrainHeader>,
    meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct TrainHeader {
    step: usize,
    config: serde_json::Value,
}

fn put<F: Float>(out: &mut Vec<u8>, xs: &[F]) {
    for &x in xs {
        if F::DTYPE == "f32" {
            out.extend_from_slice(&(x.f64() as f32).to_le_bytes());
        } else {
            out.extend_from_slice(&x.f64().to_le_bytes());
        }
    }
}

pub fn save_checkpoint<F: Float>(path: &Path, ck: &Checkpoint<F>) -> Result<()> {
    let p = &ck.params;
    let mut tensors: Vec<TensorRecord> = p
        .index
        .entries
        .iter()
        .map(|e| TensorRecord {
            name: e.name.clone(),
            shape: e.shape.clone(),
            offset: e.offset,
            len: e.len,
        })
        .collect();
    let mut data = Vec::with_capacity(p.len() * 3 * std::mem::size_of::<F>());
    put(&mut data, &p.data);
    if let Some(t) = &ck.train {
        for (name, xs) in [("adam.m", &t.m), ("adam.v", &t.v)] {
            if xs.len() != p.len() {
                return Err(Error::Checkpoint(format!("{name} has {} values for {} parameters", xs.len(), p.len())));
            }
            tensors.push(TensorRecord {
                name: name.into(),
                shape: vec![xs.len()],
                offset: data.len() / std::mem::size_of::<F>(),
                len: xs.len(),
            });
            put(&mut data, xs);
        }
    }
    let header = Header {
        dtype: F::DTYPE.into(),
        model: p.cfg,
        tensors,
        train: ck.train.as_ref().map(|t| TrainHeader {
            step: t.step,
            config: t.config.clone(),
        }),
        meta: ck.meta.clone(),
    };
    let hjson = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(20 + hjson.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(hjson.len() as u64).to_le_bytes());
    out.extend_from_slice(&hjson);
    out.extend_from_slice(&data);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    // write-then-rename keeps a readable checkpoint on disk at all times
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, out).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<F: Float>(path: &Path) -> Result<Checkpoint<F>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: String| Error::format(path, m);
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("checkpoint version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let hend = 20usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated header".into()))?;
    let header: Header = serde_json::from_slice(&bytes[20..hend]).map_err(|e| bad(e.to_string()))?;
    header.model.validate()?;
    let width = match header.dtype.as_str() {
        "f32" => 4,
        "f64" => 8,
        other => return Err(bad(format!("unsupported dtype {other}"))),
    };
    let data = &bytes[hend..];
    let read = |rec: &TensorRecord| -> Result<Vec<F>> {
        let (s, e) = (rec.offset * width, (rec.offset + rec.len) * width);
        if e > data.len() {
            return Err(bad(format!("tensor {} runs past the end of the file", rec.name)));
        }
        Ok(data[s..e]
            .chunks_exact(width)
            .map(|c| {
                if width == 4 {
                    F::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                } else {
                    F::of(f64::from_le_bytes(c.try_into().expect("8 bytes")))
                }
            })
            .collect())
    };
    let mut params = Params::<F>::zeros(&header.model);
    let find = |name: &str| header.tensors.iter().find(|t| t.name == name);
    for e in params.index.clone().entries.iter() {
        let rec = find(&e.name).ok_or_else(|| bad(format!("missing tensor {}", e.name)))?;
        if rec.shape != e.shape {
            return Err(bad(format!("tensor {} has shape {:?}, expected {:?}", e.name, rec.shape, e.shape)));
        }
        params.data[e.range()].copy_from_slice(&read(rec)?);
    }
    let train = match header.train {
        Some(t) => {
            let m = read(find("adam.m").ok_or_else(|| bad("missing adam.m".into()))?)?;
            let v = read(find("adam.v").ok_or_else(|| bad("missing adam.v".into()))?)?;
            if m.len() != params.len() || v.len() != params.len() {
                return Err(bad("optimizer state size mismatch".into()));
            }
            Some(TrainState {
                step: t.step,
                m,
                v,
                config: t.config,
            })
        }
        None => None,
    };
    Ok(Checkpoint {
        params,
        train,
        meta: header.meta,
    })
}
