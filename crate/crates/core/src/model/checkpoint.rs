//! Checkpoint container.
//!
//! ```text
//! magic    8 bytes  "HATTNCKP"
//! version  u32 LE   1
//! hdr_len  u64 LE
//! header   JSON     {"dtype", "config", "pattern", "pattern_text", "tensors": [{name, shape, offset}], "meta"?}
//! data     little-endian elements of every tensor, in header order
//! ```
//!
//! Offsets count elements from the start of the data block. The byte layout is a
//! pure function of the model, so identical models hash identically.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LayerPattern, Model, ModelConfig, ParamStore};
use crate::numeric::{Real, Tensor};

const MAGIC: &[u8; 8] = b"HATTNCKP";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dtype: String,
    config: ModelConfig,
    pattern: LayerPattern,
    pattern_text: String,
    tensors: Vec<TensorEntry>,
    /// Free-form provenance strings (config hash, versions).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    meta: BTreeMap<String, String>,
}

fn dtype_name<T: Real>() -> &'static str {
    if std::mem::size_of::<T>() == 4 {
        "f32"
    } else {
        "f64"
    }
}

pub fn write_checkpoint<T: Real>(model: &Model<T>, w: impl Write) -> Result<()> {
    write_checkpoint_with_meta(model, &BTreeMap::new(), w)
}

pub fn write_checkpoint_with_meta<T: Real>(model: &Model<T>, meta: &BTreeMap<String, String>, mut w: impl Write) -> Result<()> {
    let mut offset = 0;
    let tensors = model
        .params()
        .iter()
        .map(|(name, t)| {
            let e = TensorEntry { name: name.to_string(), shape: t.shape().to_vec(), offset };
            offset += t.len();
            e
        })
        .collect();
    let header = Header {
        dtype: dtype_name::<T>().into(),
        config: model.config().clone(),
        pattern: model.pattern().clone(),
        pattern_text: model.pattern().to_string(),
        tensors,
        meta: meta.clone(),
    };
    let hdr = serde_json::to_vec_pretty(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(hdr.len() as u64).to_le_bytes())?;
    w.write_all(&hdr)?;
    let mut buf = Vec::new();
    for (_, t) in model.params().iter() {
        buf.clear();
        for &v in t.data() {
            if dtype_name::<T>() == "f32" {
                buf.extend_from_slice(&(v.f64() as f32).to_le_bytes());
            } else {
                buf.extend_from_slice(&v.f64().to_le_bytes());
            }
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn checkpoint_bytes<T: Real>(model: &Model<T>) -> Vec<u8> {
    let mut out = Vec::new();
    write_checkpoint(model, &mut out).expect("in-memory write");
    out
}

/// Reads a checkpoint of either precision into element type `T`.
pub fn read_checkpoint<T: Real>(r: impl Read) -> Result<Model<T>> {
    Ok(read_checkpoint_with_meta(r)?.0)
}

/// Like [`read_checkpoint`], also returning the stored provenance strings.
pub fn read_checkpoint_with_meta<T: Real>(mut r: impl Read) -> Result<(Model<T>, BTreeMap<String, String>)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a checkpoint container".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    if u32::from_le_bytes(b4) != VERSION {
        return Err(Error::Format("unsupported checkpoint version".into()));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let mut hdr = vec![0u8; u64::from_le_bytes(b8) as usize];
    r.read_exact(&mut hdr)?;
    let header: Header = serde_json::from_slice(&hdr)?;
    let width = match header.dtype.as_str() {
        "f32" => 4,
        "f64" => 8,
        other => return Err(Error::Format(format!("unknown dtype {other}"))),
    };
    let mut store = ParamStore::new();
    let mut expected_offset = 0;
    for e in header.tensors {
        if e.offset != expected_offset {
            return Err(Error::Format(format!("tensor {} at offset {}, expected {expected_offset}", e.name, e.offset)));
        }
        let n: usize = e.shape.iter().product();
        expected_offset += n;
        let mut raw = vec![0u8; n * width];
        r.read_exact(&mut raw)?;
        let data: Vec<T> = if width == 4 {
            raw.chunks_exact(4).map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64)).collect()
        } else {
            raw.chunks_exact(8).map(|c| T::of(f64::from_le_bytes(c.try_into().unwrap()))).collect()
        };
        store.push(e.name, Tensor::new(e.shape, data)?);
    }
    Ok((Model::new(header.config, header.pattern, store)?, header.meta))
}
