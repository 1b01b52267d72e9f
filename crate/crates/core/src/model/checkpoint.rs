//! Single-file checkpoint: `GPRF` magic, format version, JSON header with the
//! model config, normalization and tensor table, then little-endian `f64`
//! tensor data in table order.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::gprformer::{ModelParams, Normalization};
use super::params::ParamStore;
use super::tensor::Mat;
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GPRF";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    normalization: Normalization,
    tensors: Vec<TensorEntry>,
}

pub fn write_checkpoint<T: Scalar, W: Write>(params: &ModelParams<T>, mut w: W) -> Result<()> {
    let header = Header {
        config: params.config.clone(),
        normalization: params.normalization,
        tensors: params
            .store
            .iter()
            .map(|(name, t)| TensorEntry { name: name.to_string(), rows: t.rows, cols: t.cols })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
    w.write_u32::<LittleEndian>(json.len() as u32)?;
    w.write_all(&json)?;
    for (_, t) in params.store.iter() {
        for v in &t.data {
            w.write_f64::<LittleEndian>(v.as_f64())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<T: Scalar, R: Read>(mut r: R) -> Result<ModelParams<T>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a model checkpoint (bad magic)".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let len = r.read_u32::<LittleEndian>()? as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    let mut store = ParamStore::default();
    for e in &header.tensors {
        let mut data = Vec::with_capacity(e.rows * e.cols);
        for _ in 0..e.rows * e.cols {
            let v = r.read_f64::<LittleEndian>().map_err(|err| Error::Format(format!("tensor {}: {err}", e.name)))?;
            if !v.is_finite() {
                return Err(Error::Format(format!("tensor {} holds a non-finite value", e.name)));
            }
            data.push(T::lit(v));
        }
        store.insert(e.name.clone(), Mat::from_vec(e.rows, e.cols, data));
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes after tensor data", rest.len())));
    }
    ModelParams::from_store(header.config, store, header.normalization)
}
