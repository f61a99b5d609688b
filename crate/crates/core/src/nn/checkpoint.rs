//! Flat binary parameter container.
//!
//! Layout: the 8-byte magic `SNCKPT01`, a little-endian `u64` with the
//! length of the JSON index, the index itself, then the raw little-endian
//! tensor data. Each index entry records the tensor name, shape, element
//! type and byte offset into the data section.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"SNCKPT01";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: DType,
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointIndex {
    pub tensors: Vec<IndexEntry>,
}

pub fn to_bytes(params: &ParamStore, dtype: DType) -> Result<Vec<u8>> {
    let mut data = Vec::new();
    let mut tensors = Vec::with_capacity(params.len());
    for (_, p) in params.iter() {
        tensors.push(IndexEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            dtype,
            offset: data.len() as u64,
        });
        for &x in p.value.data() {
            match dtype {
                DType::F32 => data.extend_from_slice(&(x as f32).to_le_bytes()),
                DType::F64 => data.extend_from_slice(&x.to_le_bytes()),
            }
        }
    }
    let index = serde_json::to_vec(&CheckpointIndex { tensors })?;
    let mut out = Vec::with_capacity(16 + index.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(index.len() as u64).to_le_bytes());
    out.extend_from_slice(&index);
    out.extend_from_slice(&data);
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<ParamStore> {
    let bad = |msg: &str| Error::Checkpoint(msg.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("bad magic"));
    }
    let index_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let data_start = 16usize
        .checked_add(index_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated index"))?;
    let index: CheckpointIndex = serde_json::from_slice(&bytes[16..data_start])?;
    let data = &bytes[data_start..];
    let mut store = ParamStore::new();
    for e in index.tensors {
        let n: usize = e.shape.iter().product();
        let w = e.dtype.width();
        let start = e.offset as usize;
        let end = start + n * w;
        if end > data.len() {
            return Err(Error::Checkpoint(format!("tensor {} runs past end of file", e.name)));
        }
        let values = data[start..end]
            .chunks_exact(w)
            .map(|c| match e.dtype {
                DType::F32 => f32::from_le_bytes(c.try_into().unwrap()) as f64,
                DType::F64 => f64::from_le_bytes(c.try_into().unwrap()),
            })
            .collect();
        store.add(e.name, Tensor::new(e.shape, values)?);
    }
    Ok(store)
}

pub fn save(params: &ParamStore, path: &Path, dtype: DType) -> Result<()> {
    fs::write(path, to_bytes(params, dtype)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParamStore> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    from_bytes(&fs::read(path)?)
}

/// Loads a checkpoint into an existing store, matching tensors by name.
pub fn restore(params: &mut ParamStore, path: &Path) -> Result<()> {
    let loaded = load(path)?;
    params.load_values_from(&loaded)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn f64_round_trip_is_bit_exact(vals in proptest::collection::vec(-1e6f64..1e6, 1..40)) {
            let mut s = ParamStore::new();
            s.add("a", Tensor::vector(vals.clone()));
            s.add("b.c", Tensor::new(vec![1, vals.len()], vals).unwrap());
            let bytes = to_bytes(&s, DType::F64).unwrap();
            let back = from_bytes(&bytes).unwrap();
            prop_assert!(s.values_bitwise_eq(&back));
            prop_assert_eq!(to_bytes(&back, DType::F64).unwrap(), bytes);
        }

        #[test]
        fn f32_round_trip_is_bit_exact_on_f32_values(vals in proptest::collection::vec(-1e6f32..1e6, 1..40)) {
            let mut s = ParamStore::new();
            s.add("w", Tensor::vector(vals.iter().map(|&x| x as f64).collect()));
            let bytes = to_bytes(&s, DType::F32).unwrap();
            let back = from_bytes(&bytes).unwrap();
            prop_assert!(s.values_bitwise_eq(&back));
            prop_assert_eq!(to_bytes(&back, DType::F32).unwrap(), bytes);
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(from_bytes(b"not a checkpoint").is_err());
        let mut s = ParamStore::new();
        s.add("w", Tensor::vector(vec![1.0, 2.0]));
        let bytes = to_bytes(&s, DType::F64).unwrap();
        assert!(from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }
}
