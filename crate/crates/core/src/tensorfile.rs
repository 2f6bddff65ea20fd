//! Named-tensor container used for model artifacts.
//!
//! Layout: a little-endian `u64` header length, a JSON header listing
//! `{name, shape, offset}` per tensor (offsets in elements), then the
//! concatenated little-endian `f32` payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

/// One stored tensor, widened back to `f64` on read.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn write_tensors<'a>(
    path: &Path,
    tensors: impl IntoIterator<Item = (&'a str, &'a [usize], &'a [f64])>,
) -> Result<()> {
    let mut entries = Vec::new();
    let mut payload = Vec::new();
    let mut offset = 0;
    for (name, shape, data) in tensors {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!(
                "tensor {name}: shape {shape:?} does not hold {} values",
                data.len()
            )));
        }
        entries.push(Entry {
            name: name.to_string(),
            shape: shape.to_vec(),
            offset,
        });
        offset += data.len();
        payload.extend(data.iter().flat_map(|&v| (v as f32).to_le_bytes()));
    }
    let header = serde_json::to_vec(&entries)?;
    let mut bytes = Vec::with_capacity(8 + header.len() + payload.len());
    bytes.extend((header.len() as u64).to_le_bytes());
    bytes.extend(header);
    bytes.extend(payload);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_tensors(path: &Path) -> Result<Vec<NamedTensor>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |what: &str| Error::Data(format!("{}: {what}", path.display()));
    let len_bytes: [u8; 8] = bytes
        .get(..8)
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| corrupt("truncated header length"))?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let header = bytes
        .get(8..8 + header_len)
        .ok_or_else(|| corrupt("truncated header"))?;
    let entries: Vec<Entry> = serde_json::from_slice(header)?;
    let payload = &bytes[8 + header_len..];
    if payload.len() % 4 != 0 {
        return Err(corrupt("payload is not a whole number of f32 values"));
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    entries
        .into_iter()
        .map(|e| {
            let n: usize = e.shape.iter().product();
            let data = values
                .get(e.offset..e.offset + n)
                .ok_or_else(|| corrupt(&format!("tensor {} runs past the payload", e.name)))?
                .to_vec();
            Ok(NamedTensor {
                name: e.name,
                shape: e.shape,
                data,
            })
        })
        .collect()
}
