//! Parameter checkpoints.
//!
//! Layout (version 1):
//!
//! ```text
//! [8 bytes]  magic "MDLCCKPT"
//! [8 bytes]  header length N, u64 little-endian
//! [N bytes]  UTF-8 JSON header {"version":1,"tensors":[{"name","shape","offset","len"}...]}
//! [...]      tensor data, f64 little-endian, concatenated in header order
//! ```
//!
//! `offset` and `len` count f64 elements from the start of the data section.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MDLCCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    tensors: Vec<Entry>,
}

pub fn write_checkpoint<W: Write>(mut w: W, tensors: &[(String, Tensor)]) -> Result<()> {
    let mut offset = 0;
    let entries = tensors
        .iter()
        .map(|(name, t)| {
            let e = Entry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
                len: t.len(),
            };
            offset += t.len();
            e
        })
        .collect();
    let header = serde_json::to_vec(&Header {
        version: CHECKPOINT_VERSION,
        tensors: entries,
    })?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    for (_, t) in tensors {
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::contract("not a checkpoint file"));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let mut header = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut header)?;
    let header: Header = serde_json::from_slice(&header)?;
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::contract(format!(
            "unsupported checkpoint version {}",
            header.version
        )));
    }
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    header
        .tensors
        .into_iter()
        .map(|e| {
            let slice = data
                .get(e.offset..e.offset + e.len)
                .ok_or_else(|| Error::contract(format!("tensor {} truncated", e.name)))?;
            if e.shape.iter().product::<usize>() != e.len {
                return Err(Error::contract(format!("tensor {} shape/len mismatch", e.name)));
            }
            Ok((e.name, Tensor::new(e.shape, slice.to_vec())))
        })
        .collect()
}

pub fn save_checkpoint(path: &Path, tensors: &[(String, Tensor)]) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(f, tensors)
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>> {
    read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))
}
