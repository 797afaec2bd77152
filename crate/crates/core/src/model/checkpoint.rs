//! Binary checkpoint format.
//!
//! ```text
//! "FMCK" | version: u8 = 1 | header_len: u32 LE | header: UTF-8 JSON | tensor data
//! ```
//!
//! The header lists every tensor's name, shape and byte offset into the data
//! section, plus the gate scale and the tokenizer's id-ordered vocabulary.
//! Tensor data is little-endian `f32` in header order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelParams, ParamId, Tokenizer};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FMCK";
pub const CHECKPOINT_VERSION: u8 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    tensors: Vec<TensorEntry>,
    beta: f32,
    vocab: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

pub fn write_checkpoint<W: Write>(model: &Model, mut w: W) -> Result<()> {
    let mut offset = 0;
    let tensors = ParamId::ALL
        .iter()
        .map(|&id| {
            let t = model.params.get(id);
            let entry = TensorEntry {
                name: id.name().to_owned(),
                shape: t.shape().to_vec(),
                offset,
            };
            offset += t.len() * 4;
            entry
        })
        .collect();
    let header = Header {
        tensors,
        beta: model.params.beta(),
        vocab: model.tokenizer.id_order().to_vec(),
    };
    let json = serde_json::to_vec(&header)?;
    let len = u32::try_from(json.len()).map_err(|_| Error::Checkpoint("header too large".into()))?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&[CHECKPOINT_VERSION])?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(&json)?;
    for t in model.params.tensors() {
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Model> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
    }
    let mut version = [0u8; 1];
    r.read_exact(&mut version)?;
    if version[0] != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {}", version[0])));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;

    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    if header.tensors.len() != ParamId::ALL.len() {
        return Err(Error::Checkpoint(format!("expected {} tensors", ParamId::ALL.len())));
    }
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for (entry, id) in header.tensors.iter().zip(ParamId::ALL) {
        if entry.name != id.name() {
            return Err(Error::Checkpoint(format!(
                "tensor `{}` where `{}` was expected",
                entry.name,
                id.name()
            )));
        }
        let n: usize = entry.shape.iter().product();
        let end = entry.offset + n * 4;
        let bytes = data
            .get(entry.offset..end)
            .ok_or_else(|| Error::Checkpoint(format!("tensor `{}` truncated", entry.name)))?;
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.push(Tensor::new(entry.shape.clone(), values)?);
    }
    let params = ModelParams::from_tensors(tensors, header.beta)?;
    let tokenizer = Tokenizer::from_id_order(header.vocab)
        .ok_or_else(|| Error::Checkpoint("vocabulary is not in canonical order".into()))?;
    if tokenizer.len() != params.vocab_size() {
        return Err(Error::Checkpoint(format!(
            "vocabulary has {} words but embedding has {} rows",
            tokenizer.len(),
            params.vocab_size()
        )));
    }
    Ok(Model { params, tokenizer })
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    write_checkpoint(model, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
