//! Single-file model container.
//!
//! Byte layout, all integers little-endian:
//!
//! | offset | size | content                                   |
//! |--------|------|-------------------------------------------|
//! | 0      | 8    | magic `MSEGCKPT`                          |
//! | 8      | 4    | format version (u32)                      |
//! | 12     | 8    | header length `n` in bytes (u64)          |
//! | 20     | n    | UTF-8 JSON header                         |
//! | 20 + n | 4·m  | tensor payload, `m` f32 values            |
//!
//! The header holds the network config, the class taxonomy and a tensor
//! directory (name, shape, role, offset and length in f32 units). Tensors
//! appear in the payload in directory order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, NetConfig, Param, ParamRole};
use crate::error::{Error, Result};
use crate::imagecore::ClassTaxonomy;

pub const MAGIC: &[u8; 8] = b"MSEGCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub role: ParamRole,
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format_version: u32,
    pub config: NetConfig,
    pub taxonomy: ClassTaxonomy,
    pub tensors: Vec<TensorEntry>,
}

pub fn to_bytes(model: &Model<f32>, taxonomy: &ClassTaxonomy) -> Result<Vec<u8>> {
    if taxonomy.len() != model.config().num_classes {
        return Err(Error::invalid(
            "taxonomy",
            format!(
                "{} classes in taxonomy, model has {}",
                taxonomy.len(),
                model.config().num_classes
            ),
        ));
    }
    let mut offset = 0;
    let tensors = model
        .params()
        .iter()
        .map(|p| {
            let e = TensorEntry {
                name: p.name.clone(),
                shape: p.shape.clone(),
                role: p.role,
                offset,
                len: p.value.len(),
            };
            offset += p.value.len();
            e
        })
        .collect();
    let header = Header {
        format_version: FORMAT_VERSION,
        config: model.config().clone(),
        taxonomy: taxonomy.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&header).map_err(|source| Error::Json {
        context: "checkpoint header".into(),
        source,
    })?;
    let mut out = Vec::with_capacity(20 + json.len() + 4 * offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in model.params() {
        for v in &p.value {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<(Model<f32>, ClassTaxonomy)> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("missing magic bytes".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let n = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = bytes
        .get(20..20usize.saturating_add(n))
        .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
    let header: Header = serde_json::from_slice(body).map_err(|source| Error::Json {
        context: "checkpoint header".into(),
        source,
    })?;
    if header.taxonomy.len() != header.config.num_classes {
        return Err(Error::Checkpoint(
            "taxonomy and config disagree on the class count".into(),
        ));
    }
    let payload = &bytes[20 + n..];
    let total: usize = header.tensors.iter().map(|t| t.len).sum();
    if payload.len() != 4 * total {
        return Err(Error::Checkpoint(format!(
            "payload holds {} bytes, directory needs {}",
            payload.len(),
            4 * total
        )));
    }
    let mut params = Vec::with_capacity(header.tensors.len());
    for t in &header.tensors {
        let end = t
            .offset
            .checked_add(t.len)
            .filter(|&e| e <= total)
            .ok_or_else(|| Error::Checkpoint(format!("tensor `{}` lies outside the payload", t.name)))?;
        let value = payload[4 * t.offset..4 * end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        params.push(Param {
            name: t.name.clone(),
            shape: t.shape.clone(),
            role: t.role,
            value,
        });
    }
    let model = Model::from_params(&header.config, params)?;
    Ok((model, header.taxonomy))
}

pub fn save_checkpoint(model: &Model<f32>, taxonomy: &ClassTaxonomy, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(model, taxonomy)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Model<f32>, ClassTaxonomy)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}
