//! Binary checkpoints: magic `SGCN`, a version byte, a little-endian `u32`
//! header length, a JSON header naming every tensor, then the tensors as
//! little-endian `f32` in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::Scalar;

pub const MAGIC: &[u8; 4] = b"SGCN";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub config: ModelConfig,
    pub tensors: Vec<TensorInfo>,
}

pub fn to_bytes<S: Scalar>(model: &Model<S>) -> Result<Vec<u8>> {
    let values = model.params.export();
    let header = Header {
        config: model.cfg.clone(),
        tensors: values
            .iter()
            .map(|(name, shape, _)| TensorInfo {
                name: name.clone(),
                shape: shape.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let payload: usize = values.iter().map(|v| v.2.len() * 4).sum();
    let mut out = Vec::with_capacity(9 + json.len() + payload);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, _, v) in &values {
        for x in v {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

/// Reads the header and raw tensors without building a model.
pub fn parse(bytes: &[u8]) -> Result<(Header, Vec<(String, Vec<usize>, Vec<f32>)>)> {
    if bytes.len() < 9 || &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint("bad magic: not a checkpoint file".into()));
    }
    if bytes[4] != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {}", bytes[4])));
    }
    let hlen = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let body = &bytes[9..];
    if body.len() < hlen {
        return Err(Error::Checkpoint("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&body[..hlen])
        .map_err(|e| Error::Checkpoint(format!("malformed header: {e}")))?;
    let mut rest = &body[hlen..];
    let mut values = Vec::with_capacity(header.tensors.len());
    for t in &header.tensors {
        let n: usize = t.shape.iter().product();
        if rest.len() < 4 * n {
            return Err(Error::Checkpoint(format!("truncated at tensor {}", t.name)));
        }
        let v = rest[..4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        rest = &rest[4 * n..];
        values.push((t.name.clone(), t.shape.clone(), v));
    }
    if !rest.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
    }
    Ok((header, values))
}

pub fn from_bytes<S: Scalar>(bytes: &[u8]) -> Result<Model<S>> {
    let (header, values) = parse(bytes)?;
    let model = Model::new(header.config, 0)?;
    model.params.import(&values)?;
    Ok(model)
}

/// Loads values into an existing model, checking names and shapes.
pub fn load_into<S: Scalar>(model: &Model<S>, bytes: &[u8]) -> Result<()> {
    let (header, values) = parse(bytes)?;
    if header.config != model.cfg {
        return Err(Error::Checkpoint("checkpoint architecture differs from the model".into()));
    }
    model.params.import(&values)
}

pub fn save<S: Scalar>(model: &Model<S>, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn load<S: Scalar>(path: &Path) -> Result<Model<S>> {
    from_bytes(&fs::read(path)?)
}
