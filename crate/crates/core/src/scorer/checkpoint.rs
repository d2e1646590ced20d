//! Checkpoint files.
//!
//! Binary layout (any extension except `.json`):
//!
//! ```text
//! b"ASCKPT\0\0"              8-byte magic
//! u32 LE                     header length H
//! H bytes                    JSON header {version, config, aspect_names, tensors: [{name, shape}]}
//! f64 LE x param_count       parameters, tensors concatenated in header order
//! ```
//!
//! A `.json` path stores the same header with a `values` array per tensor.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ScorerConfig, ScorerModel};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: &str = "anchorscore-checkpoint/1";
const MAGIC: &[u8; 8] = b"ASCKPT\0\0";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    values: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: String,
    config: ScorerConfig,
    aspect_names: Vec<String>,
    tensors: Vec<TensorEntry>,
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

fn header(model: &ScorerModel, with_values: bool) -> Header {
    Header {
        version: CHECKPOINT_VERSION.to_string(),
        config: model.config().clone(),
        aspect_names: model.aspect_names().to_vec(),
        tensors: model
            .tensors()
            .into_iter()
            .map(|t| TensorEntry {
                values: with_values.then(|| model.params()[t.range.clone()].to_vec()),
                name: t.name,
                shape: t.shape,
            })
            .collect(),
    }
}

pub fn save_model(model: &ScorerModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = if is_json(path) {
        serde_json::to_vec_pretty(&header(model, true)).expect("header serializes")
    } else {
        let head = serde_json::to_vec(&header(model, false)).expect("header serializes");
        let mut out = Vec::with_capacity(12 + head.len() + 8 * model.param_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(head.len() as u32).to_le_bytes());
        out.extend_from_slice(&head);
        for p in model.params() {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn build(header: Header, values: Option<&[u8]>) -> Result<ScorerModel> {
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {:?}, expected {CHECKPOINT_VERSION:?}",
            header.version
        )));
    }
    let mut model = ScorerModel::zeros(header.config).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let expected = model.tensors();
    if expected.len() != header.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "{} tensors stored, configuration needs {}",
            header.tensors.len(),
            expected.len()
        )));
    }
    for (want, got) in expected.iter().zip(&header.tensors) {
        if want.name != got.name || want.shape != got.shape {
            return Err(Error::Checkpoint(format!(
                "tensor {} {:?} does not match expected {} {:?}",
                got.name, got.shape, want.name, want.shape
            )));
        }
    }
    let mut params = Vec::with_capacity(model.param_count());
    match values {
        Some(raw) => {
            if raw.len() != 8 * model.param_count() {
                return Err(Error::Checkpoint(format!(
                    "parameter payload has {} bytes, expected {}",
                    raw.len(),
                    8 * model.param_count()
                )));
            }
            params.extend(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())));
        }
        None => {
            for (want, got) in expected.iter().zip(&header.tensors) {
                let v = got
                    .values
                    .as_ref()
                    .ok_or_else(|| Error::Checkpoint(format!("tensor {} has no values", got.name)))?;
                if v.len() != want.range.len() {
                    return Err(Error::Checkpoint(format!("tensor {} has {} values", got.name, v.len())));
                }
                params.extend_from_slice(v);
            }
        }
    }
    model.set_params(params)?;
    model
        .set_aspect_names(header.aspect_names)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(model)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ScorerModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(MAGIC) {
        if bytes.len() < 12 {
            return Err(Error::Checkpoint("truncated header".into()));
        }
        let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let head = bytes
            .get(12..12 + n)
            .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
        let header: Header =
            serde_json::from_slice(head).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        build(header, Some(&bytes[12 + n..]))
    } else {
        let header: Header = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Checkpoint(format!("not a checkpoint: {e}")))?;
        build(header, None)
    }
}
