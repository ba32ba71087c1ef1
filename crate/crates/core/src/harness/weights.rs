use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::ParamSet;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Position of the first element, in elements (not bytes).
    pub offset: usize,
}

/// JSON sidecar describing the flat `f32` little-endian weight file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightIndex {
    pub dtype: String,
    pub params: Vec<WeightEntry>,
}

/// Sidecar path for a weight file: same stem, `.json` extension.
pub fn sidecar_path(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

/// Writes every parameter, in order, to `bin` and its sidecar.
pub fn save_weights(params: &ParamSet, bin: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(4 * params.numel());
    let mut entries = Vec::with_capacity(params.len());
    let mut offset = 0;
    for (name, t) in params.iter() {
        entries.push(WeightEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += t.len();
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let index = WeightIndex {
        dtype: "f32le".into(),
        params: entries,
    };
    std::fs::write(bin, bytes).map_err(|e| Error::io(bin, e))?;
    let side = sidecar_path(bin);
    let json = serde_json::to_string_pretty(&index)? + "\n";
    std::fs::write(&side, json).map_err(|e| Error::io(&side, e))
}

pub fn load_weights(bin: &Path) -> Result<ParamSet> {
    let side = sidecar_path(bin);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let index: WeightIndex = serde_json::from_str(&text)?;
    if index.dtype != "f32le" {
        return Err(Error::Format {
            path: side,
            offset: 0,
            message: format!("unsupported dtype `{}`", index.dtype),
        });
    }
    let bytes = std::fs::read(bin).map_err(|e| Error::io(bin, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Format {
            path: bin.into(),
            offset: bytes.len() as u64,
            message: "length is not a multiple of 4".into(),
        });
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let mut out = ParamSet::new();
    let mut expected = 0;
    for e in index.params {
        let len: usize = e.shape.iter().product();
        if e.offset != expected || e.offset + len > values.len() {
            return Err(Error::Format {
                path: bin.into(),
                offset: 4 * e.offset as u64,
                message: format!("parameter `{}` does not fit the file", e.name),
            });
        }
        out.insert(e.name, Tensor::new(e.shape, values[e.offset..e.offset + len].to_vec())?);
        expected += len;
    }
    if expected != values.len() {
        return Err(Error::Format {
            path: bin.into(),
            offset: 4 * expected as u64,
            message: "trailing values not described by the sidecar".into(),
        });
    }
    Ok(out)
}
