//! CIFAR-10 binary batches: 3073-byte records, one label byte followed by
//! 1024 R, 1024 G and 1024 B bytes of a 32×32 image.

use std::fs;
use std::path::Path;

use crate::data::{Dataset, SplitTag};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CIFAR_RECORD_LEN: usize = 1 + 3 * 32 * 32;
const CIFAR_CLASSES: usize = 10;

pub fn parse_cifar_records(bytes: &[u8], path: &Path) -> Result<Dataset> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD_LEN) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: (bytes.len() - bytes.len() % CIFAR_RECORD_LEN) as u64,
            message: format!("length {} is not a multiple of {CIFAR_RECORD_LEN}", bytes.len()),
        });
    }
    let count = bytes.len() / CIFAR_RECORD_LEN;
    let mut labels = Vec::with_capacity(count);
    let mut pixels = Vec::with_capacity(count * (CIFAR_RECORD_LEN - 1));
    for (i, record) in bytes.chunks(CIFAR_RECORD_LEN).enumerate() {
        if record[0] as usize >= CIFAR_CLASSES {
            return Err(Error::Format {
                path: path.to_path_buf(),
                offset: (i * CIFAR_RECORD_LEN) as u64,
                message: format!("label {} out of range", record[0]),
            });
        }
        labels.push(record[0] as usize);
        pixels.extend(record[1..].iter().map(|&b| b as f32 / 255.0));
    }
    Dataset::new(Tensor::new(vec![count, 3, 32, 32], pixels)?, labels, CIFAR_CLASSES, SplitTag::Train)
}

/// Loads and concatenates binary batch files in the given order.
pub fn load_cifar_binary<P: AsRef<Path>>(paths: &[P]) -> Result<Dataset> {
    let mut parts = Vec::with_capacity(paths.len());
    for p in paths {
        let p = p.as_ref();
        let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
        parts.push(parse_cifar_records(&bytes, p)?);
    }
    if parts.is_empty() {
        return parse_cifar_records(&[], Path::new(""));
    }
    Dataset::concat(&parts)
}
