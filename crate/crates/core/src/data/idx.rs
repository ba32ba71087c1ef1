//! IDX container: big-endian `u32` magic (`0x00000803` for unsigned-byte
//! image stacks, `0x00000801` for label vectors), one big-endian `u32` per
//! dimension, then the raw bytes.

use std::fs;
use std::path::Path;

use crate::data::{Dataset, SplitTag};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn format_err(path: &Path, offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        message: message.into(),
    }
}

fn read_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| format_err(path, bytes.len(), "truncated header"))
}

/// Parses an unsigned-byte IDX array whose magic must equal `magic`.
pub fn parse_idx(bytes: &[u8], magic: u32, path: &Path) -> Result<IdxArray> {
    let found = read_u32(bytes, 0, path)?;
    if found != magic {
        return Err(format_err(path, 0, "bad magic"));
    }
    let ndim = (magic & 0xff) as usize;
    let mut dims = Vec::with_capacity(ndim);
    for d in 0..ndim {
        dims.push(read_u32(bytes, 4 + 4 * d, path)? as usize);
    }
    let header = 4 + 4 * ndim;
    let expected = dims.iter().product::<usize>();
    let body = &bytes[header..];
    if body.len() < expected {
        return Err(format_err(
            path,
            bytes.len(),
            format!("truncated data: need {expected} bytes after the header, found {}", body.len()),
        ));
    }
    if body.len() > expected {
        return Err(format_err(path, header + expected, "trailing bytes"));
    }
    Ok(IdxArray {
        dims,
        data: body.to_vec(),
    })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads an image/label file pair as a single-channel dataset scaled by 1/255.
/// The class count is one more than the largest label.
pub fn load_idx(image_path: impl AsRef<Path>, label_path: impl AsRef<Path>) -> Result<Dataset> {
    let (image_path, label_path) = (image_path.as_ref(), label_path.as_ref());
    let images = parse_idx(&read_file(image_path)?, IDX_IMAGES_MAGIC, image_path)?;
    let labels = parse_idx(&read_file(label_path)?, IDX_LABELS_MAGIC, label_path)?;
    if images.dims[0] != labels.dims[0] {
        return Err(Error::CountMismatch {
            images: images.dims[0],
            labels: labels.dims[0],
        });
    }
    let (count, rows, cols) = (images.dims[0], images.dims[1], images.dims[2]);
    let pixels = images.data.iter().map(|&b| b as f32 / 255.0).collect();
    let labels: Vec<usize> = labels.data.iter().map(|&b| b as usize).collect();
    let classes = labels.iter().max().map_or(1, |&m| m + 1);
    Dataset::new(Tensor::new(vec![count, 1, rows, cols], pixels)?, labels, classes, SplitTag::Train)
}

fn encode(magic: u32, dims: &[usize], data: impl Iterator<Item = u8>) -> Vec<u8> {
    let mut out = magic.to_be_bytes().to_vec();
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend(data);
    out
}

/// Writes a single-channel dataset as an IDX pair, quantizing pixels to `round(255·v)`.
pub fn write_idx(dataset: &Dataset, image_path: impl AsRef<Path>, label_path: impl AsRef<Path>) -> Result<()> {
    let &[count, channels, rows, cols] = dataset.images().shape() else {
        unreachable!("datasets are always 4-D");
    };
    if channels != 1 {
        return Err(Error::Data(format!("IDX images are single-channel, dataset has {channels}")));
    }
    if let Some(&l) = dataset.labels().iter().find(|&&l| l > 255) {
        return Err(Error::Data(format!("label {l} does not fit in a byte")));
    }
    let pixels = dataset.images().data().iter().map(|&v| (v * 255.0).round() as u8);
    let image_bytes = encode(IDX_IMAGES_MAGIC, &[count, rows, cols], pixels);
    let label_bytes = encode(IDX_LABELS_MAGIC, &[count], dataset.labels().iter().map(|&l| l as u8));
    let (image_path, label_path) = (image_path.as_ref(), label_path.as_ref());
    fs::write(image_path, image_bytes).map_err(|e| Error::io(image_path, e))?;
    fs::write(label_path, label_bytes).map_err(|e| Error::io(label_path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bad_magic_reports_offset_zero() {
        let err = parse_idx(&[0, 0, 0, 0, 0, 0, 0, 1, 7], IDX_LABELS_MAGIC, Path::new("x")).unwrap_err();
        assert!(err.to_string().contains("bad magic at offset 0"), "{err}");
    }

    #[test]
    fn truncation_is_reported() {
        let mut bytes = encode(IDX_LABELS_MAGIC, &[3], [1u8, 2].into_iter());
        assert!(parse_idx(&bytes, IDX_LABELS_MAGIC, Path::new("x")).is_err());
        bytes.push(3);
        assert_eq!(parse_idx(&bytes, IDX_LABELS_MAGIC, Path::new("x")).unwrap().data, vec![1, 2, 3]);
        assert!(parse_idx(&bytes[..6], IDX_LABELS_MAGIC, Path::new("x")).is_err());
    }
}
