use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes one `[channels, h, w]` image as binary PGM (1 channel) or PPM
/// (3 channels). Pixels are clamped to `[0, 1]` for export.
pub fn write_pnm(path: &Path, shape: &[usize], pixels: &[f32]) -> Result<()> {
    let &[c, h, w] = shape else {
        return Err(Error::Data(format!("expected a [channels, height, width] image, got {shape:?}")));
    };
    let plane = h * w;
    if pixels.len() != c * plane {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            len: pixels.len(),
        });
    }
    let (bytes, subtype, color) = match c {
        1 => (
            pixels.iter().map(|&v| to_byte(v)).collect::<Vec<_>>(),
            PnmSubtype::Graymap(SampleEncoding::Binary),
            ExtendedColorType::L8,
        ),
        3 => (
            (0..plane)
                .flat_map(|i| (0..3).map(move |ch| to_byte(pixels[ch * plane + i])))
                .collect(),
            PnmSubtype::Pixmap(SampleEncoding::Binary),
            ExtendedColorType::Rgb8,
        ),
        _ => return Err(Error::Data(format!("cannot export a {c}-channel image"))),
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    PnmEncoder::new(&mut out)
        .with_subtype(subtype)
        .write_image(&bytes, w as u32, h as u32, color)
        .map_err(|source| Error::Image {
            path: path.into(),
            source,
        })?;
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads a binary PGM or PPM file into a `[1, channels, h, w]` tensor in `[0, 1]`.
pub fn read_pnm(path: &Path) -> Result<Tensor> {
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|source| Error::Image {
            path: path.into(),
            source,
        })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let plane = w * h;
    let (c, data) = match img {
        DynamicImage::ImageLuma8(g) => (1, g.into_raw().into_iter().map(|b| b as f32 / 255.0).collect()),
        other => {
            let rgb = other.into_rgb8().into_raw();
            let mut data = vec![0.0; 3 * plane];
            for (i, px) in rgb.chunks_exact(3).enumerate() {
                for ch in 0..3 {
                    data[ch * plane + i] = px[ch] as f32 / 255.0;
                }
            }
            (3, data)
        }
    };
    Tensor::new(vec![1, c, h, w], data)
}

/// Writes paired `orig_%04d` / `recon_%04d` images into `dir`.
pub fn dump_images(originals: &Tensor, reconstructions: &Tensor, dir: &Path) -> Result<Vec<PathBuf>> {
    if originals.shape() != reconstructions.shape() {
        return Err(Error::ShapeMismatch {
            layer: "image dump".into(),
            expected: originals.shape().to_vec(),
            actual: reconstructions.shape().to_vec(),
        });
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let shape = &originals.shape()[1..];
    let ext = if shape.first() == Some(&1) { "pgm" } else { "ppm" };
    let n = originals.item_len();
    let mut written = Vec::new();
    for i in 0..originals.batch() {
        for (prefix, t) in [("orig", originals), ("recon", reconstructions)] {
            let path = dir.join(format!("{prefix}_{i:04}.{ext}"));
            write_pnm(&path, shape, &t.data()[i * n..(i + 1) * n])?;
            written.push(path);
        }
    }
    Ok(written)
}
