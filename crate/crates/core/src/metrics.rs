//! Image similarity and classification metrics.
//!
//! SSIM here is the global form: one set of statistics per channel over the
//! whole image, population (divide-by-N) variances, `C1 = 0.01²`,
//! `C2 = 0.03²` for a unit dynamic range, averaged over channels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn check_pair(p: &Tensor, q: &Tensor, what: &str) -> Result<()> {
    if p.shape() != q.shape() {
        return Err(Error::ShapeMismatch {
            layer: what.into(),
            expected: p.shape().to_vec(),
            actual: q.shape().to_vec(),
        });
    }
    if p.is_empty() {
        return Err(Error::Empty("image"));
    }
    Ok(())
}

/// Mean squared pixel difference over all channels.
pub fn mse_image(p: &Tensor, q: &Tensor) -> Result<f64> {
    check_pair(p, q, "mse_image")?;
    let sum: f64 = p
        .data()
        .iter()
        .zip(q.data())
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum();
    Ok(sum / p.len() as f64)
}

/// Global SSIM of a `[C, H, W]` (or `[H, W]`) image pair.
pub fn ssim(p: &Tensor, q: &Tensor) -> Result<f64> {
    check_pair(p, q, "ssim")?;
    let channels = if p.shape().len() == 3 { p.shape()[0] } else { 1 };
    let plane = p.len() / channels;
    let total: f64 = p
        .data()
        .chunks(plane)
        .zip(q.data().chunks(plane))
        .map(|(a, b)| ssim_plane(a, b))
        .sum();
    Ok(total / channels as f64)
}

fn ssim_plane(p: &[f32], q: &[f32]) -> f64 {
    let n = p.len() as f64;
    let mp = p.iter().map(|&v| v as f64).sum::<f64>() / n;
    let mq = q.iter().map(|&v| v as f64).sum::<f64>() / n;
    let (mut vp, mut vq, mut cov) = (0.0, 0.0, 0.0);
    for (&a, &b) in p.iter().zip(q) {
        let da = a as f64 - mp;
        let db = b as f64 - mq;
        vp += da * da;
        vq += db * db;
        cov += da * db;
    }
    vp /= n;
    vq /= n;
    cov /= n;
    ((2.0 * mp * mq + SSIM_C1) * (2.0 * cov + SSIM_C2)) / ((mp * mp + mq * mq + SSIM_C1) * (vp + vq + SSIM_C2))
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Number of rows of `logits` whose argmax equals the label.
pub fn correct_count(logits: &Tensor, labels: &[usize]) -> Result<usize> {
    let &[batch, classes] = logits.shape() else {
        return Err(Error::ShapeMismatch {
            layer: "accuracy".into(),
            expected: vec![labels.len(), 0],
            actual: logits.shape().to_vec(),
        });
    };
    if batch == 0 {
        return Err(Error::Empty("accuracy batch"));
    }
    if labels.len() != batch {
        return Err(Error::ShapeMismatch {
            layer: "accuracy".into(),
            expected: vec![labels.len(), classes],
            actual: logits.shape().to_vec(),
        });
    }
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(Error::LabelOutOfRange { index, label, classes });
    }
    Ok(logits
        .data()
        .chunks(classes)
        .zip(labels)
        .filter(|(row, &l)| argmax(row) == l)
        .count())
}

pub fn accuracy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    Ok(correct_count(logits, labels)? as f64 / labels.len() as f64)
}

/// Mean per-image MSE and SSIM over two equally shaped image batches.
pub fn batch_image_scores(originals: &Tensor, reconstructions: &Tensor) -> Result<(f64, f64)> {
    check_pair(originals, reconstructions, "image batch")?;
    let count = originals.batch();
    let (mut mse_sum, mut ssim_sum) = (0.0, 0.0);
    for i in 0..count {
        let item = originals.shape()[1..].to_vec();
        let p = originals.slice_batch(i, i + 1).reshape(item.clone())?;
        let q = reconstructions.slice_batch(i, i + 1).reshape(item)?;
        mse_sum += mse_image(&p, &q)?;
        ssim_sum += ssim(&p, &q)?;
    }
    Ok((mse_sum / count as f64, ssim_sum / count as f64))
}

/// Which row a [`MetricsRecord`] describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecordKind {
    Round(usize),
    Attack,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub kind: RecordKind,
    pub method: String,
    pub accuracy: f64,
    /// `None` on training rows, where no attack is run.
    pub attack_mse: Option<f64>,
    pub attack_ssim: Option<f64>,
    pub wall_time_s: f64,
    pub config_hash: String,
}

impl MetricsRecord {
    pub const CSV_COLUMNS: [&'static str; 7] = [
        "round",
        "method",
        "accuracy",
        "attack_mse",
        "attack_ssim",
        "wall_time_s",
        "config_hash",
    ];
    pub const CSV_HEADER: &'static str = "round,method,accuracy,attack_mse,attack_ssim,wall_time_s,config_hash";

    /// Fixed-precision text of each column; missing attack scores are empty.
    pub fn csv_fields(&self) -> [String; 7] {
        let round = match self.kind {
            RecordKind::Round(r) => r.to_string(),
            RecordKind::Attack => "attack".to_string(),
        };
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
        [
            round,
            self.method.clone(),
            format!("{:.6}", self.accuracy),
            opt(self.attack_mse),
            opt(self.attack_ssim),
            format!("{:.3}", self.wall_time_s),
            self.config_hash.clone(),
        ]
    }

    pub fn csv_row(&self) -> String {
        self.csv_fields().join(",")
    }
}
