//! Procedural datasets: separable class blobs for fast tests, and 28×28
//! handwritten-style digit glyphs that stand in for MNIST-format data.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{Dataset, SplitTag};
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlobOptions {
    /// Brightness gap between a class pattern's on and off pixels.
    pub contrast: f32,
    /// Standard deviation of the per-pixel noise.
    pub noise: f32,
}

impl Default for BlobOptions {
    fn default() -> Self {
        BlobOptions {
            contrast: 0.5,
            noise: 0.05,
        }
    }
}

/// Each class has a random on/off pixel pattern at levels `0.5 ± contrast/2`;
/// samples add clipped Gaussian noise. Labels cycle through the classes.
pub fn synthetic_blobs(classes: usize, count: usize, shape: &[usize], seed: u64, opts: BlobOptions) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::Data(format!("synthetic blobs need at least 2 classes, got {classes}")));
    }
    if shape.len() != 3 || shape.contains(&0) {
        return Err(Error::Data(format!("image shape must be [channels, height, width], got {shape:?}")));
    }
    let item: usize = shape.iter().product();
    let mut rng = seed::rng(seed);
    let lo = 0.5 - opts.contrast / 2.0;
    let hi = 0.5 + opts.contrast / 2.0;
    let mut patterns: Vec<Vec<f32>> = Vec::with_capacity(classes);
    while patterns.len() < classes {
        let p: Vec<f32> = (0..item).map(|_| if rng.random::<bool>() { hi } else { lo }).collect();
        if !patterns.contains(&p) {
            patterns.push(p);
        }
    }
    let noise = Normal::new(0.0f32, opts.noise.max(0.0)).map_err(|e| Error::Data(e.to_string()))?;
    let mut pixels = Vec::with_capacity(count * item);
    let labels: Vec<usize> = (0..count).map(|i| i % classes).collect();
    for &l in &labels {
        pixels.extend(patterns[l].iter().map(|&v| (v + noise.sample(&mut rng)).clamp(0.0, 1.0)));
    }
    let mut out_shape = vec![count];
    out_shape.extend_from_slice(shape);
    Dataset::new(Tensor::new(out_shape, pixels)?, labels, classes, SplitTag::Train)
}

type Stroke = &'static [(f32, f32)];

const ZERO: &[Stroke] = &[&[
    (0.5, 0.04), (0.74, 0.12), (0.86, 0.32), (0.88, 0.5), (0.86, 0.68), (0.74, 0.88), (0.5, 0.96),
    (0.26, 0.88), (0.14, 0.68), (0.12, 0.5), (0.14, 0.32), (0.26, 0.12), (0.5, 0.04),
]];
const ONE: &[Stroke] = &[&[(0.32, 0.22), (0.52, 0.04), (0.52, 0.96)]];
const TWO: &[Stroke] = &[&[
    (0.16, 0.26), (0.28, 0.1), (0.5, 0.04), (0.74, 0.1), (0.84, 0.28), (0.76, 0.48), (0.14, 0.95), (0.88, 0.95),
]];
const THREE: &[Stroke] = &[&[
    (0.16, 0.12), (0.42, 0.04), (0.74, 0.1), (0.8, 0.28), (0.62, 0.44), (0.4, 0.48), (0.66, 0.54), (0.84, 0.72),
    (0.74, 0.9), (0.46, 0.97), (0.14, 0.88),
]];
const FOUR: &[Stroke] = &[&[(0.68, 0.96), (0.68, 0.04), (0.1, 0.66), (0.9, 0.66)]];
const FIVE: &[Stroke] = &[&[
    (0.84, 0.05), (0.24, 0.05), (0.18, 0.44), (0.5, 0.38), (0.78, 0.5), (0.86, 0.72), (0.74, 0.9), (0.46, 0.97),
    (0.14, 0.88),
]];
const SIX: &[Stroke] = &[&[
    (0.74, 0.05), (0.42, 0.22), (0.2, 0.5), (0.16, 0.76), (0.32, 0.95), (0.64, 0.95), (0.84, 0.76), (0.72, 0.56),
    (0.44, 0.52), (0.2, 0.64),
]];
const SEVEN: &[Stroke] = &[&[(0.12, 0.05), (0.88, 0.05), (0.42, 0.96)], &[(0.34, 0.5), (0.74, 0.5)]];
const EIGHT: &[Stroke] = &[
    &[
        (0.5, 0.04), (0.72, 0.1), (0.76, 0.26), (0.62, 0.42), (0.5, 0.47), (0.38, 0.42), (0.24, 0.26), (0.28, 0.1),
        (0.5, 0.04),
    ],
    &[
        (0.5, 0.47), (0.76, 0.58), (0.84, 0.76), (0.72, 0.93), (0.5, 0.97), (0.28, 0.93), (0.16, 0.76), (0.24, 0.58),
        (0.5, 0.47),
    ],
];
const NINE: &[Stroke] = &[&[
    (0.8, 0.36), (0.6, 0.5), (0.34, 0.5), (0.18, 0.32), (0.26, 0.1), (0.5, 0.04), (0.74, 0.1), (0.8, 0.36),
    (0.74, 0.66), (0.56, 0.96),
]];

const GLYPHS: [&[Stroke]; 10] = [ZERO, ONE, TWO, THREE, FOUR, FIVE, SIX, SEVEN, EIGHT, NINE];

const SIDE: usize = 28;

fn segment_distance(p: (f32, f32), a: (f32, f32), b: (f32, f32)) -> f32 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (cx * cx + cy * cy).sqrt()
}

fn render_digit(digit: usize, rng: &mut impl Rng, out: &mut Vec<f32>) {
    // Glyph box of roughly 14×20 pixels centred in the frame, then a random
    // affine jitter, per-point wobble and stroke width.
    let angle = rng.random_range(-0.22f32..0.22);
    let shear = rng.random_range(-0.25f32..0.25);
    let sx = 14.0 * rng.random_range(0.8f32..1.15);
    let sy = 20.0 * rng.random_range(0.85f32..1.1);
    let tx = SIDE as f32 / 2.0 + rng.random_range(-1.5f32..1.5);
    let ty = SIDE as f32 / 2.0 + rng.random_range(-1.5f32..1.5);
    let half_width = rng.random_range(0.9f32..1.7);
    let (sin, cos) = angle.sin_cos();
    let place = |(u, v): (f32, f32), rng: &mut _| {
        let u = u + jitter(rng) - 0.5;
        let v = v + jitter(rng) - 0.5;
        let x = (u + shear * v) * sx;
        let y = v * sy;
        (cos * x - sin * y + tx, sin * x + cos * y + ty)
    };
    let strokes: Vec<Vec<(f32, f32)>> = GLYPHS[digit]
        .iter()
        .map(|s| s.iter().map(|&p| place(p, rng)).collect())
        .collect();
    for row in 0..SIDE {
        for col in 0..SIDE {
            let p = (col as f32 + 0.5, row as f32 + 0.5);
            let d = strokes
                .iter()
                .flat_map(|s| s.windows(2).map(move |w| segment_distance(p, w[0], w[1])))
                .fold(f32::INFINITY, f32::min);
            out.push((half_width + 0.5 - d).clamp(0.0, 1.0));
        }
    }
}

fn jitter(rng: &mut impl Rng) -> f32 {
    rng.random_range(-0.035f32..0.035)
}

/// `count` single-channel 28×28 digit images over 10 balanced classes in
/// random order; deterministic given the seed.
pub fn synthetic_digits(count: usize, seed: u64) -> Result<Dataset> {
    let mut rng = seed::rng(seed);
    let mut labels: Vec<usize> = (0..count).map(|i| i % 10).collect();
    rand::seq::SliceRandom::shuffle(labels.as_mut_slice(), &mut rng);
    let mut pixels = Vec::with_capacity(count * SIDE * SIDE);
    for &l in &labels {
        render_digit(l, &mut rng, &mut pixels);
    }
    Dataset::new(Tensor::new(vec![count, 1, SIDE, SIDE], pixels)?, labels, 10, SplitTag::Train)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_deterministic() {
        let a = synthetic_blobs(3, 30, &[1, 4, 4], 7, BlobOptions::default()).unwrap();
        let b = synthetic_blobs(3, 30, &[1, 4, 4], 7, BlobOptions::default()).unwrap();
        assert_eq!(a, b);
        assert!(synthetic_blobs(1, 30, &[1, 4, 4], 7, BlobOptions::default()).is_err());
    }

    #[test]
    fn blob_class_means_are_separated() {
        let opts = BlobOptions::default();
        let d = synthetic_blobs(4, 400, &[1, 6, 6], 1, opts).unwrap();
        let item = 36;
        let mut means = vec![vec![0.0f64; item]; 4];
        for (i, &l) in d.labels().iter().enumerate() {
            for (m, &v) in means[l].iter_mut().zip(&d.images().data()[i * item..(i + 1) * item]) {
                *m += v as f64 / 100.0;
            }
        }
        for a in 0..4 {
            for b in a + 1..4 {
                let gap = means[a].iter().zip(&means[b]).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                assert!(gap >= opts.contrast as f64 * 0.9, "classes {a},{b}: {gap}");
            }
        }
    }

    #[test]
    fn digits_are_balanced_and_in_range() {
        let d = synthetic_digits(50, 3).unwrap();
        assert_eq!(d.image_shape(), &[1, 28, 28]);
        for c in 0..10 {
            assert_eq!(d.labels().iter().filter(|&&l| l == c).count(), 5);
        }
        // Every glyph draws ink but leaves most of the frame blank.
        for img in d.images().data().chunks(784) {
            let ink = img.iter().filter(|&&v| v > 0.5).count();
            assert!((30..400).contains(&ink), "{ink}");
        }
        assert_eq!(d, synthetic_digits(50, 3).unwrap());
    }
}
