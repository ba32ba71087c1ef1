//! Independent f64 reference implementations used as test oracles, plus
//! small fixtures shared by several test files.
#![allow(dead_code)]

use rand::Rng;
use splitguard::data::{Dataset, SplitTag};
use splitguard::layers::{BatchNorm2d, Cache, Layer, Mode};
use splitguard::Tensor;

/// Dense f64 array with a shape, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct A64 {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl A64 {
    pub fn zeros(shape: &[usize]) -> Self {
        A64 {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        A64 {
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.shape.clone(), self.data.iter().map(|&v| v as f32).collect()).unwrap()
    }

    pub fn dot(&self, other: &A64) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }
}

fn f64s(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

pub fn dense(x: &A64, w: &[f64], b: &[f64]) -> A64 {
    let (n, i) = (x.shape[0], x.shape[1]);
    let o = b.len();
    let mut y = A64::zeros(&[n, o]);
    for r in 0..n {
        for j in 0..o {
            let mut s = b[j];
            for k in 0..i {
                s += x.data[r * i + k] * w[j * i + k];
            }
            y.data[r * o + j] = s;
        }
    }
    y
}

/// Direct convolution; `w` is `[out, in, k, k]`.
pub fn conv2d(x: &A64, w: &[f64], b: &[f64], k: usize, stride: usize, pad: usize) -> A64 {
    let [n, c, h, wd] = x.shape[..] else { panic!("conv input rank") };
    let o = b.len();
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut y = A64::zeros(&[n, o, oh, ow]);
    for s in 0..n {
        for oc in 0..o {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = b[oc];
                    for ic in 0..c {
                        for ki in 0..k {
                            for kj in 0..k {
                                let yi = (i * stride + ki) as isize - pad as isize;
                                let xj = (j * stride + kj) as isize - pad as isize;
                                if yi < 0 || xj < 0 || yi >= h as isize || xj >= wd as isize {
                                    continue;
                                }
                                let xv = x.data[((s * c + ic) * h + yi as usize) * wd + xj as usize];
                                acc += xv * w[((oc * c + ic) * k + ki) * k + kj];
                            }
                        }
                    }
                    y.data[((s * o + oc) * oh + i) * ow + j] = acc;
                }
            }
        }
    }
    y
}

/// Scatter form of the transposed convolution; `w` is `[in, out, k, k]`.
pub fn conv_transpose2d(x: &A64, w: &[f64], b: &[f64], k: usize, stride: usize, pad: usize, out_pad: usize) -> A64 {
    let [n, c, h, wd] = x.shape[..] else { panic!("conv input rank") };
    let o = b.len();
    let oh = (h - 1) * stride + k + out_pad - 2 * pad;
    let ow = (wd - 1) * stride + k + out_pad - 2 * pad;
    let mut y = A64::zeros(&[n, o, oh, ow]);
    for s in 0..n {
        for (oc, &bias) in b.iter().enumerate() {
            for i in 0..oh * ow {
                y.data[(s * o + oc) * oh * ow + i] = bias;
            }
        }
        for ic in 0..c {
            for i in 0..h {
                for j in 0..wd {
                    let xv = x.data[((s * c + ic) * h + i) * wd + j];
                    for oc in 0..o {
                        for ki in 0..k {
                            for kj in 0..k {
                                let yi = (i * stride + ki) as isize - pad as isize;
                                let yj = (j * stride + kj) as isize - pad as isize;
                                if yi < 0 || yj < 0 || yi >= oh as isize || yj >= ow as isize {
                                    continue;
                                }
                                y.data[((s * o + oc) * oh + yi as usize) * ow + yj as usize] +=
                                    xv * w[((ic * o + oc) * k + ki) * k + kj];
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

pub fn pool(x: &A64, k: usize, stride: usize, max: bool) -> A64 {
    let [n, c, h, w] = x.shape[..] else { panic!("pool input rank") };
    let oh = (h - k) / stride + 1;
    let ow = (w - k) / stride + 1;
    let mut y = A64::zeros(&[n, c, oh, ow]);
    for p in 0..n * c {
        for i in 0..oh {
            for j in 0..ow {
                let vals = (0..k * k).map(|t| x.data[(p * h + i * stride + t / k) * w + j * stride + t % k]);
                y.data[(p * oh + i) * ow + j] = if max {
                    vals.fold(f64::NEG_INFINITY, f64::max)
                } else {
                    vals.sum::<f64>() / (k * k) as f64
                };
            }
        }
    }
    y
}

pub fn batch_norm(x: &A64, bn: &BatchNorm2d, gamma: &[f64], beta: &[f64], mode: Mode) -> A64 {
    let (n, c) = (x.shape[0], x.shape[1]);
    let hw: usize = x.shape[2..].iter().product();
    let mut y = x.clone();
    for ch in 0..c {
        let idx = || (0..n).flat_map(move |s| (0..hw).map(move |i| (s * c + ch) * hw + i));
        let (mean, var) = match mode {
            Mode::Train => {
                let m = idx().map(|i| x.data[i]).sum::<f64>() / (n * hw) as f64;
                let v = idx().map(|i| (x.data[i] - m).powi(2)).sum::<f64>() / (n * hw) as f64;
                (m, v)
            }
            Mode::Eval => (bn.running_mean.data()[ch] as f64, bn.running_var.data()[ch] as f64),
        };
        let inv = 1.0 / (var + bn.eps as f64).sqrt();
        for i in idx() {
            y.data[i] = gamma[ch] * (x.data[i] - mean) * inv + beta[ch];
        }
    }
    y
}

/// Reference forward pass of `layer`. `params` overrides the layer's
/// parameters in visiting order (see [`layer_params`]); pass `None` to use
/// the layer's own values.
pub fn forward(layer: &Layer, x: &A64, mode: Mode, params: Option<&[Vec<f64>]>) -> A64 {
    let own = layer_params(layer);
    let p = params.unwrap_or(&own);
    match layer {
        Layer::Dense(_) => dense(x, &p[0], &p[1]),
        Layer::Conv2d(c) => conv2d(x, &p[0], &p[1], c.kernel(), c.stride, c.padding),
        Layer::ConvTranspose2d(c) => {
            conv_transpose2d(x, &p[0], &p[1], c.kernel(), c.stride, c.padding, c.output_padding)
        }
        Layer::Relu => map(x, |v| v.max(0.0)),
        Layer::Sigmoid => map(x, |v| 1.0 / (1.0 + (-v).exp())),
        Layer::MaxPool2d(q) => pool(x, q.kernel, q.stride, true),
        Layer::AvgPool2d(q) => pool(x, q.kernel, q.stride, false),
        Layer::Flatten => A64 {
            shape: vec![x.shape[0], x.shape[1..].iter().product()],
            data: x.data.clone(),
        },
        Layer::BatchNorm2d(b) => batch_norm(x, b, &p[0], &p[1], mode),
        Layer::Residual(r) => {
            let mut offset = 0;
            let mut run = |chain: &[Layer]| {
                let mut h = x.clone();
                for l in chain {
                    let n = layer_params(l).len();
                    h = forward(l, &h, mode, Some(&p[offset..offset + n]));
                    offset += n;
                }
                h
            };
            let main = run(&r.main);
            let short = run(&r.shortcut);
            A64 {
                shape: main.shape.clone(),
                data: main.data.iter().zip(&short.data).map(|(a, b)| a + b).collect(),
            }
        }
    }
}

pub fn chain_forward(layers: &[Layer], x: &A64, mode: Mode, params: &[Vec<f64>]) -> A64 {
    let mut h = x.clone();
    let mut offset = 0;
    for l in layers {
        let n = layer_params(l).len();
        h = forward(l, &h, mode, Some(&params[offset..offset + n]));
        offset += n;
    }
    h
}

fn map(x: &A64, f: impl Fn(f64) -> f64) -> A64 {
    A64 {
        shape: x.shape.clone(),
        data: x.data.iter().map(|&v| f(v)).collect(),
    }
}

/// Trainable parameters of a layer in visiting order, as f64.
pub fn layer_params(layer: &Layer) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    layer.visit_params("", &mut |_, t, trainable| {
        if trainable {
            out.push(f64s(t));
        }
    });
    out
}

pub fn layer_param_names(layer: &Layer) -> Vec<String> {
    let mut out = Vec::new();
    layer.visit_params("", &mut |name, _, trainable| {
        if trainable {
            out.push(name);
        }
    });
    out
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, floor)`.
pub fn scaled_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b)).max(floor);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or the absolute norm when both are tiny.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-6 {
        diff
    } else {
        diff / scale
    }
}

pub fn random_tensor(shape: &[usize], rng: &mut impl Rng, scale: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// Worst relative error between the analytic gradients of `layer` and
/// central differences of the reference forward pass, for the loss
/// `Σ r ⊙ layer(x)` with a random projection `r`.
pub fn gradient_check(layer: &Layer, input: &Tensor, mode: Mode, rng: &mut impl Rng) -> f64 {
    let mut lib = layer.clone();
    let (y, cache): (Tensor, Cache) = lib.forward(input, mode).unwrap();
    let r = random_tensor(y.shape(), rng, 1.0);
    let (grad_in, grads) = lib.backward(&cache, &r).unwrap();
    let r64 = A64::from_tensor(&r);
    let x64 = A64::from_tensor(input);
    let params = layer_params(layer);
    let loss = |x: &A64, p: &[Vec<f64>]| forward(layer, x, mode, Some(p)).dot(&r64);
    let h = 1e-6;

    let numeric_in: Vec<f64> = (0..x64.data.len())
        .map(|i| {
            let mut plus = x64.clone();
            let mut minus = x64.clone();
            plus.data[i] += h;
            minus.data[i] -= h;
            (loss(&plus, &params) - loss(&minus, &params)) / (2.0 * h)
        })
        .collect();
    let mut pairs = vec![(f64s(&grad_in), numeric_in)];
    for (pi, name) in layer_param_names(layer).iter().enumerate() {
        let analytic = grads
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, g)| f64s(g))
            .unwrap_or_else(|| panic!("no gradient for {name}"));
        let numeric: Vec<f64> = (0..params[pi].len())
            .map(|i| {
                let mut plus = params.clone();
                let mut minus = params.clone();
                plus[pi][i] += h;
                minus[pi][i] -= h;
                (loss(&x64, &plus) - loss(&x64, &minus)) / (2.0 * h)
            })
            .collect();
        pairs.push((analytic, numeric));
    }
    // Conv biases feeding a training-mode batch norm have an exactly zero
    // gradient, so the denominator is floored at 1% of the layer's overall
    // gradient norm to keep f32 round-off from reading as a 100% error.
    let total = pairs.iter().flat_map(|(_, n)| n).map(|v| v * v).sum::<f64>().sqrt();
    pairs
        .iter()
        .map(|(a, n)| scaled_error(a, n, 1e-2 * total))
        .fold(0.0, f64::max)
}

/// Global SSIM of two single images (`[c, h, w]` data), averaged over channels.
pub fn ssim64(p: &[f64], q: &[f64], channels: usize) -> f64 {
    const C1: f64 = 1e-4;
    const C2: f64 = 9e-4;
    let plane = p.len() / channels;
    let mut total = 0.0;
    for ch in 0..channels {
        let a = &p[ch * plane..(ch + 1) * plane];
        let b = &q[ch * plane..(ch + 1) * plane];
        let n = plane as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let va = a.iter().map(|v| (v - ma).powi(2)).sum::<f64>() / n;
        let vb = b.iter().map(|v| (v - mb).powi(2)).sum::<f64>() / n;
        let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n;
        total += ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
    }
    total / channels as f64
}

pub fn mse64(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / p.len() as f64
}

/// Dataset whose first pixel of image `i` is `i / count`, so membership can
/// be traced back to source indices after shuffling.
pub fn tagged_dataset(count: usize, shape: &[usize], classes: usize) -> Dataset {
    let item: usize = shape.iter().product();
    let mut data = vec![0.5f32; count * item];
    for i in 0..count {
        data[i * item] = i as f32 / count as f32;
    }
    let mut full = vec![count];
    full.extend_from_slice(shape);
    let labels = (0..count).map(|i| i % classes).collect();
    Dataset::new(Tensor::new(full, data).unwrap(), labels, classes, SplitTag::Train).unwrap()
}

pub fn tags(ds: &Dataset) -> Vec<u32> {
    ds.images().data().chunks(ds.images().item_len()).map(|img| img[0].to_bits()).collect()
}

pub const LAYER_KINDS: [&str; 10] = [
    "dense",
    "conv2d",
    "conv_transpose2d",
    "relu",
    "sigmoid",
    "max_pool2d",
    "avg_pool2d",
    "flatten",
    "batch_norm2d",
    "residual",
];

fn randomize(layer: &mut Layer, rng: &mut impl Rng) {
    layer.visit_params_mut("", &mut |name, t, _| {
        // Batch-norm affine terms stay moderate: a large negative shift can
        // zero a whole channel behind a relu, which leaves the next batch norm
        // dividing by sqrt(eps) and swamps the check in f32 round-off.
        for v in t.data_mut() {
            *v = if name.ends_with("running_var") {
                rng.random_range(0.5..2.0)
            } else if name.ends_with("gamma") {
                rng.random_range(0.5..1.5) * if rng.random_bool(0.5) { 1.0 } else { -1.0 }
            } else if name.ends_with("beta") {
                rng.random_range(-0.2..0.2)
            } else {
                rng.random_range(-1.0..1.0)
            };
        }
    });
}

/// A random layer of the named kind with a compatible random input and mode.
pub fn random_instance(kind: &str, rng: &mut impl Rng) -> (Layer, Tensor, Mode) {
    use splitguard::layers::{Conv2d, ConvTranspose2d, Dense, Pool2d, Residual};
    let n = rng.random_range(1..=3);
    let c = rng.random_range(1..=3);
    let h = rng.random_range(3..=6);
    let w = rng.random_range(3..=6);
    let mut mode = Mode::Train;
    let (mut layer, shape) = match kind {
        "dense" => {
            let i = rng.random_range(1..=8);
            (Layer::Dense(Dense::new(i, rng.random_range(1..=6))), vec![n, i])
        }
        "conv2d" => {
            let k = rng.random_range(1..=3);
            let pad = rng.random_range(0..k);
            let stride = rng.random_range(1..=2);
            let out = rng.random_range(1..=3);
            (Layer::Conv2d(Conv2d::new(c, out, k, stride, pad)), vec![n, c, h, w])
        }
        "conv_transpose2d" => {
            let k = rng.random_range(1..=3);
            let pad = rng.random_range(0..k);
            let stride = rng.random_range(1..=2);
            let op = rng.random_range(0..stride);
            let out = rng.random_range(1..=3);
            let t = ConvTranspose2d::new(c, out, k, stride, pad, op).unwrap();
            (Layer::ConvTranspose2d(t), vec![n, c, h, w])
        }
        "relu" => (Layer::Relu, vec![n, c, h, w]),
        "sigmoid" => (Layer::Sigmoid, vec![n, c, h, w]),
        "max_pool2d" | "avg_pool2d" => {
            let k = rng.random_range(1..=3);
            let stride = rng.random_range(1..=2);
            let p = Pool2d::new(k, stride);
            let layer = if kind == "max_pool2d" { Layer::MaxPool2d(p) } else { Layer::AvgPool2d(p) };
            (layer, vec![n, c, h, w])
        }
        "flatten" => (Layer::Flatten, vec![n, c, h, w]),
        "batch_norm2d" => {
            if rng.random_bool(0.5) {
                mode = Mode::Eval;
            }
            (Layer::BatchNorm2d(BatchNorm2d::new(c)), vec![n.max(2), c, h, w])
        }
        "residual" => {
            let out = rng.random_range(1..=3);
            let stride = rng.random_range(1..=2);
            let main = vec![
                Layer::Conv2d(Conv2d::new(c, out, 3, stride, 1)),
                Layer::BatchNorm2d(BatchNorm2d::new(out)),
                Layer::Relu,
                Layer::Conv2d(Conv2d::new(out, out, 3, 1, 1)),
                Layer::BatchNorm2d(BatchNorm2d::new(out)),
            ];
            let shortcut = if stride != 1 || c != out {
                vec![
                    Layer::Conv2d(Conv2d::new(c, out, 1, stride, 0)),
                    Layer::BatchNorm2d(BatchNorm2d::new(out)),
                ]
            } else {
                Vec::new()
            };
            if rng.random_bool(0.5) {
                mode = Mode::Eval;
            }
            (Layer::Residual(Residual { main, shortcut }), vec![n.max(2), c, h, w])
        }
        other => panic!("unknown layer kind {other}"),
    };
    randomize(&mut layer, rng);
    (layer, random_tensor(&shape, rng, 1.0), mode)
}

/// Worst gradient error over `count` random instances of `kind`.
pub fn worst_gradient_error(kind: &str, count: usize, seed: u64) -> f64 {
    let mut rng = splitguard::seed::rng(seed);
    (0..count)
        .map(|_| {
            let (layer, x, mode) = random_instance(kind, &mut rng);
            gradient_check(&layer, &x, mode, &mut rng)
        })
        .fold(0.0, f64::max)
}
