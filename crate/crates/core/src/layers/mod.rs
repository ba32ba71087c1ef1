//! Layer kinds with explicit forward caches and hand-written backward passes.

mod conv;
mod dense;
mod norm;
mod pool;

use rand::Rng;

pub use conv::{Conv2d, ConvTranspose2d};
pub use dense::Dense;
pub use norm::BatchNorm2d;
pub use pool::Pool2d;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Residual block `y = main(x) + shortcut(x)`; an empty shortcut is the identity.
#[derive(Clone, Debug)]
pub struct Residual {
    pub main: Vec<Layer>,
    pub shortcut: Vec<Layer>,
}

#[derive(Clone, Debug)]
pub enum Layer {
    Dense(Dense),
    Conv2d(Conv2d),
    ConvTranspose2d(ConvTranspose2d),
    Relu,
    Sigmoid,
    MaxPool2d(Pool2d),
    AvgPool2d(Pool2d),
    Flatten,
    BatchNorm2d(BatchNorm2d),
    Residual(Residual),
}

/// Activation record produced by [`Layer::forward`] and consumed by [`Layer::backward`].
#[derive(Clone, Debug)]
pub enum Cache {
    Dense { input: Tensor },
    Conv2d { cols: Vec<f32>, in_shape: Vec<usize> },
    ConvTranspose2d { input: Tensor },
    Relu { input: Tensor },
    Sigmoid { output: Tensor },
    MaxPool2d { argmax: Vec<u32>, in_shape: Vec<usize> },
    AvgPool2d { in_shape: Vec<usize> },
    Flatten { in_shape: Vec<usize> },
    BatchNorm2d { xhat: Tensor, inv_std: Vec<f32>, training: bool },
    Residual { main: Vec<Cache>, shortcut: Vec<Cache> },
}

/// Named gradients, local to the layer (`weight`, `main.0.bias`, ...).
pub type LayerGrads = Vec<(String, Tensor)>;

pub(crate) fn he_uniform(weight: &mut Tensor, fan_in: usize, rng: &mut impl Rng) {
    let bound = (6.0 / fan_in.max(1) as f32).sqrt();
    for w in weight.data_mut() {
        *w = rng.random_range(-bound..bound);
    }
}

fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Layer {
    pub fn describe(&self) -> String {
        match self {
            Layer::Dense(d) => format!("dense({}->{})", d.in_features(), d.out_features()),
            Layer::Conv2d(c) => format!(
                "conv2d({}->{}, k{} s{} p{})",
                c.in_channels(),
                c.out_channels(),
                c.kernel(),
                c.stride,
                c.padding
            ),
            Layer::ConvTranspose2d(c) => format!(
                "transposed_conv2d({}->{}, k{} s{} p{} op{})",
                c.in_channels(),
                c.out_channels(),
                c.kernel(),
                c.stride,
                c.padding,
                c.output_padding
            ),
            Layer::Relu => "relu".into(),
            Layer::Sigmoid => "sigmoid".into(),
            Layer::MaxPool2d(p) => format!("max_pool2d(k{} s{})", p.kernel, p.stride),
            Layer::AvgPool2d(p) => format!("avg_pool2d(k{} s{})", p.kernel, p.stride),
            Layer::Flatten => "flatten".into(),
            Layer::BatchNorm2d(b) => format!("batch_norm({})", b.channels()),
            Layer::Residual(r) => format!("residual({} main layers, {} shortcut layers)", r.main.len(), r.shortcut.len()),
        }
    }

    /// Output shape (including the batch dimension) for an input shape, without running the layer.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let shape = match self {
            Layer::Dense(d) => d.output_shape(input),
            Layer::Conv2d(c) => c.output_shape(input),
            Layer::ConvTranspose2d(c) => c.output_shape(input),
            Layer::Relu | Layer::Sigmoid => (!input.is_empty()).then(|| input.to_vec()),
            Layer::MaxPool2d(p) | Layer::AvgPool2d(p) => p.output_shape(input),
            Layer::Flatten => (input.len() >= 2).then(|| vec![input[0], input[1..].iter().product()]),
            Layer::BatchNorm2d(b) => b.output_shape(input),
            Layer::Residual(r) => match (chain_shape(&r.main, input), chain_shape(&r.shortcut, input)) {
                (Some(main), Some(skip)) if main == skip => Some(main),
                _ => None,
            },
        };
        shape.ok_or_else(|| self.mismatch(input))
    }

    fn mismatch(&self, actual: &[usize]) -> Error {
        Error::ShapeMismatch {
            layer: self.describe(),
            expected: self.expected_input(),
            actual: actual.to_vec(),
        }
    }

    /// Input shape this layer accepts, with 0 standing for "any size".
    fn expected_input(&self) -> Vec<usize> {
        match self {
            Layer::Dense(d) => vec![0, d.in_features()],
            Layer::Conv2d(c) => vec![0, c.in_channels(), 0, 0],
            Layer::ConvTranspose2d(c) => vec![0, c.in_channels(), 0, 0],
            Layer::BatchNorm2d(b) => vec![0, b.channels()],
            Layer::Residual(r) => r.main.first().map(|l| l.expected_input()).unwrap_or_default(),
            Layer::MaxPool2d(_) | Layer::AvgPool2d(_) => vec![0, 0, 0, 0],
            _ => vec![0],
        }
    }

    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<(Tensor, Cache)> {
        let out_shape = self.output_shape(input.shape())?;
        let result = match self {
            Layer::BatchNorm2d(b) => b.forward(input, mode),
            Layer::Residual(r) => {
                let (main_out, main) = chain_forward(&mut r.main, input, mode)?;
                let (mut out, shortcut) = chain_forward(&mut r.shortcut, input, mode)?;
                out.add_assign(&main_out);
                (out, Cache::Residual { main, shortcut })
            }
            other => other.forward_stateless(input, out_shape)?,
        };
        Ok(result)
    }

    /// Eval-mode forward pass that leaves the layer untouched and keeps no cache.
    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        let out_shape = self.output_shape(input.shape())?;
        match self {
            Layer::BatchNorm2d(b) => Ok(b.infer(input)),
            Layer::Residual(r) => {
                let mut out = chain_infer(&r.shortcut, input)?;
                out.add_assign(&chain_infer(&r.main, input)?);
                Ok(out)
            }
            Layer::Relu => Ok(input.map(|v| v.max(0.0))),
            other => Ok(other.forward_stateless(input, out_shape)?.0),
        }
    }

    fn forward_stateless(&self, input: &Tensor, out_shape: Vec<usize>) -> Result<(Tensor, Cache)> {
        Ok(match self {
            Layer::Dense(d) => d.forward(input),
            Layer::Conv2d(c) => {
                let g = c.geometry(input.shape()).ok_or_else(|| self.mismatch(input.shape()))?;
                c.forward(input, &g)
            }
            Layer::ConvTranspose2d(c) => {
                let g = c.geometry(input.shape()).ok_or_else(|| self.mismatch(input.shape()))?;
                c.forward(input, &g)
            }
            Layer::Relu => (
                input.map(|v| v.max(0.0)),
                Cache::Relu {
                    input: input.clone(),
                },
            ),
            Layer::Sigmoid => {
                let out = input.map(sigmoid);
                (out.clone(), Cache::Sigmoid { output: out })
            }
            Layer::MaxPool2d(p) => p.max_forward(input, out_shape),
            Layer::AvgPool2d(p) => p.avg_forward(input, out_shape),
            Layer::Flatten => (
                input.clone().reshape(out_shape)?,
                Cache::Flatten {
                    in_shape: input.shape().to_vec(),
                },
            ),
            Layer::BatchNorm2d(_) | Layer::Residual(_) => unreachable!("stateful layers"),
        })
    }

    fn stale(&self) -> Error {
        Error::StaleCache {
            layer: self.describe(),
        }
    }

    /// Backpropagates `grad_out` through the layer using the cache of a matching forward pass.
    pub fn backward(&self, cache: &Cache, grad_out: &Tensor) -> Result<(Tensor, LayerGrads)> {
        let in_shape = cache_input_shape(cache);
        let expected_out = self.output_shape(&in_shape).map_err(|_| self.stale())?;
        if grad_out.shape() != expected_out.as_slice() {
            return Err(Error::ShapeMismatch {
                layer: format!("{} (backward)", self.describe()),
                expected: expected_out,
                actual: grad_out.shape().to_vec(),
            });
        }
        match (self, cache) {
            (Layer::Dense(d), Cache::Dense { input }) => Ok(d.backward(input, grad_out)),
            (Layer::Conv2d(c), Cache::Conv2d { cols, in_shape }) => {
                let g = c.geometry(in_shape).ok_or_else(|| self.stale())?;
                Ok(c.backward(cols, &g, in_shape[0], grad_out))
            }
            (Layer::ConvTranspose2d(c), Cache::ConvTranspose2d { input }) => {
                let g = c.geometry(input.shape()).ok_or_else(|| self.stale())?;
                Ok(c.backward(input, &g, grad_out))
            }
            (Layer::Relu, Cache::Relu { input }) => {
                let mut grad = grad_out.clone();
                for (g, &x) in grad.data_mut().iter_mut().zip(input.data()) {
                    if x <= 0.0 {
                        *g = 0.0;
                    }
                }
                Ok((grad, Vec::new()))
            }
            (Layer::Sigmoid, Cache::Sigmoid { output }) => {
                let mut grad = grad_out.clone();
                for (g, &y) in grad.data_mut().iter_mut().zip(output.data()) {
                    *g *= y * (1.0 - y);
                }
                Ok((grad, Vec::new()))
            }
            (Layer::MaxPool2d(_), Cache::MaxPool2d { argmax, in_shape }) => {
                Ok((Pool2d::max_backward(argmax, in_shape, grad_out), Vec::new()))
            }
            (Layer::AvgPool2d(p), Cache::AvgPool2d { in_shape }) => {
                Ok((p.avg_backward(in_shape, grad_out), Vec::new()))
            }
            (Layer::Flatten, Cache::Flatten { in_shape }) => {
                Ok((grad_out.clone().reshape(in_shape.clone())?, Vec::new()))
            }
            (Layer::BatchNorm2d(b), Cache::BatchNorm2d { xhat, inv_std, training }) => {
                Ok(b.backward(xhat, inv_std, *training, grad_out))
            }
            (Layer::Residual(r), Cache::Residual { main, shortcut }) => {
                if main.len() != r.main.len() || shortcut.len() != r.shortcut.len() {
                    return Err(self.stale());
                }
                let (mut grad_in, mut grads) = chain_backward(&r.main, main, grad_out, "main")?;
                let (skip_in, skip_grads) = chain_backward(&r.shortcut, shortcut, grad_out, "shortcut")?;
                grad_in.add_assign(&skip_in);
                grads.extend(skip_grads);
                Ok((grad_in, grads))
            }
            _ => Err(self.stale()),
        }
    }

    /// Visits every parameter; the flag marks trainable ones (running statistics are not).
    pub fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor, bool)) {
        match self {
            Layer::Dense(d) => {
                f(format!("{prefix}weight"), &d.weight, true);
                f(format!("{prefix}bias"), &d.bias, true);
            }
            Layer::Conv2d(c) => {
                f(format!("{prefix}weight"), &c.weight, true);
                f(format!("{prefix}bias"), &c.bias, true);
            }
            Layer::ConvTranspose2d(c) => {
                f(format!("{prefix}weight"), &c.weight, true);
                f(format!("{prefix}bias"), &c.bias, true);
            }
            Layer::BatchNorm2d(b) => {
                f(format!("{prefix}gamma"), &b.gamma, true);
                f(format!("{prefix}beta"), &b.beta, true);
                f(format!("{prefix}running_mean"), &b.running_mean, false);
                f(format!("{prefix}running_var"), &b.running_var, false);
            }
            Layer::Residual(r) => {
                for (i, l) in r.main.iter().enumerate() {
                    l.visit_params(&format!("{prefix}main.{i}."), f);
                }
                for (i, l) in r.shortcut.iter().enumerate() {
                    l.visit_params(&format!("{prefix}shortcut.{i}."), f);
                }
            }
            _ => {}
        }
    }

    pub fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor, bool)) {
        match self {
            Layer::Dense(d) => {
                f(format!("{prefix}weight"), &mut d.weight, true);
                f(format!("{prefix}bias"), &mut d.bias, true);
            }
            Layer::Conv2d(c) => {
                f(format!("{prefix}weight"), &mut c.weight, true);
                f(format!("{prefix}bias"), &mut c.bias, true);
            }
            Layer::ConvTranspose2d(c) => {
                f(format!("{prefix}weight"), &mut c.weight, true);
                f(format!("{prefix}bias"), &mut c.bias, true);
            }
            Layer::BatchNorm2d(b) => {
                f(format!("{prefix}gamma"), &mut b.gamma, true);
                f(format!("{prefix}beta"), &mut b.beta, true);
                f(format!("{prefix}running_mean"), &mut b.running_mean, false);
                f(format!("{prefix}running_var"), &mut b.running_var, false);
            }
            Layer::Residual(r) => {
                for (i, l) in r.main.iter_mut().enumerate() {
                    l.visit_params_mut(&format!("{prefix}main.{i}."), f);
                }
                for (i, l) in r.shortcut.iter_mut().enumerate() {
                    l.visit_params_mut(&format!("{prefix}shortcut.{i}."), f);
                }
            }
            _ => {}
        }
    }

    /// He-style uniform weights, zero biases; batch norm reset to identity.
    pub fn init(&mut self, rng: &mut impl Rng) {
        match self {
            Layer::Dense(d) => d.init(rng),
            Layer::Conv2d(c) => c.init(rng),
            Layer::ConvTranspose2d(c) => c.init(rng),
            Layer::BatchNorm2d(b) => *b = BatchNorm2d::new(b.channels()),
            Layer::Residual(r) => {
                for l in r.main.iter_mut().chain(r.shortcut.iter_mut()) {
                    l.init(rng);
                }
            }
            _ => {}
        }
    }

    pub fn trainable_count(&self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, t, trainable| {
            if trainable {
                n += t.len();
            }
        });
        n
    }
}

fn cache_input_shape(cache: &Cache) -> Vec<usize> {
    match cache {
        Cache::Dense { input } | Cache::ConvTranspose2d { input } | Cache::Relu { input } => {
            input.shape().to_vec()
        }
        Cache::Conv2d { in_shape, .. }
        | Cache::MaxPool2d { in_shape, .. }
        | Cache::AvgPool2d { in_shape }
        | Cache::Flatten { in_shape } => in_shape.clone(),
        Cache::Sigmoid { output } => output.shape().to_vec(),
        Cache::BatchNorm2d { xhat, .. } => xhat.shape().to_vec(),
        Cache::Residual { main, shortcut } => main
            .first()
            .or(shortcut.first())
            .map(cache_input_shape)
            .unwrap_or_default(),
    }
}

fn chain_shape(layers: &[Layer], input: &[usize]) -> Option<Vec<usize>> {
    let mut shape = input.to_vec();
    for l in layers {
        shape = l.output_shape(&shape).ok()?;
    }
    Some(shape)
}

fn chain_forward(layers: &mut [Layer], input: &Tensor, mode: Mode) -> Result<(Tensor, Vec<Cache>)> {
    let mut caches = Vec::with_capacity(layers.len());
    let mut x = input.clone();
    for l in layers {
        let (y, c) = l.forward(&x, mode)?;
        caches.push(c);
        x = y;
    }
    Ok((x, caches))
}

fn chain_infer(layers: &[Layer], input: &Tensor) -> Result<Tensor> {
    let mut x = input.clone();
    for l in layers {
        x = l.infer(&x)?;
    }
    Ok(x)
}

fn chain_backward(
    layers: &[Layer],
    caches: &[Cache],
    grad_out: &Tensor,
    prefix: &str,
) -> Result<(Tensor, LayerGrads)> {
    let mut grad = grad_out.clone();
    let mut grads = Vec::new();
    for (i, (l, c)) in layers.iter().zip(caches).enumerate().rev() {
        let (g, pg) = l.backward(c, &grad)?;
        grads.extend(pg.into_iter().map(|(n, t)| (format!("{prefix}.{i}.{n}"), t)));
        grad = g;
    }
    Ok((grad, grads))
}
