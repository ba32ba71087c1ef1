//! Network architectures, the head/body/tail split and the mirrored inversion network.
//!
//! Builders return zero-initialized networks; call [`Network::init`] for
//! trainable weights. Every architecture declares named cut points
//! (`block1`..`block4` for the ConvNet, `stem`/`RB1`..`RB3` for the residual
//! net, and `classifier` before the final dense layer) and splits are only
//! allowed at those points.

use crate::error::{Error, Result};
use crate::layers::{BatchNorm2d, Conv2d, ConvTranspose2d, Dense, Layer, Mode, Pool2d, Residual};
use crate::network::{Boundary, NetCache, Network, ParamSet};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvNetOptions {
    pub widths: [usize; 4],
    pub hidden: usize,
}

impl Default for ConvNetOptions {
    fn default() -> Self {
        ConvNetOptions {
            widths: [8, 8, 16, 16],
            hidden: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResNetOptions {
    /// Channels of the stem/RB1, RB2 and RB3.
    pub widths: [usize; 3],
    pub hidden: usize,
}

impl Default for ResNetOptions {
    fn default() -> Self {
        ResNetOptions {
            widths: [8, 16, 32],
            hidden: 32,
        }
    }
}

fn image_dims(input_shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *input_shape {
        [c, h, w] if c > 0 => Ok((c, h, w)),
        _ => Err(Error::Architecture(format!(
            "expected a [channels, height, width] input, got {input_shape:?}"
        ))),
    }
}

fn boundary(name: &str, index: usize) -> Boundary {
    Boundary {
        name: name.into(),
        index,
    }
}

pub fn build_convnet(input_shape: &[usize], classes: usize) -> Result<Network> {
    build_convnet_with(input_shape, classes, &ConvNetOptions::default())
}

/// Four `conv3x3 → relu` blocks with 2×2 max pooling after blocks 2 and 4,
/// then `flatten → dense → relu → dense`.
pub fn build_convnet_with(input_shape: &[usize], classes: usize, opts: &ConvNetOptions) -> Result<Network> {
    let (c, h, w) = image_dims(input_shape)?;
    if h < 8 || w < 8 {
        return Err(Error::Architecture(format!(
            "ConvNet needs at least 8x8 inputs for its pooling schedule, got {h}x{w}"
        )));
    }
    if classes < 2 {
        return Err(Error::Architecture("need at least two classes".into()));
    }
    let [w1, w2, w3, w4] = opts.widths;
    let mut layers = Vec::new();
    let mut bounds = Vec::new();
    let mut cin = c;
    for (i, &cout) in [w1, w2, w3, w4].iter().enumerate() {
        layers.push(Layer::Conv2d(Conv2d::new(cin, cout, 3, 1, 1)));
        layers.push(Layer::Relu);
        if i % 2 == 1 {
            layers.push(Layer::MaxPool2d(Pool2d::new(2, 2)));
        }
        bounds.push(boundary(&format!("block{}", i + 1), layers.len()));
        cin = cout;
    }
    let flat = w4 * (h / 2 / 2) * (w / 2 / 2);
    layers.extend([
        Layer::Flatten,
        Layer::Dense(Dense::new(flat, opts.hidden)),
        Layer::Relu,
    ]);
    bounds.push(boundary("classifier", layers.len()));
    layers.push(Layer::Dense(Dense::new(opts.hidden, classes)));
    Ok(Network::new(input_shape.to_vec(), layers)?.with_boundaries(bounds))
}

fn residual_block(cin: usize, cout: usize, stride: usize) -> Layer {
    let main = vec![
        Layer::Conv2d(Conv2d::new(cin, cout, 3, stride, 1)),
        Layer::BatchNorm2d(BatchNorm2d::new(cout)),
        Layer::Relu,
        Layer::Conv2d(Conv2d::new(cout, cout, 3, 1, 1)),
        Layer::BatchNorm2d(BatchNorm2d::new(cout)),
    ];
    let shortcut = if stride != 1 || cin != cout {
        vec![
            Layer::Conv2d(Conv2d::new(cin, cout, 1, stride, 0)),
            Layer::BatchNorm2d(BatchNorm2d::new(cout)),
        ]
    } else {
        Vec::new()
    };
    Layer::Residual(Residual { main, shortcut })
}

pub fn build_small_resnet(input_shape: &[usize], classes: usize, blocks: usize) -> Result<Network> {
    build_small_resnet_with(input_shape, classes, blocks, &ResNetOptions::default())
}

/// Stem `conv → bn → relu`, then residual blocks RB1 (same width), RB2 and
/// RB3 (stride 2, doubling width), each followed by a relu, then global
/// average pooling and `dense → relu → dense`.
pub fn build_small_resnet_with(
    input_shape: &[usize],
    classes: usize,
    blocks: usize,
    opts: &ResNetOptions,
) -> Result<Network> {
    if !(2..=3).contains(&blocks) {
        return Err(Error::Architecture(format!(
            "small residual net supports 2 or 3 blocks, got {blocks}"
        )));
    }
    let (c, h, w) = image_dims(input_shape)?;
    if h < 8 || w < 8 || h != w {
        return Err(Error::Architecture(format!(
            "small residual net needs square inputs of at least 8x8, got {h}x{w}"
        )));
    }
    let [w1, w2, w3] = opts.widths;
    let mut layers = vec![
        Layer::Conv2d(Conv2d::new(c, w1, 3, 1, 1)),
        Layer::BatchNorm2d(BatchNorm2d::new(w1)),
        Layer::Relu,
    ];
    let mut bounds = vec![boundary("stem", layers.len())];
    let plan = [(w1, w1, 1), (w1, w2, 2), (w2, w3, 2)];
    for (i, &(cin, cout, stride)) in plan.iter().take(blocks).enumerate() {
        layers.push(residual_block(cin, cout, stride));
        layers.push(Layer::Relu);
        bounds.push(boundary(&format!("RB{}", i + 1), layers.len()));
    }
    let width = plan[blocks - 1].1;
    let probe = Network::new(input_shape.to_vec(), layers.clone())?.output_shape();
    let side = probe[1];
    layers.extend([
        Layer::AvgPool2d(Pool2d::new(side, side)),
        Layer::Flatten,
        Layer::Dense(Dense::new(width, opts.hidden)),
        Layer::Relu,
    ]);
    bounds.push(boundary("classifier", layers.len()));
    layers.push(Layer::Dense(Dense::new(opts.hidden, classes)));
    Ok(Network::new(input_shape.to_vec(), layers)?.with_boundaries(bounds))
}

/// Layer indices at which the network is cut: head is `..head_end`, body
/// `head_end..body_end`, tail `body_end..`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitSpec {
    pub head_end: usize,
    pub body_end: usize,
}

impl SplitSpec {
    /// Head ends at the named cut point; the tail is the final classifier layer.
    pub fn at(network: &Network, head_cut: &str) -> Result<SplitSpec> {
        let head_end = network
            .boundary(head_cut)
            .ok_or_else(|| Error::InvalidSplit(format!("unknown cut point `{head_cut}`")))?;
        let body_end = network
            .boundary("classifier")
            .unwrap_or(network.layers().len() - 1);
        Ok(SplitSpec { head_end, body_end })
    }

    fn validate(&self, network: &Network) -> Result<()> {
        let count = network.layers().len();
        if !(0 < self.head_end && self.head_end < self.body_end && self.body_end < count) {
            return Err(Error::InvalidSplit(format!(
                "need 0 < head_end ({}) < body_end ({}) < layer count ({count})",
                self.head_end, self.body_end
            )));
        }
        let bounds = network.boundaries();
        if bounds.is_empty() {
            return Ok(());
        }
        for cut in [self.head_end, self.body_end] {
            if bounds.iter().any(|b| b.index == cut) {
                continue;
            }
            let start = bounds.iter().map(|b| b.index).filter(|&i| i < cut).max().unwrap_or(0);
            let (block, end) = bounds
                .iter()
                .find(|b| b.index > cut)
                .map(|b| (b.name.as_str(), b.index))
                .unwrap_or(("tail", network.layers().len()));
            let inside_residual = network.layers()[start..end]
                .iter()
                .any(|l| matches!(l, Layer::Residual(_)));
            let what = if inside_residual { "residual block" } else { "block" };
            return Err(Error::InvalidSplit(format!(
                "cut at layer {cut} falls inside {what} `{block}`; cuts are only allowed at block boundaries"
            )));
        }
        Ok(())
    }
}

/// The three segments of a split network.
#[derive(Clone, Debug)]
pub struct SplitModel {
    pub head: Network,
    pub body: Network,
    pub tail: Network,
}

pub fn split(network: &Network, spec: SplitSpec) -> Result<SplitModel> {
    spec.validate(network)?;
    Ok(SplitModel {
        head: network.segment(0, spec.head_end)?,
        body: network.segment(spec.head_end, spec.body_end)?,
        tail: network.segment(spec.body_end, network.layers().len())?,
    })
}

impl SplitModel {
    /// Concatenates the segments back into a single network.
    pub fn merge(&self) -> Result<Network> {
        let layers = self
            .head
            .layers()
            .iter()
            .chain(self.body.layers())
            .chain(self.tail.layers())
            .cloned()
            .collect();
        let mut bounds = Vec::new();
        let mut offset = 0;
        for seg in [&self.head, &self.body, &self.tail] {
            bounds.extend(seg.boundaries().iter().map(|b| Boundary {
                name: b.name.clone(),
                index: b.index + offset,
            }));
            offset += seg.layers().len();
        }
        Ok(Network::new(self.head.input_shape().to_vec(), layers)?.with_boundaries(bounds))
    }

    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        self.tail.infer(&self.body.infer(&self.head.infer(input)?)?)
    }

    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<(Tensor, [NetCache; 3])> {
        let (s, hc) = self.head.forward(input, mode)?;
        let (b, bc) = self.body.forward(&s, mode)?;
        let (y, tc) = self.tail.forward(&b, mode)?;
        Ok((y, [hc, bc, tc]))
    }

    /// All parameters, prefixed `head.`, `body.` and `tail.`.
    pub fn params(&self) -> ParamSet {
        let mut out = self.head.params().prefixed("head.");
        out.extend(self.body.params().prefixed("body."));
        out.extend(self.tail.params().prefixed("tail."));
        out
    }

    pub fn load_params(&mut self, params: &ParamSet) -> Result<()> {
        self.head.load_params(&params.strip_prefix("head."))?;
        self.body.load_params(&params.strip_prefix("body."))?;
        self.tail.load_params(&params.strip_prefix("tail."))
    }

    /// Trainable parameters held by a client (head + tail).
    pub fn client_param_count(&self) -> usize {
        self.head.trainable_count() + self.tail.trainable_count()
    }

    /// Trainable parameters held by the training server (body).
    pub fn server_param_count(&self) -> usize {
        self.body.trainable_count()
    }
}

/// Mirror of `head`: maps head outputs back to head inputs.
///
/// Each convolution becomes a transposed convolution with the channel
/// counts swapped, each pooling layer a transposed convolution with the
/// pooling stride, residual blocks mirror their main path. The head's own
/// activations and normalization are not mirrored. Every inner transposed
/// convolution is followed by batch norm and a relu (without the norm the
/// relus of deep mirrors die early in training); a sigmoid squashes the
/// output into `[0, 1]`.
pub fn build_inversion(head: &Network) -> Result<Network> {
    let shapes = head.shapes()?;
    let mut mirrored = Vec::new();
    for (layer, in_shape) in head.layers().iter().zip(&shapes).rev() {
        mirror(layer, in_shape, &mut mirrored)?;
    }
    if mirrored.is_empty() {
        return Err(Error::Unmirrorable(
            "head without convolution or pooling layers".into(),
        ));
    }
    let last = mirrored.len() - 1;
    let mut layers = Vec::with_capacity(3 * mirrored.len());
    for (i, t) in mirrored.into_iter().enumerate() {
        let channels = t.out_channels();
        layers.push(Layer::ConvTranspose2d(t));
        if i == last {
            layers.push(Layer::Sigmoid);
        } else {
            layers.push(Layer::BatchNorm2d(BatchNorm2d::new(channels)));
            layers.push(Layer::Relu);
        }
    }
    let net = Network::new(head.output_shape(), layers)?;
    debug_assert_eq!(net.output_shape(), head.input_shape());
    Ok(net)
}

fn output_padding(layer: &Layer, in_shape: &[usize], kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    let out = layer.output_shape(in_shape)?;
    let pad = |input: usize, output: usize| -> Option<usize> {
        input.checked_sub(((output - 1) * stride + kernel).checked_sub(2 * padding)?)
    };
    match (pad(in_shape[2], out[2]), pad(in_shape[3], out[3])) {
        (Some(a), Some(b)) if a == b && a < stride => Ok(a),
        _ => Err(Error::Unmirrorable(format!(
            "{} on input {in_shape:?}",
            layer.describe()
        ))),
    }
}

fn mirror(layer: &Layer, in_shape: &[usize], out: &mut Vec<ConvTranspose2d>) -> Result<()> {
    match layer {
        Layer::Conv2d(c) => {
            let op = output_padding(layer, in_shape, c.kernel(), c.stride, c.padding)?;
            out.push(ConvTranspose2d::new(
                c.out_channels(),
                c.in_channels(),
                c.kernel(),
                c.stride,
                c.padding,
                op,
            )?);
        }
        Layer::MaxPool2d(p) | Layer::AvgPool2d(p) => {
            let op = output_padding(layer, in_shape, p.kernel, p.stride, 0)?;
            let ch = in_shape[1];
            out.push(ConvTranspose2d::new(ch, ch, p.kernel, p.stride, 0, op)?);
        }
        Layer::Relu | Layer::BatchNorm2d(_) => {}
        Layer::Residual(r) => {
            let mut shape = in_shape.to_vec();
            let mut inner = Vec::new();
            for l in &r.main {
                inner.push((l, shape.clone()));
                shape = l.output_shape(&shape)?;
            }
            for (l, s) in inner.into_iter().rev() {
                mirror(l, &s, out)?;
            }
        }
        other => return Err(Error::Unmirrorable(other.describe())),
    }
    Ok(())
}
