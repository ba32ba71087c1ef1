use rand::Rng;

use super::{he_uniform, Cache};
use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

/// Sliding-window geometry over one `channels × height × width` image.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Geometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl Geometry {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Option<Self> {
        if height + 2 * padding < kernel || width + 2 * padding < kernel || stride == 0 {
            return None;
        }
        Some(Geometry {
            channels,
            height,
            width,
            kernel,
            stride,
            padding,
            out_height: (height + 2 * padding - kernel) / stride + 1,
            out_width: (width + 2 * padding - kernel) / stride + 1,
        })
    }

    fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn positions(&self) -> usize {
        self.out_height * self.out_width
    }

    fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }
}

/// Unfolds an image into a `(C·k·k) × (Ho·Wo)` patch matrix.
pub(crate) fn im2col(image: &[f32], g: &Geometry, cols: &mut [f32]) {
    let positions = g.positions();
    let (h, w) = (g.height as isize, g.width as isize);
    for c in 0..g.channels {
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = ((c * g.kernel + ki) * g.kernel + kj) * positions;
                for oy in 0..g.out_height {
                    let dst = &mut cols[row + oy * g.out_width..row + (oy + 1) * g.out_width];
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    if iy < 0 || iy >= h {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &image[(c * g.height + iy as usize) * g.width..][..g.width];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                        *d = if ix >= 0 && ix < w { src[ix as usize] } else { 0.0 };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds patch columns back into an image.
pub(crate) fn col2im(cols: &[f32], g: &Geometry, image: &mut [f32]) {
    let positions = g.positions();
    let (h, w) = (g.height as isize, g.width as isize);
    for c in 0..g.channels {
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = ((c * g.kernel + ki) * g.kernel + kj) * positions;
                for oy in 0..g.out_height {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    let src = &cols[row + oy * g.out_width..row + (oy + 1) * g.out_width];
                    let dst = &mut image[(c * g.height + iy as usize) * g.width..][..g.width];
                    for (ox, s) in src.iter().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                        if ix >= 0 && ix < w {
                            dst[ix as usize] += s;
                        }
                    }
                }
            }
        }
    }
}

/// 2-D cross-correlation. Weight layout `[out, in, k, k]`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        Conv2d {
            weight: Tensor::zeros(&[out_channels, in_channels, kernel, kernel]),
            bias: Tensor::zeros(&[out_channels]),
            stride,
            padding,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    pub(crate) fn geometry(&self, input: &[usize]) -> Option<Geometry> {
        match *input {
            [_, c, h, w] if c == self.in_channels() => {
                Geometry::new(c, h, w, self.kernel(), self.stride, self.padding)
            }
            _ => None,
        }
    }

    pub(crate) fn output_shape(&self, input: &[usize]) -> Option<Vec<usize>> {
        let g = self.geometry(input)?;
        Some(vec![input[0], self.out_channels(), g.out_height, g.out_width])
    }

    pub(crate) fn init(&mut self, rng: &mut impl Rng) {
        let fan_in = self.in_channels() * self.kernel() * self.kernel();
        he_uniform(&mut self.weight, fan_in, rng);
        self.bias.data_mut().fill(0.0);
    }

    pub(crate) fn forward(&self, input: &Tensor, g: &Geometry) -> (Tensor, Cache) {
        let batch = input.batch();
        let cout = self.out_channels();
        let (patch, positions) = (g.patch_len(), g.positions());
        let mut cols = vec![0.0f32; batch * patch * positions];
        let mut out = vec![0.0f32; batch * cout * positions];
        for n in 0..batch {
            let image = &input.data()[n * g.image_len()..(n + 1) * g.image_len()];
            let cols_n = &mut cols[n * patch * positions..(n + 1) * patch * positions];
            im2col(image, g, cols_n);
            let out_n = &mut out[n * cout * positions..(n + 1) * cout * positions];
            gemm(cout, patch, positions, self.weight.data(), false, cols_n, false, out_n, false);
            for (co, chunk) in out_n.chunks_mut(positions).enumerate() {
                let b = self.bias.data()[co];
                chunk.iter_mut().for_each(|v| *v += b);
            }
        }
        let shape = vec![batch, cout, g.out_height, g.out_width];
        (
            Tensor::new(shape, out).expect("conv output shape"),
            Cache::Conv2d {
                cols,
                in_shape: input.shape().to_vec(),
            },
        )
    }

    pub(crate) fn backward(
        &self,
        cols: &[f32],
        g: &Geometry,
        batch: usize,
        grad_out: &Tensor,
    ) -> (Tensor, Vec<(String, Tensor)>) {
        let cout = self.out_channels();
        let (patch, positions) = (g.patch_len(), g.positions());
        let mut grad_w = vec![0.0f32; cout * patch];
        let mut grad_b = vec![0.0f32; cout];
        let mut grad_in = vec![0.0f32; batch * g.image_len()];
        let mut dcols = vec![0.0f32; patch * positions];
        for n in 0..batch {
            let dout = &grad_out.data()[n * cout * positions..(n + 1) * cout * positions];
            let cols_n = &cols[n * patch * positions..(n + 1) * patch * positions];
            gemm(cout, positions, patch, dout, false, cols_n, true, &mut grad_w, true);
            for (co, chunk) in dout.chunks(positions).enumerate() {
                grad_b[co] += chunk.iter().sum::<f32>();
            }
            gemm(patch, cout, positions, self.weight.data(), true, dout, false, &mut dcols, false);
            col2im(
                &dcols,
                g,
                &mut grad_in[n * g.image_len()..(n + 1) * g.image_len()],
            );
        }
        let in_shape = vec![batch, g.channels, g.height, g.width];
        (
            Tensor::new(in_shape, grad_in).expect("conv grad shape"),
            vec![
                (
                    "weight".into(),
                    Tensor::new(self.weight.shape().to_vec(), grad_w).expect("weight grad"),
                ),
                (
                    "bias".into(),
                    Tensor::new(vec![cout], grad_b).expect("bias grad"),
                ),
            ],
        )
    }
}

/// Transposed convolution (the adjoint of [`Conv2d`]). Weight layout `[in, out, k, k]`.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
}

impl ConvTranspose2d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Self> {
        if stride == 0 || output_padding >= stride {
            return Err(Error::Architecture(format!(
                "transposed conv needs output_padding < stride (got {output_padding} and {stride})"
            )));
        }
        Ok(ConvTranspose2d {
            weight: Tensor::zeros(&[in_channels, out_channels, kernel, kernel]),
            bias: Tensor::zeros(&[out_channels]),
            stride,
            padding,
            output_padding,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    /// Geometry of the equivalent forward convolution over the output image.
    pub(crate) fn geometry(&self, input: &[usize]) -> Option<Geometry> {
        let [_, c, h, w] = *input else { return None };
        if c != self.in_channels() || h == 0 || w == 0 {
            return None;
        }
        let k = self.kernel();
        let span = |x: usize| ((x - 1) * self.stride + k + self.output_padding).checked_sub(2 * self.padding);
        let (oh, ow) = (span(h)?, span(w)?);
        let g = Geometry::new(self.out_channels(), oh, ow, k, self.stride, self.padding)?;
        (g.out_height == h && g.out_width == w).then_some(g)
    }

    pub(crate) fn output_shape(&self, input: &[usize]) -> Option<Vec<usize>> {
        let g = self.geometry(input)?;
        Some(vec![input[0], self.out_channels(), g.height, g.width])
    }

    pub(crate) fn init(&mut self, rng: &mut impl Rng) {
        let fan_in = self.out_channels() * self.kernel() * self.kernel();
        he_uniform(&mut self.weight, fan_in, rng);
        self.bias.data_mut().fill(0.0);
    }

    pub(crate) fn forward(&self, input: &Tensor, g: &Geometry) -> (Tensor, Cache) {
        let batch = input.batch();
        let cin = self.in_channels();
        let (patch, positions) = (g.patch_len(), g.positions());
        let mut cols = vec![0.0f32; patch * positions];
        let mut out = vec![0.0f32; batch * g.image_len()];
        for n in 0..batch {
            let x = &input.data()[n * cin * positions..(n + 1) * cin * positions];
            gemm(patch, cin, positions, self.weight.data(), true, x, false, &mut cols, false);
            let out_n = &mut out[n * g.image_len()..(n + 1) * g.image_len()];
            col2im(&cols, g, out_n);
            for (co, chunk) in out_n.chunks_mut(g.height * g.width).enumerate() {
                let b = self.bias.data()[co];
                chunk.iter_mut().for_each(|v| *v += b);
            }
        }
        let shape = vec![batch, g.channels, g.height, g.width];
        (
            Tensor::new(shape, out).expect("transposed conv output shape"),
            Cache::ConvTranspose2d {
                input: input.clone(),
            },
        )
    }

    pub(crate) fn backward(
        &self,
        input: &Tensor,
        g: &Geometry,
        grad_out: &Tensor,
    ) -> (Tensor, Vec<(String, Tensor)>) {
        let batch = input.batch();
        let cin = self.in_channels();
        let (patch, positions) = (g.patch_len(), g.positions());
        let mut dcols = vec![0.0f32; patch * positions];
        let mut grad_in = vec![0.0f32; input.len()];
        let mut grad_w = vec![0.0f32; self.weight.len()];
        let mut grad_b = vec![0.0f32; g.channels];
        for n in 0..batch {
            let dout = &grad_out.data()[n * g.image_len()..(n + 1) * g.image_len()];
            for (co, chunk) in dout.chunks(g.height * g.width).enumerate() {
                grad_b[co] += chunk.iter().sum::<f32>();
            }
            im2col(dout, g, &mut dcols);
            let x = &input.data()[n * cin * positions..(n + 1) * cin * positions];
            gemm(cin, patch, positions, self.weight.data(), false, &dcols, false,
                 &mut grad_in[n * cin * positions..(n + 1) * cin * positions], false);
            gemm(cin, positions, patch, x, false, &dcols, true, &mut grad_w, true);
        }
        (
            Tensor::new(input.shape().to_vec(), grad_in).expect("grad shape"),
            vec![
                (
                    "weight".into(),
                    Tensor::new(self.weight.shape().to_vec(), grad_w).expect("weight grad"),
                ),
                (
                    "bias".into(),
                    Tensor::new(vec![g.channels], grad_b).expect("bias grad"),
                ),
            ],
        )
    }
}
