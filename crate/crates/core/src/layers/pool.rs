use super::Cache;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pool2d {
    pub kernel: usize,
    pub stride: usize,
}

impl Pool2d {
    pub fn new(kernel: usize, stride: usize) -> Self {
        Pool2d { kernel, stride }
    }

    pub(crate) fn output_shape(&self, input: &[usize]) -> Option<Vec<usize>> {
        let [n, c, h, w] = *input else { return None };
        if h < self.kernel || w < self.kernel || self.stride == 0 || self.kernel == 0 {
            return None;
        }
        Some(vec![
            n,
            c,
            (h - self.kernel) / self.stride + 1,
            (w - self.kernel) / self.stride + 1,
        ])
    }

    pub(crate) fn max_forward(&self, input: &Tensor, out_shape: Vec<usize>) -> (Tensor, Cache) {
        let s = input.shape();
        let (h, w) = (s[2], s[3]);
        let (oh, ow) = (out_shape[2], out_shape[3]);
        let planes = s[0] * s[1];
        let mut out = Vec::with_capacity(planes * oh * ow);
        let mut argmax = Vec::with_capacity(planes * oh * ow);
        let x = input.data();
        for p in 0..planes {
            let base = p * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * self.stride * w + ox * self.stride;
                    for ki in 0..self.kernel {
                        for kj in 0..self.kernel {
                            let idx = base + (oy * self.stride + ki) * w + ox * self.stride + kj;
                            if x[idx] > x[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best as u32);
                }
            }
        }
        (
            Tensor::new(out_shape, out).expect("pool output shape"),
            Cache::MaxPool2d {
                argmax,
                in_shape: s.to_vec(),
            },
        )
    }

    pub(crate) fn max_backward(argmax: &[u32], in_shape: &[usize], grad_out: &Tensor) -> Tensor {
        let mut grad = Tensor::zeros(in_shape);
        let g = grad.data_mut();
        for (&idx, &d) in argmax.iter().zip(grad_out.data()) {
            g[idx as usize] += d;
        }
        grad
    }

    pub(crate) fn avg_forward(&self, input: &Tensor, out_shape: Vec<usize>) -> (Tensor, Cache) {
        let s = input.shape();
        let (h, w) = (s[2], s[3]);
        let (oh, ow) = (out_shape[2], out_shape[3]);
        let norm = 1.0 / (self.kernel * self.kernel) as f32;
        let x = input.data();
        let mut out = Vec::with_capacity(s[0] * s[1] * oh * ow);
        for p in 0..s[0] * s[1] {
            let base = p * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0f32;
                    for ki in 0..self.kernel {
                        let row = base + (oy * self.stride + ki) * w + ox * self.stride;
                        acc += x[row..row + self.kernel].iter().sum::<f32>();
                    }
                    out.push(acc * norm);
                }
            }
        }
        (
            Tensor::new(out_shape, out).expect("pool output shape"),
            Cache::AvgPool2d {
                in_shape: s.to_vec(),
            },
        )
    }

    pub(crate) fn avg_backward(&self, in_shape: &[usize], grad_out: &Tensor) -> Tensor {
        let (h, w) = (in_shape[2], in_shape[3]);
        let (oh, ow) = (grad_out.shape()[2], grad_out.shape()[3]);
        let norm = 1.0 / (self.kernel * self.kernel) as f32;
        let mut grad = Tensor::zeros(in_shape);
        let g = grad.data_mut();
        let d = grad_out.data();
        for p in 0..in_shape[0] * in_shape[1] {
            for oy in 0..oh {
                for ox in 0..ow {
                    let v = d[(p * oh + oy) * ow + ox] * norm;
                    for ki in 0..self.kernel {
                        let row = p * h * w + (oy * self.stride + ki) * w + ox * self.stride;
                        g[row..row + self.kernel].iter_mut().for_each(|x| *x += v);
                    }
                }
            }
        }
        grad
    }
}
