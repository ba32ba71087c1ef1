use super::{Cache, Mode};
use crate::tensor::Tensor;

/// Per-channel batch normalization over `[N, C, ...]` inputs.
///
/// Training mode normalizes with the (biased) batch statistics and folds them
/// into the running statistics with `momentum`; the running variance uses the
/// unbiased estimate. Eval mode uses the running statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f32,
    pub eps: f32,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Tensor::full(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub(crate) fn output_shape(&self, input: &[usize]) -> Option<Vec<usize>> {
        (input.len() >= 2 && input[1] == self.channels()).then(|| input.to_vec())
    }

    fn spatial(shape: &[usize]) -> usize {
        shape[2..].iter().product()
    }

    pub(crate) fn forward(&mut self, input: &Tensor, mode: Mode) -> (Tensor, Cache) {
        let shape = input.shape();
        let (n, c, hw) = (shape[0], shape[1], Self::spatial(shape));
        let count = (n * hw) as f64;
        let x = input.data();
        let mut inv_std = vec![0.0f32; c];
        let mut means = vec![0.0f32; c];
        for ch in 0..c {
            let (mean, var) = match mode {
                Mode::Train => {
                    let mut sum = 0.0f64;
                    for i in 0..n {
                        sum += x[(i * c + ch) * hw..][..hw].iter().map(|&v| v as f64).sum::<f64>();
                    }
                    let mean = sum / count;
                    let mut sq = 0.0f64;
                    for i in 0..n {
                        sq += x[(i * c + ch) * hw..][..hw]
                            .iter()
                            .map(|&v| (v as f64 - mean).powi(2))
                            .sum::<f64>();
                    }
                    let var = sq / count;
                    let unbiased = if count > 1.0 { sq / (count - 1.0) } else { var };
                    let m = self.momentum;
                    let rm = &mut self.running_mean.data_mut()[ch];
                    *rm = (1.0 - m) * *rm + m * mean as f32;
                    let rv = &mut self.running_var.data_mut()[ch];
                    *rv = (1.0 - m) * *rv + m * unbiased as f32;
                    (mean as f32, var as f32)
                }
                Mode::Eval => (self.running_mean.data()[ch], self.running_var.data()[ch]),
            };
            means[ch] = mean;
            inv_std[ch] = 1.0 / (var + self.eps).sqrt();
        }
        let mut xhat = vec![0.0f32; x.len()];
        let mut out = vec![0.0f32; x.len()];
        for i in 0..n {
            for ch in 0..c {
                let (g, b) = (self.gamma.data()[ch], self.beta.data()[ch]);
                let base = (i * c + ch) * hw;
                for j in base..base + hw {
                    let h = (x[j] - means[ch]) * inv_std[ch];
                    xhat[j] = h;
                    out[j] = g * h + b;
                }
            }
        }
        (
            Tensor::new(shape.to_vec(), out).expect("batch norm shape"),
            Cache::BatchNorm2d {
                xhat: Tensor::new(shape.to_vec(), xhat).expect("batch norm shape"),
                inv_std,
                training: mode == Mode::Train,
            },
        )
    }

    pub(crate) fn infer(&self, input: &Tensor) -> Tensor {
        let shape = input.shape();
        let (c, hw) = (shape[1], Self::spatial(shape));
        let mut out = input.clone();
        for (j, v) in out.data_mut().iter_mut().enumerate() {
            let ch = (j / hw) % c;
            let inv = 1.0 / (self.running_var.data()[ch] + self.eps).sqrt();
            *v = self.gamma.data()[ch] * (*v - self.running_mean.data()[ch]) * inv
                + self.beta.data()[ch];
        }
        out
    }

    pub(crate) fn backward(
        &self,
        xhat: &Tensor,
        inv_std: &[f32],
        training: bool,
        grad_out: &Tensor,
    ) -> (Tensor, Vec<(String, Tensor)>) {
        let shape = xhat.shape();
        let (n, c, hw) = (shape[0], shape[1], Self::spatial(shape));
        let count = (n * hw) as f32;
        let (xh, dy) = (xhat.data(), grad_out.data());
        let mut dgamma = vec![0.0f32; c];
        let mut dbeta = vec![0.0f32; c];
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * hw;
                for j in base..base + hw {
                    dgamma[ch] += dy[j] * xh[j];
                    dbeta[ch] += dy[j];
                }
            }
        }
        let mut dx = vec![0.0f32; dy.len()];
        for i in 0..n {
            for ch in 0..c {
                let g = self.gamma.data()[ch];
                let base = (i * c + ch) * hw;
                for j in base..base + hw {
                    dx[j] = if training {
                        g * inv_std[ch] / count * (count * dy[j] - dbeta[ch] - xh[j] * dgamma[ch])
                    } else {
                        g * inv_std[ch] * dy[j]
                    };
                }
            }
        }
        (
            Tensor::new(shape.to_vec(), dx).expect("batch norm grad shape"),
            vec![
                ("gamma".into(), Tensor::new(vec![c], dgamma).expect("gamma grad")),
                ("beta".into(), Tensor::new(vec![c], dbeta).expect("beta grad")),
            ],
        )
    }
}
