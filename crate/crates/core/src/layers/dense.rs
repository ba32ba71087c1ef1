use rand::Rng;

use super::{he_uniform, Cache};
use crate::tensor::{gemm, Tensor};

/// Fully connected layer `y = x·Wᵀ + b` with `W` stored `[out, in]`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn new(in_features: usize, out_features: usize) -> Self {
        Dense {
            weight: Tensor::zeros(&[out_features, in_features]),
            bias: Tensor::zeros(&[out_features]),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub(crate) fn output_shape(&self, input: &[usize]) -> Option<Vec<usize>> {
        match *input {
            [n, f] if f == self.in_features() => Some(vec![n, self.out_features()]),
            _ => None,
        }
    }

    pub(crate) fn init(&mut self, rng: &mut impl Rng) {
        let fan_in = self.in_features();
        he_uniform(&mut self.weight, fan_in, rng);
        self.bias.data_mut().fill(0.0);
    }

    pub(crate) fn forward(&self, input: &Tensor) -> (Tensor, Cache) {
        let (n, fin, fout) = (input.batch(), self.in_features(), self.out_features());
        let mut out = vec![0.0f32; n * fout];
        gemm(n, fin, fout, input.data(), false, self.weight.data(), true, &mut out, false);
        for row in out.chunks_mut(fout) {
            for (v, b) in row.iter_mut().zip(self.bias.data()) {
                *v += b;
            }
        }
        (
            Tensor::new(vec![n, fout], out).expect("dense output shape"),
            Cache::Dense {
                input: input.clone(),
            },
        )
    }

    pub(crate) fn backward(&self, input: &Tensor, grad_out: &Tensor) -> (Tensor, Vec<(String, Tensor)>) {
        let (n, fin, fout) = (input.batch(), self.in_features(), self.out_features());
        let mut grad_in = vec![0.0f32; n * fin];
        gemm(n, fout, fin, grad_out.data(), false, self.weight.data(), false, &mut grad_in, false);
        let mut grad_w = vec![0.0f32; fout * fin];
        gemm(fout, n, fin, grad_out.data(), true, input.data(), false, &mut grad_w, false);
        let mut grad_b = vec![0.0f32; fout];
        for row in grad_out.data().chunks(fout) {
            for (g, v) in grad_b.iter_mut().zip(row) {
                *g += v;
            }
        }
        (
            Tensor::new(vec![n, fin], grad_in).expect("dense grad shape"),
            vec![
                ("weight".into(), Tensor::new(vec![fout, fin], grad_w).expect("weight grad")),
                ("bias".into(), Tensor::new(vec![fout], grad_b).expect("bias grad")),
            ],
        )
    }
}
