//! Fixtures shared by the benchmarks.

use rand::Rng;
use splitguard::config::{ExperimentConfig, Method};
use splitguard::data::{partition_iid, synthetic_digits};
use splitguard::federation::Federation;
use splitguard::layers::{Conv2d, Layer};
use splitguard::{seed, Tensor};

/// A batch of pseudo-random values in `[0, 1)`.
pub fn batch(shape: &[usize], seed: u64) -> Tensor {
    let len: usize = shape.iter().product();
    let mut rng = seed::rng(seed);
    let data = (0..len).map(|_| rng.random::<f32>()).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches length")
}

/// A 3x3, padding-1 convolution with initialized weights.
pub fn conv_layer(input_channels: usize, output_channels: usize) -> Layer {
    let mut layer = Layer::Conv2d(Conv2d::new(input_channels, output_channels, 3, 1, 1));
    layer.init(&mut seed::rng(0));
    layer
}

/// A KD-UFSL federation over synthetic digits, ready to run rounds.
pub fn kd_federation(clients: usize, samples_per_client: usize) -> Federation {
    let mut cfg = ExperimentConfig::for_method(Method::KdUfsl);
    cfg.clients = clients;
    cfg.privacy.k = 2;
    cfg.model.cut = "block1".into();
    let digits = synthetic_digits(clients * samples_per_client, 1).expect("digits generate");
    let plan = partition_iid(digits.len(), clients, 2).expect("enough samples");
    let shards = plan.shards.iter().map(|s| digits.select(s)).collect();
    Federation::new(&cfg, shards).expect("valid federation")
}
