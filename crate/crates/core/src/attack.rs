//! Reconstruction attack by an honest-but-curious server: an inversion
//! network trained on auxiliary data maps smashed tensors back to images.

use rand::seq::{index, SliceRandom};
use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::loss::mse;
use crate::metrics::batch_image_scores;
use crate::models::build_inversion;
use crate::network::{Adam, Network};
use crate::privacy::{gaussian_mechanism, microaggregate, PrivacyConfig};
use crate::tensor::Tensor;

const CHUNK: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttackConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
}

#[derive(Clone, Debug)]
pub struct InversionOutcome {
    pub network: Network,
    /// Mean reconstruction loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Head outputs for every image, computed in inference mode.
pub fn smash(head: &Network, images: &Tensor) -> Result<Tensor> {
    let mut parts = Vec::new();
    for start in (0..images.batch()).step_by(CHUNK) {
        let end = (start + CHUNK).min(images.batch());
        parts.push(head.infer(&images.slice_batch(start, end))?);
    }
    Tensor::concat_batch(&parts)
}

/// Fits a freshly initialized mirror of `head` to reconstruct the attacker's
/// images from their smashed form. `head` is only read.
pub fn train_inversion(
    head: &Network,
    attacker: &Dataset,
    cfg: &AttackConfig,
    rng: &mut impl Rng,
) -> Result<InversionOutcome> {
    if attacker.is_empty() {
        return Err(Error::Empty("attacker dataset"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Data("attack batch size must be positive".into()));
    }
    let mut inv = build_inversion(head)?;
    inv.init(rng);
    let smashed = smash(head, attacker.images())?;
    if smashed.shape()[1..] != *inv.input_shape() {
        return Err(Error::ShapeMismatch {
            layer: "inversion input".into(),
            expected: inv.input_shape().to_vec(),
            actual: smashed.shape()[1..].to_vec(),
        });
    }
    let mut opt = Adam::new(cfg.learning_rate);
    let mut order: Vec<usize> = (0..attacker.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        let mut total = 0.0f64;
        for idx in order.chunks(cfg.batch_size) {
            let s = smashed.select_batch(idx);
            let target = attacker.images().select_batch(idx);
            let (pred, cache) = inv.forward(&s, Mode::Train)?;
            let (loss, grad) = mse(&pred, &target)?;
            let (_, grads) = inv.backward(&cache, &grad)?;
            opt.step(&mut inv, &grads)?;
            total += loss as f64 * idx.len() as f64;
        }
        epoch_losses.push(total / attacker.len() as f64);
    }
    Ok(InversionOutcome {
        network: inv,
        epoch_losses,
    })
}

/// Images in `[0, 1]` reconstructed from smashed tensors.
pub fn reconstruct(inversion: &Network, smashed: &Tensor) -> Result<Tensor> {
    let mut parts = Vec::new();
    for start in (0..smashed.batch()).step_by(CHUNK) {
        let end = (start + CHUNK).min(smashed.batch());
        parts.push(inversion.infer(&smashed.slice_batch(start, end))?);
    }
    Tensor::concat_batch(&parts)
}

#[derive(Clone, Debug)]
pub struct AttackReport {
    /// Mean per-image MSE against the clean images.
    pub mse: f64,
    /// Mean per-image SSIM against the clean images.
    pub ssim: f64,
    pub reconstructions: Tensor,
}

/// Attacks every image of `test` as the server would observe it.
///
/// With noise enabled each image is perturbed before the head. With
/// k-anonymity enabled the server sees the mean of the victim's smashed
/// batch and `k − 1` aligned batches from distinct `peers` shards (each
/// noised the same way), so the inversion input is that group mean.
pub fn evaluate_attack(
    inversion: &Network,
    head: &Network,
    privacy: &PrivacyConfig,
    test: &Dataset,
    peers: &[Dataset],
    rng: &mut impl Rng,
) -> Result<AttackReport> {
    if test.is_empty() {
        return Err(Error::Empty("attack test set"));
    }
    let sigma2 = privacy.effective_sigma2();
    let k = privacy.effective_k();
    if peers.len() + 1 < k {
        return Err(Error::TooFewClients {
            clients: peers.len() + 1,
            k,
        });
    }
    let mut recon = Vec::new();
    for start in (0..test.len()).step_by(CHUNK) {
        let end = (start + CHUNK).min(test.len());
        let victim = test.images().slice_batch(start, end);
        let mut smashed = vec![head.infer(&gaussian_mechanism(&victim, sigma2, rng)?)?];
        for p in index::sample(rng, peers.len(), k - 1) {
            let peer = &peers[p];
            if peer.is_empty() {
                return Err(Error::Empty("peer shard"));
            }
            let picks: Vec<usize> = (0..end - start).map(|_| rng.random_range(0..peer.len())).collect();
            let x = gaussian_mechanism(&peer.images().select_batch(&picks), sigma2, rng)?;
            smashed.push(head.infer(&x)?);
        }
        let members: Vec<(usize, &Tensor)> = smashed.iter().enumerate().collect();
        recon.push(reconstruct(inversion, &microaggregate(&members)?)?);
    }
    let reconstructions = Tensor::concat_batch(&recon)?;
    let (mse, ssim) = batch_image_scores(test.images(), &reconstructions)?;
    Ok(AttackReport {
        mse,
        ssim,
        reconstructions,
    })
}
