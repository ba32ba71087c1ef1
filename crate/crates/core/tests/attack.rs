use splitguard::attack::{evaluate_attack, smash, train_inversion, AttackConfig};
use splitguard::data::{synthetic_digits, Dataset, SplitTag};
use splitguard::layers::{Conv2d, ConvTranspose2d, Layer, Mode};
use splitguard::models::{build_small_resnet, split, SplitSpec};
use splitguard::network::Network;
use splitguard::privacy::PrivacyConfig;
use splitguard::{seed, Tensor};

fn identity_head() -> Network {
    let mut conv = Conv2d::new(1, 1, 3, 1, 1);
    conv.weight.data_mut()[4] = 1.0;
    Network::new(vec![1, 28, 28], vec![Layer::Conv2d(conv)]).unwrap()
}

/// Transposed-convolution identity: the exact inverse of [`identity_head`].
fn exact_inverse() -> Network {
    let mut t = ConvTranspose2d::new(1, 1, 3, 1, 1, 0).unwrap();
    t.weight.data_mut()[4] = 1.0;
    Network::new(vec![1, 28, 28], vec![Layer::ConvTranspose2d(t)]).unwrap()
}

fn digits(count: usize, seed: u64) -> Dataset {
    synthetic_digits(count, seed).unwrap()
}

#[test]
fn invertible_head_is_inverted() {
    let head = identity_head();
    let cfg = AttackConfig {
        epochs: 20,
        batch_size: 32,
        learning_rate: 0.1,
    };
    let out = train_inversion(&head, &digits(400, 1), &cfg, &mut seed::rng(2)).unwrap();
    let report = evaluate_attack(
        &out.network,
        &head,
        &PrivacyConfig::default(),
        &digits(100, 3),
        &[],
        &mut seed::rng(4),
    )
    .unwrap();
    assert!(report.mse < 0.01, "mse {}", report.mse);
    assert!(out.epoch_losses.last() < out.epoch_losses.first());
}

#[test]
fn exact_inverse_is_a_perfect_attack() {
    let test = digits(50, 5);
    let report = evaluate_attack(
        &exact_inverse(),
        &identity_head(),
        &PrivacyConfig::default(),
        &test,
        &[],
        &mut seed::rng(0),
    )
    .unwrap();
    assert_eq!(report.mse, 0.0);
    assert_eq!(report.ssim, 1.0);
    assert_eq!(&report.reconstructions, test.images());
}

#[test]
fn constant_gray_reconstruction_has_closed_form_error() {
    // Zero weights and bias before a sigmoid give exactly 0.5 everywhere.
    let t = ConvTranspose2d::new(1, 1, 3, 1, 1, 0).unwrap();
    let gray = Network::new(vec![1, 28, 28], vec![Layer::ConvTranspose2d(t), Layer::Sigmoid]).unwrap();
    let test = digits(40, 6);
    let report = evaluate_attack(&gray, &identity_head(), &PrivacyConfig::default(), &test, &[], &mut seed::rng(0)).unwrap();
    let n = test.images().len() as f64;
    let want = test.images().data().iter().map(|&v| (v as f64 - 0.5).powi(2)).sum::<f64>() / n;
    assert!((report.mse - want).abs() <= 1e-6);
}

#[test]
fn microaggregated_view_is_the_group_mean() {
    // A peer holding only black images halves what the server sees.
    let test = digits(30, 7);
    let black = Dataset::new(Tensor::zeros(&[1, 1, 28, 28]), vec![0], 10, SplitTag::Train).unwrap();
    let privacy = PrivacyConfig {
        k: 2,
        ka_enabled: true,
        ..PrivacyConfig::default()
    };
    let report = evaluate_attack(&exact_inverse(), &identity_head(), &privacy, &test, &[black], &mut seed::rng(0)).unwrap();
    let n = test.images().len() as f64;
    let want = test.images().data().iter().map(|&v| (v as f64 / 2.0).powi(2)).sum::<f64>() / n;
    assert!((report.mse - want).abs() <= 1e-6, "{} vs {want}", report.mse);
}

#[test]
fn noise_adds_its_variance_to_the_error() {
    let test = digits(200, 8);
    let privacy = PrivacyConfig {
        sigma2: 0.04,
        dp_enabled: true,
        ..PrivacyConfig::default()
    };
    let report = evaluate_attack(&exact_inverse(), &identity_head(), &privacy, &test, &[], &mut seed::rng(9)).unwrap();
    assert!((report.mse - 0.04).abs() < 0.04 * 0.02, "mse {}", report.mse);
}

#[test]
fn head_is_left_untouched() {
    let mut net = build_small_resnet(&[3, 16, 16], 4, 2).unwrap();
    net.init(&mut seed::rng(1));
    let mut model = split(&net, SplitSpec::at(&net, "RB1").unwrap()).unwrap();
    // Non-trivial running statistics, so an accidental training-mode pass would show.
    let x = Tensor::new(vec![4, 3, 16, 16], (0..4 * 768).map(|i| (i % 13) as f32 / 13.0).collect()).unwrap();
    model.head.forward(&x, Mode::Train).unwrap();
    let head = model.head;
    let before = head.params();
    let attacker = Dataset::new(x, vec![0, 1, 2, 3], 4, SplitTag::Attacker).unwrap();
    let cfg = AttackConfig {
        epochs: 2,
        batch_size: 2,
        learning_rate: 0.01,
    };
    let smashed = smash(&head, attacker.images()).unwrap();
    train_inversion(&head, &attacker, &cfg, &mut seed::rng(3)).unwrap();
    let after = head.params();
    for ((n, a), (_, b)) in before.iter().zip(after.iter()) {
        let same = a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
        assert!(same, "{n} changed");
    }
    assert_eq!(smash(&head, attacker.images()).unwrap(), smashed);
}
