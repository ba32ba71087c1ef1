//! End-to-end acceptance checks. Each test writes one `criterion NN PASS|FAIL`
//! line straight to stderr, so the verdicts show up even when libtest
//! captures output. The heavy federated runs are shared through caches.

mod common;

use std::cell::Cell;
use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::Rng;
use splitguard::config::{Architecture, DataSource, ExperimentConfig, Method, ModelConfig};
use splitguard::data::{load_cifar_binary, load_idx, partition_iid, Dataset};
use splitguard::federation::{train, Federation};
use splitguard::harness::{attack_model, load_config, load_data, read_pnm, run_experiment, write_pnm};
use splitguard::layers::Mode;
use splitguard::metrics::{mse_image, ssim};
use splitguard::models::{split, SplitSpec};
use splitguard::privacy::{calibrate_sigma, gaussian_mechanism, group_clients, microaggregate};
use splitguard::{seed, Tensor};

fn verdict(n: u32, pass: bool, elapsed: Duration, budget: Duration, detail: &str) {
    let within = elapsed <= budget;
    let ok = pass && within;
    let status = if ok { "PASS" } else { "FAIL" };
    let _ = writeln!(
        std::io::stderr(),
        "criterion {n:02} {status}: {detail} ({:.1}s of {}s budget)",
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    assert!(pass, "criterion {n}: {detail}");
    assert!(within, "criterion {n}: took {:.1}s, budget {}s", elapsed.as_secs_f64(), budget.as_secs());
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

#[test]
fn criterion_01_gradient_oracle() {
    let start = Instant::now();
    let mut worst = Vec::new();
    for (i, kind) in common::LAYER_KINDS.iter().enumerate() {
        worst.push((*kind, common::worst_gradient_error(kind, 20, 1000 + i as u64)));
    }
    let (kind, max) = worst.iter().cloned().fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    verdict(
        1,
        max <= 1e-3,
        start.elapsed(),
        secs(60),
        &format!("{} layer kinds x 20 instances, worst relative error {max:.2e} ({kind})", worst.len()),
    );
}

#[test]
fn criterion_02_split_equivalence() {
    let start = Instant::now();
    let mut runner = TestRunner::new(PropConfig {
        cases: 12,
        failure_persistence: None,
        ..PropConfig::default()
    });
    let worst = Cell::new(0.0f32);
    let cuts_checked = Cell::new(0);
    let result = runner.run(&any::<u64>(), |s| {
        for model in [
            ModelConfig {
                arch: Architecture::Convnet,
                blocks: 3,
                cut: String::new(),
            },
            ModelConfig {
                arch: Architecture::Resnet,
                blocks: 3,
                cut: String::new(),
            },
        ] {
            let mut rng = seed::rng(s);
            let mut full = model.build(&[1, 28, 28], 10).unwrap();
            full.init(&mut rng);
            let x = common::random_tensor(&[3, 1, 28, 28], &mut rng, 1.0);
            let want = full.infer(&x).unwrap();
            let want_train = full.clone().forward(&x, Mode::Train).unwrap().0;
            for cut in model.head_cuts() {
                let mut parts = split(&full, SplitSpec::at(&full, &cut).unwrap()).unwrap();
                let got = parts.infer(&x).unwrap();
                let got_train = parts.forward(&x, Mode::Train).unwrap().0;
                for (a, b) in got.data().iter().zip(want.data()).chain(got_train.data().iter().zip(want_train.data())) {
                    worst.set(worst.get().max((a - b).abs()));
                }
                prop_assert!(worst.get() <= 1e-6, "{:?} cut {cut}: {:e}", model.arch, worst.get());
                cuts_checked.set(cuts_checked.get() + 1);
            }
        }
        Ok(())
    });
    verdict(
        2,
        result.is_ok(),
        start.elapsed(),
        secs(10),
        &format!(
            "{} splits over 12 random weight draws, max deviation {:.1e}",
            cuts_checked.get(),
            worst.get()
        ),
    );
}

#[test]
fn criterion_03_degenerate_privacy_equivalence() {
    let start = Instant::now();
    let digits = splitguard::data::synthetic_digits(320, 11).unwrap();
    let shards: Vec<Dataset> = partition_iid(320, 5, 12)
        .unwrap()
        .shards
        .iter()
        .map(|s| digits.select(s))
        .collect();
    let mut ufsl = ExperimentConfig::for_method(Method::Ufsl);
    ufsl.clients = 5;
    ufsl.batch_size = 16;
    ufsl.seed = 13;
    ufsl.model.cut = "block1".into();
    let mut kd = ufsl.clone().with_method(Method::KdUfsl);
    kd.privacy.k = 1;
    kd.privacy.sigma2 = 0.0;
    let mut a = Federation::new(&ufsl, shards.clone()).unwrap();
    let mut b = Federation::new(&kd, shards).unwrap();
    let mut worst = 0.0f32;
    for _ in 0..3 {
        a.run_round().unwrap();
        b.run_round().unwrap();
        for ((_, x), (_, y)) in a.global().params().iter().zip(b.global().params().iter()) {
            for (p, q) in x.data().iter().zip(y.data()) {
                worst = worst.max((p - q).abs());
            }
        }
    }
    verdict(
        3,
        worst <= 1e-5,
        start.elapsed(),
        secs(60),
        &format!("kd_ufsl k=1 sigma2=0 vs ufsl over 3 rounds, max weight difference {worst:.1e}"),
    );
}

#[test]
fn criterion_04_mechanism_statistics() {
    let start = Instant::now();
    let zeros = Tensor::zeros(&[1_000_000]);
    let noisy = gaussian_mechanism(&zeros, 0.04, &mut seed::rng(4)).unwrap();
    let n = noisy.len() as f64;
    let mean = noisy.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let std = (noisy.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n).sqrt();
    let sigma = calibrate_sigma(1.0, 1e-5, 1.0).unwrap();
    let reference = (2.0 * (1.25e5f64).ln()).sqrt();
    let pass = mean.abs() <= 1e-3 && (std - 0.2).abs() <= 0.2 * 0.02 && (sigma - reference).abs() <= 1e-3;
    verdict(
        4,
        pass,
        start.elapsed(),
        secs(5),
        &format!("noise mean {mean:+.5}, std {std:.5}; calibrate_sigma(1, 1e-5, 1) = {sigma:.5} vs {reference:.5}"),
    );
}

#[test]
fn criterion_05_grouping_and_microaggregation() {
    let start = Instant::now();
    let mut rng = seed::rng(5);
    let mut feasible = 0;
    let mut failures = Vec::new();
    // Sizes in {k, k+1} are only attainable when n mod k <= n div k; the
    // other triples are checked for the weaker law (sizes >= k, spread <= 1).
    let mut infeasible = 0;
    while feasible < 1000 || infeasible < 200 {
        let n = rng.random_range(1..=64usize);
        let k = rng.random_range(1..=n);
        let s: u64 = rng.random();
        let tight = n % k <= n / k;
        if (tight && feasible >= 1000) || (!tight && infeasible >= 200) {
            continue;
        }
        let ids: Vec<usize> = (0..n).collect();
        let g = group_clients(&ids, k, 0, &mut seed::rng(s)).unwrap();
        let mut seen: Vec<usize> = g.groups.iter().flatten().copied().collect();
        seen.sort_unstable();
        let sizes: Vec<usize> = g.groups.iter().map(Vec::len).collect();
        let (lo, hi) = (*sizes.iter().min().unwrap(), *sizes.iter().max().unwrap());
        let ok = seen == ids && if tight { lo >= k && hi <= k + 1 } else { lo >= k && hi - lo <= 1 };
        if !ok {
            failures.push((n, k, s));
        }
        if tight {
            feasible += 1;
        } else {
            infeasible += 1;
        }
    }
    let mut mean_err = 0.0f64;
    for _ in 0..1000 {
        let members = rng.random_range(1..=8);
        let tensors: Vec<Tensor> = (0..members).map(|_| common::random_tensor(&[2, 3, 4], &mut rng, 3.0)).collect();
        let pairs: Vec<(usize, &Tensor)> = tensors.iter().enumerate().collect();
        let mean = microaggregate(&pairs).unwrap();
        for (i, &v) in mean.data().iter().enumerate() {
            let want = tensors.iter().map(|t| t.data()[i] as f64).sum::<f64>() / members as f64;
            mean_err = mean_err.max((v as f64 - want).abs());
        }
    }
    verdict(
        5,
        failures.is_empty() && mean_err <= 1e-6,
        start.elapsed(),
        secs(5),
        &format!(
            "{feasible} (n, k, seed) triples with sizes in {{k, k+1}} plus {infeasible} uneven ones, {} violations; group mean error {mean_err:.1e}",
            failures.len()
        ),
    );
}

#[test]
fn criterion_06_metric_oracles() {
    let start = Instant::now();
    let mut rng = seed::rng(6);
    let mut identity_exact = true;
    let mut symmetric = true;
    let mut bounded = true;
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let shape = if i % 2 == 0 { vec![1, 8, 8] } else { vec![3, 6, 5] };
        let unit = |rng: &mut seed::SimRng| {
            let len: usize = shape.iter().product();
            Tensor::new(shape.clone(), (0..len).map(|_| rng.random::<f32>()).collect()).unwrap()
        };
        let p = unit(&mut rng);
        let q = unit(&mut rng);
        identity_exact &= ssim(&p, &p).unwrap() == 1.0;
        let pq = ssim(&p, &q).unwrap();
        symmetric &= pq == ssim(&q, &p).unwrap();
        bounded &= pq.abs() <= 1.0;
        let p64 = common::A64::from_tensor(&p).data;
        let q64 = common::A64::from_tensor(&q).data;
        worst = worst
            .max((pq - common::ssim64(&p64, &q64, shape[0])).abs())
            .max((mse_image(&p, &q).unwrap() - common::mse64(&p64, &q64)).abs());
    }
    verdict(
        6,
        identity_exact && symmetric && bounded && worst <= 1e-6,
        start.elapsed(),
        secs(5),
        &format!(
            "1000 pairs: ssim(p,p)=1 {identity_exact}, symmetric {symmetric}, bounded {bounded}, max deviation from f64 {worst:.1e}"
        ),
    );
}

/// Final accuracy and attack scores of one desk-scale run.
struct Outcome {
    accuracy: f64,
    mse: f64,
    ssim: f64,
    elapsed: Duration,
}

fn desk_config(method: Method) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::for_method(method);
    cfg.clients = 5;
    cfg.rounds = 30;
    cfg.seed = 2024;
    cfg.privacy.k = 2;
    cfg.privacy.sigma2 = 0.1;
    cfg.model.cut = "block1".into();
    cfg.data.source = DataSource::SyntheticDigits { train: 2000, test: 1000 };
    cfg.data.seed = Some(1);
    cfg
}

fn execute(cfg: ExperimentConfig) -> Outcome {
    let start = Instant::now();
    let data = load_data(&cfg).unwrap();
    let out = train(&cfg, &data.federated).unwrap();
    let report = attack_model(&cfg, &out.model, &data).unwrap();
    Outcome {
        accuracy: out.records.last().unwrap().accuracy,
        mse: report.mse,
        ssim: report.ssim,
        elapsed: start.elapsed(),
    }
}

fn ufsl() -> &'static Outcome {
    static CELL: OnceLock<Outcome> = OnceLock::new();
    CELL.get_or_init(|| execute(desk_config(Method::Ufsl)))
}

fn kd_ufsl() -> &'static Outcome {
    static CELL: OnceLock<Outcome> = OnceLock::new();
    CELL.get_or_init(|| execute(desk_config(Method::KdUfsl)))
}

fn noisy(sigma2: f64) -> &'static Outcome {
    static LOW: OnceLock<Outcome> = OnceLock::new();
    static HIGH: OnceLock<Outcome> = OnceLock::new();
    let cell = if sigma2 < 0.2 { &LOW } else { &HIGH };
    cell.get_or_init(|| {
        let mut cfg = desk_config(Method::UfslDp);
        cfg.privacy.sigma2 = sigma2;
        execute(cfg)
    })
}

fn residual(depth: usize) -> &'static Outcome {
    static CELLS: [OnceLock<Outcome>; 3] = [OnceLock::new(), OnceLock::new(), OnceLock::new()];
    CELLS[depth - 1].get_or_init(|| {
        let mut cfg = desk_config(Method::Ufsl);
        cfg.rounds = 10;
        cfg.model.arch = Architecture::Resnet;
        cfg.model.cut = ModelConfig::cut_for_depth(Architecture::Resnet, depth);
        execute(cfg)
    })
}

#[test]
fn criterion_07_attack_potency() {
    let run = ufsl();
    verdict(
        7,
        run.ssim >= 0.5,
        run.elapsed,
        secs(600),
        &format!("ufsl, convnet cut block1: attack ssim {:.4}, mse {:.4}", run.ssim, run.mse),
    );
}

#[test]
fn criterion_08_defense_direction() {
    let (plain, kd) = (ufsl(), kd_ufsl());
    let gap = plain.ssim - kd.ssim;
    verdict(
        8,
        kd.mse > plain.mse && gap >= 0.05,
        plain.elapsed + kd.elapsed,
        secs(1200),
        &format!(
            "attack mse {:.4} -> {:.4}, ssim {:.4} -> {:.4} (gap {gap:.4})",
            plain.mse, kd.mse, plain.ssim, kd.ssim
        ),
    );
}

#[test]
fn criterion_09_utility_retention() {
    let (plain, kd) = (ufsl(), kd_ufsl());
    let drop = plain.accuracy - kd.accuracy;
    verdict(
        9,
        plain.accuracy >= 0.85 && drop <= 0.05,
        plain.elapsed + kd.elapsed,
        secs(1200),
        &format!("accuracy ufsl {:.4}, kd_ufsl {:.4}", plain.accuracy, kd.accuracy),
    );
}

#[test]
fn criterion_10_monotone_knobs() {
    // sigma2 = 0 is the plain run: same seed, same data, no noise.
    let sweep = [ufsl(), noisy(0.1), noisy(0.3)];
    let depth = [residual(1), residual(2), residual(3)];
    let mse: Vec<f64> = sweep.iter().map(|r| r.mse).collect();
    let ssims: Vec<f64> = depth.iter().map(|r| r.ssim).collect();
    let mse_ok = mse.windows(2).all(|w| w[1] >= w[0] * 0.95);
    let depth_ok = ssims.windows(2).all(|w| w[1] <= w[0]);
    let elapsed = sweep.iter().chain(&depth).map(|r| r.elapsed).sum();
    verdict(
        10,
        mse_ok && depth_ok,
        elapsed,
        secs(1800),
        &format!(
            "attack mse over sigma2 0, 0.1, 0.3: {:.4}, {:.4}, {:.4}; attack ssim over RB1..RB3: {:.4}, {:.4}, {:.4}",
            mse[0], mse[1], mse[2], ssims[0], ssims[1], ssims[2]
        ),
    );
}

fn idx(magic: u32, dims: &[u32], body: &[u8]) -> Vec<u8> {
    let mut out = magic.to_be_bytes().to_vec();
    for d in dims {
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(body);
    out
}

fn fixtures_load_exactly(dir: &Path) -> bool {
    let pixels: Vec<u8> = (0..2 * 28 * 28).map(|i| (i * 7 % 256) as u8).collect();
    std::fs::write(dir.join("img"), idx(0x0803, &[2, 28, 28], &pixels)).unwrap();
    std::fs::write(dir.join("lbl"), idx(0x0801, &[2], &[5, 8])).unwrap();
    let mnist = load_idx(dir.join("img"), dir.join("lbl")).unwrap();
    let mnist_ok = mnist.labels() == [5, 8]
        && mnist
            .images()
            .data()
            .iter()
            .zip(&pixels)
            .all(|(&v, &b)| v.to_bits() == (b as f32 / 255.0).to_bits());

    let mut record = vec![6u8];
    record.extend((0..3072).map(|i| (i * 13 % 256) as u8));
    std::fs::write(dir.join("batch.bin"), &record).unwrap();
    let cifar = load_cifar_binary(&[dir.join("batch.bin")]).unwrap();
    let cifar_ok = cifar.labels() == [6]
        && cifar.images().shape() == [1, 3, 32, 32]
        && cifar
            .images()
            .data()
            .iter()
            .zip(&record[1..])
            .all(|(&v, &b)| v.to_bits() == (b as f32 / 255.0).to_bits());
    mnist_ok && cifar_ok
}

fn pnm_round_trip_error(dir: &Path) -> f32 {
    let mut rng = seed::rng(11);
    let mut worst = 0.0f32;
    for (name, shape) in [("g.pgm", [1, 28, 28]), ("c.ppm", [3, 32, 32])] {
        let len: usize = shape.iter().product();
        let pixels: Vec<f32> = (0..len).map(|_| rng.random::<f32>()).collect();
        let path = dir.join(name);
        write_pnm(&path, &shape, &pixels).unwrap();
        let back = read_pnm(&path).unwrap();
        for (a, b) in back.data().iter().zip(&pixels) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

#[test]
fn criterion_11_reproducibility_and_formats() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::for_method(Method::KdUfsl);
    cfg.clients = 3;
    cfg.rounds = 2;
    cfg.batch_size = 8;
    cfg.privacy.k = 2;
    cfg.model.cut = "block1".into();
    cfg.data.source = DataSource::SyntheticDigits { train: 96, test: 40 };
    cfg.attack.epochs = 2;
    let first = dir.path().join("first");
    let second = dir.path().join("second");
    run_experiment(&cfg, &first).unwrap();
    let replay = load_config(&first.join("manifest.json"), &[]).unwrap();
    run_experiment(&replay, &second).unwrap();
    let csv_identical = std::fs::read(first.join("metrics.csv")).unwrap() == std::fs::read(second.join("metrics.csv")).unwrap();
    let fixtures = fixtures_load_exactly(dir.path());
    let pnm = pnm_round_trip_error(dir.path());
    verdict(
        11,
        csv_identical && fixtures && pnm <= 1.0 / 255.0,
        start.elapsed(),
        secs(10),
        &format!("csv byte-identical {csv_identical}, IDX/CIFAR bit-exact {fixtures}, PGM/PPM max error {pnm:.5}"),
    );
}
