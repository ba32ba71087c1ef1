//! Experiment plumbing: config resolution, dataset loading, runs, sweeps
//! and their on-disk artifacts.
//!
//! A run directory holds `metrics.csv`, `weights.bin` with its
//! `weights.json` sidecar, `images/` with reconstructions, and
//! `manifest.json`, which is written last and marks a completed run.

mod images;
mod loading;
mod settings;
mod sweep;
mod weights;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use images::{dump_images, read_pnm, write_pnm};
pub use loading::{load_data, load_source, ExperimentData};
pub use settings::{apply_override, load_config, parse_config, resolve};
pub use sweep::{plan_sweep, run_sweep, SweepAxis, SweepPoint, SweepRow};
pub use weights::{load_weights, save_weights, sidecar_path, WeightEntry, WeightIndex};

use crate::attack::{evaluate_attack, train_inversion, AttackConfig, AttackReport};
use crate::config::ExperimentConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::federation::{evaluate, initial_model, train};
use crate::metrics::{MetricsRecord, RecordKind};
use crate::models::SplitModel;
use crate::seed;

pub const METRICS_FILE: &str = "metrics.csv";
pub const WEIGHTS_FILE: &str = "weights.bin";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const IMAGES_DIR: &str = "images";

/// Completion record of a run. Together with the code version it determines
/// every output byte; checksums are SHA-256 of each artifact, keyed by path
/// relative to the run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub started_unix_s: u64,
    pub output_dir: PathBuf,
    pub code_version: String,
    pub checksums: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<RunManifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Metrics and manifest of a finished run.
#[derive(Clone, Debug)]
pub struct RunReport {
    pub records: Vec<MetricsRecord>,
    pub attack: Option<AttackReport>,
    pub manifest: RunManifest,
}

fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

pub fn write_metrics(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.into(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(MetricsRecord::CSV_COLUMNS).map_err(csv_err)?;
    for r in records {
        w.write_record(r.csv_fields()).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn prepare_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let marker = dir.join(MANIFEST_FILE);
    if marker.exists() {
        std::fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
    }
    Ok(())
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn finish(config: &ExperimentConfig, dir: &Path, started: u64, files: &[PathBuf]) -> Result<RunManifest> {
    let mut checksums = BTreeMap::new();
    for f in files {
        let rel = f.strip_prefix(dir).unwrap_or(f).to_string_lossy().replace('\\', "/");
        checksums.insert(rel, sha256_hex(f)?);
    }
    let manifest = RunManifest {
        config: config.clone(),
        seed: config.seed,
        started_unix_s: started,
        output_dir: dir.to_path_buf(),
        code_version: env!("CARGO_PKG_VERSION").into(),
        checksums,
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest)? + "\n";
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Trains an inversion network against `model`'s head on the attacker set
/// and attacks the evaluation set. Peers for microaggregation are the shards
/// of every client except the target.
pub fn attack_model(config: &ExperimentConfig, model: &SplitModel, data: &ExperimentData) -> Result<AttackReport> {
    let settings = &config.attack;
    let cfg = AttackConfig {
        epochs: settings.epochs,
        batch_size: settings.batch_size,
        learning_rate: settings.learning_rate,
    };
    let inversion = train_inversion(
        &model.head,
        &data.attacker,
        &cfg,
        &mut seed::stream(config.seed, "attack", &[0]),
    )?;
    let peers: Vec<Dataset> = data
        .federated
        .shards
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != settings.target_client)
        .map(|(_, s)| s.clone())
        .collect();
    evaluate_attack(
        &inversion.network,
        &model.head,
        &config.privacy,
        &data.federated.test,
        &peers,
        &mut seed::stream(config.seed, "attack", &[1]),
    )
}

fn attack_section(
    config: &ExperimentConfig,
    model: &SplitModel,
    data: &ExperimentData,
    dir: &Path,
    files: &mut Vec<PathBuf>,
) -> Result<(MetricsRecord, AttackReport)> {
    let start = Instant::now();
    let report = attack_model(config, model, data)?;
    let elapsed = start.elapsed().as_secs_f64();
    let dump = config.attack.dump_images.min(data.federated.test.len());
    if dump > 0 {
        let originals = data.federated.test.images().slice_batch(0, dump);
        let recon = report.reconstructions.slice_batch(0, dump);
        files.extend(dump_images(&originals, &recon, &dir.join(IMAGES_DIR))?);
    }
    let record = MetricsRecord {
        kind: RecordKind::Attack,
        method: config.method.tag().into(),
        accuracy: evaluate(model, &data.federated.test)?,
        attack_mse: Some(report.mse),
        attack_ssim: Some(report.ssim),
        wall_time_s: if config.timing { elapsed } else { 0.0 },
        config_hash: config.hash(),
    };
    Ok((record, report))
}

/// Trains, saves the final weights, attacks the final head when enabled,
/// then writes the metrics and finally the manifest.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<RunReport> {
    config.validate()?;
    let started = unix_now();
    prepare_dir(out_dir)?;
    let data = load_data(config)?;
    let outcome = train(config, &data.federated)?;
    let mut records = outcome.records;
    let metrics = out_dir.join(METRICS_FILE);
    write_metrics(&metrics, &records)?;
    let weights = out_dir.join(WEIGHTS_FILE);
    save_weights(&outcome.model.params(), &weights)?;
    let mut files = vec![metrics.clone(), weights.clone(), sidecar_path(&weights)];
    let attack = if config.attack.enabled {
        let (record, report) = attack_section(config, &outcome.model, &data, out_dir, &mut files)?;
        records.push(record);
        write_metrics(&metrics, &records)?;
        Some(report)
    } else {
        None
    };
    let manifest = finish(config, out_dir, started, &files)?;
    Ok(RunReport {
        records,
        attack,
        manifest,
    })
}

/// Attacks a saved global model: the metrics file holds only the attack row.
pub fn run_attack(config: &ExperimentConfig, weights: &Path, out_dir: &Path) -> Result<RunReport> {
    config.validate()?;
    let started = unix_now();
    prepare_dir(out_dir)?;
    let data = load_data(config)?;
    let shape = data.federated.image_shape()?;
    let mut model = initial_model(config, &shape, data.federated.classes())?;
    model.load_params(&load_weights(weights)?)?;
    let metrics = out_dir.join(METRICS_FILE);
    let mut files = vec![metrics.clone()];
    let (record, report) = attack_section(config, &model, &data, out_dir, &mut files)?;
    let records = vec![record];
    write_metrics(&metrics, &records)?;
    let manifest = finish(config, out_dir, started, &files)?;
    Ok(RunReport {
        records,
        attack: Some(report),
        manifest,
    })
}
