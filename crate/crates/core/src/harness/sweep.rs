use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::config::{ExperimentConfig, ModelConfig};
use crate::error::{Error, Result};
use crate::seed;

use super::run_experiment;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SweepAxis {
    Sigma2,
    K,
    HeadDepth,
    NClients,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 4] = [SweepAxis::Sigma2, SweepAxis::K, SweepAxis::HeadDepth, SweepAxis::NClients];

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Sigma2 => "sigma2",
            SweepAxis::K => "k",
            SweepAxis::HeadDepth => "head_depth",
            SweepAxis::NClients => "n_clients",
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::config("axis", format!("unknown sweep axis `{s}`, expected sigma2, k, head_depth or n_clients")))
    }
}

/// One resolved sub-run of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    /// Canonical text of the axis value; names the sub-run directory.
    pub value: String,
    pub config: ExperimentConfig,
}

fn parse<T: FromStr>(axis: SweepAxis, raw: &str) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| Error::config(axis.name(), format!("cannot parse value `{raw}`")))
}

/// Applies one axis value to `base`. The sub-seed hashes the master seed,
/// the axis name and the canonical value text, so it does not depend on
/// the value's position in the list. The dataset seed is pinned to the base
/// so every sub-run sees the same data.
fn point(base: &ExperimentConfig, axis: SweepAxis, raw: &str) -> Result<SweepPoint> {
    let mut cfg = base.clone();
    cfg.data.seed = Some(base.data_seed());
    let value = match axis {
        SweepAxis::Sigma2 => {
            let v: f64 = parse(axis, raw)?;
            if !base.method.uses_dp() {
                return Err(Error::config(
                    "sigma2",
                    format!("method {} adds no noise, so a sigma2 sweep is meaningless", base.method),
                ));
            }
            cfg.privacy.sigma2 = v;
            if v == 0.0 {
                cfg = cfg.with_method(base.method.without_dp());
            }
            v.to_string()
        }
        SweepAxis::K => {
            let v: usize = parse(axis, raw)?;
            if !base.method.uses_ka() {
                return Err(Error::config(
                    "k",
                    format!("method {} does not group clients, so a k sweep is meaningless", base.method),
                ));
            }
            cfg.privacy.k = v;
            v.to_string()
        }
        SweepAxis::HeadDepth => {
            let v: usize = parse(axis, raw)?;
            cfg.model.cut = ModelConfig::cut_for_depth(cfg.model.arch, v);
            v.to_string()
        }
        SweepAxis::NClients => {
            let v: usize = parse(axis, raw)?;
            cfg.clients = v;
            v.to_string()
        }
    };
    cfg.seed = seed::hash_parts(base.seed, &[axis.name(), &value]);
    cfg.validate().map_err(|e| match e {
        Error::Config { key, message } => Error::config(key, format!("{axis} = {value}: {message}")),
        other => other,
    })?;
    Ok(SweepPoint { value, config: cfg })
}

/// Resolves and validates every sub-run before anything runs.
pub fn plan_sweep<S: AsRef<str>>(base: &ExperimentConfig, axis: SweepAxis, values: &[S]) -> Result<Vec<SweepPoint>> {
    if values.is_empty() {
        return Err(Error::config(axis.name(), "no sweep values given"));
    }
    let points = values
        .iter()
        .map(|v| point(base, axis, v.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    for (i, p) in points.iter().enumerate() {
        if points[..i].iter().any(|q| q.value == p.value) {
            return Err(Error::config(axis.name(), format!("value {} listed twice", p.value)));
        }
    }
    Ok(points)
}

/// Final metrics of one sub-run.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub method: String,
    pub seed: u64,
    pub accuracy: f64,
    pub attack_mse: Option<f64>,
    pub attack_ssim: Option<f64>,
    pub config_hash: String,
}

/// Runs every point into `out_dir/<axis>_<value>` and writes `summary.csv`
/// once all sub-runs have finished.
pub fn run_sweep<S: AsRef<str>>(
    base: &ExperimentConfig,
    axis: SweepAxis,
    values: &[S],
    out_dir: &Path,
) -> Result<Vec<SweepRow>> {
    let points = plan_sweep(base, axis, values)?;
    let mut rows = Vec::with_capacity(points.len());
    for p in &points {
        let dir = out_dir.join(format!("{axis}_{}", p.value));
        let report = run_experiment(&p.config, &dir)?;
        let last = report.records.last();
        rows.push(SweepRow {
            value: p.value.clone(),
            method: p.config.method.tag().into(),
            seed: p.config.seed,
            accuracy: last.map_or(0.0, |r| r.accuracy),
            attack_mse: report.attack.as_ref().map(|a| a.mse),
            attack_ssim: report.attack.as_ref().map(|a| a.ssim),
            config_hash: p.config.hash(),
        });
    }
    write_summary(&out_dir.join("summary.csv"), axis, &rows)?;
    Ok(rows)
}

fn write_summary(path: &Path, axis: SweepAxis, rows: &[SweepRow]) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.into(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record([axis.name(), "method", "seed", "accuracy", "attack_mse", "attack_ssim", "config_hash"])
        .map_err(csv_err)?;
    let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.value.clone(),
            r.method.clone(),
            r.seed.to_string(),
            format!("{:.6}", r.accuracy),
            opt(r.attack_mse),
            opt(r.attack_ssim),
            r.config_hash.clone(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
