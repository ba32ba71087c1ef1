use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use splitguard::config::ExperimentConfig;
use splitguard::harness::{load_config, run_attack, run_experiment, run_sweep, RunReport, SweepAxis};
use splitguard::Result;

#[derive(Parser, Debug)]
#[command(version, about = "U-shaped federated split learning with privacy defenses")]
struct Cli {
    /// Overrides the master seed of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output root; each invocation writes into a subdirectory named after
    /// the method and config hash.
    #[arg(long, global = true, env = "SPLITGUARD_OUT", default_value = "runs")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train, attack the final head and write metrics, weights and images.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Dotted `key=value` override, e.g. `privacy.k=3`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// One full run per value of a single knob, plus a summary table.
    Sweep {
        /// sigma2, k, head_depth or n_clients.
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Attack saved global weights without retraining.
    Attack {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

fn resolve(path: &Path, set: &[String], seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut overrides = set.to_vec();
    if let Some(s) = seed {
        overrides.push(format!("seed={s}"));
    }
    load_config(path, &overrides)
}

fn run_dir(root: &Path, prefix: &str, cfg: &ExperimentConfig) -> PathBuf {
    root.join(format!("{prefix}-{}", cfg.hash()))
}

fn print_report(dir: &Path, report: &RunReport) {
    if let Some(last) = report.records.iter().rev().find(|r| r.attack_mse.is_none()) {
        println!("final accuracy {:.4}", last.accuracy);
    }
    if let Some(a) = &report.attack {
        println!("attack mse {:.6} ssim {:.6}", a.mse, a.ssim);
    }
    println!("wrote {}", dir.display());
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, set } => {
            let cfg = resolve(&config, &set, cli.seed)?;
            let dir = run_dir(&cli.out, cfg.method.tag(), &cfg);
            let report = run_experiment(&cfg, &dir)?;
            print_report(&dir, &report);
        }
        Command::Sweep {
            axis,
            values,
            config,
            set,
        } => {
            let cfg = resolve(&config, &set, cli.seed)?;
            let dir = run_dir(&cli.out, &format!("sweep-{axis}"), &cfg);
            for row in run_sweep(&cfg, axis, &values, &dir)? {
                let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6}"));
                println!(
                    "{axis}={} accuracy {:.4} attack mse {} ssim {}",
                    row.value,
                    row.accuracy,
                    opt(row.attack_mse),
                    opt(row.attack_ssim)
                );
            }
            println!("wrote {}", dir.display());
        }
        Command::Attack { weights, config, set } => {
            let cfg = resolve(&config, &set, cli.seed)?;
            let dir = run_dir(&cli.out, &format!("attack-{}", cfg.method.tag()), &cfg);
            let report = run_attack(&cfg, &weights, &dir)?;
            print_report(&dir, &report);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Error messages already embed their causes.
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
