//! The `tip` command line: argument parsing, config layering and the
//! subcommand drivers. [`run`] returns the process exit code.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use tip_core::model::{load_checkpoint, save_checkpoint};
use tip_core::simgen::{generate_dataset, read_dataset, write_dataset, ConflictGeometry};
use tip_core::Scene;

use crate::config::{ConfigError, RunConfig};
use crate::eval::evaluate;
use crate::experiments::{
    alpha_table, compare_table, experiment_alpha_sweep, experiment_k_sweep, experiment_noise_robustness,
    experiment_tip_vs_tap, k_table, noise_table, prepare_split,
};
use crate::train::{format_log, train};
use crate::{HarnessError, Result};

pub const SCENES_FILE: &str = "scenes.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const TRAIN_LOG_FILE: &str = "train_log.txt";
pub const REPORT_TXT: &str = "report.txt";
pub const REPORT_CSV: &str = "report.csv";

#[derive(Debug, Parser)]
#[command(name = "tip", version, about = "Task-informed motion prediction: data, training and evaluation")]
struct Cli {
    /// Seed for scene generation and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Flat `key = value` config file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    out: PathBuf,
    /// Extra `key=value` override, applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Scene file; scenes are generated from the config when absent.
    #[arg(long, value_name = "FILE")]
    data: Option<PathBuf>,
    #[arg(long)]
    n_scenes: Option<usize>,
    #[arg(long)]
    geometry: Option<ConflictGeometry>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a scene file.
    Gen {
        #[arg(long)]
        n_scenes: Option<usize>,
        #[arg(long)]
        geometry: Option<ConflictGeometry>,
    },
    /// Train on the training split and write a checkpoint and a loss log.
    Train {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Evaluate a checkpoint on the validation split.
    Eval {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
    },
    /// One model per task loss weight.
    SweepAlpha {
        #[arg(long, value_delimiter = ',', default_value = "0,1,5,20,100")]
        alphas: Vec<f64>,
        #[command(flatten)]
        data: DataArgs,
    },
    /// TIP and TAP per sample count.
    SweepK {
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        ks: Vec<usize>,
        #[command(flatten)]
        data: DataArgs,
    },
    /// One model per training-time utility noise level.
    NoiseRobustness {
        #[arg(long, value_delimiter = ',', default_value = "0,0.25")]
        sigmas: Vec<f64>,
        #[command(flatten)]
        data: DataArgs,
    },
    /// TAP, TIP_P and TIP_Pa scored under both planning utilities.
    TipVsTap {
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[command(flatten)]
        data: DataArgs,
    },
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code: 0 on success, 2 on usage or config errors, 1 otherwise.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                HarnessError::Config(_) | HarnessError::ConfigMismatch(_) => 2,
                _ => 1,
            }
        }
    }
}

fn run_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    for kv in &cli.sets {
        let (k, v) = kv.split_once('=').ok_or_else(|| ConfigError::BadValue {
            key: "--set".into(),
            value: kv.clone(),
            reason: "expected KEY=VALUE".into(),
        })?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = cli.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    Ok(cfg)
}

fn apply_data_flags(cfg: &mut RunConfig, n_scenes: Option<usize>, geometry: Option<ConflictGeometry>) {
    if let Some(n) = n_scenes {
        cfg.generator.n_scenes = n;
    }
    if let Some(g) = geometry {
        cfg.generator.geometry = g;
    }
}

fn load_scenes(cfg: &RunConfig, data: &Option<PathBuf>) -> Result<Vec<Scene>> {
    Ok(match data {
        Some(path) => read_dataset(path)?,
        None => generate_dataset(&cfg.generator)?,
    })
}

fn write(out: &Path, name: &str, text: &str) -> Result<()> {
    fs::write(out.join(name), text)?;
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = run_config(&cli)?;
    let data = match &cli.command {
        Command::Gen { n_scenes, geometry } => {
            apply_data_flags(&mut cfg, *n_scenes, *geometry);
            None
        }
        Command::Train { data }
        | Command::Eval { data, .. }
        | Command::SweepAlpha { data, .. }
        | Command::SweepK { data, .. }
        | Command::NoiseRobustness { data, .. }
        | Command::TipVsTap { data, .. } => {
            apply_data_flags(&mut cfg, data.n_scenes, data.geometry);
            data.data.clone()
        }
    };
    cfg.validate()?;
    let out = cli.out.as_path();
    fs::create_dir_all(out)?;

    match &cli.command {
        Command::Gen { .. } => {
            let scenes = generate_dataset(&cfg.generator)?;
            let path = out.join(SCENES_FILE);
            write_dataset(&scenes, &path, &cfg.generator.digest())?;
            println!("wrote {} scenes to {}", scenes.len(), path.display());
        }
        Command::Train { .. } => {
            let scenes = load_scenes(&cfg, &data)?;
            let (train_set, _) = prepare_split(&cfg, &cfg.train, &scenes)?;
            let outcome = train(&cfg.train, &train_set)?;
            for e in &outcome.log {
                eprintln!("{}", e.record(true));
            }
            save_checkpoint(&outcome.checkpoint, &out.join(CHECKPOINT_FILE))?;
            write(out, TRAIN_LOG_FILE, &format_log(&outcome.log, false))?;
            println!("wrote {}", out.join(CHECKPOINT_FILE).display());
        }
        Command::Eval { checkpoint, .. } => {
            let ckpt = load_checkpoint(checkpoint)?;
            if let Some(task) = ckpt.meta("task") {
                if task != cfg.train.task.as_str() {
                    return Err(HarnessError::ConfigMismatch(format!(
                        "checkpoint was trained for {task}, config task is {}",
                        cfg.train.task.as_str()
                    )));
                }
            }
            let scenes = load_scenes(&cfg, &data)?;
            let (_, val_set) = prepare_split(&cfg, &cfg.train, &scenes)?;
            let report = evaluate(&ckpt.params, &val_set, &cfg.train.task_spec())?;
            write(out, REPORT_TXT, &report.to_kv_text())?;
            write(out, REPORT_CSV, &report.to_csv())?;
            print!("{}", report.to_kv_text());
        }
        Command::SweepAlpha { alphas, .. } => {
            let scenes = load_scenes(&cfg, &data)?;
            let table = alpha_table(&experiment_alpha_sweep(&cfg, &scenes, alphas)?);
            write(out, REPORT_CSV, &table)?;
            print!("{table}");
        }
        Command::SweepK { ks, .. } => {
            let scenes = load_scenes(&cfg, &data)?;
            let table = k_table(&experiment_k_sweep(&cfg, &scenes, ks)?);
            write(out, REPORT_CSV, &table)?;
            print!("{table}");
        }
        Command::NoiseRobustness { sigmas, .. } => {
            let scenes = load_scenes(&cfg, &data)?;
            let table = noise_table(&experiment_noise_robustness(&cfg, &scenes, sigmas)?);
            write(out, REPORT_CSV, &table)?;
            print!("{table}");
        }
        Command::TipVsTap { seeds, .. } => {
            let scenes = load_scenes(&cfg, &data)?;
            let table = compare_table(&experiment_tip_vs_tap(&cfg, &scenes, seeds)?);
            write(out, REPORT_CSV, &table)?;
            print!("{table}");
        }
    }
    Ok(())
}
