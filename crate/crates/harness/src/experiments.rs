//! Experiment drivers: α-sweep, K-sweep, utility-noise robustness and the
//! TIP-versus-TAP planning comparison. Every run in a driver shares the
//! dataset and its train/validation split.

use std::fmt::Write as _;

use tip_core::metrics::MetricsReport;
use tip_core::tasks::TaskKind;
use tip_core::Scene;

use crate::config::{RunConfig, TrainConfig};
use crate::data::{prepare_examples, split_by_id, Example};
use crate::eval::evaluate;
use crate::train::{train, TrainOutcome};
use crate::Result;

/// Prepared train and validation examples for the task of `cfg`.
pub fn prepare_split(run: &RunConfig, cfg: &TrainConfig, scenes: &[Scene]) -> Result<(Vec<Example>, Vec<Example>)> {
    let (train_s, val_s) = split_by_id(scenes, cfg.train_fraction, cfg.split_seed)?;
    Ok((
        prepare_examples(&train_s, cfg, &run.generator.limits)?,
        prepare_examples(&val_s, cfg, &run.generator.limits)?,
    ))
}

pub fn train_and_evaluate(
    cfg: &TrainConfig,
    train_set: &[Example],
    val_set: &[Example],
) -> Result<(TrainOutcome, MetricsReport)> {
    let outcome = train(cfg, train_set)?;
    let report = evaluate(&outcome.checkpoint.params, val_set, &cfg.task_spec())?;
    Ok((outcome, report))
}

fn auc_cell(r: &MetricsReport) -> String {
    r.auc_roc.map_or_else(|| "NA".into(), |a| format!("{a:.6}"))
}

fn metric_cells(r: &MetricsReport) -> String {
    format!(
        "{:.6},{:.6},{:.6},{:.6},{}",
        r.min_ade,
        r.min_fde,
        r.w_ade,
        r.w_fde,
        auc_cell(r)
    )
}

#[derive(Debug, Clone)]
pub struct AlphaRow {
    pub alpha: f64,
    pub report: MetricsReport,
}

pub fn experiment_alpha_sweep(run: &RunConfig, scenes: &[Scene], alphas: &[f64]) -> Result<Vec<AlphaRow>> {
    let (train_set, val_set) = prepare_split(run, &run.train, scenes)?;
    alphas
        .iter()
        .map(|&alpha| {
            let cfg = TrainConfig { alpha, ..run.train.clone() };
            let (_, report) = train_and_evaluate(&cfg, &train_set, &val_set)?;
            Ok(AlphaRow { alpha, report })
        })
        .collect()
}

pub fn alpha_table(rows: &[AlphaRow]) -> String {
    let mut s = String::from("alpha,min_ade,min_fde,w_ade,w_fde,auc\n");
    for r in rows {
        writeln!(s, "{},{}", r.alpha, metric_cells(&r.report)).expect("write to string");
    }
    s
}

#[derive(Debug, Clone)]
pub struct KRow {
    pub k: usize,
    pub tip: MetricsReport,
    pub tap: MetricsReport,
}

/// TIP uses the configured α; TAP the same run with α = 0.
pub fn experiment_k_sweep(run: &RunConfig, scenes: &[Scene], ks: &[usize]) -> Result<Vec<KRow>> {
    let (train_set, val_set) = prepare_split(run, &run.train, scenes)?;
    ks.iter()
        .map(|&k| {
            let tip_cfg = TrainConfig { k_samples: k, ..run.train.clone() };
            let tap_cfg = TrainConfig { alpha: 0.0, ..tip_cfg.clone() };
            let (_, tip) = train_and_evaluate(&tip_cfg, &train_set, &val_set)?;
            let (_, tap) = train_and_evaluate(&tap_cfg, &train_set, &val_set)?;
            Ok(KRow { k, tip, tap })
        })
        .collect()
}

pub fn k_table(rows: &[KRow]) -> String {
    let mut s = String::from("k,model,min_fde,w_fde,auc\n");
    for r in rows {
        for (name, rep) in [("TIP", &r.tip), ("TAP", &r.tap)] {
            writeln!(s, "{},{name},{:.6},{:.6},{}", r.k, rep.min_fde, rep.w_fde, auc_cell(rep)).expect("write to string");
        }
    }
    s
}

#[derive(Debug, Clone)]
pub struct NoiseRow {
    pub sigma: f64,
    pub report: MetricsReport,
}

pub fn experiment_noise_robustness(run: &RunConfig, scenes: &[Scene], sigmas: &[f64]) -> Result<Vec<NoiseRow>> {
    let (train_set, val_set) = prepare_split(run, &run.train, scenes)?;
    sigmas
        .iter()
        .map(|&sigma| {
            let cfg = TrainConfig {
                utility_noise_sigma: sigma,
                ..run.train.clone()
            };
            let (_, report) = train_and_evaluate(&cfg, &train_set, &val_set)?;
            Ok(NoiseRow { sigma, report })
        })
        .collect()
}

pub fn noise_table(rows: &[NoiseRow]) -> String {
    let mut s = String::from("sigma,min_ade,min_fde,w_ade,w_fde,auc\n");
    for r in rows {
        writeln!(s, "{},{}", r.sigma, metric_cells(&r.report)).expect("write to string");
    }
    s
}

/// One trained planning model evaluated under both planning utilities.
#[derive(Debug, Clone)]
pub struct CompareRow {
    pub model: &'static str,
    pub seed: u64,
    /// Evaluation with the selfish planning utility.
    pub selfish: MetricsReport,
    /// Evaluation with the altruistic planning utility.
    pub altruistic: MetricsReport,
}

/// Trains TAP (α = 0), TIP_P (selfish utility) and TIP_Pa (altruistic
/// utility) per seed and scores each under both utilities.
pub fn experiment_tip_vs_tap(run: &RunConfig, scenes: &[Scene], seeds: &[u64]) -> Result<Vec<CompareRow>> {
    let selfish_cfg = TrainConfig {
        task: TaskKind::PlanningSelfish,
        ..run.train.clone()
    };
    let altruistic_cfg = TrainConfig {
        task: TaskKind::PlanningAltruistic,
        ..run.train.clone()
    };
    let (train_p, val_p) = prepare_split(run, &selfish_cfg, scenes)?;
    let (train_pa, val_pa) = prepare_split(run, &altruistic_cfg, scenes)?;
    let mut rows = Vec::new();
    for &seed in seeds {
        let models = [
            ("TAP", TrainConfig { alpha: 0.0, seed, ..selfish_cfg.clone() }, &train_p),
            ("TIP_P", TrainConfig { seed, ..selfish_cfg.clone() }, &train_p),
            ("TIP_Pa", TrainConfig { seed, ..altruistic_cfg.clone() }, &train_pa),
        ];
        for (model, cfg, train_set) in models {
            let params = train(&cfg, train_set)?.checkpoint.params;
            rows.push(CompareRow {
                model,
                seed,
                selfish: evaluate(&params, &val_p, &selfish_cfg.task_spec())?,
                altruistic: evaluate(&params, &val_pa, &altruistic_cfg.task_spec())?,
            });
        }
    }
    Ok(rows)
}

pub fn compare_table(rows: &[CompareRow]) -> String {
    let mut s = String::from("model,seed,min_ade,min_fde,w_ade,w_fde,auc_p,auc_pa\n");
    for r in rows {
        writeln!(
            s,
            "{},{},{:.6},{:.6},{:.6},{:.6},{},{}",
            r.model,
            r.seed,
            r.selfish.min_ade,
            r.selfish.min_fde,
            r.selfish.w_ade,
            r.selfish.w_fde,
            auc_cell(&r.selfish),
            auc_cell(&r.altruistic)
        )
        .expect("write to string");
    }
    s
}
