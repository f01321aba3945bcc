//! Fully resolved commands. A plan is what the manifest records and what
//! `replay` executes.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use gla_core::augment::Strategy;
use gla_core::checkpoint::{encode_checkpoint, read_checkpoint};
use gla_core::data::{generate_synthetic, write_tudataset, SyntheticConfig};
use gla_core::experiment::{
    fold_plans, invariant_ratio_trend, paired_difference, run_experiment, strategy_trend, ExperimentReport, ExperimentRun,
    TrendReport, METRICS_SCHEMA_VERSION,
};
use gla_core::gradsuite::{run_suite, SuiteSize, TOLERANCE};
use gla_core::train::{label_invariant_rate, PreparedDataset};
use gla_core::{ExperimentConfig, GlaError, GraphDataset};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{reopen, DatasetRef};
use crate::output::{fmt_f, OutDir};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRef {
    pub path: PathBuf,
    pub fold: usize,
    pub sha256: String,
}

impl CheckpointRef {
    pub fn new(path: PathBuf, fold: usize) -> Result<Self> {
        let bytes = fs::read(&path).map_err(|_| GlaError::MissingFile(path.clone()))?;
        let path = fs::canonicalize(&path).unwrap_or(path);
        Ok(Self {
            path,
            fold,
            sha256: hex::encode(Sha256::digest(&bytes)),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Plan {
    Run {
        dataset: DatasetRef,
        experiment: ExperimentConfig,
        save_checkpoints: bool,
    },
    SweepEta {
        dataset: DatasetRef,
        experiment: ExperimentConfig,
        values: Vec<f64>,
    },
    AblateStrategy {
        dataset: DatasetRef,
        experiment: ExperimentConfig,
    },
    AblateNegatives {
        dataset: DatasetRef,
        experiment: ExperimentConfig,
    },
    InvariantRate {
        dataset: DatasetRef,
        experiment: ExperimentConfig,
        ratios: Vec<f64>,
        checkpoint: Option<CheckpointRef>,
    },
    GenSynth {
        name: String,
        synthetic: SyntheticConfig,
    },
    Gradcheck {
        size: SuiteSize,
    },
}

impl Plan {
    pub fn set_parallel_folds(&mut self, n: usize) {
        match self {
            Plan::Run { experiment, .. }
            | Plan::SweepEta { experiment, .. }
            | Plan::AblateStrategy { experiment, .. }
            | Plan::AblateNegatives { experiment, .. }
            | Plan::InvariantRate { experiment, .. } => experiment.parallel_folds = n,
            Plan::GenSynth { .. } | Plan::Gradcheck { .. } => {}
        }
    }

    /// Runs the plan and writes its artifacts; the caller writes the manifest.
    pub fn execute(&self, out: &mut OutDir) -> Result<()> {
        match self {
            Plan::Run {
                dataset,
                experiment,
                save_checkpoints,
            } => {
                let ds = reopen(dataset)?;
                cmd_run(&ds, experiment, *save_checkpoints, out)
            }
            Plan::SweepEta {
                dataset,
                experiment,
                values,
            } => {
                let ds = reopen(dataset)?;
                cmd_sweep_eta(&ds, experiment, values, out)
            }
            Plan::AblateStrategy { dataset, experiment } => {
                let ds = reopen(dataset)?;
                cmd_ablate_strategy(&ds, experiment, out)
            }
            Plan::AblateNegatives { dataset, experiment } => {
                let ds = reopen(dataset)?;
                cmd_ablate_negatives(&ds, experiment, out)
            }
            Plan::InvariantRate {
                dataset,
                experiment,
                ratios,
                checkpoint,
            } => {
                let ds = reopen(dataset)?;
                match checkpoint {
                    Some(c) => cmd_rate_from_checkpoint(&ds, experiment, ratios, c, out),
                    None => cmd_rate_retrain(&ds, experiment, ratios, out),
                }
            }
            Plan::GenSynth { name, synthetic } => cmd_gen_synth(name, synthetic, out),
            Plan::Gradcheck { size } => cmd_gradcheck(*size, out),
        }
    }
}

fn experiment(ds: &GraphDataset, cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    let run = run_experiment(ds, cfg)?;
    let a = &run.report.augmentation;
    log::info!(
        "augmentations {}: fallback rate {:.4}, invariance re-checks {} ({} violations), ordering checks {} ({} violations)",
        a.augmentations,
        a.fallback_rate(),
        a.invariance_checked,
        a.invariance_violations,
        a.ordering_checked,
        a.ordering_violations
    );
    Ok(run)
}

fn warn_trend(t: &TrendReport) {
    if t.holds {
        println!("trend ok: {} ({})", t.name, t.detail);
    } else {
        eprintln!("warning: trend not observed: {} ({})", t.name, t.detail);
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f).unwrap_or_else(|| "NA".into())
}

#[derive(Serialize)]
struct LabeledRun<'a, K: Serialize> {
    setting: K,
    report: &'a ExperimentReport,
}

#[derive(Serialize)]
struct MultiRun<'a, K: Serialize> {
    schema_version: u32,
    sweep: &'static str,
    runs: Vec<LabeledRun<'a, K>>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    trends: Vec<TrendReport>,
}

fn cmd_run(ds: &GraphDataset, cfg: &ExperimentConfig, save: bool, out: &mut OutDir) -> Result<()> {
    let run = experiment(ds, cfg)?;
    let r = &run.report;
    out.write_json("metrics.json", r)?;
    let rows: Vec<Vec<String>> = r
        .folds
        .iter()
        .map(|f| {
            vec![
                f.fold_index.to_string(),
                fmt_f(f.test_accuracy),
                f.best_epoch.to_string(),
                fmt_f(f.best_valid_accuracy),
                f.labeled_count.to_string(),
                fmt_f(f.label_invariant.rate),
                fmt_f(f.fallback_rate()),
            ]
        })
        .collect();
    out.write_table(
        "folds.tsv",
        &["fold", "test_accuracy", "best_epoch", "best_valid_accuracy", "labeled", "label_invariant_rate", "fallback_rate"],
        &rows,
    )?;
    let mut curves = Vec::new();
    for f in &r.folds {
        for e in &f.epochs {
            curves.push(vec![
                f.fold_index.to_string(),
                e.epoch.to_string(),
                fmt_f(e.contrastive_loss),
                fmt_f(e.classification_loss),
                fmt_f(e.total_loss),
                fmt_f(e.valid_accuracy),
                fmt_f(e.valid_loss),
                fmt_f(e.fallback_rate),
            ]);
        }
    }
    out.write_table(
        "curves.tsv",
        &["fold", "epoch", "contrastive_loss", "classification_loss", "total_loss", "valid_accuracy", "valid_loss", "fallback_rate"],
        &curves,
    )?;
    if save {
        for (i, p) in run.params.iter().enumerate() {
            out.write_bytes(&format!("checkpoints/fold_{i:02}.glap"), &encode_checkpoint(p))?;
        }
    }
    println!("{}", r.summary_line());
    Ok(())
}

fn cmd_sweep_eta(ds: &GraphDataset, base: &ExperimentConfig, values: &[f64], out: &mut OutDir) -> Result<()> {
    if values.is_empty() {
        bail!(GlaError::Config("--values needs at least one η".into()));
    }
    let mut reports = Vec::new();
    for &eta in values {
        let mut cfg = base.clone();
        cfg.train.augmentation.eta = eta;
        let run = experiment(ds, &cfg)?;
        println!("eta {eta}: {}", run.report.summary_line());
        reports.push(run.report);
    }
    let rows: Vec<Vec<String>> = values
        .iter()
        .zip(&reports)
        .map(|(eta, r)| {
            vec![
                eta.to_string(),
                fmt_f(r.summary.mean_accuracy),
                fmt_f(r.summary.std_accuracy),
                fmt_f(r.summary.mean_label_invariant_rate),
                fmt_f(r.summary.fallback_rate),
            ]
        })
        .collect();
    out.write_json(
        "metrics.json",
        &MultiRun {
            schema_version: METRICS_SCHEMA_VERSION,
            sweep: "eta",
            runs: values.iter().zip(&reports).map(|(&setting, report)| LabeledRun { setting, report }).collect(),
            trends: Vec::new(),
        },
    )?;
    out.write_table(
        "eta.tsv",
        &["eta", "mean_accuracy", "std_accuracy", "label_invariant_rate", "fallback_rate"],
        &rows,
    )
}

fn cmd_ablate_strategy(ds: &GraphDataset, base: &ExperimentConfig, out: &mut OutDir) -> Result<()> {
    let mut reports = Vec::new();
    for s in Strategy::ALL {
        let mut cfg = base.clone();
        cfg.train.augmentation.strategy = s;
        let run = experiment(ds, &cfg)?;
        println!("{s}: {}", run.report.summary_line());
        reports.push(run.report);
    }
    let rows: Vec<Vec<String>> = Strategy::ALL
        .iter()
        .zip(&reports)
        .map(|(s, r)| {
            vec![
                s.to_string(),
                r.config.train.seed.to_string(),
                fmt_f(r.summary.mean_accuracy),
                fmt_f(r.summary.std_accuracy),
                fmt_f(r.summary.mean_label_invariant_rate),
                opt(r.summary.chosen_target_prob_mean),
                fmt_f(r.summary.fallback_rate),
            ]
        })
        .collect();
    let by = |s: Strategy| &reports[Strategy::ALL.iter().position(|&x| x == s).unwrap()];
    let trend = strategy_trend(by(Strategy::Hardest), by(Strategy::Easiest));
    warn_trend(&trend);
    let probs: Vec<Option<f64>> = Strategy::ALL.iter().map(|&s| by(s).summary.chosen_target_prob_mean).collect();
    if let [Some(h), Some(r), Some(e)] = probs[..] {
        let ordered = h <= r && r <= e;
        println!(
            "chosen target-class probability: hardest {h:.4}, random {r:.4}, easiest {e:.4}{}",
            if ordered { "" } else { " (not ordered across runs)" }
        );
    }
    out.write_json(
        "metrics.json",
        &MultiRun {
            schema_version: METRICS_SCHEMA_VERSION,
            sweep: "strategy",
            runs: Strategy::ALL.iter().zip(&reports).map(|(&setting, report)| LabeledRun { setting, report }).collect(),
            trends: vec![trend],
        },
    )?;
    out.write_table(
        "strategies.tsv",
        &["strategy", "seed", "mean_accuracy", "std_accuracy", "label_invariant_rate", "chosen_target_prob_mean", "fallback_rate"],
        &rows,
    )
}

fn cmd_ablate_negatives(ds: &GraphDataset, base: &ExperimentConfig, out: &mut OutDir) -> Result<()> {
    if base.train.batch_size < 2 {
        bail!(GlaError::Config("negative pairs need --batch-size >= 2".into()));
    }
    let mut reports = Vec::new();
    for negatives in [false, true] {
        let mut cfg = base.clone();
        cfg.train.negative_pairs = negatives;
        let run = experiment(ds, &cfg)?;
        println!("negative_pairs={negatives}: {}", run.report.summary_line());
        reports.push(run.report);
    }
    let delta = paired_difference(&reports[1].test_accuracies(), &reports[0].test_accuracies());
    println!(
        "with − without negatives: {:+.4} ± {:.4} ({} up, {} tied, {} down)",
        delta.mean, delta.std, delta.wins, delta.ties, delta.losses
    );
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            vec![
                r.config.train.negative_pairs.to_string(),
                r.config.train.temperature.to_string(),
                fmt_f(r.summary.mean_accuracy),
                fmt_f(r.summary.std_accuracy),
            ]
        })
        .collect();
    #[derive(Serialize)]
    struct Doc<'a> {
        schema_version: u32,
        sweep: &'static str,
        runs: Vec<LabeledRun<'a, bool>>,
        paired_accuracy_delta: gla_core::experiment::PairedDifference,
    }
    out.write_json(
        "metrics.json",
        &Doc {
            schema_version: METRICS_SCHEMA_VERSION,
            sweep: "negative_pairs",
            runs: [false, true].into_iter().zip(&reports).map(|(setting, report)| LabeledRun { setting, report }).collect(),
            paired_accuracy_delta: delta,
        },
    )?;
    out.write_table("negatives.tsv", &["negative_pairs", "temperature", "mean_accuracy", "std_accuracy"], &rows)
}

fn check_ratios(ratios: &[f64]) -> Result<Vec<f64>> {
    if ratios.is_empty() {
        bail!(GlaError::Config("--ratios needs at least one value".into()));
    }
    let mut sorted = ratios.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted)
}

fn cmd_rate_retrain(ds: &GraphDataset, base: &ExperimentConfig, ratios: &[f64], out: &mut OutDir) -> Result<()> {
    let ratios = check_ratios(ratios)?;
    let mut reports = Vec::new();
    for &ratio in &ratios {
        let mut cfg = base.clone();
        cfg.train.label_ratio = ratio;
        let run = experiment(ds, &cfg)?;
        println!(
            "ratio {ratio}: label-invariant rate {:.4} ± {:.4}",
            run.report.summary.mean_label_invariant_rate, run.report.summary.std_label_invariant_rate
        );
        reports.push(run.report);
    }
    let pairs: Vec<(f64, &ExperimentReport)> = ratios.iter().copied().zip(&reports).collect();
    let trend = invariant_ratio_trend(&pairs);
    if ratios.len() > 1 {
        warn_trend(&trend);
    }
    let rows: Vec<Vec<String>> = pairs
        .iter()
        .map(|(ratio, r)| {
            vec![
                ratio.to_string(),
                fmt_f(r.summary.mean_label_invariant_rate),
                fmt_f(r.summary.std_label_invariant_rate),
                fmt_f(r.summary.mean_accuracy),
            ]
        })
        .collect();
    out.write_json(
        "metrics.json",
        &MultiRun {
            schema_version: METRICS_SCHEMA_VERSION,
            sweep: "label_ratio",
            runs: pairs.iter().map(|&(setting, report)| LabeledRun { setting, report }).collect(),
            trends: if ratios.len() > 1 { vec![trend] } else { Vec::new() },
        },
    )?;
    out.write_table(
        "invariant_rate.tsv",
        &["label_ratio", "label_invariant_rate", "std", "mean_accuracy"],
        &rows,
    )
}

fn cmd_rate_from_checkpoint(
    ds: &GraphDataset,
    base: &ExperimentConfig,
    ratios: &[f64],
    ckpt: &CheckpointRef,
    out: &mut OutDir,
) -> Result<()> {
    let ratios = check_ratios(ratios)?;
    let bytes = fs::read(&ckpt.path).with_context(|| format!("reading {}", ckpt.path.display()))?;
    if hex::encode(Sha256::digest(&bytes)) != ckpt.sha256 {
        bail!(GlaError::Checkpoint(format!("{} changed since it was recorded", ckpt.path.display())));
    }
    let params = read_checkpoint(&ckpt.path)?;
    let data = PreparedDataset::new(ds);
    #[derive(Serialize)]
    struct Row {
        label_ratio: f64,
        rate: gla_core::train::InvariantRate,
    }
    let mut results = Vec::new();
    for &ratio in &ratios {
        let mut cfg = base.clone();
        cfg.train.label_ratio = ratio;
        cfg.train.validate()?;
        let plans = fold_plans(ds.len(), &cfg)?;
        let plan = plans
            .get(ckpt.fold)
            .ok_or_else(|| GlaError::Config(format!("fold {} out of range (0..{})", ckpt.fold, plans.len())))?;
        let rate = label_invariant_rate(&params, &data, plan, &cfg.train)?;
        println!("ratio {ratio}: label-invariant rate {:.4} ({} fallbacks)", rate.rate, rate.fallbacks);
        results.push(Row { label_ratio: ratio, rate });
    }
    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|r| {
            vec![
                r.label_ratio.to_string(),
                fmt_f(r.rate.rate),
                r.rate.graphs.to_string(),
                r.rate.fallbacks.to_string(),
            ]
        })
        .collect();
    #[derive(Serialize)]
    struct Doc<'a> {
        schema_version: u32,
        checkpoint: &'a CheckpointRef,
        rates: Vec<Row>,
    }
    out.write_json(
        "metrics.json",
        &Doc {
            schema_version: METRICS_SCHEMA_VERSION,
            checkpoint: ckpt,
            rates: results,
        },
    )?;
    out.write_table("invariant_rate.tsv", &["label_ratio", "label_invariant_rate", "graphs", "fallbacks"], &rows)
}

fn cmd_gen_synth(name: &str, cfg: &SyntheticConfig, out: &mut OutDir) -> Result<()> {
    let mut raw = generate_synthetic(cfg)?;
    raw.name = name.to_string();
    let dir = out.path(name);
    write_tudataset(&raw, &dir)?;
    let mut files: Vec<String> = fs::read_dir(&dir)?
        .filter_map(|e| e.ok().and_then(|e| e.file_name().into_string().ok()))
        .collect();
    files.sort();
    for f in files {
        out.record(&format!("{name}/{f}"));
    }
    println!(
        "wrote {} graphs ({} classes) to {}",
        raw.graphs.len(),
        raw.num_classes,
        dir.display()
    );
    Ok(())
}

fn cmd_gradcheck(size: SuiteSize, out: &mut OutDir) -> Result<()> {
    let outcomes = run_suite(size)?;
    let rows: Vec<Vec<String>> = outcomes
        .iter()
        .map(|o| vec![o.name.clone(), format!("{:.3e}", o.max_relative_error), o.passed.to_string()])
        .collect();
    out.write_table("gradcheck.tsv", &["check", "max_relative_error", "passed"], &rows)?;
    for o in &outcomes {
        println!(
            "{} {:<36} {:.3e}",
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.max_relative_error
        );
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    if failed > 0 {
        bail!(GlaError::Invariant(format!(
            "{failed} gradient checks above {TOLERANCE:e}"
        )));
    }
    println!("all {} checks below {TOLERANCE:e}", outcomes.len());
    Ok(())
}
