//! K-fold experiment runner and the metrics document it produces.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{assign_labels, make_folds, DatasetSummary, FoldPlan, GraphDataset};
use crate::error::{GlaError, Result};
use crate::model::ModelParams;
use crate::train::{train_fold, AugmentationStats, FoldResult, PreparedDataset, TrainConfig};

/// Version of the metrics document layout.
pub const METRICS_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub folds: usize,
    /// Worker threads for fold-level parallelism; 1 runs folds in order on
    /// the calling thread. Results do not depend on this value.
    #[serde(skip)]
    pub parallel_folds: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            folds: 10,
            parallel_folds: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub folds: usize,
    pub mean_accuracy: f64,
    /// Sample standard deviation (n − 1 denominator).
    pub std_accuracy: f64,
    pub mean_label_invariant_rate: f64,
    pub std_label_invariant_rate: f64,
    pub fallback_rate: f64,
    pub chosen_target_prob_mean: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub dataset: DatasetSummary,
    pub config: ExperimentConfig,
    pub summary: Summary,
    pub augmentation: AugmentationStats,
    pub folds: Vec<FoldResult>,
}

impl ExperimentReport {
    pub fn test_accuracies(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.test_accuracy).collect()
    }

    pub fn invariant_rates(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.label_invariant.rate).collect()
    }

    /// Pretty-printed JSON; bytes depend only on the report contents.
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// One-line result in percent, e.g. `MUTAG 50% labels: 90.00 ± 0.94`.
    pub fn summary_line(&self) -> String {
        format!(
            "{} {:.0}% labels: {:.2} ± {:.2} (accuracy over {} folds, label-invariant rate {:.3})",
            self.dataset.name,
            self.config.train.label_ratio * 100.0,
            self.summary.mean_accuracy * 100.0,
            self.summary.std_accuracy * 100.0,
            self.summary.folds,
            self.summary.mean_label_invariant_rate,
        )
    }
}

/// Report plus the best-validation parameters of every fold.
#[derive(Clone, Debug)]
pub struct ExperimentRun {
    pub report: ExperimentReport,
    pub params: Vec<ModelParams>,
}

/// Mean and sample standard deviation; the deviation of fewer than two
/// values is zero.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Splits for a run: the fold partition depends only on the seed, the
/// labeled subsets on the seed and ratio.
pub fn fold_plans(n: usize, cfg: &ExperimentConfig) -> Result<Vec<FoldPlan>> {
    make_folds(n, cfg.folds, cfg.train.seed)?
        .iter()
        .map(|f| assign_labels(f, cfg.train.label_ratio, cfg.train.seed))
        .collect()
}

pub fn run_experiment(dataset: &GraphDataset, cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    cfg.train.validate()?;
    if dataset.graphs.iter().any(|g| g.label.is_none()) {
        return Err(GlaError::Dataset("every graph needs a label for evaluation".into()));
    }
    let data = PreparedDataset::new(dataset);
    let plans = fold_plans(dataset.len(), cfg)?;

    let trained = if cfg.parallel_folds > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.parallel_folds)
            .build()
            .map_err(|e| GlaError::Config(format!("thread pool: {e}")))?;
        pool.install(|| {
            plans
                .par_iter()
                .map(|p| train_fold(&data, p, &cfg.train))
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        plans
            .iter()
            .map(|p| {
                let t = train_fold(&data, p, &cfg.train)?;
                log::info!(
                    "{} fold {}: test {:.4} (best epoch {})",
                    dataset.name,
                    p.fold_index,
                    t.result.test_accuracy,
                    t.result.best_epoch
                );
                Ok(t)
            })
            .collect::<Result<Vec<_>>>()?
    };

    let (folds, params): (Vec<FoldResult>, Vec<ModelParams>) =
        trained.into_iter().map(|t| (t.result, t.params)).unzip();
    let mut augmentation = AugmentationStats::default();
    for f in &folds {
        augmentation.merge(&f.augmentation);
    }
    let accs: Vec<f64> = folds.iter().map(|f| f.test_accuracy).collect();
    let rates: Vec<f64> = folds.iter().map(|f| f.label_invariant.rate).collect();
    let (mean_accuracy, std_accuracy) = mean_std(&accs);
    let (mean_rate, std_rate) = mean_std(&rates);
    let summary = Summary {
        folds: folds.len(),
        mean_accuracy,
        std_accuracy,
        mean_label_invariant_rate: mean_rate,
        std_label_invariant_rate: std_rate,
        fallback_rate: augmentation.fallback_rate(),
        chosen_target_prob_mean: augmentation.chosen_target_prob_mean(),
    };
    Ok(ExperimentRun {
        report: ExperimentReport {
            schema_version: METRICS_SCHEMA_VERSION,
            dataset: dataset.summary(),
            config: cfg.clone(),
            summary,
            augmentation,
            folds,
        },
        params,
    })
}

/// Fold-matched comparison `a − b`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairedDifference {
    pub mean: f64,
    pub std: f64,
    /// Folds where `a > b`, `a == b`, `a < b`.
    pub wins: usize,
    pub ties: usize,
    pub losses: usize,
}

pub fn paired_difference(a: &[f64], b: &[f64]) -> PairedDifference {
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (mean, std) = mean_std(&diffs);
    PairedDifference {
        mean,
        std,
        wins: diffs.iter().filter(|&&d| d > 0.0).count(),
        ties: diffs.iter().filter(|&&d| d == 0.0).count(),
        losses: diffs.iter().filter(|&&d| d < 0.0).count(),
    }
}

/// Soft comparison between fold-matched runs. Reported, never enforced.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrendReport {
    pub name: String,
    pub holds: bool,
    pub detail: String,
    pub paired: Vec<PairedDifference>,
}

/// Hardest-candidate selection should generalise at least as well as the
/// easiest one.
pub fn strategy_trend(hardest: &ExperimentReport, easiest: &ExperimentReport) -> TrendReport {
    let paired = paired_difference(&hardest.test_accuracies(), &easiest.test_accuracies());
    TrendReport {
        name: "hardest >= easiest accuracy".into(),
        holds: hardest.summary.mean_accuracy >= easiest.summary.mean_accuracy,
        detail: format!(
            "hardest {:.4} vs easiest {:.4}; paired diff {:+.4} ± {:.4} ({} up, {} tied, {} down)",
            hardest.summary.mean_accuracy,
            easiest.summary.mean_accuracy,
            paired.mean,
            paired.std,
            paired.wins,
            paired.ties,
            paired.losses
        ),
        paired: vec![paired],
    }
}

/// Label-invariant rate should not drop as the label ratio grows. `runs`
/// must be sorted by ascending ratio.
pub fn invariant_ratio_trend(runs: &[(f64, &ExperimentReport)]) -> TrendReport {
    let mut holds = true;
    let mut paired = Vec::new();
    let mut parts = Vec::new();
    for w in runs.windows(2) {
        let (lo, hi) = (w[0].1, w[1].1);
        holds &= hi.summary.mean_label_invariant_rate >= lo.summary.mean_label_invariant_rate;
        let p = paired_difference(&hi.invariant_rates(), &lo.invariant_rates());
        parts.push(format!("{:.2}->{:.2}: {:+.4} ± {:.4}", w[0].0, w[1].0, p.mean, p.std));
        paired.push(p);
    }
    let rates: Vec<String> = runs
        .iter()
        .map(|(r, rep)| format!("{r:.2}:{:.4}", rep.summary.mean_label_invariant_rate))
        .collect();
    TrendReport {
        name: "invariant rate nondecreasing in label ratio".into(),
        holds,
        detail: format!("rates {}; paired steps {}", rates.join(" "), parts.join(", ")),
        paired,
    }
}
