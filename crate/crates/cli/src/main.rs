//! `gla`: command-line front end for training, ablations and diagnostics.

mod dataset;
mod output;
mod plan;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use gla_core::augment::{DistScope, Strategy};
use gla_core::data::{FeaturePolicy, SyntheticConfig};
use gla_core::gradsuite::SuiteSize;
use gla_core::{ExperimentConfig, GlaError, TrainConfig};

use crate::output::{read_manifest, OutDir};
use crate::plan::{CheckpointRef, Plan};

#[derive(Parser)]
#[command(name = "gla", version, about = "Label-invariant augmentation for semi-supervised graph classification")]
struct Cli {
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// 10-fold cross-validated training run.
    Run {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// Also write the best-validation parameters of every fold.
        #[arg(long)]
        save_checkpoint: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// One run per perturbation magnitude, on shared folds.
    SweepEta {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.5,1.0,2.0")]
        values: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Hardest, random and easiest candidate selection, fold-matched.
    AblateStrategy {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Positive-pair loss against NT-Xent with in-batch negatives.
    AblateNegatives {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label-invariant rate per label ratio, by retraining or from a checkpoint.
    InvariantRate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, value_delimiter = ',', default_value = "0.3,0.5,0.7")]
        ratios: Vec<f64>,
        /// Measure a saved model instead of retraining.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Fold the checkpoint was trained on.
        #[arg(long, default_value_t = 0, requires = "checkpoint")]
        fold: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every differentiable operation.
    Gradcheck {
        #[arg(long, default_value = "small")]
        size: SuiteSize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Writes a synthetic dataset in TUDataset layout under `<out>/<name>`.
    GenSynth {
        #[arg(long, default_value_t = 100)]
        graphs: usize,
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated edge densities, one per class; overrides --classes.
        #[arg(long, value_delimiter = ',')]
        densities: Option<Vec<f64>>,
        #[arg(long, default_value_t = 8)]
        min_nodes: usize,
        #[arg(long, default_value_t = 12)]
        max_nodes: usize,
        #[arg(long, default_value = "SYNTH")]
        name: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-executes the command recorded in a manifest.
    Replay {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Compare every artifact with the original next to the manifest.
        #[arg(long)]
        verify: bool,
        #[arg(long)]
        parallel_folds: Option<usize>,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Dataset directory with `<name>_A.txt` and friends; relative paths
    /// that do not exist are looked up under the data directory.
    dataset: PathBuf,
    /// File prefix inside the dataset directory (defaults to its name).
    #[arg(long)]
    name: Option<String>,
    #[arg(long, env = "GLA_DATA_DIR")]
    data_dir: Option<PathBuf>,
    /// node-labels, degree[:cap] or constant.
    #[arg(long)]
    feature_policy: Option<FeaturePolicy>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    label_ratio: Option<f64>,
    /// Perturbation magnitude relative to the centroid distance.
    #[arg(long)]
    eta: Option<f64>,
    /// Candidates drawn per graph.
    #[arg(long)]
    k: Option<usize>,
    /// hardest, random or easiest.
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Weight of the classification loss.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// batch or dataset.
    #[arg(long)]
    dist_scope: Option<DistScope>,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    proj_dim: Option<usize>,
    /// NT-Xent temperature (with negative pairs).
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    negative_pairs: bool,
    #[arg(long)]
    surrogate_epochs: Option<usize>,
    #[arg(long)]
    surrogate_lr: Option<f64>,
    /// Train folds on this many threads; results are identical.
    #[arg(long, default_value_t = 1)]
    parallel_folds: usize,
}

impl TrainArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut t = TrainConfig::default();
        macro_rules! set {
            ($($field:ident).+ = $arg:ident) => {
                if let Some(v) = self.$arg {
                    t.$($field).+ = v;
                }
            };
        }
        set!(label_ratio = label_ratio);
        set!(augmentation.eta = eta);
        set!(augmentation.num_candidates = k);
        set!(augmentation.strategy = strategy);
        set!(augmentation.dist_scope = dist_scope);
        set!(alpha = alpha);
        set!(seed = seed);
        set!(epochs = epochs);
        set!(batch_size = batch_size);
        set!(learning_rate = lr);
        set!(model.hidden = hidden);
        set!(model.layers = layers);
        set!(model.proj_dim = proj_dim);
        set!(temperature = temperature);
        set!(surrogate_epochs = surrogate_epochs);
        set!(surrogate_learning_rate = surrogate_lr);
        t.negative_pairs = self.negative_pairs;
        t.validate()?;
        Ok(ExperimentConfig {
            train: t,
            folds: self.folds,
            parallel_folds: self.parallel_folds,
        })
    }
}

fn open_dataset(d: &DataArgs) -> Result<(dataset::DatasetRef, gla_core::GraphDataset)> {
    let path = dataset::resolve_path(&d.dataset, d.data_dir.as_deref())?;
    let name = match &d.name {
        Some(n) => n.clone(),
        None => dataset::default_name(&path)?,
    };
    dataset::open(&path, &name, d.feature_policy)
}

/// Builds the plan; the dataset is parsed here once to fix its fingerprint
/// and feature policy.
fn plan_for(cmd: Command) -> Result<(Plan, PathBuf)> {
    Ok(match cmd {
        Command::Run {
            data,
            train,
            save_checkpoint,
            out,
        } => {
            let (dataset, _) = open_dataset(&data)?;
            let plan = Plan::Run {
                dataset,
                experiment: train.resolve()?,
                save_checkpoints: save_checkpoint,
            };
            (plan, out)
        }
        Command::SweepEta { data, train, values, out } => {
            let (dataset, _) = open_dataset(&data)?;
            let plan = Plan::SweepEta {
                dataset,
                experiment: train.resolve()?,
                values,
            };
            (plan, out)
        }
        Command::AblateStrategy { data, train, out } => {
            let (dataset, _) = open_dataset(&data)?;
            let plan = Plan::AblateStrategy {
                dataset,
                experiment: train.resolve()?,
            };
            (plan, out)
        }
        Command::AblateNegatives { data, train, out } => {
            let (dataset, _) = open_dataset(&data)?;
            let plan = Plan::AblateNegatives {
                dataset,
                experiment: train.resolve()?,
            };
            (plan, out)
        }
        Command::InvariantRate {
            data,
            train,
            ratios,
            checkpoint,
            fold,
            out,
        } => {
            let (dataset, _) = open_dataset(&data)?;
            let checkpoint = checkpoint.map(|p| CheckpointRef::new(p, fold)).transpose()?;
            let plan = Plan::InvariantRate {
                dataset,
                experiment: train.resolve()?,
                ratios,
                checkpoint,
            };
            (plan, out)
        }
        Command::Gradcheck { size, out } => (Plan::Gradcheck { size }, out),
        Command::GenSynth {
            graphs,
            classes,
            seed,
            densities,
            min_nodes,
            max_nodes,
            name,
            out,
        } => {
            let mut synthetic = SyntheticConfig::evenly_spread(graphs, classes, seed);
            if let Some(d) = densities {
                synthetic.edge_density_per_class = d;
            }
            synthetic.size_range = (min_nodes, max_nodes);
            (Plan::GenSynth { name, synthetic }, out)
        }
        Command::Replay { .. } => unreachable!("handled by the caller"),
    })
}

fn replay(manifest: &Path, out: &Path, verify: bool, parallel_folds: Option<usize>) -> Result<()> {
    let m = read_manifest(manifest)?;
    let mut plan = m.plan;
    if let Some(n) = parallel_folds {
        plan.set_parallel_folds(n);
    }
    let mut dir = OutDir::create(out)?;
    plan.execute(&mut dir)?;
    let written = dir.finish(plan)?;
    if verify {
        let original = manifest.parent().unwrap_or(Path::new("."));
        let mut names = m.artifacts.clone();
        names.push(output::MANIFEST_FILE.to_string());
        let mut differing = Vec::new();
        for a in &names {
            let (x, y) = (std::fs::read(original.join(a)), std::fs::read(out.join(a)));
            if !matches!((x, y), (Ok(x), Ok(y)) if x == y) {
                differing.push(a.clone());
            }
        }
        if !differing.is_empty() {
            anyhow::bail!(GlaError::Invariant(format!(
                "replay differs from the original in: {}",
                differing.join(", ")
            )));
        }
        println!("replay identical to original ({} artifacts)", names.len());
    }
    log::info!("manifest written to {}", written.display());
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    if let Command::Replay {
        manifest,
        out,
        verify,
        parallel_folds,
    } = cli.command
    {
        return replay(&manifest, &out, verify, parallel_folds);
    }
    let (plan, out) = plan_for(cli.command)?;
    let mut dir = OutDir::create(&out)?;
    plan.execute(&mut dir)?;
    let manifest = dir.finish(plan)?;
    log::info!("manifest written to {}", manifest.display());
    Ok(())
}

/// 1 for configuration or input problems, 2 for violated internal invariants.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<GlaError>()) {
        Some(e) if !e.is_user_error() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
