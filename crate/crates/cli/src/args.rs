use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gcl_core::optim::ObjectiveKind;
use gcl_core::training::TrainMode;
use serde_json::Value;

use crate::config::set_path;

#[derive(Debug, Parser)]
#[command(name = "gcl", version, about = "Supervised graph contrastive learning on brain connectomes")]
pub struct Cli {
    /// Log verbosity (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic two-class connectome dataset.
    Generate(GenerateArgs),
    /// Train a model and evaluate it on the held-out test split.
    Train(TrainArgs),
    /// Print accuracy of a checkpoint on a dataset as JSON.
    Evaluate(EvaluateArgs),
    /// Write graph embeddings and their first two principal components.
    ExportEmbeddings(ExportArgs),
    /// Retrain on shrinking fractions of the training split.
    Sweep(SweepArgs),
    /// Compare analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

impl Switch {
    fn on(self) -> bool {
        self == Switch::On
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Baseline,
    Contrastive,
}

impl From<ModeArg> for TrainMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Baseline => TrainMode::Baseline,
            ModeArg::Contrastive => TrainMode::Contrastive,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 1000)]
    pub subjects: usize,
    #[arg(long, default_value_t = 32)]
    pub nodes: usize,
    #[arg(long, default_value_t = 0.3)]
    pub class_gap: f64,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    /// Defaults to $GCL_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Where the data comes from and how it is split.
#[derive(Debug, Args)]
pub struct DataArgs {
    /// JSON run configuration; flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory or manifest (overrides the config's data source).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Comma-separated GCN layer widths.
    #[arg(long, value_delimiter = ',')]
    pub widths: Option<Vec<usize>>,
}

/// Flag overrides for the `train` section of the run configuration.
#[derive(Debug, Args, Default)]
pub struct TrainOverrides {
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Encoder-Decoder (on) or Encoder-only (off).
    #[arg(long, value_enum)]
    pub decoder: Option<Switch>,
    #[arg(long, value_enum)]
    pub augment: Option<Switch>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, value_enum)]
    pub normalize_embeddings: Option<Switch>,
    #[arg(long)]
    pub baseline_epochs: Option<usize>,
    #[arg(long)]
    pub baseline_batch_size: Option<usize>,
    #[arg(long)]
    pub baseline_lr: Option<f64>,
    #[arg(long)]
    pub pretrain_epochs: Option<usize>,
    #[arg(long)]
    pub pretrain_batch_size: Option<usize>,
    #[arg(long)]
    pub pretrain_lr: Option<f64>,
    /// Total fine-tuning epochs.
    #[arg(long = "finetune-K")]
    pub finetune_k: Option<usize>,
    /// Fine-tuning epochs with a frozen encoder.
    #[arg(long = "finetune-M")]
    pub finetune_m: Option<usize>,
    #[arg(long)]
    pub finetune_batch_size: Option<usize>,
    #[arg(long)]
    pub lr_frozen: Option<f64>,
    #[arg(long)]
    pub lr_full: Option<f64>,
    #[arg(long)]
    pub edge_drop_prob: Option<f64>,
    #[arg(long)]
    pub mask_count_max: Option<usize>,
    #[arg(long)]
    pub augment_seed: Option<u64>,
    /// Training seed; defaults to the config, then $GCL_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl TrainOverrides {
    /// The overrides as a partial `train` object; the seed is handled apart.
    pub fn to_patch(&self) -> Value {
        let mut v = Value::Object(Default::default());
        let mut put = |path: &str, value: Option<Value>| {
            if let Some(value) = value {
                set_path(&mut v, path, value);
            }
        };
        let mode = self.mode.map(|m| serde_json::to_value(TrainMode::from(m)).expect("mode serializes"));
        put("mode", mode);
        put("use_decoder", self.decoder.map(|s| s.on().into()));
        put("use_augmentation", self.augment.map(|s| s.on().into()));
        put("lambda", self.lambda.map(Value::from));
        put("tau", self.tau.map(Value::from));
        put("normalize_embeddings", self.normalize_embeddings.map(|s| s.on().into()));
        put("baseline_epochs", self.baseline_epochs.map(Value::from));
        put("batch_size_baseline", self.baseline_batch_size.map(Value::from));
        put("baseline_learning_rate", self.baseline_lr.map(Value::from));
        put("pretrain.epochs", self.pretrain_epochs.map(Value::from));
        put("pretrain.batch_size", self.pretrain_batch_size.map(Value::from));
        put("pretrain.learning_rate", self.pretrain_lr.map(Value::from));
        put("finetune.total_epochs", self.finetune_k.map(Value::from));
        put("finetune.frozen_epochs", self.finetune_m.map(Value::from));
        put("finetune.batch_size", self.finetune_batch_size.map(Value::from));
        put("finetune.lr_frozen", self.lr_frozen.map(Value::from));
        put("finetune.lr_full", self.lr_full.map(Value::from));
        put("augment.edge_drop_prob", self.edge_drop_prob.map(Value::from));
        put("augment.mask_count_max", self.mask_count_max.map(Value::from));
        put("augment.seed", self.augment_seed.map(Value::from));
        v
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainOverrides,
    /// Fraction of the training split actually used.
    #[arg(long)]
    pub train_proportion: Option<f64>,
    /// Output directory (overrides the config's `output_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Subset {
    All,
    Train,
    Val,
    Test,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Which part of the split to score.
    #[arg(long, value_enum, default_value = "all")]
    pub subset: Subset,
    /// Include every subject's prediction in the output.
    #[arg(long)]
    pub per_subject: bool,
    /// Also write the JSON to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "all")]
    pub subset: Subset,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainOverrides,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,0.5,0.7,1.0")]
    pub proportions: Vec<f64>,
    /// Comma-separated training seeds; defaults to the training seed.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Configurations as framework/architecture/augmentation, e.g.
    /// `cl/encoder_decoder/da,baseline/encoder/none`. Defaults to all eight.
    #[arg(long, value_delimiter = ',')]
    pub configs: Option<Vec<String>>,
    /// Concurrent training runs.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Output directory for sweep.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    All,
    Baseline,
    Pretrain,
    Finetune,
}

impl ObjectiveArg {
    pub fn kinds(self) -> Vec<ObjectiveKind> {
        match self {
            ObjectiveArg::All => vec![ObjectiveKind::Baseline, ObjectiveKind::Pretrain, ObjectiveKind::FinetuneCe],
            ObjectiveArg::Baseline => vec![ObjectiveKind::Baseline],
            ObjectiveArg::Pretrain => vec![ObjectiveKind::Pretrain],
            ObjectiveArg::Finetune => vec![ObjectiveKind::FinetuneCe],
        }
    }
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Defaults to $GCL_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value = "all")]
    pub objective: ObjectiveArg,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-6)]
    pub step: f64,
}
