use std::fs;
use std::path::{Path, PathBuf};

use gcl_core::evaluation::{evaluate, export_embeddings, proportion_sweep, write_sweep_csv};
use gcl_core::graph_data::{generate_synthetic, save_dataset, split_dataset, Dataset, SyntheticSpec};
use gcl_core::model::{load_checkpoint, save_checkpoint, ModelParams};
use gcl_core::optim::GradCheckInstance;
use gcl_core::training::{train, TrainConfig, TrainMode};
use serde::Serialize;
use serde_json::Value;

use crate::args::{DataArgs, EvaluateArgs, ExportArgs, GenerateArgs, GradcheckArgs, Subset, SweepArgs, TrainArgs, TrainOverrides};
use crate::config::{merge, resolve_seed, resolve_train, RunConfig};
use crate::error::{CliError, CliResult};

pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const FINAL_CHECKPOINT_FILE: &str = "checkpoint_final.json";
pub const PRETRAINED_CHECKPOINT_FILE: &str = "checkpoint_pretrained.json";
pub const REPORT_FILE: &str = "report.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SWEEP_FILE: &str = "sweep.csv";

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(format!("creating {}", path.display()), e))
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output serializes");
    s.push('\n');
    s
}

pub fn generate(args: &GenerateArgs) -> CliResult<()> {
    let spec = SyntheticSpec {
        n_subjects: args.subjects,
        n_nodes: args.nodes,
        class_gap: args.class_gap,
        noise_sigma: args.noise,
        seed: resolve_seed(args.seed, None)?,
    };
    let ds = generate_synthetic(&spec)?;
    save_dataset(&ds, &args.out)?;
    log::info!("wrote {} subjects with {} nodes to {}", ds.len(), ds.n(), args.out.display());
    Ok(())
}

fn run_config(args: &DataArgs) -> CliResult<RunConfig> {
    let mut rc = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(path) = &args.data {
        rc.dataset = Some(path.clone());
        rc.synthetic = None;
    }
    if let Some(seed) = args.split_seed {
        rc.split.seed = seed;
    }
    if let Some(widths) = &args.widths {
        rc.layer_widths = widths.clone();
    }
    Ok(rc)
}

/// Folds flag overrides and the seed fallback into the `train` section.
fn apply_overrides(rc: &mut RunConfig, overrides: &TrainOverrides) -> CliResult<()> {
    merge(&mut rc.train, &overrides.to_patch());
    let from_config = match rc.train.get("seed") {
        None => None,
        Some(v) => Some(v.as_u64().ok_or_else(|| CliError::config("train.seed must be an unsigned integer"))?),
    };
    let seed = resolve_seed(overrides.seed, from_config)?;
    rc.train["seed"] = Value::from(seed);
    Ok(())
}

fn output_dir(flag: &Option<PathBuf>, rc: &mut RunConfig) -> CliResult<PathBuf> {
    if let Some(dir) = flag {
        rc.output_dir = Some(dir.clone());
    }
    rc.output_dir
        .clone()
        .ok_or_else(|| CliError::config("no output directory: pass --out or set `output_dir`"))
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    mode: TrainMode,
    use_decoder: bool,
    use_augmentation: bool,
    seed: u64,
    n_train: usize,
    n_val: usize,
    n_test: usize,
    best_epoch: Option<usize>,
    best_val_accuracy: Option<f64>,
    /// Test accuracy of the best-validation checkpoint.
    test_accuracy: f64,
    /// Test accuracy after the last epoch.
    final_test_accuracy: f64,
}

pub fn train_cmd(args: &TrainArgs) -> CliResult<()> {
    let mut rc = run_config(&args.data)?;
    apply_overrides(&mut rc, &args.train)?;
    if let Some(p) = args.train_proportion {
        rc.split.train_proportion = p;
    }
    let out = output_dir(&args.out, &mut rc)?;
    let ds = rc.dataset()?;
    let cfg = rc.train_config(ds.n())?;
    let model = rc.model(ds.n())?;
    let split = split_dataset(&ds, &rc.split)?;
    rc.train = serde_json::to_value(&cfg).expect("config serializes");

    create_dir(&out)?;
    write_file(&out.join(CONFIG_FILE), &rc.to_json())?;
    let outcome = train(&split.train, &split.val, &model, &cfg)?;
    log::info!("training took {:.1}s", outcome.report.wall_time);

    save_checkpoint(&outcome.params, &out.join(CHECKPOINT_FILE))?;
    save_checkpoint(&outcome.final_params, &out.join(FINAL_CHECKPOINT_FILE))?;
    if let Some(pre) = &outcome.pretrained {
        save_checkpoint(pre, &out.join(PRETRAINED_CHECKPOINT_FILE))?;
    }
    let mut jsonl = String::new();
    for record in &outcome.report.records {
        jsonl.push_str(&serde_json::to_string(record).expect("record serializes"));
        jsonl.push('\n');
    }
    write_file(&out.join(REPORT_FILE), &jsonl)?;

    let summary = TrainSummary {
        mode: cfg.mode,
        use_decoder: cfg.use_decoder,
        use_augmentation: cfg.use_augmentation,
        seed: cfg.seed,
        n_train: split.train.len(),
        n_val: split.val.len(),
        n_test: split.test.len(),
        best_epoch: outcome.report.best_epoch,
        best_val_accuracy: outcome.report.best_val_accuracy,
        test_accuracy: evaluate(&outcome.params, &split.test)?.accuracy,
        final_test_accuracy: evaluate(&outcome.final_params, &split.test)?.accuracy,
    };
    let text = pretty(&summary);
    write_file(&out.join(SUMMARY_FILE), &text)?;
    print!("{text}");
    Ok(())
}

fn subset(rc: &RunConfig, which: Subset) -> CliResult<Dataset> {
    let ds = rc.dataset()?;
    if which == Subset::All {
        return Ok(ds);
    }
    let split = split_dataset(&ds, &rc.split)?;
    Ok(match which {
        Subset::Train => split.train,
        Subset::Val => split.val,
        Subset::Test => split.test,
        Subset::All => unreachable!(),
    })
}

fn checkpoint_for(path: &Path, ds: &Dataset) -> CliResult<ModelParams> {
    let params = load_checkpoint(path)?;
    let n = params.config().n;
    if n != ds.n() {
        return Err(CliError::config(format!(
            "checkpoint {} expects {n}-node graphs but the dataset has {} nodes",
            path.display(),
            ds.n()
        )));
    }
    Ok(params)
}

pub fn evaluate_cmd(args: &EvaluateArgs) -> CliResult<()> {
    let rc = run_config(&args.data)?;
    let ds = subset(&rc, args.subset)?;
    let params = checkpoint_for(&args.checkpoint, &ds)?;
    let result = evaluate(&params, &ds)?;
    let text = if args.per_subject {
        pretty(&result)
    } else {
        pretty(&serde_json::json!({
            "accuracy": result.accuracy,
            "n_correct": result.n_correct,
            "n_total": result.n_total,
        }))
    };
    if let Some(path) = &args.out {
        write_file(path, &text)?;
    }
    print!("{text}");
    Ok(())
}

pub fn export_cmd(args: &ExportArgs) -> CliResult<()> {
    let rc = run_config(&args.data)?;
    let ds = subset(&rc, args.subset)?;
    let params = checkpoint_for(&args.checkpoint, &ds)?;
    export_embeddings(&params, &ds, &args.out)?;
    log::info!("wrote {} embeddings to {}", ds.len(), args.out.display());
    Ok(())
}

/// Every framework/architecture/augmentation combination.
pub const ALL_CONFIGS: [&str; 8] = [
    "baseline/encoder/none",
    "baseline/encoder/da",
    "baseline/encoder_decoder/none",
    "baseline/encoder_decoder/da",
    "cl/encoder/none",
    "cl/encoder/da",
    "cl/encoder_decoder/none",
    "cl/encoder_decoder/da",
];

fn parse_config_label(label: &str) -> CliResult<(TrainMode, bool, bool)> {
    let parts: Vec<&str> = label.trim().split('/').collect();
    let bad = || CliError::config(format!("bad sweep configuration {label:?}; expected e.g. cl/encoder_decoder/da"));
    let [framework, architecture, augmentation] = parts[..] else {
        return Err(bad());
    };
    let mode = match framework {
        "baseline" => TrainMode::Baseline,
        "cl" => TrainMode::Contrastive,
        _ => return Err(bad()),
    };
    let decoder = match architecture {
        "encoder" => false,
        "encoder_decoder" => true,
        _ => return Err(bad()),
    };
    let augment = match augmentation {
        "da" => true,
        "none" => false,
        _ => return Err(bad()),
    };
    Ok((mode, decoder, augment))
}

pub fn sweep_cmd(args: &SweepArgs) -> CliResult<()> {
    let mut rc = run_config(&args.data)?;
    apply_overrides(&mut rc, &args.train)?;
    let out = output_dir(&args.out, &mut rc)?;
    let ds = rc.dataset()?;
    let model = rc.model(ds.n())?;
    let labels: Vec<String> = match &args.configs {
        Some(list) => list.clone(),
        None => ALL_CONFIGS.iter().map(|s| s.to_string()).collect(),
    };
    let mut configs: Vec<TrainConfig> = Vec::new();
    for label in &labels {
        let (mode, decoder, augment) = parse_config_label(label)?;
        let mut partial = rc.train.clone();
        partial["mode"] = serde_json::to_value(mode).expect("mode serializes");
        partial["use_decoder"] = decoder.into();
        partial["use_augmentation"] = augment.into();
        configs.push(resolve_train(&partial, ds.n())?);
    }
    let seeds = match &args.seeds {
        Some(s) => s.clone(),
        None => vec![rc.train["seed"].as_u64().expect("seed was resolved")],
    };

    create_dir(&out)?;
    write_file(&out.join(CONFIG_FILE), &rc.to_json())?;
    let result = proportion_sweep(&ds, &rc.split, &args.proportions, &configs, &seeds, &model, args.jobs)?;
    let path = out.join(SWEEP_FILE);
    write_sweep_csv(&result, &path)?;
    let failed = result.rows.iter().filter(|r| r.accuracy.is_none()).count();
    log::info!("wrote {} rows to {} ({failed} failed)", result.rows.len(), path.display());
    Ok(())
}

pub fn gradcheck_cmd(args: &GradcheckArgs) -> CliResult<()> {
    let seed = resolve_seed(args.seed, None)?;
    let mut failures = Vec::new();
    for kind in args.objective.kinds() {
        let instance = GradCheckInstance::seeded(kind, seed)?;
        let report = instance.check(args.step)?;
        for block in &report.blocks {
            println!(
                "{kind:?} {:<8} max_rel_error {:.3e} {}",
                block.block,
                block.max_rel_error,
                if block.passed { "ok" } else { "FAIL" }
            );
        }
        if !report.passed {
            failures.push(format!("{kind:?}: {}", report.failing_blocks().join(", ")));
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::verification(format!("gradient check failed for {}", failures.join("; "))))
    }
}
