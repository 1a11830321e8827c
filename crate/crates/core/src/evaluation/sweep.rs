use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::evaluate;
use crate::graph_data::{format_f64, split_dataset, Dataset, SplitSpec};
use crate::model::ModelConfig;
use crate::training::{train, TrainConfig, TrainMode};
use crate::{Error, Result};

pub const SWEEP_HEADER: &str = "framework,architecture,augmentation,proportion,seed,accuracy,status";

/// The reduced training proportions plus the full training set.
pub const DEFAULT_GRID: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchSchedule {
    pub baseline: usize,
    pub pretrain: usize,
    pub finetune: usize,
}

const SCHEDULE: [(f64, BatchSchedule); 4] = [
    (0.1, BatchSchedule { baseline: 8, pretrain: 16, finetune: 4 }),
    (0.3, BatchSchedule { baseline: 16, pretrain: 32, finetune: 8 }),
    (0.5, BatchSchedule { baseline: 32, pretrain: 64, finetune: 16 }),
    (0.7, BatchSchedule { baseline: 64, pretrain: 128, finetune: 16 }),
];

/// Batch sizes for a reduced training proportion; `None` keeps the
/// configured sizes.
pub fn batch_schedule(proportion: f64) -> Option<BatchSchedule> {
    SCHEDULE
        .iter()
        .find(|(p, _)| (p - proportion).abs() < 1e-9)
        .map(|(_, s)| *s)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub framework: String,
    pub architecture: String,
    pub augmentation: String,
    pub proportion: f64,
    pub seed: u64,
    pub accuracy: Option<f64>,
    /// `ok`, or the error that stopped the run.
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

fn labels(cfg: &TrainConfig) -> (&'static str, &'static str, &'static str) {
    (
        match cfg.mode {
            TrainMode::Baseline => "baseline",
            TrainMode::Contrastive => "cl",
        },
        if cfg.use_decoder { "encoder_decoder" } else { "encoder" },
        if cfg.use_augmentation { "da" } else { "none" },
    )
}

fn run_point(ds: &Dataset, split: &SplitSpec, model: &ModelConfig, base: &TrainConfig, proportion: f64, seed: u64) -> Result<f64> {
    let parts = split_dataset(ds, &SplitSpec { train_proportion: proportion, ..*split })?;
    let mut cfg = base.clone();
    cfg.seed = seed;
    if let Some(s) = batch_schedule(proportion) {
        cfg.batch_size_baseline = s.baseline;
        cfg.pretrain.batch_size = s.pretrain;
        cfg.finetune.batch_size = s.finetune;
    }
    let outcome = train(&parts.train, &parts.val, model, &cfg)?;
    Ok(evaluate(&outcome.params, &parts.test)?.accuracy)
}

/// Trains every configuration at every proportion and seed on one fixed
/// partition, so the validation and test sets are shared by all runs.
///
/// Runs execute on a pool of `jobs` threads. A failing run becomes an error
/// row and the sweep continues.
pub fn proportion_sweep(
    ds: &Dataset,
    split: &SplitSpec,
    grid: &[f64],
    configs: &[TrainConfig],
    seeds: &[u64],
    model: &ModelConfig,
    jobs: usize,
) -> Result<SweepResult> {
    if grid.is_empty() || configs.is_empty() || seeds.is_empty() {
        return Err(Error::validation("sweep needs at least one proportion, configuration and seed"));
    }
    for &p in grid {
        SplitSpec { train_proportion: p, ..*split }.validate()?;
    }
    let mut points = Vec::new();
    for (c, cfg) in configs.iter().enumerate() {
        cfg.validate(model.n)?;
        for &p in grid {
            for &s in seeds {
                points.push((c, p, s));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::validation(format!("cannot start worker pool: {e}")))?;
    let mut rows: Vec<(usize, SweepRow)> = pool.install(|| {
        points
            .par_iter()
            .map(|&(c, proportion, seed)| {
                let cfg = &configs[c];
                let (framework, architecture, augmentation) = labels(cfg);
                let result = run_point(ds, split, model, cfg, proportion, seed);
                if let Err(e) = &result {
                    log::warn!("sweep run {framework}/{architecture}/{augmentation} p={proportion} seed={seed} failed: {e}");
                }
                let row = SweepRow {
                    framework: framework.into(),
                    architecture: architecture.into(),
                    augmentation: augmentation.into(),
                    proportion,
                    seed,
                    accuracy: result.as_ref().ok().copied(),
                    status: match result {
                        Ok(_) => "ok".into(),
                        Err(e) => format!("error: {e}"),
                    },
                };
                (c, row)
            })
            .collect()
    });
    rows.sort_by(|(ca, a), (cb, b)| ca.cmp(cb).then(a.proportion.total_cmp(&b.proportion)).then(a.seed.cmp(&b.seed)));
    Ok(SweepResult {
        rows: rows.into_iter().map(|(_, r)| r).collect(),
    })
}

pub fn sweep_csv(result: &SweepResult) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for r in &result.rows {
        let accuracy = r.accuracy.map(format_f64).unwrap_or_default();
        let status: String = r.status.chars().map(|c| if matches!(c, ',' | '\n' | '\r') { ';' } else { c }).collect();
        writeln!(
            out,
            "{},{},{},{},{},{accuracy},{status}",
            r.framework,
            r.architecture,
            r.augmentation,
            format_f64(r.proportion),
            r.seed
        )
        .expect("writing to a String");
    }
    out
}

pub fn write_sweep_csv(result: &SweepResult, path: &Path) -> Result<()> {
    fs::write(path, sweep_csv(result)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_data::{generate_synthetic, SyntheticSpec};

    fn tiny(mode: TrainMode, n: usize) -> TrainConfig {
        let mut cfg = match mode {
            TrainMode::Baseline => TrainConfig::baseline(n),
            TrainMode::Contrastive => TrainConfig::contrastive(n),
        };
        cfg.baseline_epochs = 2;
        cfg.pretrain.epochs = 2;
        cfg.finetune.total_epochs = 2;
        cfg.finetune.frozen_epochs = 1;
        cfg
    }

    fn setup() -> (Dataset, ModelConfig, SplitSpec) {
        let ds = generate_synthetic(&SyntheticSpec {
            n_subjects: 60,
            n_nodes: 8,
            seed: 2,
            ..SyntheticSpec::default()
        })
        .unwrap();
        (ds, ModelConfig::new(8, vec![4, 3]).unwrap(), SplitSpec::default())
    }

    #[test]
    fn schedule_lookup() {
        assert_eq!(batch_schedule(0.3), Some(BatchSchedule { baseline: 16, pretrain: 32, finetune: 8 }));
        assert_eq!(batch_schedule(1.0), None);
    }

    #[test]
    fn degenerate_sweep_equals_direct_run() {
        let (ds, model, split) = setup();
        let cfg = tiny(TrainMode::Contrastive, 8);
        let res = proportion_sweep(&ds, &split, &[1.0], std::slice::from_ref(&cfg), &[3], &model, 1).unwrap();
        assert_eq!(res.rows.len(), 1);
        let parts = split_dataset(&ds, &split).unwrap();
        let mut direct_cfg = cfg.clone();
        direct_cfg.seed = 3;
        let out = train(&parts.train, &parts.val, &model, &direct_cfg).unwrap();
        let direct = evaluate(&out.params, &parts.test).unwrap().accuracy;
        assert_eq!(res.rows[0].accuracy, Some(direct));
        assert_eq!(res.rows[0].status, "ok");
        assert_eq!((res.rows[0].framework.as_str(), res.rows[0].architecture.as_str()), ("cl", "encoder_decoder"));
    }

    #[test]
    fn full_grid_row_count_and_reproducibility() {
        let (ds, model, split) = setup();
        let mut configs = Vec::new();
        for mode in [TrainMode::Baseline, TrainMode::Contrastive] {
            for decoder in [false, true] {
                let mut c = tiny(mode, 8);
                c.use_decoder = decoder;
                configs.push(c);
            }
        }
        let a = proportion_sweep(&ds, &split, &DEFAULT_GRID, &configs, &[0], &model, 4).unwrap();
        assert_eq!(a.rows.len(), 20);
        assert!(a.rows.iter().all(|r| r.status == "ok"));
        let b = proportion_sweep(&ds, &split, &DEFAULT_GRID, &configs, &[0], &model, 2).unwrap();
        assert_eq!(sweep_csv(&a), sweep_csv(&b));
        assert!(sweep_csv(&a).starts_with(SWEEP_HEADER));
    }

    #[test]
    fn failing_run_becomes_error_row() {
        let (ds, model, split) = setup();
        let mut cfg = tiny(TrainMode::Baseline, 8);
        cfg.baseline_learning_rate = 1e300;
        let ok = tiny(TrainMode::Baseline, 8);
        let res = proportion_sweep(&ds, &split, &[0.5], &[cfg, ok], &[0], &model, 2).unwrap();
        assert_eq!(res.rows.len(), 2);
        assert!(res.rows[0].status.starts_with("error"), "{}", res.rows[0].status);
        assert_eq!(res.rows[0].accuracy, None);
        assert_eq!(res.rows[1].status, "ok");
        let csv = sweep_csv(&res);
        assert_eq!(csv.lines().nth(1).unwrap().split(',').count(), 7);
    }
}
