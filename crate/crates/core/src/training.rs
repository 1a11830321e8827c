//! Baseline joint training, contrastive pre-training and two-phase fine-tuning.

use std::borrow::Cow;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::{make_contrastive_batch, sample_baseline_augmentation, AugmentConfig, GraphView};
use crate::evaluation::evaluate_views;
use crate::graph_data::{Connectome, Dataset};
use crate::model::{ModelConfig, ModelParams};
use crate::optim::{
    compute_gradients, evaluate_objective, init_params, AdamConfig, Batch, ContrastiveBatch, Objective, OptimizerState,
    SupervisedItem, UpdateScope,
};
use crate::rng::RngStream;
use crate::{Error, Result};

const SHUFFLE_STREAM: u64 = 0x5AFF;
const AUGMENT_STREAM: u64 = 0xA6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Baseline,
    Contrastive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneConfig {
    /// Total fine-tuning epochs (K).
    pub total_epochs: usize,
    /// Leading epochs with a frozen encoder (M < K).
    pub frozen_epochs: usize,
    pub lr_frozen: f64,
    pub lr_full: f64,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub use_decoder: bool,
    pub use_augmentation: bool,
    pub lambda: f64,
    pub tau: f64,
    /// L2-normalize embeddings inside the contrastive loss.
    pub normalize_embeddings: bool,
    pub batch_size_baseline: usize,
    pub baseline_epochs: usize,
    pub baseline_learning_rate: f64,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub seed: u64,
    pub augment: AugmentConfig,
}

impl TrainConfig {
    /// Joint reconstruction + classification training with the decoder on.
    pub fn baseline(n: usize) -> Self {
        Self {
            mode: TrainMode::Baseline,
            use_decoder: true,
            use_augmentation: false,
            lambda: 0.4,
            tau: 1.0,
            normalize_embeddings: false,
            batch_size_baseline: 64,
            baseline_epochs: 300,
            baseline_learning_rate: 1e-3,
            pretrain: PretrainConfig {
                epochs: 3000,
                batch_size: 128,
                learning_rate: 1e-3,
            },
            finetune: FinetuneConfig {
                total_epochs: 200,
                frozen_epochs: 100,
                lr_frozen: 1e-3,
                lr_full: 1e-4,
                batch_size: 16,
            },
            seed: 0,
            augment: AugmentConfig::for_nodes(n),
        }
    }

    /// Contrastive pre-training with augmentation and decoder, then fine-tuning.
    pub fn contrastive(n: usize) -> Self {
        Self {
            mode: TrainMode::Contrastive,
            use_augmentation: true,
            lambda: 0.25,
            ..Self::baseline(n)
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let ft = &self.finetune;
        if ft.frozen_epochs >= ft.total_epochs {
            return Err(Error::validation(format!(
                "frozen epochs M = {} must be smaller than total fine-tuning epochs K = {}",
                ft.frozen_epochs, ft.total_epochs
            )));
        }
        let rates = [self.baseline_learning_rate, self.pretrain.learning_rate, ft.lr_frozen, ft.lr_full];
        if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::validation(format!("learning rates must be positive, got {rates:?}")));
        }
        if self.batch_size_baseline == 0 || self.pretrain.batch_size == 0 || ft.batch_size == 0 {
            return Err(Error::validation("batch sizes must be at least 1"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::validation(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::validation(format!("tau must lie in (0, 1], got {}", self.tau)));
        }
        self.augment.validate(n)
    }

    fn pretrain_objective(&self) -> Objective {
        Objective::Pretrain {
            lambda: self.lambda,
            tau: self.tau,
            use_decoder: self.use_decoder,
            normalize: self.normalize_embeddings,
        }
    }

    fn baseline_objective(&self) -> Objective {
        Objective::Baseline {
            lambda: self.lambda,
            use_decoder: self.use_decoder,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Baseline,
    Pretrain,
    FinetuneFrozen,
    FinetuneFull,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Absent during pre-training, which has no classifier.
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    pub best_val_accuracy: Option<f64>,
    pub best_epoch: Option<usize>,
    #[serde(skip)]
    pub final_params: ModelParams,
    /// Seconds; not serialized so report files stay reproducible.
    #[serde(skip)]
    pub wall_time: f64,
}

impl TrainReport {
    fn new(initial: &ModelParams) -> Self {
        Self {
            records: Vec::new(),
            best_val_accuracy: None,
            best_epoch: None,
            final_params: initial.clone(),
            wall_time: 0.0,
        }
    }

    pub fn train_losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.train_loss).collect()
    }
}

/// Clean views of a dataset, computed once per run.
struct Prepared<'a> {
    subjects: &'a [Connectome],
    clean: Vec<GraphView>,
}

impl<'a> Prepared<'a> {
    fn new(ds: &'a Dataset) -> Result<Self> {
        let clean = ds
            .subjects()
            .iter()
            .map(|s| GraphView::clean(s.sc().view()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            subjects: ds.subjects(),
            clean,
        })
    }

    fn labels(&self) -> Vec<u8> {
        self.subjects.iter().map(Connectome::label).collect()
    }

    fn supervised(&self, idx: &[usize]) -> Batch<'_> {
        Batch::Supervised(
            idx.iter()
                .map(|&i| SupervisedItem {
                    view: Cow::Borrowed(&self.clean[i]),
                    fc: self.subjects[i].fc(),
                    label: self.subjects[i].label(),
                })
                .collect(),
        )
    }

    /// Two identical clean views per subject.
    fn duplicated(&self, idx: &[usize]) -> Batch<'_> {
        Batch::Contrastive(ContrastiveBatch {
            clean: idx.iter().map(|&i| (Cow::Borrowed(&self.clean[i]), self.subjects[i].fc())).collect(),
            views: idx
                .iter()
                .flat_map(|&i| {
                    let y = self.subjects[i].label();
                    [(Cow::Borrowed(&self.clean[i]), y), (Cow::Borrowed(&self.clean[i]), y)]
                })
                .collect(),
        })
    }

    fn accuracy(&self, params: &ModelParams) -> Result<f64> {
        Ok(evaluate_views(params, &self.clean, &self.labels())?.0)
    }
}

fn epoch_order(len: usize, seed: u64, phase: Phase, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    let stream = RngStream::new(seed).child(SHUFFLE_STREAM).child(phase as u64).child(epoch as u64);
    order.shuffle(&mut stream.rng());
    order
}

fn augment_stream(cfg: &TrainConfig, epoch: usize, batch: usize) -> RngStream {
    RngStream::new(cfg.augment.seed)
        .child(AUGMENT_STREAM)
        .child(cfg.seed)
        .child(epoch as u64)
        .child(batch as u64)
}

fn at(phase: Phase, epoch: usize, batch: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Numerical(msg) => Error::Numerical(format!("{phase:?} epoch {epoch}, batch {batch}: {msg}")),
        other => other,
    }
}

/// Pre-training loss on duplicated clean views, averaged over chunks of the
/// training batch size so it is comparable with the training loss.
fn duplicated_loss(objective: &Objective, set: &Prepared<'_>, batch_size: usize, params: &ModelParams) -> Result<f64> {
    let idx: Vec<usize> = (0..set.clean.len()).collect();
    let mut total = 0.0;
    let mut count = 0;
    for chunk in idx.chunks(batch_size) {
        total += evaluate_objective(objective, &set.duplicated(chunk), params)?;
        count += 1;
    }
    Ok(total / count as f64)
}

fn check_inputs(train: &Dataset, val: &Dataset, params_n: usize, cfg: &TrainConfig) -> Result<()> {
    if train.n() != params_n || val.n() != params_n {
        return Err(Error::shape("training data", format!("{params_n} nodes"), format!("train {} / val {}", train.n(), val.n())));
    }
    cfg.validate(params_n)
}

/// Best-validation-accuracy bookkeeping; ties keep the earliest epoch.
struct Selector {
    best: Option<(f64, usize, ModelParams)>,
}

impl Selector {
    fn offer(&mut self, accuracy: f64, epoch: usize, params: &ModelParams) {
        if self.best.as_ref().is_none_or(|(b, _, _)| accuracy > *b) {
            self.best = Some((accuracy, epoch, params.clone()));
        }
    }
}

/// Joint training of encoder, decoder and classifier.
///
/// Returns the parameters of the epoch with the best validation accuracy
/// (the initial parameters when no epoch runs).
pub fn train_baseline(
    train: &Dataset,
    val: &Dataset,
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainReport)> {
    if cfg.mode != TrainMode::Baseline {
        return Err(Error::validation("train_baseline requires mode = baseline"));
    }
    check_inputs(train, val, model.n, cfg)?;
    let started = Instant::now();
    let train_set = Prepared::new(train)?;
    let val_set = Prepared::new(val)?;
    let objective = cfg.baseline_objective();
    let mut params = init_params(model, cfg.seed);
    let mut report = TrainReport::new(&params);
    let mut state = OptimizerState::new(&params, AdamConfig::with_learning_rate(cfg.baseline_learning_rate));
    let mut selector = Selector { best: None };

    for epoch in 1..=cfg.baseline_epochs {
        let order = epoch_order(train.len(), cfg.seed, Phase::Baseline, epoch);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(cfg.batch_size_baseline).enumerate() {
            let batch = if cfg.use_augmentation {
                let subjects: Vec<&Connectome> = chunk.iter().map(|&i| &train.subjects()[i]).collect();
                let (_, views) = sample_baseline_augmentation(&subjects, &cfg.augment, &augment_stream(cfg, epoch, b))?;
                Batch::Supervised(
                    views
                        .into_iter()
                        .zip(&subjects)
                        .map(|(lv, s)| SupervisedItem {
                            view: Cow::Owned(lv.view),
                            fc: s.fc(),
                            label: lv.label,
                        })
                        .collect(),
                )
            } else {
                train_set.supervised(chunk)
            };
            let (loss, grads) = compute_gradients(&objective, &batch, &params, false).map_err(at(Phase::Baseline, epoch, b))?;
            state.step(&mut params, &grads, UpdateScope::All);
            loss_sum += loss;
            batches += 1;
        }
        let all_val: Vec<usize> = (0..val.len()).collect();
        let val_loss = evaluate_objective(&objective, &val_set.supervised(&all_val), &params)
            .map_err(at(Phase::Baseline, epoch, 0))?;
        let val_accuracy = val_set.accuracy(&params)?;
        selector.offer(val_accuracy, epoch, &params);
        log::debug!("baseline epoch {epoch}: train {:.6} val {val_loss:.6} acc {val_accuracy:.4}", loss_sum / batches as f64);
        report.records.push(EpochRecord {
            epoch,
            phase: Phase::Baseline,
            train_loss: loss_sum / batches as f64,
            val_loss,
            val_accuracy: Some(val_accuracy),
        });
    }
    report.final_params = params.clone();
    report.wall_time = started.elapsed().as_secs_f64();
    let best = match selector.best {
        Some((acc, epoch, best)) => {
            report.best_val_accuracy = Some(acc);
            report.best_epoch = Some(epoch);
            best
        }
        None => params,
    };
    Ok((best, report))
}

/// Contrastive (+ reconstruction) pre-training of the encoder.
///
/// The classifier parameters are returned exactly as initialized.
pub fn pretrain_contrastive(
    train: &Dataset,
    val: &Dataset,
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainReport)> {
    if cfg.mode != TrainMode::Contrastive {
        return Err(Error::validation("pretrain_contrastive requires mode = contrastive"));
    }
    check_inputs(train, val, model.n, cfg)?;
    let started = Instant::now();
    let train_set = Prepared::new(train)?;
    let val_set = Prepared::new(val)?;
    let objective = cfg.pretrain_objective();
    let mut params = init_params(model, cfg.seed);
    let mut report = TrainReport::new(&params);
    let mut state = OptimizerState::new(&params, AdamConfig::with_learning_rate(cfg.pretrain.learning_rate));

    for epoch in 1..=cfg.pretrain.epochs {
        let order = epoch_order(train.len(), cfg.seed, Phase::Pretrain, epoch);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(cfg.pretrain.batch_size).enumerate() {
            let batch = if cfg.use_augmentation {
                let subjects: Vec<&Connectome> = chunk.iter().map(|&i| &train.subjects()[i]).collect();
                let views = make_contrastive_batch(&subjects, &cfg.augment, &augment_stream(cfg, epoch, b))?;
                Batch::Contrastive(ContrastiveBatch {
                    clean: chunk
                        .iter()
                        .map(|&i| (Cow::Borrowed(&train_set.clean[i]), train.subjects()[i].fc()))
                        .collect(),
                    views: views.into_iter().map(|lv| (Cow::Owned(lv.view), lv.label)).collect(),
                })
            } else {
                train_set.duplicated(chunk)
            };
            let (loss, grads) = compute_gradients(&objective, &batch, &params, false).map_err(at(Phase::Pretrain, epoch, b))?;
            state.step(&mut params, &grads, UpdateScope::EncoderOnly);
            loss_sum += loss;
            batches += 1;
        }
        let val_loss = duplicated_loss(&objective, &val_set, cfg.pretrain.batch_size, &params)
            .map_err(at(Phase::Pretrain, epoch, 0))?;
        log::debug!("pretrain epoch {epoch}: train {:.6} val {val_loss:.6}", loss_sum / batches as f64);
        report.records.push(EpochRecord {
            epoch,
            phase: Phase::Pretrain,
            train_loss: loss_sum / batches as f64,
            val_loss,
            val_accuracy: None,
        });
    }
    report.final_params = params.clone();
    report.wall_time = started.elapsed().as_secs_f64();
    Ok((params, report))
}

/// Classifier-only training for `M` epochs, then the full model at the lower
/// learning rate until epoch `K`, both on the CE loss without augmentation.
pub fn finetune(
    pretrained: &ModelParams,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainReport)> {
    finetune_observed(pretrained, train, val, cfg, &mut |_, _, _| {})
}

/// `finetune` with a callback receiving the parameters after every epoch.
pub fn finetune_observed(
    pretrained: &ModelParams,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    observe: &mut dyn FnMut(Phase, usize, &ModelParams),
) -> Result<(ModelParams, TrainReport)> {
    pretrained.validate()?;
    check_inputs(train, val, pretrained.config().n, cfg)?;
    let started = Instant::now();
    let train_set = Prepared::new(train)?;
    let val_set = Prepared::new(val)?;
    let ft = cfg.finetune;
    let objective = Objective::FinetuneCe;
    let mut params = pretrained.clone();
    let mut report = TrainReport::new(&params);
    let mut selector = Selector { best: None };
    let mut state = OptimizerState::new(&params, AdamConfig::with_learning_rate(ft.lr_frozen));

    for epoch in 1..=ft.total_epochs {
        let frozen = epoch <= ft.frozen_epochs;
        let phase = if frozen { Phase::FinetuneFrozen } else { Phase::FinetuneFull };
        if epoch == ft.frozen_epochs + 1 {
            state = OptimizerState::new(&params, AdamConfig::with_learning_rate(ft.lr_full));
        }
        let scope = if frozen { UpdateScope::ClassifierOnly } else { UpdateScope::All };
        let order = epoch_order(train.len(), cfg.seed, phase, epoch);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(ft.batch_size).enumerate() {
            let (loss, grads) =
                compute_gradients(&objective, &train_set.supervised(chunk), &params, frozen).map_err(at(phase, epoch, b))?;
            state.step(&mut params, &grads, scope);
            loss_sum += loss;
            batches += 1;
        }
        let all_val: Vec<usize> = (0..val.len()).collect();
        let val_loss = evaluate_objective(&objective, &val_set.supervised(&all_val), &params).map_err(at(phase, epoch, 0))?;
        let val_accuracy = val_set.accuracy(&params)?;
        selector.offer(val_accuracy, epoch, &params);
        observe(phase, epoch, &params);
        log::debug!("finetune epoch {epoch}: train {:.6} val {val_loss:.6} acc {val_accuracy:.4}", loss_sum / batches as f64);
        report.records.push(EpochRecord {
            epoch,
            phase,
            train_loss: loss_sum / batches as f64,
            val_loss,
            val_accuracy: Some(val_accuracy),
        });
    }
    report.final_params = params.clone();
    report.wall_time = started.elapsed().as_secs_f64();
    let (acc, epoch, best) = selector.best.expect("K > M >= 0 guarantees at least one epoch");
    report.best_val_accuracy = Some(acc);
    report.best_epoch = Some(epoch);
    Ok((best, report))
}

/// Result of a complete run in either mode.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best-validation checkpoint.
    pub params: ModelParams,
    /// Parameters after the last epoch.
    pub final_params: ModelParams,
    /// Encoder state after pre-training (contrastive mode only).
    pub pretrained: Option<ModelParams>,
    /// Records of every phase, in order.
    pub report: TrainReport,
}

/// Baseline training, or pre-training followed by fine-tuning.
pub fn train(train: &Dataset, val: &Dataset, model: &ModelConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    match cfg.mode {
        TrainMode::Baseline => {
            let (params, report) = train_baseline(train, val, model, cfg)?;
            Ok(TrainOutcome {
                params,
                final_params: report.final_params.clone(),
                pretrained: None,
                report,
            })
        }
        TrainMode::Contrastive => {
            let (pretrained, pre_report) = pretrain_contrastive(train, val, model, cfg)?;
            let (params, ft_report) = finetune(&pretrained, train, val, cfg)?;
            let mut records = pre_report.records;
            records.extend(ft_report.records);
            let report = TrainReport {
                records,
                best_val_accuracy: ft_report.best_val_accuracy,
                best_epoch: ft_report.best_epoch,
                final_params: ft_report.final_params,
                wall_time: pre_report.wall_time + ft_report.wall_time,
            };
            Ok(TrainOutcome {
                params,
                final_params: report.final_params.clone(),
                pretrained: Some(pretrained),
                report,
            })
        }
    }
}
