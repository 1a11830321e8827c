use std::borrow::Cow;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::Serialize;

use super::{compute_gradients, evaluate_objective, init_params, Batch, ContrastiveBatch, Gradients, Objective, ObjectiveKind, SupervisedItem};
use crate::augment::{make_contrastive_batch, AugmentConfig, GraphView};
use crate::graph_data::{generate_synthetic, Connectome, SyntheticSpec};
use crate::model::{encode_traced, gram, ModelConfig, ModelParams};
use crate::rng::RngStream;
use crate::{Error, Result};

/// A block passes when its worst relative error is below this.
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;
/// Minimum distance of every nonzero ReLU input from the kink at zero.
pub const KINK_MARGIN: f64 = 1e-4;
/// Denominator floor of the relative error. Central differences at step 1e-6
/// carry roughly 1e-9 of rounding noise, so coordinates with gradients
/// below this floor are judged on absolute error instead.
const REL_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Serialize)]
pub struct BlockReport {
    pub block: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockReport>,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }

    pub fn failing_blocks(&self) -> Vec<&str> {
        self.blocks.iter().filter(|b| !b.passed).map(|b| b.block.as_str()).collect()
    }
}

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

fn central_difference(
    objective: &Objective,
    batch: &Batch<'_>,
    params: &ModelParams,
    step: f64,
    perturb: impl Fn(&mut ModelParams, f64),
) -> Result<f64> {
    let mut plus = params.clone();
    perturb(&mut plus, step);
    let mut minus = params.clone();
    perturb(&mut minus, -step);
    let f_plus = evaluate_objective(objective, batch, &plus)?;
    let f_minus = evaluate_objective(objective, batch, &minus)?;
    Ok((f_plus - f_minus) / (2.0 * step))
}

struct BlockAccumulator {
    name: String,
    worst: (f64, usize, f64, f64),
}

impl BlockAccumulator {
    fn new(name: String) -> Self {
        Self {
            name,
            worst: (0.0, 0, 0.0, 0.0),
        }
    }

    fn record(&mut self, index: usize, analytic: f64, numeric: f64) {
        let err = rel_error(analytic, numeric);
        if err > self.worst.0 || !err.is_finite() {
            self.worst = (err, index, analytic, numeric);
        }
    }

    fn finish(self) -> BlockReport {
        let (max_rel_error, worst_index, analytic, numeric) = self.worst;
        BlockReport {
            block: self.name,
            max_rel_error,
            worst_index,
            analytic,
            numeric,
            passed: max_rel_error < GRADCHECK_TOLERANCE,
        }
    }
}

/// Compares supplied gradients against central differences of the forward loss.
pub fn compare_gradients(
    analytic: &Gradients,
    objective: &Objective,
    batch: &Batch<'_>,
    params: &ModelParams,
    step: f64,
) -> Result<GradCheckReport> {
    if !(step > 0.0) {
        return Err(Error::validation(format!("finite-difference step must be positive, got {step}")));
    }
    let mut blocks = Vec::new();
    for (l, theta) in params.theta.iter().enumerate() {
        let mut acc = BlockAccumulator::new(format!("theta[{l}]"));
        let cols = theta.ncols();
        for idx in 0..theta.len() {
            let (r, c) = (idx / cols, idx % cols);
            let numeric = central_difference(objective, batch, params, step, |p, h| p.theta[l][[r, c]] += h)?;
            acc.record(idx, analytic.d_theta[l][[r, c]], numeric);
        }
        blocks.push(acc.finish());
    }
    let mut acc = BlockAccumulator::new("clf_w".into());
    for d in 0..params.clf_w.len() {
        let numeric = central_difference(objective, batch, params, step, |p, h| p.clf_w[d] += h)?;
        acc.record(d, analytic.d_clf_w[d], numeric);
    }
    blocks.push(acc.finish());
    let mut acc = BlockAccumulator::new("clf_b".into());
    let numeric = central_difference(objective, batch, params, step, |p, h| p.clf_b += h)?;
    acc.record(0, analytic.d_clf_b, numeric);
    blocks.push(acc.finish());

    let passed = blocks.iter().all(|b| b.passed);
    Ok(GradCheckReport {
        blocks,
        tolerance: GRADCHECK_TOLERANCE,
        passed,
    })
}

/// Analytic gradients (unfrozen) checked against central differences.
pub fn finite_difference_check(
    objective: &Objective,
    batch: &Batch<'_>,
    params: &ModelParams,
    step: f64,
) -> Result<GradCheckReport> {
    let (_, grads) = compute_gradients(objective, batch, params, false)?;
    compare_gradients(&grads, objective, batch, params, step)
}

fn batch_views<'b>(batch: &'b Batch<'_>) -> Vec<&'b GraphView> {
    match batch {
        Batch::Supervised(items) => items.iter().map(|it| it.view.as_ref()).collect(),
        Batch::Contrastive(cb) => cb
            .clean
            .iter()
            .map(|(v, _)| v.as_ref())
            .chain(cb.views.iter().map(|(v, _)| v.as_ref()))
            .collect(),
    }
}

/// Smallest magnitude among the nonzero inputs of every ReLU in the batch.
///
/// Exact zeros are structural (e.g. fully masked features) and stay zero
/// under small parameter perturbations, so they are not counted.
pub fn kink_distance(batch: &Batch<'_>, params: &ModelParams) -> Result<f64> {
    let mut closest = f64::INFINITY;
    for view in batch_views(batch) {
        let trace = encode_traced(view, params)?;
        let s = gram(&trace.x_c);
        for v in trace.pre_activations.iter().flat_map(|p| p.iter()).chain(s.iter()) {
            if *v != 0.0 {
                closest = closest.min(v.abs());
            }
        }
    }
    Ok(closest)
}

/// A small seeded problem (8 nodes, widths `[4, 3]`, 3 subjects) with
/// parameters resampled until no ReLU input lies within [`KINK_MARGIN`] of zero.
#[derive(Debug, Clone)]
pub struct GradCheckInstance {
    pub objective: Objective,
    pub params: ModelParams,
    pub attempts: usize,
    clean: Vec<GraphView>,
    fcs: Vec<Array2<f64>>,
    views: Vec<(GraphView, u8)>,
    labels: Vec<u8>,
}

impl GradCheckInstance {
    pub const NODES: usize = 8;
    pub const WIDTHS: [usize; 2] = [4, 3];
    pub const BATCH: usize = 3;

    pub fn seeded(kind: ObjectiveKind, seed: u64) -> Result<Self> {
        let data = generate_synthetic(&SyntheticSpec {
            n_subjects: Self::BATCH,
            n_nodes: Self::NODES,
            class_gap: 0.3,
            noise_sigma: 0.05,
            seed,
        })?;
        let subjects: Vec<&Connectome> = data.subjects().iter().collect();
        let clean = subjects
            .iter()
            .map(|s| GraphView::clean(s.sc().view()))
            .collect::<Result<Vec<_>>>()?;
        let fcs = subjects.iter().map(|s| s.fc().clone()).collect();
        let labels = subjects.iter().map(|s| s.label()).collect();
        let augment = AugmentConfig {
            edge_drop_prob: 0.2,
            mask_count_max: Self::NODES / 2,
            seed,
        };
        let views = make_contrastive_batch(&subjects, &augment, &RngStream::new(seed).child(1))?
            .into_iter()
            .map(|lv| (lv.view, lv.label))
            .collect();
        let objective = match kind {
            ObjectiveKind::Baseline => Objective::Baseline {
                lambda: 0.4,
                use_decoder: true,
            },
            ObjectiveKind::Pretrain => Objective::Pretrain {
                lambda: 0.25,
                tau: 1.0,
                use_decoder: true,
                normalize: false,
            },
            ObjectiveKind::FinetuneCe => Objective::FinetuneCe,
        };
        let config = ModelConfig::new(Self::NODES, Self::WIDTHS.to_vec())?;
        let mut instance = Self {
            objective,
            params: ModelParams::zeros(&config),
            attempts: 0,
            clean,
            fcs,
            views,
            labels,
        };
        let param_stream = RngStream::new(seed).child(2);
        for attempt in 0..1000u64 {
            let mut params = init_params(&config, param_stream.child(attempt).rng().random());
            let mut rng = param_stream.child(attempt).child(1).rng();
            params.clf_w = Array1::from_shape_fn(config.concat_dim(), |_| rng.random_range(-1.0..1.0));
            params.clf_b = rng.random_range(-0.5..0.5);
            instance.params = params;
            instance.attempts = attempt as usize + 1;
            if kink_distance(&instance.batch(), &instance.params)? >= KINK_MARGIN {
                return Ok(instance);
            }
        }
        Err(Error::validation("could not sample parameters away from ReLU kinks"))
    }

    pub fn with_objective(mut self, objective: Objective) -> Self {
        self.objective = objective;
        self
    }

    pub fn batch(&self) -> Batch<'_> {
        match self.objective {
            Objective::Pretrain { .. } => Batch::Contrastive(ContrastiveBatch {
                clean: self.clean.iter().zip(&self.fcs).map(|(v, fc)| (Cow::Borrowed(v), fc)).collect(),
                views: self.views.iter().map(|(v, y)| (Cow::Borrowed(v), *y)).collect(),
            }),
            _ => Batch::Supervised(
                self.clean
                    .iter()
                    .zip(&self.fcs)
                    .zip(&self.labels)
                    .map(|((v, fc), &label)| SupervisedItem {
                        view: Cow::Borrowed(v),
                        fc,
                        label,
                    })
                    .collect(),
            ),
        }
    }

    pub fn check(&self, step: f64) -> Result<GradCheckReport> {
        finite_difference_check(&self.objective, &self.batch(), &self.params, step)
    }
}
