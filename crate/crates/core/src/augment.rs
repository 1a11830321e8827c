//! Attribute masking, edge dropping and contrastive view construction.

use ndarray::{Array2, ArrayView2};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph_data::{normalize_adjacency, Connectome};
use crate::rng::RngStream;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    /// Probability that each undirected edge is removed.
    pub edge_drop_prob: f64,
    /// Inclusive upper bound of the masked-node count.
    pub mask_count_max: usize,
    pub seed: u64,
}

impl AugmentConfig {
    /// Drop probability 0.2 and up to every node masked.
    pub fn for_nodes(n: usize) -> Self {
        Self {
            edge_drop_prob: 0.2,
            mask_count_max: n,
            seed: 0,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.edge_drop_prob) {
            return Err(Error::validation(format!(
                "edge_drop_prob must lie in [0, 1], got {}",
                self.edge_drop_prob
            )));
        }
        if self.mask_count_max > n {
            return Err(Error::validation(format!(
                "mask_count_max {} exceeds node count {n}",
                self.mask_count_max
            )));
        }
        Ok(())
    }
}

/// Model input for one graph: normalized adjacency and initial node features.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphView {
    pub a_norm: Array2<f64>,
    pub x0: Array2<f64>,
}

impl GraphView {
    /// The unaugmented view: normalized SC with identity features.
    pub fn clean(sc: ArrayView2<'_, f64>) -> Result<Self> {
        let a_norm = normalize_adjacency(sc)?;
        let n = a_norm.nrows();
        Ok(Self {
            a_norm,
            x0: Array2::<f64>::eye(n),
        })
    }

    pub fn n(&self) -> usize {
        self.a_norm.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledView {
    pub view: GraphView,
    pub label: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentKind {
    AttributeMasking,
    EdgeDropping,
}

/// Identity features with a uniformly sized, uniformly chosen set of columns zeroed.
pub fn mask_attributes(n: usize, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<Array2<f64>> {
    if n == 0 {
        return Err(Error::validation("cannot mask features of an empty graph"));
    }
    cfg.validate(n)?;
    let m = rng.random_range(0..=cfg.mask_count_max);
    let mut x0 = Array2::<f64>::eye(n);
    for j in index::sample(rng, n, m) {
        x0[[j, j]] = 0.0;
    }
    Ok(x0)
}

/// Removes each undirected edge independently with probability `edge_drop_prob`.
pub fn drop_edges(sc: ArrayView2<'_, f64>, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<Array2<f64>> {
    let (n, c) = sc.dim();
    if n != c {
        return Err(Error::shape("drop_edges", format!("{n}x{n}"), format!("{n}x{c}")));
    }
    cfg.validate(n)?;
    let p = cfg.edge_drop_prob;
    let mut out = sc.to_owned();
    for i in 0..n {
        for j in (i + 1)..n {
            if (sc[[i, j]] > 0.0 || sc[[j, i]] > 0.0) && rng.random::<f64>() < p {
                out[[i, j]] = 0.0;
                out[[j, i]] = 0.0;
            }
        }
    }
    Ok(out)
}

/// Builds `2B` views: for input `k`, view `2k` keeps the adjacency and masks
/// features, view `2k + 1` drops edges and keeps identity features (0-based).
///
/// Sample `k` draws from `stream.child(k)` only.
pub fn make_contrastive_batch(
    batch: &[&Connectome],
    cfg: &AugmentConfig,
    stream: &RngStream,
) -> Result<Vec<LabeledView>> {
    let mut views = Vec::with_capacity(2 * batch.len());
    for (k, subject) in batch.iter().enumerate() {
        let sample = stream.child(k as u64);
        let n = subject.n();
        let masked = GraphView {
            a_norm: normalize_adjacency(subject.sc().view())?,
            x0: mask_attributes(n, cfg, &mut sample.child(0).rng())?,
        };
        let dropped = drop_edges(subject.sc().view(), cfg, &mut sample.child(1).rng())?;
        let dropped = GraphView::clean(dropped.view())?;
        views.push(LabeledView {
            view: masked,
            label: subject.label(),
        });
        views.push(LabeledView {
            view: dropped,
            label: subject.label(),
        });
    }
    Ok(views)
}

/// Picks one augmentation for the whole batch with a fair coin and applies it
/// to every sample, producing one view per input.
pub fn sample_baseline_augmentation(
    batch: &[&Connectome],
    cfg: &AugmentConfig,
    stream: &RngStream,
) -> Result<(AugmentKind, Vec<LabeledView>)> {
    if batch.is_empty() {
        return Err(Error::validation("cannot augment an empty batch"));
    }
    let kind = if stream.child(u64::MAX).rng().random_bool(0.5) {
        AugmentKind::AttributeMasking
    } else {
        AugmentKind::EdgeDropping
    };
    let views = batch
        .iter()
        .enumerate()
        .map(|(k, subject)| {
            let mut rng = stream.child(k as u64).rng();
            let view = match kind {
                AugmentKind::AttributeMasking => GraphView {
                    a_norm: normalize_adjacency(subject.sc().view())?,
                    x0: mask_attributes(subject.n(), cfg, &mut rng)?,
                },
                AugmentKind::EdgeDropping => GraphView::clean(drop_edges(subject.sc().view(), cfg, &mut rng)?.view())?,
            };
            Ok(LabeledView {
                view,
                label: subject.label(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((kind, views))
}
