use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{normalize_adjacency, Connectome, Dataset};
use crate::rng::RngStream;
use crate::{Error, Result};

const INTRA_BLOCK_PROB: f64 = 0.6;
const INTER_BLOCK_PROB: f64 = 0.1;

/// Parameters of the synthetic two-block connectome generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub n_subjects: usize,
    pub n_nodes: usize,
    /// Added to the inter-block edge probability of label-1 subjects.
    pub class_gap: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_subjects: 1000,
            n_nodes: 32,
            class_gap: 0.3,
            noise_sigma: 0.05,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_nodes < 4 || !self.n_nodes.is_multiple_of(2) {
            return Err(Error::validation(format!(
                "node count must be even and at least 4, got {}",
                self.n_nodes
            )));
        }
        if self.n_subjects < 2 {
            return Err(Error::validation(format!(
                "need at least 2 subjects, got {}",
                self.n_subjects
            )));
        }
        if !(0.0..=1.0).contains(&self.class_gap) {
            return Err(Error::validation(format!("class_gap must lie in [0, 1], got {}", self.class_gap)));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::validation(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        Ok(())
    }
}

/// Generates a balanced two-class dataset of block-model connectomes.
///
/// Subject `i` has label `i % 2`. The SC of each subject is a weighted
/// two-block graph over the node halves; the FC is the max-normalized square
/// of the normalized SC plus symmetric Gaussian noise, clamped to `[0, 1]`
/// with a unit diagonal. Subject `i` draws only from the stream `(seed, i)`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let root = RngStream::new(spec.seed);
    let width = spec.n_subjects.saturating_sub(1).to_string().len().max(4);
    let subjects = (0..spec.n_subjects)
        .into_par_iter()
        .map(|i| {
            let label = (i % 2) as u8;
            let mut rng = root.child(i as u64).rng();
            let sc = block_model_sc(spec.n_nodes, label, spec.class_gap, &mut rng);
            let fc = fc_from_sc(&sc, spec.noise_sigma, &mut rng)?;
            Connectome::new(format!("sub-{i:0width$}"), sc, fc, label)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(subjects)
}

fn block_model_sc(n: usize, label: u8, class_gap: f64, rng: &mut impl Rng) -> Array2<f64> {
    let half = n / 2;
    let inter = (INTER_BLOCK_PROB + class_gap * f64::from(label)).min(1.0);
    let mut sc = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if (i < half) == (j < half) { INTRA_BLOCK_PROB } else { inter };
            if rng.random::<f64>() < p {
                // uniform on (0, 1]
                let w = 1.0 - rng.random::<f64>();
                sc[[i, j]] = w;
                sc[[j, i]] = w;
            }
        }
    }
    sc
}

fn fc_from_sc(sc: &Array2<f64>, noise_sigma: f64, rng: &mut impl Rng) -> Result<Array2<f64>> {
    let a = normalize_adjacency(sc.view())?;
    let s = a.dot(&a);
    let max = s.iter().cloned().fold(f64::MIN, f64::max);
    let mut fc = s / max;
    let n = fc.nrows();
    let noise = Normal::new(0.0, noise_sigma).map_err(|e| Error::validation(e.to_string()))?;
    for i in 0..n {
        fc[[i, i]] = 1.0;
        for j in (i + 1)..n {
            let eps = if noise_sigma > 0.0 { noise.sample(rng) } else { 0.0 };
            let v = (0.5 * (fc[[i, j]] + fc[[j, i]]) + eps).clamp(0.0, 1.0);
            fc[[i, j]] = v;
            fc[[j, i]] = v;
        }
    }
    Ok(fc)
}
