//! Connectome representation, adjacency normalization, dataset splitting,
//! file I/O and the synthetic two-block generator.

mod io;
mod synthetic;

pub use io::{format_f64, load_dataset, read_matrix_csv, save_dataset, write_matrix_csv, MANIFEST_FILE};
pub use synthetic::{generate_synthetic, SyntheticSpec};

use std::collections::HashSet;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng::RngStream;
use crate::{Error, Result};

/// Absolute tolerance used when checking symmetry and fixed diagonals of input matrices.
pub const SYMMETRY_TOL: f64 = 1e-8;
/// FC entries within this distance outside `[0, 1]` are clamped; anything further is rejected.
pub const FC_RANGE_TOL: f64 = 1e-9;

/// One subject: structural and functional connectivity plus a binary label.
#[derive(Debug, Clone, PartialEq)]
pub struct Connectome {
    subject_id: String,
    sc: Array2<f64>,
    fc: Array2<f64>,
    label: u8,
}

impl Connectome {
    /// Validates and canonicalizes the matrices.
    ///
    /// Both matrices are symmetrized, the SC diagonal is forced to zero, the FC
    /// diagonal to one and FC entries within [`FC_RANGE_TOL`] of `[0, 1]` are
    /// clamped. Anything further from the invariants is an error.
    pub fn new(subject_id: impl Into<String>, sc: Array2<f64>, fc: Array2<f64>, label: u8) -> Result<Self> {
        let subject_id = subject_id.into();
        let ctx = |what: &str| format!("subject {subject_id}: {what}");
        if label > 1 {
            return Err(Error::validation(ctx(&format!("label must be 0 or 1, got {label}"))));
        }
        let n = check_square(sc.view()).map_err(|_| Error::validation(ctx("SC matrix is not square")))?;
        let m = check_square(fc.view()).map_err(|_| Error::validation(ctx("FC matrix is not square")))?;
        if n != m {
            return Err(Error::validation(ctx(&format!(
                "dimension mismatch: SC is {n}x{n}, FC is {m}x{m}"
            ))));
        }
        if n == 0 {
            return Err(Error::validation(ctx("empty matrices")));
        }
        if sc.iter().chain(fc.iter()).any(|v| !v.is_finite()) {
            return Err(Error::validation(ctx("non-finite matrix entry")));
        }
        check_symmetric(sc.view(), SYMMETRY_TOL).map_err(|e| Error::validation(ctx(&format!("SC {e}"))))?;
        check_symmetric(fc.view(), SYMMETRY_TOL).map_err(|e| Error::validation(ctx(&format!("FC {e}"))))?;

        let mut sc = symmetrize(sc.view());
        for i in 0..n {
            if sc[[i, i]].abs() > SYMMETRY_TOL {
                return Err(Error::validation(ctx(&format!("SC diagonal entry {i} is {}", sc[[i, i]]))));
            }
            sc[[i, i]] = 0.0;
        }
        if let Some(v) = sc.iter().find(|v| **v < 0.0) {
            return Err(Error::validation(ctx(&format!("negative SC weight {v}"))));
        }

        let mut fc = symmetrize(fc.view());
        for ((i, j), v) in fc.indexed_iter_mut() {
            if i == j {
                if (*v - 1.0).abs() > SYMMETRY_TOL {
                    return Err(Error::validation(ctx(&format!("FC diagonal entry {i} is {v}"))));
                }
                *v = 1.0;
            } else if *v < -FC_RANGE_TOL || *v > 1.0 + FC_RANGE_TOL {
                return Err(Error::validation(ctx(&format!("FC entry ({i},{j}) = {v} outside [0,1]"))));
            } else {
                *v = v.clamp(0.0, 1.0);
            }
        }
        Ok(Self {
            subject_id,
            sc,
            fc,
            label,
        })
    }

    pub fn id(&self) -> &str {
        &self.subject_id
    }

    pub fn sc(&self) -> &Array2<f64> {
        &self.sc
    }

    pub fn fc(&self) -> &Array2<f64> {
        &self.fc
    }

    pub fn label(&self) -> u8 {
        self.label
    }

    pub fn n(&self) -> usize {
        self.sc.nrows()
    }
}

/// A non-empty ordered collection of subjects sharing one node count.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    subjects: Vec<Connectome>,
    n: usize,
}

impl Dataset {
    pub fn new(subjects: Vec<Connectome>) -> Result<Self> {
        let first = subjects
            .first()
            .ok_or_else(|| Error::validation("dataset must contain at least one subject"))?;
        let n = first.n();
        let mut seen = HashSet::with_capacity(subjects.len());
        for s in &subjects {
            if s.n() != n {
                return Err(Error::validation(format!(
                    "subject {} has {} nodes, expected {n}",
                    s.id(),
                    s.n()
                )));
            }
            if !seen.insert(s.id()) {
                return Err(Error::validation(format!("duplicate subject id {}", s.id())));
            }
        }
        Ok(Self { subjects, n })
    }

    pub fn subjects(&self) -> &[Connectome] {
        &self.subjects
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    /// Number of subjects with label 1.
    pub fn positives(&self) -> usize {
        self.subjects.iter().filter(|s| s.label == 1).count()
    }

    fn select(&self, indices: &[usize]) -> Result<Self> {
        Self::new(indices.iter().map(|&i| self.subjects[i].clone()).collect())
    }
}

/// Train/validation/test fractions plus an optional reduction of the train part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
    pub train_proportion: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_frac: 0.8,
            val_frac: 0.1,
            test_frac: 0.1,
            seed: 0,
            train_proportion: 1.0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fracs = [self.train_frac, self.val_frac, self.test_frac];
        if fracs.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return Err(Error::validation(format!("split fractions must be positive, got {fracs:?}")));
        }
        let sum: f64 = fracs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::validation(format!("split fractions sum to {sum}, expected 1")));
        }
        if !(self.train_proportion > 0.0 && self.train_proportion <= 1.0) {
            return Err(Error::validation(format!(
                "train_proportion must lie in (0, 1], got {}",
                self.train_proportion
            )));
        }
        Ok(())
    }
}

/// The three disjoint parts of a split.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Seeded, unstratified partition of `ds`.
///
/// Validation and test sizes are `round(frac * len)`; the remainder goes to
/// train, which is then cut to its first `ceil(train_proportion * len)`
/// members. Because the shuffle depends only on `spec.seed`, the validation
/// and test parts do not change with `train_proportion` and smaller train
/// parts are prefixes of larger ones.
pub fn split_dataset(ds: &Dataset, spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    let total = ds.len();
    let n_val = (spec.val_frac * total as f64).round() as usize;
    let n_test = (spec.test_frac * total as f64).round() as usize;
    let n_train = total.saturating_sub(n_val + n_test);
    if n_val == 0 || n_test == 0 || n_train == 0 {
        return Err(Error::validation(format!(
            "split of {total} subjects leaves an empty part (train {n_train}, val {n_val}, test {n_test})"
        )));
    }
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut RngStream::new(spec.seed).child(0x5B17).rng());

    let (test_idx, rest) = order.split_at(n_test);
    let (val_idx, train_idx) = rest.split_at(n_val);
    let keep = ((spec.train_proportion * n_train as f64) - 1e-9).ceil().max(1.0) as usize;
    let train_idx = &train_idx[..keep.min(n_train)];

    Ok(Split {
        train: ds.select(train_idx)?,
        val: ds.select(val_idx)?,
        test: ds.select(test_idx)?,
    })
}

/// Symmetric renormalization with self-loops, `D^-1/2 (A + I) D^-1/2` where
/// `D = diag(rowsum(A + I))`.
pub fn normalize_adjacency(sc: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let n = check_square(sc).map_err(|_| Error::validation("adjacency matrix is not square"))?;
    check_symmetric(sc, SYMMETRY_TOL).map_err(|e| Error::validation(format!("adjacency {e}")))?;
    if sc.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::validation("adjacency weights must be finite and nonnegative"));
    }
    let a = symmetrize(sc);
    let degree: Vec<f64> = (0..n)
        .map(|i| 1.0 + a.row(i).iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| v).sum::<f64>())
        .collect();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        out[[i, i]] = 1.0 / degree[i];
        for j in (i + 1)..n {
            let v = a[[i, j]] / (degree[i] * degree[j]).sqrt();
            out[[i, j]] = v;
            out[[j, i]] = v;
        }
    }
    Ok(out)
}

fn check_square(m: ArrayView2<'_, f64>) -> std::result::Result<usize, ()> {
    let (r, c) = m.dim();
    if r == c {
        Ok(r)
    } else {
        Err(())
    }
}

fn check_symmetric(m: ArrayView2<'_, f64>, tol: f64) -> std::result::Result<(), String> {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (m[[i, j]], m[[j, i]]);
            if (a - b).abs() > tol {
                return Err(format!("is not symmetric at ({i},{j}): {a} vs {b}"));
            }
        }
    }
    Ok(())
}

fn symmetrize(m: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = m.to_owned();
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[[i, j]] + m[[j, i]]);
            out[[i, j]] = v;
            out[[j, i]] = v;
        }
    }
    out
}
