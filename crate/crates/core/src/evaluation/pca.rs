use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::{Error, Result};

/// Stop once the off-diagonal Frobenius norm falls below this fraction of the
/// full matrix norm.
pub const JACOBI_TOLERANCE: f64 = 1e-12;
const MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaResult {
    /// One row per embedding, one column per component.
    pub projected: Array2<f64>,
    pub explained_variance: Vec<f64>,
    /// Unit loadings, one row per component.
    pub components: Array2<f64>,
    pub mean: Array1<f64>,
    /// Components beyond the rank of the data carry no variance.
    pub zero_variance: Vec<bool>,
}

/// Jacobi eigendecomposition of a symmetric matrix: eigenvalues and the
/// matching eigenvectors as columns, unsorted.
fn jacobi_eigen(mut a: Array2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    let d = a.nrows();
    let mut v = Array2::<f64>::eye(d);
    let total = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let off_norm = |a: &Array2<f64>| {
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    s += a[[i, j]] * a[[i, j]];
                }
            }
        }
        s.sqrt()
    };
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        if off_norm(&a) <= JACOBI_TOLERANCE * total {
            converged = true;
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = a[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (theta * theta + 1.0).sqrt())
                } else {
                    -1.0 / (-theta + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let (akp, akq) = (a[[k, p]], a[[k, q]]);
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..d {
                    let (apk, aqk) = (a[[p, k]], a[[q, k]]);
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                a[[p, q]] = 0.0;
                a[[q, p]] = 0.0;
                for k in 0..d {
                    let (vkp, vkq) = (v[[k, p]], v[[k, q]]);
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged && off_norm(&a) > JACOBI_TOLERANCE * total {
        return Err(Error::Numerical(format!("Jacobi eigensolver did not converge in {MAX_SWEEPS} sweeps")));
    }
    Ok(((0..d).map(|i| a[[i, i]]).collect(), v))
}

/// Projects row vectors onto the top `k` principal components of their
/// population covariance (normalized by the number of rows).
///
/// Each component is oriented so that its largest-magnitude loading is
/// positive. Components with no variance are flagged and project to zero.
pub fn pca_project(embeddings: ArrayView2<'_, f64>, k: usize) -> Result<PcaResult> {
    let (n, dim) = embeddings.dim();
    if n < 2 {
        return Err(Error::validation(format!("PCA needs at least 2 embeddings, got {n}")));
    }
    if k == 0 || k > dim {
        return Err(Error::validation(format!("cannot extract {k} components from {dim}-dimensional embeddings")));
    }
    if embeddings.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite embedding value".into()));
    }
    let mean = embeddings.mean_axis(Axis(0)).expect("n >= 2");
    let centered = &embeddings - &mean;
    let mut cov = centered.t().dot(&centered) / n as f64;
    for i in 0..dim {
        for j in 0..i {
            cov[[j, i]] = cov[[i, j]];
        }
    }
    let (values, vectors) = jacobi_eigen(cov)?;

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let top = values[order[0]].max(0.0);

    let mut components = Array2::<f64>::zeros((k, dim));
    let mut explained_variance = Vec::with_capacity(k);
    let mut zero_variance = Vec::with_capacity(k);
    for (c, &idx) in order.iter().take(k).enumerate() {
        let mut col = vectors.column(idx).to_owned();
        let lead = col
            .iter()
            .enumerate()
            .fold(0, |best, (i, x)| if x.abs() > col[best].abs() { i } else { best });
        if col[lead] < 0.0 {
            col.mapv_inplace(|x| -x);
        }
        components.row_mut(c).assign(&col);
        let lambda = values[idx].max(0.0);
        let flat = lambda <= JACOBI_TOLERANCE * top;
        zero_variance.push(flat);
        explained_variance.push(if flat { 0.0 } else { lambda });
    }

    let mut projected = centered.dot(&components.t());
    for (c, flat) in zero_variance.iter().enumerate() {
        if *flat {
            projected.column_mut(c).fill(0.0);
        }
    }
    Ok(PcaResult {
        projected,
        explained_variance,
        components,
        mean,
        zero_variance,
    })
}
