//! Reconstruction, classification and supervised contrastive losses.
//!
//! Each loss comes with the gradient with respect to its direct input
//! (reconstruction, logit or embeddings); `optim` chains these through the
//! encoder.

use ndarray::{Array1, Array2};

use crate::{Error, Result};

/// Probabilities are clamped to `[CE_CLAMP, 1 - CE_CLAMP]` before the log.
pub const CE_CLAMP: f64 = 1e-12;
const NORM_FLOOR: f64 = 1e-12;

/// `(1/N²) ‖Σ̂ − Σ‖²_F`.
pub fn mse_loss(sigma_hat: &Array2<f64>, sigma: &Array2<f64>) -> Result<f64> {
    if sigma_hat.dim() != sigma.dim() {
        return Err(Error::shape("mse_loss", format!("{:?}", sigma.dim()), format!("{:?}", sigma_hat.dim())));
    }
    let count = sigma.len().max(1) as f64;
    let sq: f64 = sigma_hat.iter().zip(sigma.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sq / count)
}

/// Gradient of [`mse_loss`] with respect to `sigma_hat`.
pub fn mse_grad(sigma_hat: &Array2<f64>, sigma: &Array2<f64>) -> Result<Array2<f64>> {
    if sigma_hat.dim() != sigma.dim() {
        return Err(Error::shape("mse_grad", format!("{:?}", sigma.dim()), format!("{:?}", sigma_hat.dim())));
    }
    let scale = 2.0 / sigma.len().max(1) as f64;
    Ok((sigma_hat - sigma) * scale)
}

/// Binary cross-entropy of a single prediction.
pub fn ce_loss(y_hat: f64, y: u8) -> f64 {
    let p = y_hat.clamp(CE_CLAMP, 1.0 - CE_CLAMP);
    let y = f64::from(y);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Gradient of [`ce_loss`] with respect to the classifier logit, where
/// `y_hat = sigmoid(logit)`. Zero inside the clamped region.
pub fn ce_grad_logit(y_hat: f64, y: u8) -> f64 {
    if (CE_CLAMP..=1.0 - CE_CLAMP).contains(&y_hat) {
        y_hat - f64::from(y)
    } else {
        0.0
    }
}

/// Mean cross-entropy over a batch.
pub fn classification_loss(predictions: &[(f64, u8)]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::validation("classification loss over an empty batch"));
    }
    Ok(predictions.iter().map(|&(p, y)| ce_loss(p, y)).sum::<f64>() / predictions.len() as f64)
}

/// One sample of the joint reconstruction + classification objective.
#[derive(Debug, Clone, Copy)]
pub struct BaselineSample<'a> {
    pub sigma_hat: &'a Array2<f64>,
    pub sigma: &'a Array2<f64>,
    pub y_hat: f64,
    pub y: u8,
}

/// Batch mean of MSE plus `lambda` times batch mean of CE.
pub fn baseline_loss(samples: &[BaselineSample<'_>], lambda: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::validation("baseline loss over an empty batch"));
    }
    if !(lambda >= 0.0) {
        return Err(Error::validation(format!("lambda must be >= 0, got {lambda}")));
    }
    let b = samples.len() as f64;
    let mut mse = 0.0;
    let mut ce = 0.0;
    for s in samples {
        mse += mse_loss(s.sigma_hat, s.sigma)?;
        ce += ce_loss(s.y_hat, s.y);
    }
    Ok(mse / b + lambda * ce / b)
}

/// Embeddings and labels of an augmented batch, with temperature.
#[derive(Debug, Clone)]
pub struct SupConBatch {
    pub z: Vec<Array1<f64>>,
    pub y: Vec<u8>,
    pub tau: f64,
    /// L2-normalize embeddings before taking dot products.
    pub normalize: bool,
}

impl SupConBatch {
    pub fn new(z: Vec<Array1<f64>>, y: Vec<u8>, tau: f64) -> Result<Self> {
        let batch = Self {
            z,
            y,
            tau,
            normalize: false,
        };
        batch.validate()?;
        Ok(batch)
    }

    pub fn validate(&self) -> Result<()> {
        let count = self.z.len();
        if count < 2 || !count.is_multiple_of(2) {
            return Err(Error::validation(format!(
                "contrastive batch needs an even number (>= 2) of embeddings, got {count}"
            )));
        }
        if self.y.len() != count {
            return Err(Error::shape("supcon labels", count, self.y.len()));
        }
        let dim = self.z[0].len();
        if self.z.iter().any(|z| z.len() != dim) {
            return Err(Error::validation("contrastive embeddings differ in dimension"));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::validation(format!("tau must lie in (0, 1], got {}", self.tau)));
        }
        Ok(())
    }

    fn effective_embeddings(&self) -> (Vec<Array1<f64>>, Vec<f64>) {
        if !self.normalize {
            return (self.z.clone(), vec![1.0; self.z.len()]);
        }
        let norms: Vec<f64> = self.z.iter().map(|z| z.dot(z).sqrt().max(NORM_FLOOR)).collect();
        let unit = self.z.iter().zip(&norms).map(|(z, n)| z / *n).collect();
        (unit, norms)
    }
}

/// Per-anchor pieces of the contrastive loss.
struct AnchorTerms {
    loss: f64,
    /// d loss / d s_ij for every j (zero on the diagonal).
    coeffs: Vec<Vec<f64>>,
}

fn similarities(z: &[Array1<f64>], tau: f64) -> Vec<Vec<f64>> {
    let count = z.len();
    let mut sims = vec![vec![0.0; count]; count];
    for i in 0..count {
        for j in i..count {
            let s = z[i].dot(&z[j]) / tau;
            sims[i][j] = s;
            sims[j][i] = s;
        }
    }
    sims
}

/// Loss and coefficients from the scaled similarity matrix `s_ij = z_i·z_j / τ`.
fn supcon_terms(sims: &[Vec<f64>], y: &[u8]) -> AnchorTerms {
    let count = sims.len();
    let mut loss = 0.0;
    let mut coeffs = vec![vec![0.0; count]; count];
    for i in 0..count {
        let positives: Vec<usize> = (0..count).filter(|&p| p != i && y[p] == y[i]).collect();
        if positives.is_empty() {
            log::warn!("contrastive anchor {i} has no positive; it contributes nothing");
            continue;
        }
        let shift = (0..count).filter(|&q| q != i).map(|q| sims[i][q]).fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..count).filter(|&q| q != i).map(|q| (sims[i][q] - shift).exp()).sum();
        let lse = shift + denom.ln();
        let inv_p = 1.0 / positives.len() as f64;
        loss += positives.iter().map(|&p| lse - sims[i][p]).sum::<f64>() * inv_p;
        for q in (0..count).filter(|&q| q != i) {
            coeffs[i][q] = (sims[i][q] - lse).exp();
        }
        for &p in &positives {
            coeffs[i][p] -= inv_p;
        }
    }
    AnchorTerms { loss, coeffs }
}

/// Supervised contrastive loss, summed (not averaged) over anchors.
pub fn supcon_loss(batch: &SupConBatch) -> Result<f64> {
    batch.validate()?;
    let (z, _) = batch.effective_embeddings();
    Ok(supcon_terms(&similarities(&z, batch.tau), &batch.y).loss)
}

/// Loss and its gradient with respect to every embedding `z_i`.
pub fn supcon_loss_and_grad(batch: &SupConBatch) -> Result<(f64, Vec<Array1<f64>>)> {
    batch.validate()?;
    let (z, norms) = batch.effective_embeddings();
    let terms = supcon_terms(&similarities(&z, batch.tau), &batch.y);
    let count = z.len();
    let dim = z[0].len();
    let mut grads = Vec::with_capacity(count);
    for i in 0..count {
        let mut g = Array1::zeros(dim);
        for j in 0..count {
            let c = terms.coeffs[i][j] + terms.coeffs[j][i];
            if c != 0.0 {
                g.scaled_add(c / batch.tau, &z[j]);
            }
        }
        if batch.normalize {
            // project out the radial component of the unit vector
            let radial = z[i].dot(&g);
            g = (g - &z[i] * radial) / norms[i];
        }
        grads.push(g);
    }
    Ok((terms.loss, grads))
}

/// Mean MSE over the clean reconstructions plus `lambda` times the contrastive sum.
pub fn pretrain_loss(recon_pairs: &[(&Array2<f64>, &Array2<f64>)], supcon: &SupConBatch, lambda: f64) -> Result<f64> {
    if recon_pairs.is_empty() {
        return Err(Error::validation("pretrain loss over an empty batch"));
    }
    if supcon.z.len() != 2 * recon_pairs.len() {
        return Err(Error::shape("pretrain_loss", 2 * recon_pairs.len(), supcon.z.len()));
    }
    if !(lambda >= 0.0) {
        return Err(Error::validation(format!("lambda must be >= 0, got {lambda}")));
    }
    let mut mse = 0.0;
    for (sigma_hat, sigma) in recon_pairs {
        mse += mse_loss(sigma_hat, sigma)?;
    }
    Ok(mse / recon_pairs.len() as f64 + lambda * supcon_loss(supcon)?)
}
