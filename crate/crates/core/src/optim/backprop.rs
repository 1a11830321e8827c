use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;

use super::{Batch, ContrastiveBatch, Gradients, Objective, SupervisedItem};
use crate::augment::GraphView;
use crate::losses::{
    baseline_loss, ce_grad_logit, ce_loss, classification_loss, mse_grad, mse_loss, pretrain_loss, supcon_loss,
    supcon_loss_and_grad, BaselineSample, SupConBatch,
};
use crate::model::{self, encode_traced, gram, pool, sigmoid, EncoderTrace, ModelParams};
use crate::{Error, Result};

/// Chains `d loss / d X_C` back through the GCN layers.
fn backprop_encoder(view: &GraphView, params: &ModelParams, trace: &EncoderTrace, d_xc: &Array2<f64>) -> Vec<Array2<f64>> {
    let layers = params.theta.len();
    let mut d_theta = vec![Array2::<f64>::zeros((0, 0)); layers];
    let mut offset = d_xc.ncols();
    let mut upstream: Option<Array2<f64>> = None;
    for l in (0..layers).rev() {
        let width = params.theta[l].ncols();
        offset -= width;
        let mut d_h = d_xc.slice(ndarray::s![.., offset..offset + width]).to_owned();
        if let Some(u) = upstream.take() {
            d_h += &u;
        }
        // ReLU'(0) = 0
        ndarray::Zip::from(&mut d_h)
            .and(&trace.pre_activations[l])
            .for_each(|g, &p| {
                if p <= 0.0 {
                    *g = 0.0;
                }
            });
        d_theta[l] = trace.propagated[l].t().dot(&d_h);
        if l > 0 {
            let d_g = d_h.dot(&params.theta[l].t());
            upstream = Some(view.a_norm.t().dot(&d_g));
        }
    }
    d_theta
}

/// Gradient of `ReLU(X_C X_Cᵀ)` given `d loss / d Σ̂`.
fn backprop_decoder(x_c: &Array2<f64>, gram: &Array2<f64>, d_sigma_hat: Array2<f64>) -> Array2<f64> {
    let mut d_s = d_sigma_hat;
    ndarray::Zip::from(&mut d_s).and(gram).for_each(|g, &s| {
        if s <= 0.0 {
            *g = 0.0;
        }
    });
    let sym = &d_s + &d_s.t();
    sym.dot(x_c)
}

fn pooled_grad(n: usize, d_z: &Array1<f64>) -> Array2<f64> {
    let row = d_z / n as f64;
    row.insert_axis(Axis(0)).broadcast((n, d_z.len())).expect("broadcast rows").to_owned()
}

fn ensure_finite(loss: f64, grads: &Gradients, what: &str) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("{what}: loss is {loss}")));
    }
    if !grads.is_finite() {
        return Err(Error::Numerical(format!("{what}: gradient contains NaN or infinity")));
    }
    Ok(())
}

fn sum_ordered(parts: Vec<(f64, Gradients)>, params: &ModelParams) -> (f64, Gradients) {
    let mut total = Gradients::zeros_like(params);
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l;
        total.add_assign(&g);
    }
    (loss, total)
}

fn supervised_gradients(
    items: &[SupervisedItem<'_>],
    params: &ModelParams,
    mse_weight: f64,
    ce_weight: f64,
    freeze_encoder: bool,
) -> Result<(f64, Gradients)> {
    if items.is_empty() {
        return Err(Error::validation("gradient of an empty batch"));
    }
    let inv_b = 1.0 / items.len() as f64;
    let parts = items
        .par_iter()
        .map(|item| {
            let trace = encode_traced(&item.view, params)?;
            let n = trace.x_c.nrows();
            let z = pool(&trace.x_c);
            let y_hat = sigmoid(model::logit(&z, params)?);
            let mut loss = ce_weight * inv_b * ce_loss(y_hat, item.label);
            let d_logit = ce_weight * inv_b * ce_grad_logit(y_hat, item.label);

            let mut grads = Gradients::zeros_like(params);
            grads.d_clf_w = &z * d_logit;
            grads.d_clf_b = d_logit;

            let need_decoder = mse_weight > 0.0;
            if freeze_encoder && !need_decoder {
                return Ok((loss, grads));
            }
            let mut d_xc = pooled_grad(n, &(&params.clf_w * d_logit));
            if need_decoder {
                let s = gram(&trace.x_c);
                let sigma_hat = s.mapv(|v| v.max(0.0));
                loss += mse_weight * inv_b * mse_loss(&sigma_hat, item.fc)?;
                let d_sigma_hat = mse_grad(&sigma_hat, item.fc)? * (mse_weight * inv_b);
                d_xc += &backprop_decoder(&trace.x_c, &s, d_sigma_hat);
            }
            if !freeze_encoder {
                grads.d_theta = backprop_encoder(&item.view, params, &trace, &d_xc);
            }
            Ok((loss, grads))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(sum_ordered(parts, params))
}

fn contrastive_gradients(
    batch: &ContrastiveBatch<'_>,
    params: &ModelParams,
    objective: (f64, f64, bool, bool),
    freeze_encoder: bool,
) -> Result<(f64, Gradients)> {
    let (lambda, tau, use_decoder, normalize) = objective;
    if batch.clean.is_empty() || batch.views.len() != 2 * batch.clean.len() {
        return Err(Error::shape("contrastive batch", format!("2 x {} views", batch.clean.len()), batch.views.len()));
    }
    let sup_weight = if use_decoder { lambda } else { 1.0 };
    let traces = batch
        .views
        .par_iter()
        .map(|(view, _)| encode_traced(view, params))
        .collect::<Result<Vec<_>>>()?;
    let supcon = SupConBatch {
        z: traces.iter().map(|t| pool(&t.x_c)).collect(),
        y: batch.views.iter().map(|(_, y)| *y).collect(),
        tau,
        normalize,
    };
    let (sup_loss, d_z) = supcon_loss_and_grad(&supcon)?;
    let mut parts = vec![(sup_weight * sup_loss, Gradients::zeros_like(params))];
    if !freeze_encoder {
        let view_parts = traces
            .par_iter()
            .zip(batch.views.par_iter())
            .zip(d_z.par_iter())
            .map(|((trace, (view, _)), dz)| {
                let mut grads = Gradients::zeros_like(params);
                let d_xc = pooled_grad(trace.x_c.nrows(), &(dz * sup_weight));
                grads.d_theta = backprop_encoder(view, params, trace, &d_xc);
                (0.0, grads)
            })
            .collect::<Vec<_>>();
        parts.extend(view_parts);
    }
    if use_decoder {
        let inv_b = 1.0 / batch.clean.len() as f64;
        let recon = batch
            .clean
            .par_iter()
            .map(|(view, fc)| {
                let trace = encode_traced(view, params)?;
                let s = gram(&trace.x_c);
                let sigma_hat = s.mapv(|v| v.max(0.0));
                let loss = inv_b * mse_loss(&sigma_hat, fc)?;
                let mut grads = Gradients::zeros_like(params);
                if !freeze_encoder {
                    let d_sigma_hat = mse_grad(&sigma_hat, fc)? * inv_b;
                    let d_xc = backprop_decoder(&trace.x_c, &s, d_sigma_hat);
                    grads.d_theta = backprop_encoder(view, params, &trace, &d_xc);
                }
                Ok((loss, grads))
            })
            .collect::<Result<Vec<_>>>()?;
        parts.extend(recon);
    }
    Ok(sum_ordered(parts, params))
}

/// Batch loss and its exact gradient with respect to every parameter.
///
/// With `freeze_encoder` the layer gradients are exactly zero. The pretrain
/// objective never produces classifier gradients. Per-sample contributions
/// are computed in parallel and summed in sample order.
pub fn compute_gradients(
    objective: &Objective,
    batch: &Batch<'_>,
    params: &ModelParams,
    freeze_encoder: bool,
) -> Result<(f64, Gradients)> {
    let (loss, grads) = match (objective, batch) {
        (Objective::Baseline { lambda, use_decoder }, Batch::Supervised(items)) => {
            if *use_decoder {
                supervised_gradients(items, params, 1.0, *lambda, freeze_encoder)?
            } else {
                supervised_gradients(items, params, 0.0, 1.0, freeze_encoder)?
            }
        }
        (Objective::FinetuneCe, Batch::Supervised(items)) => supervised_gradients(items, params, 0.0, 1.0, freeze_encoder)?,
        (
            Objective::Pretrain {
                lambda,
                tau,
                use_decoder,
                normalize,
            },
            Batch::Contrastive(cb),
        ) => contrastive_gradients(cb, params, (*lambda, *tau, *use_decoder, *normalize), freeze_encoder)?,
        _ => return Err(Error::validation("objective does not match the batch layout")),
    };
    ensure_finite(loss, &grads, &format!("{:?}", objective.kind()))?;
    Ok((loss, grads))
}

/// Batch loss from the forward definitions in [`crate::losses`], without gradients.
pub fn evaluate_objective(objective: &Objective, batch: &Batch<'_>, params: &ModelParams) -> Result<f64> {
    match (objective, batch) {
        (Objective::Baseline { lambda, use_decoder: true }, Batch::Supervised(items)) => {
            let outs = items
                .par_iter()
                .map(|it| model::forward_full(&it.view, params))
                .collect::<Result<Vec<_>>>()?;
            let samples: Vec<BaselineSample<'_>> = outs
                .iter()
                .zip(items)
                .map(|(o, it)| BaselineSample {
                    sigma_hat: &o.sigma_hat,
                    sigma: it.fc,
                    y_hat: o.y_hat,
                    y: it.label,
                })
                .collect();
            baseline_loss(&samples, *lambda)
        }
        (Objective::Baseline { use_decoder: false, .. } | Objective::FinetuneCe, Batch::Supervised(items)) => {
            let preds = items
                .par_iter()
                .map(|it| -> Result<(f64, u8)> {
                    let z = model::embed(&it.view, params)?;
                    Ok((model::classify(&z, params)?, it.label))
                })
                .collect::<Result<Vec<_>>>()?;
            classification_loss(&preds)
        }
        (
            Objective::Pretrain {
                lambda,
                tau,
                use_decoder,
                normalize,
            },
            Batch::Contrastive(cb),
        ) => {
            let z = cb
                .views
                .par_iter()
                .map(|(v, _)| model::embed(v, params))
                .collect::<Result<Vec<_>>>()?;
            let supcon = SupConBatch {
                z,
                y: cb.views.iter().map(|(_, y)| *y).collect(),
                tau: *tau,
                normalize: *normalize,
            };
            if !*use_decoder {
                return supcon_loss(&supcon);
            }
            let recon = cb
                .clean
                .par_iter()
                .map(|(v, _)| model::forward_full(v, params).map(|o| o.sigma_hat))
                .collect::<Result<Vec<_>>>()?;
            let pairs: Vec<(&Array2<f64>, &Array2<f64>)> = recon.iter().zip(&cb.clean).map(|(h, (_, fc))| (h, *fc)).collect();
            pretrain_loss(&pairs, &supcon, *lambda)
        }
        _ => Err(Error::validation("objective does not match the batch layout")),
    }
}
