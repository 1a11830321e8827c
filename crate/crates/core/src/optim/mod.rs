//! Reverse-mode gradients for the fixed architecture, Adam updates and a
//! finite-difference verification harness.

mod adam;
mod backprop;
mod gradcheck;

pub use adam::{optimizer_step, AdamConfig, OptimizerState, UpdateScope};
pub use backprop::{compute_gradients, evaluate_objective};
pub use gradcheck::{
    compare_gradients, finite_difference_check, kink_distance, BlockReport, GradCheckInstance, GradCheckReport,
    GRADCHECK_TOLERANCE, KINK_MARGIN,
};

use std::borrow::Cow;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::GraphView;
use crate::model::{ModelConfig, ModelParams};
use crate::rng::RngStream;

/// Which batch loss to differentiate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// Mean MSE + `lambda` mean CE; pure mean CE when the decoder is off.
    Baseline { lambda: f64, use_decoder: bool },
    /// Mean clean-graph MSE + `lambda` contrastive sum; the contrastive sum
    /// alone when the decoder is off. Never touches the classifier.
    Pretrain {
        lambda: f64,
        tau: f64,
        use_decoder: bool,
        normalize: bool,
    },
    /// Mean CE only.
    FinetuneCe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Baseline,
    Pretrain,
    FinetuneCe,
}

impl Objective {
    pub fn kind(&self) -> ObjectiveKind {
        match self {
            Objective::Baseline { .. } => ObjectiveKind::Baseline,
            Objective::Pretrain { .. } => ObjectiveKind::Pretrain,
            Objective::FinetuneCe => ObjectiveKind::FinetuneCe,
        }
    }
}

/// One labeled graph with its target connectivity.
#[derive(Debug, Clone)]
pub struct SupervisedItem<'a> {
    pub view: Cow<'a, GraphView>,
    pub fc: &'a Array2<f64>,
    pub label: u8,
}

/// `B` clean graphs (for reconstruction) and their `2B` contrastive views.
#[derive(Debug, Clone)]
pub struct ContrastiveBatch<'a> {
    pub clean: Vec<(Cow<'a, GraphView>, &'a Array2<f64>)>,
    pub views: Vec<(Cow<'a, GraphView>, u8)>,
}

#[derive(Debug, Clone)]
pub enum Batch<'a> {
    Supervised(Vec<SupervisedItem<'a>>),
    Contrastive(ContrastiveBatch<'a>),
}

/// One value per trainable parameter, shaped like [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub d_theta: Vec<Array2<f64>>,
    pub d_clf_w: Array1<f64>,
    pub d_clf_b: f64,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            d_theta: params.theta.iter().map(|t| Array2::zeros(t.raw_dim())).collect(),
            d_clf_w: Array1::zeros(params.clf_w.len()),
            d_clf_b: 0.0,
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.d_theta.iter_mut().zip(&other.d_theta) {
            *a += b;
        }
        self.d_clf_w += &other.d_clf_w;
        self.d_clf_b += other.d_clf_b;
    }

    pub fn is_finite(&self) -> bool {
        self.d_theta.iter().flat_map(|t| t.iter()).chain(self.d_clf_w.iter()).all(|v| v.is_finite())
            && self.d_clf_b.is_finite()
    }

    /// Frobenius norm over the encoder blocks.
    pub fn theta_norm(&self) -> f64 {
        self.d_theta.iter().flat_map(|t| t.iter()).map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Glorot-uniform layer weights, zero classifier.
pub fn init_params(config: &ModelConfig, seed: u64) -> ModelParams {
    let stream = RngStream::new(seed).child(0x1417);
    let mut params = ModelParams::zeros(config);
    for (l, theta) in params.theta.iter_mut().enumerate() {
        let (fan_in, fan_out) = theta.dim();
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut rng = stream.child(l as u64).rng();
        theta.mapv_inplace(|_| rng.random_range(-bound..=bound));
    }
    params
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_bounded() {
        let cfg = ModelConfig::with_default_widths(87);
        let a = init_params(&cfg, 5);
        assert_eq!(a, init_params(&cfg, 5));
        assert_ne!(a, init_params(&cfg, 6));
        let bound = (6.0f64 / 119.0).sqrt();
        assert!(a.theta[0].iter().all(|v| v.abs() <= bound));
        assert_eq!(a.theta[0].dim(), (87, 32));
        assert_eq!(a.theta[2].dim(), (16, 8));
        assert!(a.clf_w.iter().all(|v| *v == 0.0));
        assert_eq!(a.clf_b, 0.0);
        a.validate().unwrap();
    }
}
