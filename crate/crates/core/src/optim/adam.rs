use ndarray::{Array1, Array2, Zip};
use serde::{Deserialize, Serialize};

use super::Gradients;
use crate::model::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Which parameter blocks an update may touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateScope {
    All,
    EncoderOnly,
    ClassifierOnly,
}

impl UpdateScope {
    fn encoder(self) -> bool {
        matches!(self, UpdateScope::All | UpdateScope::EncoderOnly)
    }

    fn classifier(self) -> bool {
        matches!(self, UpdateScope::All | UpdateScope::ClassifierOnly)
    }
}

/// Adam moment estimates for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first_moment: Gradients,
    pub second_moment: Gradients,
    pub step_count: u64,
    pub config: AdamConfig,
}

fn update_block(theta: &mut Array2<f64>, m: &mut Array2<f64>, v: &mut Array2<f64>, g: &Array2<f64>, k: &StepConsts) {
    Zip::from(theta).and(m).and(v).and(g).for_each(|t, m, v, &g| k.apply(t, m, v, g));
}

fn update_vec(theta: &mut Array1<f64>, m: &mut Array1<f64>, v: &mut Array1<f64>, g: &Array1<f64>, k: &StepConsts) {
    Zip::from(theta).and(m).and(v).and(g).for_each(|t, m, v, &g| k.apply(t, m, v, g));
}

struct StepConsts {
    cfg: AdamConfig,
    bias1: f64,
    bias2: f64,
}

impl StepConsts {
    #[inline]
    fn apply(&self, theta: &mut f64, m: &mut f64, v: &mut f64, g: f64) {
        *m = self.cfg.beta1 * *m + (1.0 - self.cfg.beta1) * g;
        *v = self.cfg.beta2 * *v + (1.0 - self.cfg.beta2) * g * g;
        let m_hat = *m / self.bias1;
        let v_hat = *v / self.bias2;
        *theta -= self.cfg.learning_rate * m_hat / (v_hat.sqrt() + self.cfg.epsilon);
    }
}

impl OptimizerState {
    pub fn new(params: &ModelParams, config: AdamConfig) -> Self {
        Self {
            first_moment: Gradients::zeros_like(params),
            second_moment: Gradients::zeros_like(params),
            step_count: 0,
            config,
        }
    }

    /// One bias-corrected Adam update of the blocks in `scope`.
    pub fn step(&mut self, params: &mut ModelParams, grads: &Gradients, scope: UpdateScope) {
        self.step_count += 1;
        let t = self.step_count as i32;
        let k = StepConsts {
            cfg: self.config,
            bias1: 1.0 - self.config.beta1.powi(t),
            bias2: 1.0 - self.config.beta2.powi(t),
        };
        if scope.encoder() {
            for (l, theta) in params.theta.iter_mut().enumerate() {
                update_block(
                    theta,
                    &mut self.first_moment.d_theta[l],
                    &mut self.second_moment.d_theta[l],
                    &grads.d_theta[l],
                    &k,
                );
            }
        }
        if scope.classifier() {
            update_vec(
                &mut params.clf_w,
                &mut self.first_moment.d_clf_w,
                &mut self.second_moment.d_clf_w,
                &grads.d_clf_w,
                &k,
            );
            k.apply(
                &mut params.clf_b,
                &mut self.first_moment.d_clf_b,
                &mut self.second_moment.d_clf_b,
                grads.d_clf_b,
            );
        }
    }
}

/// Functional form of [`OptimizerState::step`].
pub fn optimizer_step(
    params: &ModelParams,
    grads: &Gradients,
    state: &OptimizerState,
    scope: UpdateScope,
) -> (ModelParams, OptimizerState) {
    let mut params = params.clone();
    let mut state = state.clone();
    state.step(&mut params, grads, scope);
    (params, state)
}
