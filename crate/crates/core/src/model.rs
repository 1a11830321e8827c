//! GCN encoder, inner-product decoder, mean pooling and logistic classifier.

use std::fs;
use std::path::Path;

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::augment::GraphView;
use crate::{Error, Result};

pub const DEFAULT_LAYER_WIDTHS: [usize; 3] = [32, 16, 8];
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n: usize,
    pub layer_widths: Vec<usize>,
}

impl ModelConfig {
    pub fn new(n: usize, layer_widths: Vec<usize>) -> Result<Self> {
        let cfg = Self { n, layer_widths };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_default_widths(n: usize) -> Self {
        Self {
            n,
            layer_widths: DEFAULT_LAYER_WIDTHS.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::validation("node count must be positive"));
        }
        if self.layer_widths.is_empty() || self.layer_widths.contains(&0) {
            return Err(Error::validation(format!(
                "layer widths must be a non-empty list of positive integers, got {:?}",
                self.layer_widths
            )));
        }
        Ok(())
    }

    /// Width of the concatenated node embedding.
    pub fn concat_dim(&self) -> usize {
        self.layer_widths.iter().sum()
    }

    /// `(rows, cols)` of every layer weight, starting from `n` input features.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut d_in = self.n;
        self.layer_widths
            .iter()
            .map(|&d| {
                let shape = (d_in, d);
                d_in = d;
                shape
            })
            .collect()
    }
}

/// All trainable weights: one matrix per GCN layer plus the logistic head.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub theta: Vec<Array2<f64>>,
    pub clf_w: Array1<f64>,
    pub clf_b: f64,
}

impl ModelParams {
    pub fn zeros(config: &ModelConfig) -> Self {
        Self {
            theta: config.layer_shapes().into_iter().map(Array2::zeros).collect(),
            clf_w: Array1::zeros(config.concat_dim()),
            clf_b: 0.0,
        }
    }

    /// Recovers the configuration from the weight shapes.
    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            n: self.theta.first().map_or(0, |t| t.nrows()),
            layer_widths: self.theta.iter().map(|t| t.ncols()).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = self.config();
        cfg.validate()?;
        for (l, (t, (r, c))) in self.theta.iter().zip(cfg.layer_shapes()).enumerate() {
            if t.dim() != (r, c) {
                return Err(Error::shape("theta", format!("layer {l}: {r}x{c}"), format!("{}x{}", t.nrows(), t.ncols())));
            }
        }
        if self.clf_w.len() != cfg.concat_dim() {
            return Err(Error::shape("clf_w", cfg.concat_dim(), self.clf_w.len()));
        }
        let finite = self.theta.iter().flat_map(|t| t.iter()).chain(self.clf_w.iter()).all(|v| v.is_finite())
            && self.clf_b.is_finite();
        if !finite {
            return Err(Error::Numerical("model parameters contain NaN or infinity".into()));
        }
        Ok(())
    }

    pub fn encoder_eq(&self, other: &Self) -> bool {
        self.theta == other.theta
    }

    pub fn classifier_eq(&self, other: &Self) -> bool {
        self.clf_w == other.clf_w && self.clf_b.to_bits() == other.clf_b.to_bits()
    }
}

/// Everything the forward pass produces for one view.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub x_layers: Vec<Array2<f64>>,
    pub x_c: Array2<f64>,
    pub z: Array1<f64>,
    pub sigma_hat: Array2<f64>,
    pub logit: f64,
    pub y_hat: f64,
}

/// Intermediate values of the encoder kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct EncoderTrace {
    /// `Ã X^(l-1)` for every layer.
    pub propagated: Vec<Array2<f64>>,
    /// `Ã X^(l-1) Θ^(l)` before the ReLU.
    pub pre_activations: Vec<Array2<f64>>,
    pub x_layers: Vec<Array2<f64>>,
    pub x_c: Array2<f64>,
}

fn relu(m: Array2<f64>) -> Array2<f64> {
    m.mapv_into(|v| v.max(0.0))
}

fn check_view(view: &GraphView, params: &ModelParams) -> Result<()> {
    let n = view.a_norm.nrows();
    if view.a_norm.dim() != (n, n) {
        return Err(Error::shape("a_norm", format!("{n}x{n}"), format!("{:?}", view.a_norm.dim())));
    }
    if view.x0.dim() != (n, n) {
        return Err(Error::shape("x0", format!("{n}x{n}"), format!("{:?}", view.x0.dim())));
    }
    let expected = params.theta.first().map_or(0, |t| t.nrows());
    if expected != n {
        return Err(Error::shape("encode", format!("{expected} nodes"), format!("{n} nodes")));
    }
    for (l, pair) in params.theta.windows(2).enumerate() {
        if pair[0].ncols() != pair[1].nrows() {
            return Err(Error::shape("theta", pair[0].ncols(), format!("layer {} has {} rows", l + 1, pair[1].nrows())));
        }
    }
    Ok(())
}

pub(crate) fn encode_traced(view: &GraphView, params: &ModelParams) -> Result<EncoderTrace> {
    check_view(view, params)?;
    let layers = params.theta.len();
    let mut propagated = Vec::with_capacity(layers);
    let mut pre_activations = Vec::with_capacity(layers);
    let mut x_layers: Vec<Array2<f64>> = Vec::with_capacity(layers);
    for theta in &params.theta {
        let input = x_layers.last().unwrap_or(&view.x0);
        let g = view.a_norm.dot(input);
        let p = g.dot(theta);
        x_layers.push(relu(p.clone()));
        propagated.push(g);
        pre_activations.push(p);
    }
    let views: Vec<ArrayView2<'_, f64>> = x_layers.iter().map(|x| x.view()).collect();
    let x_c = concatenate(Axis(1), &views).expect("layer outputs share the node axis");
    Ok(EncoderTrace {
        propagated,
        pre_activations,
        x_layers,
        x_c,
    })
}

/// Runs the GCN layers `X^(l) = ReLU(Ã X^(l-1) Θ^(l))` and concatenates their outputs.
pub fn encode(view: &GraphView, params: &ModelParams) -> Result<(Vec<Array2<f64>>, Array2<f64>)> {
    let trace = encode_traced(view, params)?;
    Ok((trace.x_layers, trace.x_c))
}

/// `X_C X_Cᵀ`, mirrored so the result is exactly symmetric.
pub(crate) fn gram(x_c: &Array2<f64>) -> Array2<f64> {
    let mut s = x_c.dot(&x_c.t());
    let n = s.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            s[[j, i]] = s[[i, j]];
        }
    }
    s
}

/// Reconstructs connectivity as `ReLU(X_C X_Cᵀ)`.
pub fn decode(x_c: &Array2<f64>) -> Array2<f64> {
    relu(gram(x_c))
}

/// Mean over nodes.
pub fn pool(x_c: &Array2<f64>) -> Array1<f64> {
    let n = x_c.nrows().max(1) as f64;
    x_c.sum_axis(Axis(0)) / n
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(z: &Array1<f64>, params: &ModelParams) -> Result<f64> {
    if z.len() != params.clf_w.len() {
        return Err(Error::shape("classify", params.clf_w.len(), z.len()));
    }
    Ok(params.clf_w.dot(z) + params.clf_b)
}

/// Logistic head probability of class 1.
pub fn classify(z: &Array1<f64>, params: &ModelParams) -> Result<f64> {
    logit(z, params).map(sigmoid)
}

pub fn forward_full(view: &GraphView, params: &ModelParams) -> Result<EncoderOutput> {
    let (x_layers, x_c) = encode(view, params)?;
    let sigma_hat = decode(&x_c);
    let z = pool(&x_c);
    let logit = logit(&z, params)?;
    Ok(EncoderOutput {
        x_layers,
        x_c,
        z,
        sigma_hat,
        logit,
        y_hat: sigmoid(logit),
    })
}

/// Graph embedding only, skipping the decoder.
pub fn embed(view: &GraphView, params: &ModelParams) -> Result<Array1<f64>> {
    let (_, x_c) = encode(view, params)?;
    Ok(pool(&x_c))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    format_version: u32,
    config: ModelConfig,
    theta: Vec<Vec<Vec<f64>>>,
    clf_w: Vec<f64>,
    clf_b: f64,
}

/// Serializes parameters as a JSON checkpoint. Floats use the shortest
/// representation that parses back to the identical `f64`.
pub fn checkpoint_to_string(params: &ModelParams) -> String {
    let ckpt = Checkpoint {
        format_version: CHECKPOINT_FORMAT_VERSION,
        config: params.config(),
        theta: params
            .theta
            .iter()
            .map(|t| t.rows().into_iter().map(|r| r.to_vec()).collect())
            .collect(),
        clf_w: params.clf_w.to_vec(),
        clf_b: params.clf_b,
    };
    let mut text = serde_json::to_string_pretty(&ckpt).expect("checkpoint serializes");
    text.push('\n');
    text
}

pub fn checkpoint_from_str(text: &str) -> Result<ModelParams> {
    let parse = |message: String| Error::Parse {
        path: "<checkpoint>".into(),
        message,
    };
    let ckpt: Checkpoint = serde_json::from_str(text).map_err(|e| parse(e.to_string()))?;
    if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(parse(format!("unsupported format_version {}", ckpt.format_version)));
    }
    ckpt.config.validate()?;
    let shapes = ckpt.config.layer_shapes();
    if ckpt.theta.len() != shapes.len() {
        return Err(Error::shape("checkpoint theta", shapes.len(), ckpt.theta.len()));
    }
    let mut theta = Vec::with_capacity(shapes.len());
    for (l, (rows, (r, c))) in ckpt.theta.into_iter().zip(shapes).enumerate() {
        if rows.len() != r || rows.iter().any(|row| row.len() != c) {
            return Err(Error::shape("checkpoint theta", format!("layer {l}: {r}x{c}"), "ragged or resized layer"));
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        theta.push(Array2::from_shape_vec((r, c), flat).expect("shape checked"));
    }
    let params = ModelParams {
        theta,
        clf_w: Array1::from(ckpt.clf_w),
        clf_b: ckpt.clf_b,
    };
    params.validate()?;
    Ok(params)
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    fs::write(path, checkpoint_to_string(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_str(&text).map_err(|e| match e {
        Error::Parse { message, .. } => Error::Parse {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })
}
