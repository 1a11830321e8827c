//! Accuracy metrics, embedding export with PCA, and the training-proportion sweep.

mod pca;
mod sweep;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::Serialize;

pub use pca::{pca_project, PcaResult, JACOBI_TOLERANCE};
pub use sweep::{
    batch_schedule, proportion_sweep, write_sweep_csv, BatchSchedule, SweepResult, SweepRow, DEFAULT_GRID, SWEEP_HEADER,
};

use crate::augment::GraphView;
use crate::graph_data::{format_f64, Dataset};
use crate::model::{classify, embed, ModelParams};
use crate::{Error, Result};

/// Decision threshold on ŷ; a tie predicts class 1.
pub const DECISION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubjectPrediction {
    pub id: String,
    pub y: u8,
    pub y_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalResult {
    pub accuracy: f64,
    pub n_correct: usize,
    pub n_total: usize,
    pub per_subject: Vec<SubjectPrediction>,
}

pub fn predict(y_hat: f64) -> u8 {
    u8::from(y_hat >= DECISION_THRESHOLD)
}

/// Accuracy and ŷ for precomputed clean views.
pub(crate) fn evaluate_views(params: &ModelParams, views: &[GraphView], labels: &[u8]) -> Result<(f64, Vec<f64>)> {
    let y_hat = views
        .par_iter()
        .map(|v| classify(&embed(v, params)?, params))
        .collect::<Result<Vec<f64>>>()?;
    let correct = y_hat.iter().zip(labels).filter(|(p, y)| predict(**p) == **y).count();
    Ok((correct as f64 / views.len() as f64, y_hat))
}

/// Classifies every subject on its clean graph.
pub fn evaluate(params: &ModelParams, ds: &Dataset) -> Result<EvalResult> {
    params.validate()?;
    let views = clean_views(ds)?;
    let labels: Vec<u8> = ds.subjects().iter().map(|s| s.label()).collect();
    let (_, y_hat) = evaluate_views(params, &views, &labels)?;
    let per_subject: Vec<SubjectPrediction> = ds
        .subjects()
        .iter()
        .zip(y_hat)
        .map(|(s, y_hat)| SubjectPrediction {
            id: s.id().to_string(),
            y: s.label(),
            y_hat,
        })
        .collect();
    let n_correct = per_subject.iter().filter(|p| predict(p.y_hat) == p.y).count();
    Ok(EvalResult {
        accuracy: n_correct as f64 / per_subject.len() as f64,
        n_correct,
        n_total: per_subject.len(),
        per_subject,
    })
}

fn clean_views(ds: &Dataset) -> Result<Vec<GraphView>> {
    ds.subjects().par_iter().map(|s| GraphView::clean(s.sc().view())).collect()
}

/// Graph embeddings of all subjects, one row each, in dataset order.
pub fn embeddings(params: &ModelParams, ds: &Dataset) -> Result<Array2<f64>> {
    params.validate()?;
    let rows = clean_views(ds)?
        .par_iter()
        .map(|v| embed(v, params))
        .collect::<Result<Vec<_>>>()?;
    let dim = params.config().concat_dim();
    let mut out = Array2::<f64>::zeros((rows.len(), dim));
    for (mut row, z) in out.rows_mut().into_iter().zip(rows) {
        row.assign(&z);
    }
    Ok(out)
}

/// Renders the embedding table: subject id, label, first two principal
/// components and the raw embedding, sorted by subject id.
pub fn embeddings_csv(params: &ModelParams, ds: &Dataset) -> Result<String> {
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.sort_by(|&a, &b| ds.subjects()[a].id().cmp(ds.subjects()[b].id()));
    let z_all = embeddings(params, ds)?;
    let z = z_all.select(ndarray::Axis(0), &order);
    let pca = pca_project(z.view(), 2)?;

    let mut out = String::from("subject_id,label,pc1,pc2");
    for d in 0..z.ncols() {
        write!(out, ",z_{d}").expect("writing to a String");
    }
    out.push('\n');
    for (row, &i) in order.iter().enumerate() {
        let s = &ds.subjects()[i];
        write!(out, "{},{}", s.id(), s.label()).expect("writing to a String");
        for v in pca.projected.row(row).iter().chain(z.row(row)) {
            out.push(',');
            out.push_str(&format_f64(*v));
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn export_embeddings(params: &ModelParams, ds: &Dataset, path: &Path) -> Result<()> {
    let text = embeddings_csv(params, ds)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_data::{generate_synthetic, SyntheticSpec};
    use crate::model::ModelConfig;
    use crate::optim::init_params;

    fn data(n_subjects: usize) -> Dataset {
        generate_synthetic(&SyntheticSpec {
            n_subjects,
            n_nodes: 8,
            seed: 5,
            ..SyntheticSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn threshold_tie_goes_to_class_one() {
        assert_eq!(predict(0.5), 1);
        assert_eq!(predict(0.6), 1);
        assert_eq!(predict(0.4), 0);
    }

    #[test]
    fn zero_model_predicts_prevalence() {
        let ds = data(7);
        let params = ModelParams::zeros(&ModelConfig::new(8, vec![4, 3]).unwrap());
        let res = evaluate(&params, &ds).unwrap();
        assert!(res.per_subject.iter().all(|p| p.y_hat == 0.5));
        assert_eq!(res.n_total, 7);
        assert_eq!(res.n_correct, ds.positives());
        assert_eq!(res.accuracy, ds.positives() as f64 / 7.0);
    }

    #[test]
    fn label_independent_model_is_near_chance() {
        // Only the bias is nonzero, so every subject gets the same prediction.
        let ds = data(200);
        let mut params = ModelParams::zeros(&ModelConfig::new(8, vec![4, 3]).unwrap());
        params.clf_b = -2.0;
        let acc = evaluate(&params, &ds).unwrap().accuracy;
        assert!((acc - 0.5).abs() <= 0.1, "{acc}");
    }

    #[test]
    fn evaluation_ignores_subject_order() {
        let ds = data(20);
        let params = init_params(&ModelConfig::new(8, vec![4, 3]).unwrap(), 3);
        let mut params = params;
        params.clf_w.fill(0.7);
        params.clf_b = -0.3;
        let reversed = Dataset::new(ds.subjects().iter().rev().cloned().collect()).unwrap();
        let a = evaluate(&params, &ds).unwrap();
        let b = evaluate(&params, &reversed).unwrap();
        assert_eq!(a.accuracy, b.accuracy);
        assert_eq!(a.n_correct, b.n_correct);
    }

    #[test]
    fn embedding_csv_layout_and_determinism() {
        let ds = data(3);
        let cfg = ModelConfig::new(8, vec![4, 3]).unwrap();
        let params = init_params(&cfg, 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.csv");
        export_embeddings(&params, &ds, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "subject_id,label,pc1,pc2,z_0,z_1,z_2,z_3,z_4,z_5,z_6");
        assert!(lines[1].starts_with("sub-0000,0,"));
        assert_eq!(lines[1].split(',').count(), 11);
        export_embeddings(&params, &ds, &path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), text);
    }

    #[test]
    fn embedding_pcs_match_recomputation_from_z_columns() {
        let ds = data(12);
        let params = init_params(&ModelConfig::new(8, vec![4, 3]).unwrap(), 9);
        let text = embeddings_csv(&params, &ds).unwrap();
        let rows: Vec<Vec<f64>> = text
            .lines()
            .skip(1)
            .map(|l| l.split(',').skip(2).map(|v| v.parse().unwrap()).collect())
            .collect();
        let z = Array2::from_shape_fn((rows.len(), 7), |(i, j)| rows[i][j + 2]);
        let pca = pca_project(z.view(), 2).unwrap();
        for (i, r) in rows.iter().enumerate() {
            assert!((pca.projected[[i, 0]] - r[0]).abs() < 1e-12);
            assert!((pca.projected[[i, 1]] - r[1]).abs() < 1e-12);
        }
    }
}
