//! Run configuration files and their resolution against a dataset.

use std::fs;
use std::path::{Path, PathBuf};

use gcl_core::graph_data::{generate_synthetic, load_dataset, Dataset, SplitSpec, SyntheticSpec};
use gcl_core::model::{ModelConfig, DEFAULT_LAYER_WIDTHS};
use gcl_core::training::{TrainConfig, TrainMode};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

pub const SEED_ENV: &str = "GCL_SEED";

fn default_widths() -> Vec<usize> {
    DEFAULT_LAYER_WIDTHS.to_vec()
}

/// Contents of a `--config` JSON file.
///
/// `train` holds any subset of the training fields; missing ones take the
/// defaults of the selected mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset directory or manifest. Without it, `synthetic` is generated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default = "default_widths")]
    pub layer_widths: Vec<usize>,
    #[serde(default = "empty_object")]
    pub train: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn empty_object() -> Value {
    Value::Object(Map::new())
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            synthetic: None,
            split: SplitSpec::default(),
            layer_widths: default_widths(),
            train: empty_object(),
            output_dir: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
        let cfg: Self =
            serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        if !cfg.train.is_object() {
            return Err(CliError::config(format!("{}: `train` must be an object", path.display())));
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// Loads or generates the dataset.
    pub fn dataset(&self) -> CliResult<Dataset> {
        match (&self.dataset, &self.synthetic) {
            (Some(_), Some(_)) => Err(CliError::config("set either `dataset` or `synthetic`, not both")),
            (Some(path), None) => Ok(load_dataset(path)?),
            (None, spec) => Ok(generate_synthetic(&spec.unwrap_or_default())?),
        }
    }

    pub fn model(&self, n: usize) -> CliResult<ModelConfig> {
        Ok(ModelConfig::new(n, self.layer_widths.clone())?)
    }

    /// Applies mode defaults under the `train` section for `n`-node graphs.
    pub fn train_config(&self, n: usize) -> CliResult<TrainConfig> {
        resolve_train(&self.train, n)
    }
}

/// Builds a full training config from a partial JSON object.
pub fn resolve_train(partial: &Value, n: usize) -> CliResult<TrainConfig> {
    let mode = match partial.get("mode") {
        None => TrainMode::Contrastive,
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| CliError::config(format!("train.mode: {e}")))?,
    };
    let defaults = match mode {
        TrainMode::Baseline => TrainConfig::baseline(n),
        TrainMode::Contrastive => TrainConfig::contrastive(n),
    };
    let mut merged = serde_json::to_value(&defaults).expect("config serializes");
    merge(&mut merged, partial);
    let cfg: TrainConfig = serde_json::from_value(merged).map_err(|e| CliError::config(format!("train: {e}")))?;
    cfg.validate(n)?;
    Ok(cfg)
}

/// Recursively overwrites `base` with the entries of `patch`. Keys absent
/// from `base` are kept so deserialization can reject them.
pub fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
}

/// Inserts `value` at a dotted path such as `finetune.total_epochs`.
pub fn set_path(obj: &mut Value, path: &str, value: Value) {
    let mut cur = obj;
    let mut parts = path.split('.').peekable();
    while let Some(part) = parts.next() {
        if !cur.is_object() {
            *cur = empty_object();
        }
        let map = cur.as_object_mut().expect("just made an object");
        if parts.peek().is_none() {
            map.insert(part.to_string(), value);
            return;
        }
        cur = map.entry(part.to_string()).or_insert_with(empty_object);
    }
}

/// Seed precedence: explicit flag, then config file, then `GCL_SEED`, then 0.
pub fn resolve_seed(flag: Option<u64>, from_config: Option<u64>) -> CliResult<u64> {
    if let Some(s) = flag.or(from_config) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}
