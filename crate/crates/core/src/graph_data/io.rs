use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Connectome, Dataset};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
const MATRIX_DIR: &str = "matrices";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    n: usize,
    subjects: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    id: String,
    label: u8,
    sc_file: String,
    fc_file: String,
}

/// Formats a float with 17 significant digits, enough to round-trip every `f64`.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes a headerless, comma-separated, LF-terminated matrix.
pub fn write_matrix_csv(path: &Path, m: &Array2<f64>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut line = String::new();
    for row in m.rows() {
        line.clear();
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                line.push(',');
            }
            line.push_str(&format_f64(*v));
        }
        line.push('\n');
        w.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        message,
    };
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (r, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let before = values.len();
        for field in line.split(',') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(format!("row {}: cannot parse {field:?}", r + 1)))?;
            values.push(v);
        }
        let width = values.len() - before;
        match cols {
            None => cols = Some(width),
            Some(c) if c != width => {
                return Err(parse_err(format!("row {} has {width} columns, expected {c}", r + 1)));
            }
            _ => {}
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| parse_err("empty matrix file".into()))?;
    Array2::from_shape_vec((rows, cols), values).map_err(|e| parse_err(e.to_string()))
}

/// Writes `manifest.json` plus one SC and one FC file per subject under `dir`.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    let matrix_dir = dir.join(MATRIX_DIR);
    fs::create_dir_all(&matrix_dir).map_err(|e| Error::io(&matrix_dir, e))?;
    let mut entries = Vec::with_capacity(ds.len());
    for s in ds.subjects() {
        if s.id().is_empty()
            || !s.id().chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
            || s.id().starts_with('.')
        {
            return Err(Error::validation(format!(
                "subject id {:?} is not usable as a file name",
                s.id()
            )));
        }
        let sc_file = format!("{MATRIX_DIR}/{}_sc.csv", s.id());
        let fc_file = format!("{MATRIX_DIR}/{}_fc.csv", s.id());
        write_matrix_csv(&dir.join(&sc_file), s.sc())?;
        write_matrix_csv(&dir.join(&fc_file), s.fc())?;
        entries.push(ManifestEntry {
            id: s.id().to_string(),
            label: s.label(),
            sc_file,
            fc_file,
        });
    }
    let manifest = Manifest {
        n: ds.n(),
        subjects: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Loads a dataset from a manifest file, or from a directory containing `manifest.json`.
///
/// Matrix paths in the manifest are resolved relative to the manifest's directory.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let manifest_path: PathBuf = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: manifest_path.clone(),
        message: e.to_string(),
    })?;
    let mut subjects = Vec::with_capacity(manifest.subjects.len());
    for entry in manifest.subjects {
        let sc = read_matrix_csv(&root.join(&entry.sc_file))?;
        let fc = read_matrix_csv(&root.join(&entry.fc_file))?;
        for (what, m) in [("SC", &sc), ("FC", &fc)] {
            if m.dim() != (manifest.n, manifest.n) {
                return Err(Error::validation(format!(
                    "subject {}: {what} matrix is {}x{}, manifest declares n = {}",
                    entry.id,
                    m.nrows(),
                    m.ncols(),
                    manifest.n
                )));
            }
        }
        subjects.push(Connectome::new(entry.id, sc, fc, entry.label)?);
    }
    Dataset::new(subjects)
}
