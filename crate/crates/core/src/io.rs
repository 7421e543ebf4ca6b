//! File formats and run manifests.
//!
//! Matrices and vectors are plain CSV. A leading header row is detected by
//! a non-numeric first record; distance matrices may additionally carry a
//! label column. Feature labels in every output are 1-based.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{DartError, Result};
use crate::tree::AggregationTree;
use crate::types::{DistanceMatrix, PValueVector, TruthAssignment};

fn input_err(path: &Path, message: impl Into<String>) -> DartError {
    DartError::Input {
        path: path.display().to_string(),
        message: message.into(),
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| input_err(path, e.to_string()))
}

/// Raw cells of a headerless-or-headed CSV, with 1-based source line numbers.
struct Table {
    rows: Vec<(u64, Vec<String>)>,
}

impl Table {
    fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| input_err(path, e.to_string()))?;
            let line = rec.position().map_or(0, |p| p.line());
            if rec.iter().all(str::is_empty) {
                continue;
            }
            rows.push((line, rec.iter().map(str::to_owned).collect()));
        }
        let mut table = Table { rows };
        if let Some((_, first)) = table.rows.first() {
            if first.iter().any(|c| c.parse::<f64>().is_err()) {
                table.rows.remove(0);
            }
        }
        if table.rows.is_empty() {
            return Err(input_err(path, "no data rows"));
        }
        Ok(table)
    }

    fn drop_first_column(&mut self) {
        for (_, row) in &mut self.rows {
            if !row.is_empty() {
                row.remove(0);
            }
        }
    }

    fn numbers(&self, path: &Path, width: Option<usize>) -> Result<Vec<Vec<f64>>> {
        let width = width.unwrap_or(self.rows[0].1.len());
        self.rows
            .iter()
            .map(|(line, row)| {
                if row.len() != width {
                    return Err(input_err(
                        path,
                        format!("line {line}: expected {width} fields, found {}", row.len()),
                    ));
                }
                row.iter()
                    .map(|c| {
                        c.parse::<f64>()
                            .map_err(|_| input_err(path, format!("line {line}: '{c}' is not a number")))
                    })
                    .collect()
            })
            .collect()
    }
}

/// Dense distance matrix with optional header row and label column.
pub fn read_distances(path: &Path, normalize: bool) -> Result<DistanceMatrix> {
    let mut table = Table::parse(path, &read_to_string(path)?)?;
    let k = table.rows.len();
    let labelled = table
        .rows
        .iter()
        .any(|(_, r)| r.len() == k + 1 || r.first().is_some_and(|c| c.parse::<f64>().is_err()));
    if labelled {
        table.drop_first_column();
    }
    let rows = table.numbers(path, Some(k))?;
    DistanceMatrix::from_rows(&rows, normalize).map_err(|e| input_err(path, e.to_string()))
}

/// Single column of p-values, or two columns `(feature, p)` with 1-based
/// feature labels covering 1..=m in any order.
pub fn read_pvalues(path: &Path) -> Result<PValueVector> {
    let table = Table::parse(path, &read_to_string(path)?)?;
    let width = table.rows[0].1.len();
    let rows = table.numbers(path, Some(width))?;
    let values = match width {
        1 => rows.into_iter().map(|r| r[0]).collect(),
        2 => {
            let m = rows.len();
            let mut out = vec![f64::NAN; m];
            for (r, (line, _)) in rows.iter().zip(&table.rows) {
                let id = r[0];
                if id.fract() != 0.0 || id < 1.0 || id > m as f64 {
                    return Err(input_err(path, format!("line {line}: feature label {id} outside 1..={m}")));
                }
                let slot = &mut out[id as usize - 1];
                if !slot.is_nan() {
                    return Err(input_err(path, format!("line {line}: feature {id} listed twice")));
                }
                *slot = r[1];
            }
            out
        }
        w => return Err(input_err(path, format!("expected 1 or 2 columns, found {w}"))),
    };
    PValueVector::new(values).map_err(|e| input_err(path, e.to_string()))
}

/// Two-column planar coordinates.
pub fn read_coords(path: &Path) -> Result<Vec<(f64, f64)>> {
    let table = Table::parse(path, &read_to_string(path)?)?;
    let rows = table.numbers(path, Some(2))?;
    let coords: Vec<(f64, f64)> = rows.into_iter().map(|r| (r[0], r[1])).collect();
    if coords.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(input_err(path, "coordinates must be finite"));
    }
    Ok(coords)
}

/// Numeric matrix, one subject per row.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let table = Table::parse(path, &read_to_string(path)?)?;
    let rows = table.numbers(path, None)?;
    let (n, p) = (rows.len(), rows[0].len());
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(input_err(path, "entries must be finite"));
    }
    Ok(DMatrix::from_fn(n, p, |i, j| rows[i][j]))
}

pub fn read_tree(path: &Path) -> Result<AggregationTree> {
    AggregationTree::from_json(&read_to_string(path)?).map_err(|e| input_err(path, e.to_string()))
}

pub fn write_coords(coords: &[(f64, f64)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["x", "y"])?;
    for (x, y) in coords {
        w.write_record([x.to_string(), y.to_string()])?;
    }
    finish(w)
}

/// Headerless dense matrix.
pub fn write_distances(d: &DistanceMatrix) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in d.to_rows() {
        w.write_record(row.iter().map(f64::to_string))?;
    }
    finish(w)
}

/// `(feature, p)` rows with 1-based labels.
pub fn write_pvalues(p: &PValueVector) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["feature", "p"])?;
    for (i, v) in p.values().iter().enumerate() {
        w.write_record([(i + 1).to_string(), v.to_string()])?;
    }
    finish(w)
}

pub fn write_truth(truth: &TruthAssignment) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["feature", "alternative"])?;
    for i in 0..truth.len() {
        w.write_record([(i + 1).to_string(), u8::from(truth.is_alt(i)).to_string()])?;
    }
    finish(w)
}

/// One 1-based feature label per line.
pub fn write_feature_list(features: &[usize]) -> String {
    features.iter().map(|f| format!("{}\n", f + 1)).collect()
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| DartError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| input_err(path, e.to_string()))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to repeat a run: the command line, the resolved
/// configuration, digests of every input, the seed and the tool version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    pub seed: Option<u64>,
    pub version: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl RunManifest {
    pub fn new(command: Vec<String>, config: serde_json::Value, seed: Option<u64>) -> Self {
        Self {
            command,
            config,
            inputs: Vec::new(),
            seed,
            version: env!("CARGO_PKG_VERSION").to_owned(),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(InputDigest {
            path: path.to_path_buf(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    /// Inputs whose current contents no longer match the recorded digest.
    pub fn stale_inputs(&self) -> Result<Vec<PathBuf>> {
        let mut stale = Vec::new();
        for input in &self.inputs {
            if sha256_file(&input.path)? != input.sha256 {
                stale.push(input.path.clone());
            }
        }
        Ok(stale)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_json()?)
    }
}

/// Write `contents`, creating parent directories.
pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents)?;
    Ok(())
}
