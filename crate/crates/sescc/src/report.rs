//! Result files: JSON with 12 significant digits, CSV tables, summaries.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{Map, Number, Value};
use sescc_core::HamiltonianSpec;
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Shortest decimal with at most 12 significant digits.
pub fn round12(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

/// Fixed-width text form used in CSV cells and summaries.
pub fn fmt12(x: f64) -> String {
    format!("{x:.11e}")
}

/// Rounds every float in a JSON tree. Non-finite values become strings.
pub fn round_json(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().unwrap_or(f64::NAN);
            Number::from_f64(round12(x)).map(Value::Number).unwrap_or_else(|| Value::String(x.to_string()))
        }
        Value::Array(items) => Value::Array(items.into_iter().map(round_json).collect()),
        Value::Object(map) => Value::Object(map.into_iter().map(|(k, v)| (k, round_json(v))).collect::<Map<_, _>>()),
        other => other,
    }
}

/// JSON number for a float, or a string for NaN and infinities.
pub fn num(x: f64) -> Value {
    Number::from_f64(x).map(Value::Number).unwrap_or_else(|| Value::String(x.to_string()))
}

/// SHA-256 over the exact bit patterns of the stored integrals.
pub fn fingerprint(ham: &HamiltonianSpec) -> String {
    let mut h = Sha256::new();
    h.update((ham.n_spatial() as u64).to_le_bytes());
    h.update((ham.n_electrons() as u64).to_le_bytes());
    h.update(ham.core_energy().to_bits().to_le_bytes());
    for p in 0..ham.n_spatial() {
        for q in 0..=p {
            h.update(ham.h(p, q).to_bits().to_le_bytes());
        }
    }
    for (idx, v) in ham.unique_two_body() {
        for i in idx {
            h.update((i as u64).to_le_bytes());
        }
        h.update(v.to_bits().to_le_bytes());
    }
    h.finalize().iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Output directory of one job.
pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(OutputDir { root: root.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    pub fn write_json(&self, name: &str, value: Value) -> Result<PathBuf, CliError> {
        let mut text = serde_json::to_string_pretty(&round_json(value))?;
        text.push('\n');
        self.write_text(name, &text)
    }

    /// Writes a CSV table; float cells should already be formatted with [`fmt12`].
    pub fn write_csv(&self, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        w.flush().map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}
