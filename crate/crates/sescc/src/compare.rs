//! Side-by-side energies of result files computed for the same Hamiltonian.

use std::fmt::Write as _;
use std::path::PathBuf;

use serde_json::Value;

use crate::error::CliError;
use crate::report::fmt12;

const ENERGY_TASKS: [&str; 4] = ["fci", "cc", "flow", "ducc"];

#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub path: PathBuf,
    pub task: String,
    pub status: String,
    pub energy: f64,
    /// `|E − E_first|`.
    pub delta: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub rows: Vec<Row>,
    pub tolerance: f64,
}

impl Comparison {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn table(&self) -> String {
        let width = self.rows.iter().map(|r| r.path.display().to_string().len()).max().unwrap_or(4).max(4);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<width$}  {:<5}  {:<13}  {:>19}  {:>10}  result",
            "file", "task", "status", "energy", "|ΔE|"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<width$}  {:<5}  {:<13}  {:>19}  {:>10.3e}  {}",
                r.path.display(),
                r.task,
                r.status,
                fmt12(r.energy),
                r.delta,
                if r.pass { "PASS" } else { "FAIL" }
            );
        }
        let _ = writeln!(s, "tolerance {:.1e}", self.tolerance);
        s
    }
}

struct Entry {
    path: PathBuf,
    task: String,
    status: String,
    energy: f64,
    fingerprint: String,
}

fn load(path: &PathBuf) -> Result<Entry, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let doc: Value = serde_json::from_str(&text)?;
    let field = |v: Option<&Value>, what: &str| -> Result<String, CliError> {
        v.and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| CliError::Config(format!("{}: missing {what}", path.display())))
    };
    let task = field(doc.get("task"), "task")?;
    if !ENERGY_TASKS.contains(&task.as_str()) {
        return Err(CliError::Config(format!(
            "{}: task `{task}` has no ground-state energy to compare",
            path.display()
        )));
    }
    let energy = doc
        .pointer("/results/energy")
        .and_then(Value::as_f64)
        .ok_or_else(|| CliError::Config(format!("{}: missing results.energy", path.display())))?;
    Ok(Entry {
        path: path.clone(),
        status: field(doc.get("status"), "status")?,
        fingerprint: field(doc.pointer("/hamiltonian/fingerprint"), "Hamiltonian fingerprint")?,
        task,
        energy,
    })
}

/// Compares energies against the first file. Files must share one Hamiltonian.
pub fn compare(paths: &[PathBuf], tolerance: f64) -> Result<Comparison, CliError> {
    if paths.len() < 2 {
        return Err(CliError::Config("compare needs at least two result files".into()));
    }
    if !(tolerance >= 0.0) {
        return Err(CliError::Config("tolerance must be non-negative".into()));
    }
    let entries = paths.iter().map(load).collect::<Result<Vec<_>, _>>()?;
    let first = &entries[0];
    if let Some(e) = entries.iter().find(|e| e.fingerprint != first.fingerprint) {
        return Err(CliError::Config(format!(
            "{} and {} were computed for different Hamiltonians",
            first.path.display(),
            e.path.display()
        )));
    }
    let rows = entries
        .iter()
        .map(|e| {
            let delta = (e.energy - first.energy).abs();
            Row {
                path: e.path.clone(),
                task: e.task.clone(),
                status: e.status.clone(),
                energy: e.energy,
                delta,
                pass: delta <= tolerance && e.status == "converged",
            }
        })
        .collect();
    Ok(Comparison { rows, tolerance })
}
