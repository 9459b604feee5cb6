//! Job configuration (TOML). The schema is documented in the README.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Fci,
    Cc,
    Flow,
    Ducc,
    Td,
    Estimate,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Fci => "fci",
            Task::Cc => "cc",
            Task::Flow => "flow",
            Task::Ducc => "ducc",
            Task::Td => "td",
            Task::Estimate => "estimate",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    HubbardChain {
        sites: usize,
        #[serde(default = "one")]
        hopping: f64,
        onsite: f64,
        #[serde(default)]
        periodic: bool,
        electrons: usize,
    },
    Pairing {
        levels: usize,
        #[serde(default = "one")]
        spacing: f64,
        strength: f64,
        electrons: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HamiltonianSource {
    /// Relative paths are taken from the config file's directory.
    pub fcidump: Option<PathBuf>,
    pub model: Option<Model>,
    /// Rotate to canonical mean-field orbitals before solving.
    #[serde(default = "yes")]
    pub canonicalize: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectorConfig {
    pub n_alpha: usize,
    pub n_beta: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpinFilterName {
    ConserveSz,
    Any,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CcSection {
    /// Highest excitation rank of the manifold; 0 means every excitation.
    pub max_rank: usize,
    pub spin_filter: SpinFilterName,
    pub max_iterations: usize,
    pub residual_tolerance: f64,
    pub diis_depth: usize,
    pub level_shift: f64,
}

impl Default for CcSection {
    fn default() -> Self {
        CcSection {
            max_rank: 2,
            spin_filter: SpinFilterName::ConserveSz,
            max_iterations: 200,
            residual_tolerance: 1e-10,
            diis_depth: 6,
            level_shift: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowModeName {
    Serial,
    Parallel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderingName {
    Given,
    Mbpt2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowSection {
    /// Literals such as `R=[1,2];S=ALL` (1-based spatial indices).
    pub subalgebras: Vec<String>,
    /// Adds every sub-algebra over this many occupied orbitals.
    pub occupied_tuples: Option<usize>,
    pub mode: FlowModeName,
    pub ordering: OrderingName,
    pub energy_tolerance: f64,
    pub amplitude_tolerance: f64,
    pub max_cycles: usize,
    /// Solve blocks with connected equations up to this internal rank
    /// (settings from `[cc]`) instead of diagonalization.
    pub truncated_rank: Option<usize>,
}

impl Default for FlowSection {
    fn default() -> Self {
        FlowSection {
            subalgebras: Vec::new(),
            occupied_tuples: None,
            mode: FlowModeName::Serial,
            ordering: OrderingName::Given,
            energy_tolerance: 1e-8,
            amplitude_tolerance: 1e-7,
            max_cycles: 100,
            truncated_rank: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerName {
    Descent,
    ExactDiag,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DuccSection {
    pub subalgebras: Vec<String>,
    pub occupied_tuples: Option<usize>,
    pub trotter_n: usize,
    pub optimizer: OptimizerName,
    pub step: f64,
    pub max_iters: usize,
    pub tolerance: f64,
    pub max_cycles: usize,
    /// Write each block's downfolded matrix and active-space operator.
    pub export: bool,
}

impl Default for DuccSection {
    fn default() -> Self {
        DuccSection {
            subalgebras: Vec::new(),
            occupied_tuples: None,
            trotter_n: 1,
            optimizer: OptimizerName::Descent,
            step: 1.0,
            max_iters: 500,
            tolerance: 1e-8,
            max_cycles: 200,
            export: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TdModeName {
    Global,
    Flow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    /// All amplitudes zero: the reference determinant.
    Zero,
    /// Converged ground-state amplitudes on the propagated manifold, times `initial_scale`.
    Cc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TdSection {
    /// Blocks for flow mode; in global mode their union is the manifold,
    /// and without blocks the `[cc]` manifold is used.
    pub subalgebras: Vec<String>,
    pub occupied_tuples: Option<usize>,
    pub mode: TdModeName,
    pub dt: f64,
    pub t_final: f64,
    pub amplitude_bound: f64,
    pub initial: InitialState,
    pub initial_scale: f64,
    /// Amplitudes written to the trajectory, as `i,j>a,b` spin-orbital
    /// indices; defaults to the first four of the manifold.
    pub trace: Vec<String>,
    /// Also evolve the exact state and record the overlap.
    pub oracle: bool,
}

impl Default for TdSection {
    fn default() -> Self {
        TdSection {
            subalgebras: Vec::new(),
            occupied_tuples: None,
            mode: TdModeName::Global,
            dt: 0.01,
            t_final: 1.0,
            amplitude_bound: 1e3,
            initial: InitialState::Zero,
            initial_scale: 1.0,
            trace: Vec::new(),
            oracle: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverName {
    Ccsdt,
    Ccsdtq,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateSection {
    /// Block count `M`; taken from the sub-algebras when omitted.
    pub blocks: Option<usize>,
    /// Active virtual count per block; taken from the sub-algebras when omitted.
    pub y: Option<usize>,
    pub n_v: usize,
    pub solver: SolverName,
    pub alpha: f64,
    pub beta: f64,
    /// Sub-algebras for the qubit count (needs a Hamiltonian).
    pub subalgebras: Vec<String>,
    pub occupied_tuples: Option<usize>,
}

impl Default for EstimateSection {
    fn default() -> Self {
        EstimateSection {
            blocks: None,
            y: None,
            n_v: 0,
            solver: SolverName::Ccsdt,
            alpha: 1.0,
            beta: 1.0,
            subalgebras: Vec::new(),
            occupied_tuples: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    pub task: Task,
    pub hamiltonian: Option<HamiltonianSource>,
    /// Overrides the sector implied by the Hamiltonian (FCI only).
    pub sector: Option<SectorConfig>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    /// Determinant cap; the SESCC_MAX_DETERMINANTS variable takes precedence.
    pub max_determinants: Option<usize>,
    #[serde(default)]
    pub cc: CcSection,
    #[serde(default)]
    pub flow: FlowSection,
    #[serde(default)]
    pub ducc: DuccSection,
    #[serde(default)]
    pub td: TdSection,
    #[serde(default)]
    pub estimate: EstimateSection,
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

fn default_output() -> PathBuf {
    PathBuf::from("sescc-out")
}

impl JobConfig {
    /// Parses TOML text after applying `key.path=value` overrides. Override
    /// values are read as TOML literals, falling back to plain strings.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        for item in overrides {
            apply_override(&mut doc, item)?;
        }
        let cfg: JobConfig =
            toml::Value::Table(doc).try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; a relative FCIDUMP path is resolved against the file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::from_toml(&text, overrides)?;
        if let Some(src) = cfg.hamiltonian.as_mut() {
            if let Some(f) = src.fcidump.as_mut() {
                if f.is_relative() {
                    if let Some(dir) = path.parent() {
                        *f = dir.join(&*f);
                    }
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        match &self.hamiltonian {
            Some(HamiltonianSource { fcidump: Some(_), model: Some(_), .. }) => {
                return Err(CliError::Config("give either `fcidump` or `model`, not both".into()))
            }
            Some(HamiltonianSource { fcidump: None, model: None, .. }) => {
                return Err(CliError::Config("[hamiltonian] needs `fcidump` or `model`".into()))
            }
            None if self.task != Task::Estimate => {
                return Err(CliError::Config(format!("task `{}` needs a [hamiltonian] section", self.task.name())))
            }
            _ => {}
        }
        if self.sector.is_some() && self.task != Task::Fci {
            return Err(CliError::Config("[sector] applies to the fci task only".into()));
        }
        Ok(())
    }
}

fn apply_override(doc: &mut toml::Table, item: &str) -> Result<(), CliError> {
    let (path, raw) =
        item.split_once('=').ok_or_else(|| CliError::Config(format!("override `{item}` is not key=value")))?;
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let keys: Vec<&str> = path.trim().split('.').collect();
    let (last, parents) = keys.split_last().expect("split yields at least one piece");
    let mut table = doc;
    for key in parents {
        let entry = table.entry(key.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override `{path}`: `{key}` is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}
