//! Job execution: builds the Hamiltonian, dispatches the task and writes
//! `result.json`, `summary.txt` and the task's CSV tables.

use std::path::PathBuf;
use std::sync::Arc;

use num_complex::Complex64;
use serde_json::{json, Value};
use sescc_core::algebra::SubAlgebra;
use sescc_core::cc::{solve_fci, CcProblem, CcSolution, SolverConfig};
use sescc_core::cluster::{ClusterOperator, OperatorMatrix};
use sescc_core::ducc::{
    downfold, extract_active_operator, make_sigma, qubit_estimate, run_ducc_flow, Optimizer, TrotterFlowConfig,
};
use sescc_core::flow::{
    cost_bound, run_flow_in, BlockSolver, CostConstants, FlowConfig, FlowMode, Ordering, TruncatedSolver,
};
use sescc_core::fock::{enumerate_manifold, SpinFilter};
use sescc_core::integrals::{
    assemble_matrix, build_model, canonicalize, DeterminantSpace, ModelSpec, ScfConfig, TwoBodySymmetry,
};
use sescc_core::td::{
    propagate_observed, state_vector, td_energy, ExactPropagator, PropagationMode, PropagatorConfig, TDState,
};
use sescc_core::{
    Determinant, Error, ExcitationSignature, HamiltonianSpec, HistoryPoint, Manifold, Sector, DEFAULT_MAX_DETERMINANTS,
};

use crate::config::{
    FlowModeName, InitialState, JobConfig, Model, OptimizerName, OrderingName, SolverName, SpinFilterName, Task,
    TdModeName,
};
use crate::error::CliError;
use crate::fcidump::{parse_fcidump, write_fcidump};
use crate::report::{fingerprint, fmt12, num, OutputDir};

pub const CAP_ENV: &str = "SESCC_MAX_DETERMINANTS";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Converged,
    NotConverged,
    Diverged,
    Unstable,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Converged => "converged",
            Status::NotConverged => "not_converged",
            Status::Diverged => "diverged",
            Status::Unstable => "unstable",
        }
    }

    pub fn exit_code(self) -> u8 {
        match self {
            Status::Converged => 0,
            _ => 2,
        }
    }
}

#[derive(Debug)]
pub struct JobOutcome {
    pub status: Status,
    pub result_path: PathBuf,
    pub summary: String,
}

/// What a task hands back before the common envelope is added.
struct TaskReport {
    status: Status,
    results: Value,
    summary: Vec<String>,
}

struct Loaded {
    ham: HamiltonianSpec,
    ms2: i64,
    source: &'static str,
}

/// Determinant cap: environment, then config, then the library default.
pub fn determinant_cap(cfg: &JobConfig) -> Result<usize, CliError> {
    match std::env::var(CAP_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .ok()
            .filter(|&n: &usize| n > 0)
            .ok_or_else(|| CliError::Config(format!("{CAP_ENV}={v} is not a positive integer"))),
        Err(_) => Ok(cfg.max_determinants.unwrap_or(DEFAULT_MAX_DETERMINANTS)),
    }
}

fn load_hamiltonian(cfg: &JobConfig) -> Result<Option<Loaded>, CliError> {
    let Some(src) = &cfg.hamiltonian else { return Ok(None) };
    let (ham, ms2, source) = if let Some(path) = &src.fcidump {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let f = parse_fcidump(&text).map_err(|e| match e {
            CliError::Parse { line, msg } => CliError::Parse { line, msg: format!("{}: {msg}", path.display()) },
            other => other,
        })?;
        (f.hamiltonian, f.ms2, "fcidump")
    } else {
        let spec = match src.model.as_ref().expect("validated source") {
            Model::HubbardChain { sites, hopping, onsite, periodic, electrons } => ModelSpec::HubbardChain {
                sites: *sites,
                hopping: *hopping,
                onsite: *onsite,
                periodic: *periodic,
                n_electrons: *electrons,
            },
            Model::Pairing { levels, spacing, strength, electrons } => {
                ModelSpec::Pairing { levels: *levels, spacing: *spacing, strength: *strength, n_electrons: *electrons }
            }
        };
        let ham = build_model(&spec)?;
        let ms2 = (ham.n_electrons() % 2) as i64;
        (ham, ms2, "model")
    };
    let ham = if src.canonicalize { canonicalize(&ham, &ScfConfig::default())?.hamiltonian } else { ham };
    Ok(Some(Loaded { ham, ms2, source }))
}

fn closed_shell(l: &Loaded) -> Result<(), CliError> {
    if l.ms2 != 0 || !l.ham.n_electrons().is_multiple_of(2) {
        return Err(CliError::Config("this task needs a closed-shell reference (even NELEC, MS2=0)".into()));
    }
    Ok(())
}

fn subalgebras(ham: &HamiltonianSpec, literals: &[String], tuples: Option<usize>) -> Result<Vec<SubAlgebra>, CliError> {
    let basis = ham.basis();
    let mut out = literals.iter().map(|l| SubAlgebra::parse(basis, l)).collect::<Result<Vec<_>, _>>()?;
    if let Some(n) = tuples {
        out.extend(SubAlgebra::all_occupied_tuples(basis, n)?);
    }
    Ok(out)
}

fn require_blocks(list: Vec<SubAlgebra>, section: &str) -> Result<Vec<SubAlgebra>, CliError> {
    if list.is_empty() {
        return Err(CliError::Config(format!("[{section}] needs `subalgebras` or `occupied_tuples`")));
    }
    Ok(list)
}

fn solver_config(cfg: &JobConfig) -> SolverConfig {
    SolverConfig {
        max_iterations: cfg.cc.max_iterations,
        residual_tolerance: cfg.cc.residual_tolerance,
        diis_depth: cfg.cc.diis_depth,
        level_shift: cfg.cc.level_shift,
    }
}

fn cc_manifold(cfg: &JobConfig, ham: &HamiltonianSpec) -> Result<Manifold, CliError> {
    let b = ham.basis();
    let n = ham.n_electrons();
    let rank = if cfg.cc.max_rank == 0 { n } else { cfg.cc.max_rank.min(n) };
    let filter = match cfg.cc.spin_filter {
        SpinFilterName::ConserveSz => SpinFilter::ConserveSz,
        SpinFilterName::Any => SpinFilter::Any,
    };
    Ok(enumerate_manifold(&b, rank, b.occupied_mask(), b.virtual_mask(), filter)?)
}

fn sector_operator(ham: &HamiltonianSpec, cap: usize) -> Result<OperatorMatrix, CliError> {
    let space = Arc::new(DeterminantSpace::sector(&ham.basis(), Sector::closed_shell(ham.n_electrons()), cap)?);
    let m = assemble_matrix(&space, ham, cap)?;
    Ok(OperatorMatrix::new(space, m)?)
}

fn history_rows(history: &[HistoryPoint]) -> Vec<Vec<String>> {
    history.iter().map(|h| vec![h.iteration.to_string(), fmt12(h.energy), fmt12(h.residual_norm)]).collect()
}

fn header(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

/// Occupation string over all spin orbitals, spin orbital 0 first.
fn occupation(det: Determinant, n_spin: usize) -> String {
    (0..n_spin).map(|p| if det.is_occupied(p) { '1' } else { '0' }).collect()
}

/// Parses `i,j>a,b` (0-based spin orbitals).
pub fn parse_signature(text: &str) -> Result<ExcitationSignature, CliError> {
    let bad = || CliError::Config(format!("excitation `{text}` is not of the form i,j>a,b"));
    let (h, p) = text.split_once('>').ok_or_else(bad)?;
    let list = |s: &str| -> Result<Vec<usize>, CliError> {
        s.split(',').map(|t| t.trim().parse::<usize>().map_err(|_| bad())).collect()
    };
    Ok(ExcitationSignature::new(&list(h)?, &list(p)?)?)
}

fn signature_label(s: &ExcitationSignature) -> String {
    let join = |v: Vec<usize>| v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
    format!("{}>{}", join(s.holes().collect()), join(s.particles().collect()))
}

fn largest_amplitudes(t: &ClusterOperator, count: usize) -> Value {
    let mut items: Vec<(&ExcitationSignature, &f64)> = t.iter().collect();
    items.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then(a.0.cmp(b.0)));
    Value::Array(items.into_iter().take(count).map(|(s, v)| json!([signature_label(s), num(*v)])).collect())
}

fn run_fci(cfg: &JobConfig, l: &Loaded, cap: usize) -> Result<TaskReport, CliError> {
    let n = l.ham.n_electrons() as i64;
    let sector = match cfg.sector {
        Some(s) => Sector { n_alpha: s.n_alpha, n_beta: s.n_beta },
        None => Sector { n_alpha: ((n + l.ms2) / 2) as usize, n_beta: ((n - l.ms2) / 2) as usize },
    };
    let sol = solve_fci(&l.ham, sector, cap)?;
    Ok(TaskReport {
        status: Status::Converged,
        results: json!({
            "energy": num(sol.energy),
            "dimension": sol.space.len(),
            "sector": {"n_alpha": sector.n_alpha, "n_beta": sector.n_beta},
            "reference_weight": num(sol.vector[0] * sol.vector[0]),
        }),
        summary: vec![
            format!("sector ({}, {}), {} determinants", sector.n_alpha, sector.n_beta, sol.space.len()),
            format!("FCI energy: {}", fmt12(sol.energy)),
        ],
    })
}

fn cc_report(sol: &CcSolution, problem: &CcProblem, manifold_size: usize) -> Value {
    json!({
        "energy": num(sol.energy),
        "reference_energy": num(problem.reference_energy()),
        "correlation_energy": num(sol.energy - problem.reference_energy()),
        "converged": sol.converged,
        "iterations": sol.iterations,
        "residual_norm": num(sol.residual_norm),
        "manifold_size": manifold_size,
        "largest_amplitudes": largest_amplitudes(&sol.amplitudes, 10),
    })
}

fn run_cc(
    cfg: &JobConfig,
    l: &Loaded,
    cap: usize,
    out: &OutputDir,
    files: &mut Vec<String>,
) -> Result<TaskReport, CliError> {
    closed_shell(l)?;
    let problem = CcProblem::new(&l.ham, cap)?;
    let manifold = cc_manifold(cfg, &l.ham)?;
    let hist_header = header(&["iteration", "energy", "residual_norm"]);
    match problem.solve(&manifold, &solver_config(cfg), None) {
        Ok(sol) => {
            out.write_csv("history.csv", &hist_header, &history_rows(&sol.history))?;
            files.push("history.csv".into());
            let status = if sol.converged { Status::Converged } else { Status::NotConverged };
            Ok(TaskReport {
                status,
                results: cc_report(&sol, &problem, manifold.len()),
                summary: vec![
                    format!(
                        "{} amplitudes, {} iterations, residual {}",
                        manifold.len(),
                        sol.iterations,
                        fmt12(sol.residual_norm)
                    ),
                    format!("CC energy: {} ({})", fmt12(sol.energy), status.name()),
                ],
            })
        }
        Err(Error::Divergence { history }) => {
            out.write_csv("history.csv", &hist_header, &history_rows(&history))?;
            files.push("history.csv".into());
            Ok(TaskReport {
                status: Status::Diverged,
                results: json!({"iterations": history.len(), "manifold_size": manifold.len()}),
                summary: vec![format!("amplitude iteration diverged after {} iterations", history.len())],
            })
        }
        Err(e) => Err(e.into()),
    }
}

fn run_flow(
    cfg: &JobConfig,
    l: &Loaded,
    cap: usize,
    out: &OutputDir,
    files: &mut Vec<String>,
) -> Result<TaskReport, CliError> {
    closed_shell(l)?;
    let s = &cfg.flow;
    let blocks = require_blocks(subalgebras(&l.ham, &s.subalgebras, s.occupied_tuples)?, "flow")?;
    let fc = FlowConfig {
        subalgebras: blocks,
        mode: match s.mode {
            FlowModeName::Serial => FlowMode::Serial,
            FlowModeName::Parallel => FlowMode::Parallel,
        },
        ordering: match s.ordering {
            OrderingName::Given => Ordering::Given,
            OrderingName::Mbpt2 => Ordering::Mbpt2,
        },
        energy_tolerance: s.energy_tolerance,
        amplitude_tolerance: s.amplitude_tolerance,
        max_cycles: s.max_cycles,
        block_solver: match s.truncated_rank {
            Some(r) => BlockSolver::Truncated { max_internal_rank: r },
            None => BlockSolver::ExactDiagonalization,
        },
        solver: solver_config(cfg),
    };
    let problem = CcProblem::new(&l.ham, cap)?;
    let o = run_flow_in(&problem, &fc, cap)?;

    let cycles: Vec<Vec<String>> = o
        .state
        .history
        .iter()
        .map(|c| {
            vec![
                c.cycle.to_string(),
                fmt12(c.projected_energy),
                fmt12(c.max_energy_change),
                fmt12(c.max_amplitude_change),
            ]
        })
        .collect();
    out.write_csv(
        "history.csv",
        &header(&["cycle", "projected_energy", "max_energy_change", "max_amplitude_change"]),
        &cycles,
    )?;
    let visits: Vec<Vec<String>> = o
        .state
        .blocks
        .iter()
        .map(|b| {
            vec![
                b.cycle.to_string(),
                b.block.to_string(),
                b.cas_dimension.to_string(),
                fmt12(b.eigenvalue),
                fmt12(b.amplitude_change),
            ]
        })
        .collect();
    out.write_csv(
        "blocks.csv",
        &header(&["cycle", "block", "cas_dimension", "eigenvalue", "amplitude_change"]),
        &visits,
    )?;
    files.extend(["history.csv".to_string(), "blocks.csv".to_string()]);

    let per_block: Vec<Value> = o
        .subalgebras
        .iter()
        .enumerate()
        .map(|(k, h)| {
            let dim = o.state.blocks.iter().rev().find(|b| b.block == k).map(|b| b.cas_dimension);
            json!({
                "subalgebra": h.to_literal(),
                "cas_dimension": dim,
                "energy": o.final_block_energies.get(k).copied().map(num),
            })
        })
        .collect();
    let status = if o.converged { Status::Converged } else { Status::NotConverged };
    Ok(TaskReport {
        status,
        results: json!({
            "energy": num(o.projected_energy),
            "block_energy": num(o.block_energy),
            "converged": o.converged,
            "cycles": o.state.cycle,
            "eigenvalue_spread": num(o.eigenvalue_spread),
            "shared_amplitude_spread": o.shared_amplitude_spread.map(num),
            "union_size": o.union.len(),
            "blocks": per_block,
            "largest_amplitudes": largest_amplitudes(&o.state.t_global, 10),
        }),
        summary: vec![
            format!("{} blocks, union of {} amplitudes, {} cycles", o.subalgebras.len(), o.union.len(), o.state.cycle),
            format!("flow energy: {} ({})", fmt12(o.projected_energy), status.name()),
            format!("block eigenvalue spread: {:.3e}", o.eigenvalue_spread),
        ],
    })
}

fn run_ducc(
    cfg: &JobConfig,
    l: &Loaded,
    cap: usize,
    out: &OutputDir,
    files: &mut Vec<String>,
) -> Result<TaskReport, CliError> {
    closed_shell(l)?;
    let s = &cfg.ducc;
    let blocks = require_blocks(subalgebras(&l.ham, &s.subalgebras, s.occupied_tuples)?, "ducc")?;
    let tc = TrotterFlowConfig {
        subalgebras: blocks.clone(),
        trotter_n: s.trotter_n,
        optimizer: match s.optimizer {
            OptimizerName::Descent => Optimizer::AmplitudeDescent { step: s.step, max_iters: s.max_iters },
            OptimizerName::ExactDiag => Optimizer::ExactDiagFallback,
        },
        tolerance: s.tolerance,
        max_cycles: s.max_cycles,
    };
    let a = sector_operator(&l.ham, cap)?;
    let o = run_ducc_flow(&a, &tc, cap)?;

    let rows: Vec<Vec<String>> = o
        .history
        .iter()
        .map(|r| {
            vec![
                r.cycle.to_string(),
                r.block.to_string(),
                fmt12(r.energy),
                fmt12(r.gradient_norm),
                r.converged.to_string(),
            ]
        })
        .collect();
    out.write_csv("history.csv", &header(&["cycle", "block", "energy", "gradient_norm", "converged"]), &rows)?;
    files.push("history.csv".into());

    let q = qubit_estimate(&blocks);
    let mut exports = Vec::new();
    if s.export {
        // earliest block wins for parameters shared between blocks
        let mut total = ClusterOperator::new();
        for sigma in &o.sigmas {
            for (&sig, &v) in sigma.amplitudes().iter() {
                if !total.contains(&sig) {
                    total.set(sig, v)?;
                }
            }
        }
        let n_spin = l.ham.basis().n_spin_orbitals();
        for (k, h) in blocks.iter().enumerate() {
            let heff = downfold(&a, &make_sigma(&total.filtered(|sig| !h.contains(sig))), h, cap)?;
            let stem = format!("downfold_{k}");
            let matrix: Vec<Vec<String>> =
                heff.matrix.row_iter().map(|r| r.iter().map(|&x| fmt12(x)).collect()).collect();
            let cols: Vec<String> = (0..heff.matrix.ncols()).map(|j| format!("c{j}")).collect();
            out.write_csv(&format!("{stem}_matrix.csv"), &cols, &matrix)?;
            let reference = l.ham.basis().reference();
            let labels: Vec<Vec<String>> = heff
                .cas
                .space()
                .dets()
                .iter()
                .enumerate()
                .map(|(i, &d)| {
                    let exc = ExcitationSignature::between(reference, d)
                        .filter(|s| s.rank() > 0)
                        .map(|s| signature_label(&s))
                        .unwrap_or_default();
                    vec![i.to_string(), occupation(d, n_spin), exc]
                })
                .collect();
            out.write_csv(
                &format!("{stem}_determinants.csv"),
                &header(&["index", "occupation", "excitation"]),
                &labels,
            )?;
            let op = extract_active_operator(&heff)?;
            out.write_csv(
                &format!("{stem}_operator.csv"),
                &header(&["term", "p", "q", "r", "s", "value"]),
                &operator_rows(&op.hamiltonian),
            )?;
            files.extend([
                format!("{stem}_matrix.csv"),
                format!("{stem}_determinants.csv"),
                format!("{stem}_operator.csv"),
            ]);
            // a plain FCIDUMP only when the fit has real-orbital symmetry
            if eight_fold_defect(&op.hamiltonian) <= 1e-10 {
                let eight = to_eight_fold(&op.hamiltonian)?;
                out.write_text(&format!("{stem}.fcidump"), &write_fcidump(&eight, 0)?)?;
                files.push(format!("{stem}.fcidump"));
            }
            let eig = heff.eigenvalues()?;
            exports.push(json!({
                "subalgebra": h.to_literal(),
                "dimension": heff.matrix.nrows(),
                "lowest_eigenvalue": num(eig[0]),
                "symmetry_defect": num(heff.symmetry_defect()),
                "active_orbitals": op.orbitals.iter().map(|p| p + 1).collect::<Vec<_>>(),
                "operator_residual": num(op.residual),
            }));
        }
    }
    let status = if o.converged { Status::Converged } else { Status::NotConverged };
    Ok(TaskReport {
        status,
        results: json!({
            "energy": num(o.energy),
            "converged": o.converged,
            "cycles": o.cycles,
            "trotter_n": s.trotter_n,
            "block_energies": o.block_energies.iter().copied().map(num).collect::<Vec<_>>(),
            "energy_spread": num(o.energy_spread()),
            "qubits": {"per_block": q.per_block, "max": q.max, "full": q.full},
            "exports": exports,
        }),
        summary: vec![
            format!("{} blocks, Trotter number {}, {} cycles", blocks.len(), s.trotter_n, o.cycles),
            format!("DUCC energy: {} ({})", fmt12(o.energy), status.name()),
            format!("qubits: largest block {} of {} for the full space", q.max, q.full),
        ],
    })
}

/// Unique coefficients with 1-based active labels; unused slots are 0.
fn operator_rows(h: &HamiltonianSpec) -> Vec<Vec<String>> {
    let mut rows = vec![vec!["core".into(), "0".into(), "0".into(), "0".into(), "0".into(), fmt12(h.core_energy())]];
    for p in 0..h.n_spatial() {
        for q in 0..=p {
            if h.h(p, q) != 0.0 {
                rows.push(vec![
                    "one".into(),
                    (p + 1).to_string(),
                    (q + 1).to_string(),
                    "0".into(),
                    "0".into(),
                    fmt12(h.h(p, q)),
                ]);
            }
        }
    }
    for (idx, v) in h.unique_two_body() {
        let mut row = vec!["two".to_string()];
        row.extend(idx.iter().map(|i| (i + 1).to_string()));
        row.push(fmt12(v));
        rows.push(row);
    }
    rows
}

fn eight_fold_defect(h: &HamiltonianSpec) -> f64 {
    let mut worst: f64 = 0.0;
    for ([p, q, r, s], v) in h.unique_two_body() {
        for [a, b, c, d] in TwoBodySymmetry::EightFold.images(p, q, r, s) {
            worst = worst.max((h.eri(a, b, c, d) - v).abs());
        }
    }
    worst
}

/// Copies `from`, averaging each two-body value over its eightfold images.
fn to_eight_fold(from: &HamiltonianSpec) -> Result<HamiltonianSpec, CliError> {
    let n = from.n_spatial();
    let mut to = HamiltonianSpec::new(n, from.n_electrons(), TwoBodySymmetry::EightFold)?;
    to.set_core_energy(from.core_energy())?;
    for p in 0..n {
        for q in 0..=p {
            to.set_one_body(p, q, from.h(p, q))?;
        }
    }
    for (idx, _) in from.unique_two_body() {
        let [p, q, r, s] = TwoBodySymmetry::EightFold.canonical(idx[0], idx[1], idx[2], idx[3]);
        let images = TwoBodySymmetry::EightFold.images(p, q, r, s);
        let mean = images.iter().map(|&[a, b, c, d]| from.eri(a, b, c, d)).sum::<f64>() / images.len() as f64;
        to.set_two_body(p, q, r, s, mean)?;
    }
    Ok(to)
}

fn run_td(
    cfg: &JobConfig,
    l: &Loaded,
    cap: usize,
    out: &OutputDir,
    files: &mut Vec<String>,
) -> Result<TaskReport, CliError> {
    closed_shell(l)?;
    let s = &cfg.td;
    let blocks = subalgebras(&l.ham, &s.subalgebras, s.occupied_tuples)?;
    let mode = match s.mode {
        TdModeName::Global => PropagationMode::Global,
        TdModeName::Flow => PropagationMode::FlowSerial,
    };
    let manifold = if blocks.is_empty() {
        if mode == PropagationMode::FlowSerial {
            return Err(CliError::Config("flow propagation needs [td] sub-algebras".into()));
        }
        cc_manifold(cfg, &l.ham)?
    } else {
        sescc_core::algebra::union_manifold(&blocks)
    };
    let problem = CcProblem::new(&l.ham, cap)?;
    let initial = match s.initial {
        InitialState::Zero => TDState::new(ClusterOperator::zeros(&manifold)),
        InitialState::Cc => {
            let sol = problem.solve(&manifold, &solver_config(cfg), None)?;
            if !sol.converged {
                return Err(CliError::Config("ground-state amplitudes for the initial state did not converge".into()));
            }
            TDState::from_real(&sol.amplitudes.scaled(s.initial_scale))
        }
    };
    let traced: Vec<ExcitationSignature> = if s.trace.is_empty() {
        manifold.iter().take(4).copied().collect()
    } else {
        let list = s.trace.iter().map(|t| parse_signature(t)).collect::<Result<Vec<_>, _>>()?;
        if let Some(sig) = list.iter().find(|sig| !manifold.contains(sig)) {
            return Err(CliError::Config(format!("traced excitation {} is not propagated", signature_label(sig))));
        }
        list
    };
    let oracle = if s.oracle {
        let exact = ExactPropagator::new(&problem)?;
        Some((exact, state_vector(&initial, &problem)?))
    } else {
        None
    };

    let pc = PropagatorConfig { amplitude_bound: s.amplitude_bound, ..PropagatorConfig::new(s.dt, s.t_final, mode) };
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut failure: Option<CliError> = None;
    let mut worst_overlap: f64 = 0.0;
    let mut last_energy = Complex64::new(f64::NAN, f64::NAN);
    let mut last_time = 0.0;
    let result = propagate_observed(&initial, &problem, &pc, (!blocks.is_empty()).then_some(&blocks[..]), cap, |st| {
        if failure.is_some() {
            return;
        }
        let e = match td_energy(st, &problem) {
            Ok(e) => e,
            Err(err) => {
                failure = Some(err.into());
                return;
            }
        };
        let mut row = vec![fmt12(st.t), fmt12(e.re), fmt12(e.im)];
        for sig in &traced {
            let v = st.amplitudes.get(sig);
            row.push(fmt12(v.re));
            row.push(fmt12(v.im));
        }
        if let Some((exact, psi0)) = &oracle {
            match state_vector(st, &problem) {
                Ok(psi) => {
                    let reference = exact.evolve(psi0, st.t);
                    let overlap = reference.dotc(&psi).norm() / (reference.norm() * psi.norm());
                    worst_overlap = worst_overlap.max(1.0 - overlap);
                    row.push(fmt12(overlap));
                }
                Err(err) => failure = Some(err.into()),
            }
        }
        last_energy = e;
        last_time = st.t;
        rows.push(row);
    });
    if let Some(err) = failure {
        return Err(err);
    }
    let status = match result {
        Ok(_) => Status::Converged,
        Err(Error::Instability { .. }) => Status::Unstable,
        Err(e) => return Err(e.into()),
    };

    let mut cols = header(&["t", "energy_re", "energy_im"]);
    for sig in &traced {
        let label = signature_label(sig);
        cols.push(format!("re[{label}]"));
        cols.push(format!("im[{label}]"));
    }
    if oracle.is_some() {
        cols.push("overlap".into());
    }
    out.write_csv("trajectory.csv", &cols, &rows)?;
    files.push("trajectory.csv".into());

    let mut summary = vec![
        format!("{} amplitudes, {} states written, dt = {}", manifold.len(), rows.len(), s.dt),
        format!("energy at t = {}: {} {:+}i", last_time, fmt12(last_energy.re), fmt12(last_energy.im)),
    ];
    if status == Status::Unstable {
        summary.push(format!("amplitudes left the bound after t = {last_time}"));
    }
    Ok(TaskReport {
        status,
        results: json!({
            "final_time": num(last_time),
            "states": rows.len(),
            "energy": {"re": num(last_energy.re), "im": num(last_energy.im)},
            "manifold_size": manifold.len(),
            "traced": traced.iter().map(signature_label).collect::<Vec<_>>(),
            "max_overlap_defect": oracle.as_ref().map(|_| num(worst_overlap)),
        }),
        summary,
    })
}

fn run_estimate(cfg: &JobConfig, l: Option<&Loaded>) -> Result<TaskReport, CliError> {
    let s = &cfg.estimate;
    let blocks = match l {
        Some(l) => subalgebras(&l.ham, &s.subalgebras, s.occupied_tuples)?,
        None if !s.subalgebras.is_empty() || s.occupied_tuples.is_some() => {
            return Err(CliError::Config("[estimate] sub-algebras need a [hamiltonian]".into()))
        }
        None => Vec::new(),
    };
    let m = s.blocks.unwrap_or(blocks.len());
    let y = match (s.y, blocks.first()) {
        (Some(y), _) => y,
        (None, Some(h)) => {
            if let Some(other) = blocks.iter().find(|b| b.y() != h.y()) {
                return Err(CliError::Config(format!("blocks differ in active virtual count ({other})")));
            }
            h.y()
        }
        (None, None) => return Err(CliError::Config("[estimate] needs `y` or sub-algebras".into())),
    };
    let solver = match s.solver {
        SolverName::Ccsdt => TruncatedSolver::Ccsdt,
        SolverName::Ccsdtq => TruncatedSolver::Ccsdtq,
    };
    let cost = cost_bound(m, y, s.n_v, solver, CostConstants { alpha: s.alpha, beta: s.beta });
    let mut summary =
        vec![format!("blocks M = {m}, y = {y}, n_v = {}", s.n_v), format!("cost estimate: {}", cost.value)];
    if let Some(w) = &cost.warning {
        summary.push(format!("warning: {w}"));
    }
    let qubits = if blocks.is_empty() {
        Value::Null
    } else {
        let q = qubit_estimate(&blocks);
        summary.push(format!("qubits: largest block {} of {} for the full space", q.max, q.full));
        json!({"per_block": q.per_block, "max": q.max, "full": q.full})
    };
    Ok(TaskReport {
        status: Status::Converged,
        results: json!({
            "cost": num(cost.value),
            "blocks": m,
            "y": y,
            "n_v": s.n_v,
            "warning": cost.warning,
            "qubits": qubits,
        }),
        summary,
    })
}

/// Runs a job and writes its files into the configured output directory.
pub fn run_job(cfg: &JobConfig) -> Result<JobOutcome, CliError> {
    cfg.validate()?;
    let cap = determinant_cap(cfg)?;
    let loaded = load_hamiltonian(cfg)?;
    let out = OutputDir::create(&cfg.output)?;
    let mut files = Vec::new();
    let need = || loaded.as_ref().expect("validated: task has a Hamiltonian");
    let report = match cfg.task {
        Task::Fci => run_fci(cfg, need(), cap)?,
        Task::Cc => run_cc(cfg, need(), cap, &out, &mut files)?,
        Task::Flow => run_flow(cfg, need(), cap, &out, &mut files)?,
        Task::Ducc => run_ducc(cfg, need(), cap, &out, &mut files)?,
        Task::Td => run_td(cfg, need(), cap, &out, &mut files)?,
        Task::Estimate => run_estimate(cfg, loaded.as_ref())?,
    };

    let hamiltonian = loaded.as_ref().map(|l| {
        json!({
            "source": l.source,
            "fingerprint": fingerprint(&l.ham),
            "n_spatial": l.ham.n_spatial(),
            "n_electrons": l.ham.n_electrons(),
            "ms2": l.ms2,
        })
    });
    files.push("summary.txt".into());
    let doc = json!({
        "task": cfg.task.name(),
        "status": report.status.name(),
        "hamiltonian": hamiltonian,
        "determinant_cap": cap,
        "config": serde_json::to_value(cfg)?,
        "results": report.results,
        "files": files,
    });
    let result_path = out.write_json("result.json", doc)?;
    let mut summary = format!("task {} ({})\n", cfg.task.name(), report.status.name());
    for line in &report.summary {
        summary.push_str(line);
        summary.push('\n');
    }
    out.write_text("summary.txt", &summary)?;
    Ok(JobOutcome { status: report.status, result_path, summary })
}
