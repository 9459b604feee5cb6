use std::sync::Arc;

use approx::assert_abs_diff_eq;
use sescc_core::algebra::{union_manifold, SubAlgebra, VirtualSelection};
use sescc_core::cc::{solve_fci, CcProblem, SolverConfig};
use sescc_core::cluster::{ClusterOperator, OperatorMatrix};
use sescc_core::ducc::{
    downfold, extract_active_operator, make_sigma, run_ducc_flow, AntiHermitianCluster, TrotterFlowConfig,
};
use sescc_core::flow::{
    build_effective_hamiltonian_in, run_flow_in, solve_block, BlockSolver, FlowConfig, FlowMode, Ordering,
};
use sescc_core::fock::{enumerate_manifold, SpinFilter};
use sescc_core::integrals::{assemble_matrix, build_model, canonicalize, DeterminantSpace, ModelSpec, ScfConfig};
use sescc_core::linalg::asymmetry;
use sescc_core::td::{propagate_in, PropagationMode, PropagatorConfig, TDState};
use sescc_core::{Error, HamiltonianSpec, Manifold, Sector};

const CAP: usize = 20_000;

fn hubbard(sites: usize, u: f64, n: usize) -> HamiltonianSpec {
    let h = build_model(&ModelSpec::HubbardChain { sites, hopping: 1.0, onsite: u, periodic: false, n_electrons: n })
        .unwrap();
    canonicalize(&h, &ScfConfig::default()).unwrap().hamiltonian
}

fn doubles(ham: &HamiltonianSpec) -> Manifold {
    let b = ham.basis();
    enumerate_manifold(&b, 2, b.occupied_mask(), b.virtual_mask(), SpinFilter::ConserveSz).unwrap()
}

fn tight() -> SolverConfig {
    SolverConfig { residual_tolerance: 1e-12, max_iterations: 500, ..SolverConfig::default() }
}

fn sector_operator(ham: &HamiltonianSpec) -> OperatorMatrix {
    let space = Arc::new(DeterminantSpace::sector(&ham.basis(), Sector::closed_shell(ham.n_electrons()), CAP).unwrap());
    let m = assemble_matrix(&space, ham, CAP).unwrap();
    OperatorMatrix::new(space, m).unwrap()
}

#[test]
fn pairing_flow_matches_union_cc_in_both_modes() {
    let ham = build_model(&ModelSpec::Pairing { levels: 4, spacing: 1.0, strength: 0.4, n_electrons: 4 }).unwrap();
    let problem = CcProblem::new(&ham, CAP).unwrap();
    let blocks = SubAlgebra::all_occupied_tuples(ham.basis(), 1).unwrap();
    let reference = problem.solve(&union_manifold(&blocks), &tight(), None).unwrap();
    for mode in [FlowMode::Serial, FlowMode::Parallel] {
        let cfg = FlowConfig { mode, ordering: Ordering::Mbpt2, ..FlowConfig::new(blocks.clone()) };
        let out = run_flow_in(&problem, &cfg, CAP).unwrap();
        assert!(out.converged, "{mode:?}");
        assert_abs_diff_eq!(out.projected_energy, reference.energy, epsilon = 1e-8);
        assert_abs_diff_eq!(out.block_energy, reference.energy, epsilon = 1e-8);
    }
}

#[test]
fn single_block_flow_is_the_block_eigenvalue() {
    let ham = hubbard(4, 2.0, 4);
    let problem = CcProblem::new(&ham, CAP).unwrap();
    let h = SubAlgebra::new(ham.basis(), &[0, 1], VirtualSelection::All).unwrap();
    let out = run_flow_in(&problem, &FlowConfig::new(vec![h]), CAP).unwrap();
    let fci = solve_fci(&ham, Sector::closed_shell(4), CAP).unwrap();
    assert!(out.converged);
    assert_eq!(out.state.cycle, 1);
    assert_abs_diff_eq!(out.projected_energy, fci.energy, epsilon = 1e-9);
}

#[test]
fn similarity_and_unitary_downfolds_share_the_bare_limit() {
    let ham = hubbard(4, 2.0, 4);
    let problem = CcProblem::new(&ham, CAP).unwrap();
    let a = sector_operator(&ham);
    let cc = problem.solve(&doubles(&ham), &tight(), None).unwrap();
    let h = SubAlgebra::new(ham.basis(), &[1], VirtualSelection::Set(vec![2])).unwrap();

    let ext = cc.amplitudes.filtered(|s| !h.contains(s));
    let sr = build_effective_hamiltonian_in(&problem, &ext, &h, CAP).unwrap();
    assert!(!sr.is_hermitian());
    assert!(asymmetry(sr.matrix()) > 1e-6);
    let du = downfold(&a, &make_sigma(&ext), &h, CAP).unwrap();
    assert!(du.symmetry_defect() <= 1e-10);
    assert_eq!(du.matrix.nrows(), sr.matrix().nrows());

    // with no external amplitudes both reduce to the CAS block of H
    let sr0 = build_effective_hamiltonian_in(&problem, &ClusterOperator::new(), &h, CAP).unwrap();
    let du0 = downfold(&a, &AntiHermitianCluster::default(), &h, CAP).unwrap();
    assert!((sr0.matrix() - &du0.matrix).amax() < 1e-12);

    // the similarity-transformed block reproduces CC exactly, the unitary one
    // only approximately
    let e_sr = solve_block(&sr, &ClusterOperator::new()).unwrap().energy;
    assert_abs_diff_eq!(e_sr, cc.energy, epsilon = 1e-9);
    let e_du = du.eigenvalues().unwrap()[0];
    assert!((e_du - cc.energy).abs() < 5e-2, "unitary block {e_du} vs CC {}", cc.energy);
}

#[test]
fn active_operator_reproduces_the_bare_cas() {
    let ham = hubbard(4, 3.0, 4);
    let a = sector_operator(&ham);
    let h = SubAlgebra::new(ham.basis(), &[0, 1], VirtualSelection::Set(vec![2])).unwrap();
    let bare = downfold(&a, &AntiHermitianCluster::default(), &h, CAP).unwrap();
    let op = extract_active_operator(&bare).unwrap();
    assert_eq!(op.orbitals, vec![0, 1, 2]);
    assert!(op.residual < 1e-10, "residual {}", op.residual);
    let n = op.hamiltonian.n_electrons();
    let small = solve_fci(&op.hamiltonian, Sector::closed_shell(n), CAP).unwrap();
    assert_abs_diff_eq!(small.energy, bare.eigenvalues().unwrap()[0], epsilon = 1e-10);
}

#[test]
fn ducc_flow_lands_near_fci() {
    let ham = hubbard(3, 2.0, 4);
    let a = sector_operator(&ham);
    let fci = solve_fci(&ham, Sector::closed_shell(4), CAP).unwrap();
    let blocks = SubAlgebra::all_occupied_tuples(ham.basis(), 1).unwrap();
    let out = run_ducc_flow(&a, &TrotterFlowConfig::new(blocks, 1), CAP).unwrap();
    assert!(out.converged);
    assert_eq!(out.sigmas.len(), 2);
    assert!(out.energy >= fci.energy - 1e-10);
    assert!(out.energy - fci.energy < 1e-3, "{} vs {}", out.energy, fci.energy);
}

#[test]
fn td_pair_blocks_follow_global_dynamics() {
    let ham = hubbard(4, 2.0, 6);
    let problem = CcProblem::new(&ham, CAP).unwrap();
    let blocks = SubAlgebra::all_occupied_tuples(ham.basis(), 2).unwrap();
    let union = union_manifold(&blocks);
    let cc = problem.solve(&doubles(&ham), &tight(), None).unwrap();
    let init = TDState::from_real(&cc.amplitudes.restricted(&union).scaled(0.5));
    let run = |mode| {
        let cfg = PropagatorConfig::new(0.01, 1.0, mode);
        propagate_in(&init, &problem, &cfg, Some(&blocks), CAP).unwrap()
    };
    let global = run(PropagationMode::Global);
    let flow = run(PropagationMode::FlowSerial);
    assert_eq!(global.len(), 101);
    for (g, f) in global.iter().zip(&flow) {
        assert!(g.amplitudes.max_abs_diff(&f.amplitudes) < 1e-10, "t = {}", g.t);
        assert!((g.phase - f.phase).norm() < 1e-10);
    }
}

#[test]
fn truncated_blocks_converge_towards_the_exact_flow() {
    let ham = hubbard(4, 1.0, 6);
    let problem = CcProblem::new(&ham, CAP).unwrap();
    let blocks = SubAlgebra::all_occupied_tuples(ham.basis(), 2).unwrap();
    let exact = run_flow_in(&problem, &FlowConfig::new(blocks.clone()), CAP).unwrap();
    let cfg = FlowConfig {
        block_solver: BlockSolver::Truncated { max_internal_rank: 2 },
        solver: tight(),
        ..FlowConfig::new(blocks)
    };
    let truncated = run_flow_in(&problem, &cfg, CAP).unwrap();
    assert!(truncated.converged);
    assert!(truncated.shared_amplitude_spread.is_none());
    assert!((truncated.projected_energy - exact.projected_energy).abs() < 1e-2);
}

#[test]
fn oversized_problems_are_refused() {
    let ham = hubbard(4, 2.0, 4);
    assert!(matches!(CcProblem::new(&ham, 10), Err(Error::Resource { dimension: 36, cap: 10 })));
}
