//! Coupled-cluster sub-system flows on desk-scale fermionic problems.
//!
//! The crate works on bitstring determinants over at most 64 spin orbitals and
//! keeps every transformation exact: cluster exponentials are terminating
//! series, similarity transforms are carried out in the full determinant
//! sector, and effective Hamiltonians are dense matrices over complete active
//! spaces.
//!
//! Layout:
//!
//! - [`fock`]: determinants, creation/annihilation, excitation strings.
//! - [`integrals`]: Hamiltonian data, model builders, Slater–Condon rules,
//!   determinant sectors and dense assembly.
//! - [`algebra`]: excitation sub-algebras, their active spaces and manifolds.
//! - [`cluster`]: cluster operators, exact exponentials, cluster analysis,
//!   second-order perturbation energies.
//! - [`cc`]: the global amplitude solver and the FCI oracle.
//! - [`flow`]: effective-Hamiltonian blocks coupled into serial or parallel flows,
//!   truncated block solvers, pair densities and cost bounds.
//! - [`ducc`]: Hermitian downfolding and the Trotterized unitary flow.
//! - [`td`]: real-time propagation of global and block-coupled amplitudes.
//!
//! The crate is `no_std` (with `alloc`). The `std` feature only matters for the
//! optional `parallel` feature, which evaluates parallel-flow blocks on rayon.

#![cfg_attr(not(feature = "std"), no_std)]
#![allow(clippy::needless_range_loop, clippy::too_many_arguments, clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod algebra;
pub mod cc;
pub mod cluster;
pub mod ducc;
mod error;
pub mod flow;
pub mod fock;
pub mod integrals;
pub mod linalg;
pub mod td;

pub use error::{Error, HistoryPoint, Result};

pub use algebra::{CasSpace, ManifoldPartition, SubAlgebra, VirtualSelection};
pub use cc::{CcProblem, CcSolution, SolverConfig};
pub use cluster::{ClusterOperator, OperatorMatrix};
pub use fock::{Determinant, ExcitationSignature, Manifold, Phase, SpinOrbitalBasis};
pub use integrals::{HamiltonianSpec, ModelSpec, Sector};

/// Default ceiling on the number of determinants in any dense problem.
pub const DEFAULT_MAX_DETERMINANTS: usize = 20_000;
