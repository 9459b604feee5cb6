//! Sub-system flows: effective-Hamiltonian blocks coupled through a common
//! amplitude pool, run serially or in parallel until the shared cluster
//! operator stops changing.

mod block;
mod cost;
mod local;

pub use block::{
    build_effective_hamiltonian, build_effective_hamiltonian_in, solve_block, truncated_block_solve, BlockSolution,
    EffectiveHamiltonian,
};
pub use cost::{cost_bound, cost_estimate, CostConstants, CostEstimate, TruncatedSolver};
pub use local::{pair_density, secondary_downfold, select_pno, PairDensity, PnoSelection};

use alloc::collections::BTreeMap;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::algebra::{CasSpace, SubAlgebra};
use crate::cc::{CcProblem, SolverConfig};
use crate::cluster::{mbpt2_contribution, ClusterOperator};
use crate::fock::{ExcitationSignature, Manifold};
use crate::integrals::HamiltonianSpec;
use crate::{Error, Result};

use block::assemble;
pub(crate) use block::CasFrame;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlowMode {
    /// Blocks visited in order; each sees the amplitudes written earlier in
    /// the same cycle.
    Serial,
    /// Every block solved against the cycle-start amplitudes, then shared
    /// amplitudes synchronized.
    Parallel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ordering {
    Given,
    /// Descending magnitude of the block's second-order energy.
    Mbpt2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockSolver {
    ExactDiagonalization,
    /// Connected equations on internal excitations up to this rank.
    Truncated {
        max_internal_rank: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowConfig {
    pub subalgebras: Vec<SubAlgebra>,
    pub mode: FlowMode,
    pub ordering: Ordering,
    pub energy_tolerance: f64,
    /// Bound on the largest amplitude change over a cycle.
    pub amplitude_tolerance: f64,
    pub max_cycles: usize,
    pub block_solver: BlockSolver,
    /// Used by truncated blocks.
    pub solver: SolverConfig,
}

impl FlowConfig {
    /// Serial flow in the given order with exact block solves.
    pub fn new(subalgebras: Vec<SubAlgebra>) -> Self {
        FlowConfig {
            subalgebras,
            mode: FlowMode::Serial,
            ordering: Ordering::Given,
            energy_tolerance: 1e-8,
            amplitude_tolerance: 1e-7,
            max_cycles: 100,
            block_solver: BlockSolver::ExactDiagonalization,
            solver: SolverConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.subalgebras.is_empty() {
            return Err(Error::usage("a flow needs at least one sub-algebra"));
        }
        if !(self.energy_tolerance > 0.0) || !(self.amplitude_tolerance > 0.0) {
            return Err(Error::usage("flow tolerances must be positive"));
        }
        if self.max_cycles == 0 {
            return Err(Error::usage("max_cycles must be at least 1"));
        }
        let basis = self.subalgebras[0].basis();
        if self.subalgebras.iter().any(|h| h.basis() != basis) {
            return Err(Error::usage("sub-algebras of one flow must share a basis"));
        }
        if let BlockSolver::Truncated { max_internal_rank } = self.block_solver {
            for h in &self.subalgebras {
                if max_internal_rank == 0 || max_internal_rank >= 2 * h.x() {
                    return Err(Error::usage(alloc::format!(
                        "truncation rank {max_internal_rank} not below 2x for {h}"
                    )));
                }
            }
        }
        self.solver.validate()
    }
}

/// Entry of the common amplitude pool.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoolEntry {
    pub value: f64,
    /// Index (in flow order) of the block that last wrote the value.
    pub owner: usize,
    pub cycle: usize,
}

/// One block visit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockRecord {
    pub cycle: usize,
    pub block: usize,
    pub cas_dimension: usize,
    pub eigenvalue: f64,
    /// Largest change of the amplitudes this block wrote.
    pub amplitude_change: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CycleRecord {
    pub cycle: usize,
    pub projected_energy: f64,
    pub max_energy_change: f64,
    pub max_amplitude_change: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowState {
    pub t_global: ClusterOperator,
    pub pool: BTreeMap<ExcitationSignature, PoolEntry>,
    pub block_energies: Vec<f64>,
    pub cycle: usize,
    pub history: Vec<CycleRecord>,
    pub blocks: Vec<BlockRecord>,
}

/// Final state of a flow with both energy evaluations.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowOutcome {
    pub state: FlowState,
    /// Sub-algebras in the order the flow visited them.
    pub subalgebras: Vec<SubAlgebra>,
    pub union: Manifold,
    pub converged: bool,
    /// `⟨Φ|exp(−T) H exp(T)|Φ⟩` with the union operator.
    pub projected_energy: f64,
    /// Selected eigenvalue of the first block at the final amplitudes.
    pub block_energy: f64,
    /// Block energies at the final amplitudes.
    pub final_block_energies: Vec<f64>,
    pub eigenvalue_spread: f64,
    /// Largest deviation between a block's own internal amplitudes at the
    /// final point and the pooled values; only for exact block solves.
    pub shared_amplitude_spread: Option<f64>,
}

/// Reorders blocks by the chosen criterion; the sort is stable.
pub fn order_subalgebras(list: &[SubAlgebra], ham: &HamiltonianSpec, criterion: Ordering) -> Result<Vec<SubAlgebra>> {
    match criterion {
        Ordering::Given => Ok(list.to_vec()),
        Ordering::Mbpt2 => {
            let mut keyed: Vec<(f64, SubAlgebra)> =
                list.iter().map(|h| Ok((mbpt2_contribution(h, ham)?.abs(), h.clone()))).collect::<Result<_>>()?;
            keyed.sort_by(|a, b| b.0.total_cmp(&a.0));
            Ok(keyed.into_iter().map(|(_, h)| h).collect())
        }
    }
}

struct Block {
    h: SubAlgebra,
    cas: CasSpace,
    frame: Arc<CasFrame>,
    indices: Vec<usize>,
    owned: Manifold,
}

impl Block {
    fn new(h: SubAlgebra, problem: &CcProblem, solver: BlockSolver, cap: usize) -> Result<Self> {
        let cas = h.generate_cas(cap)?;
        let frame = Arc::new(CasFrame::new(&cas)?);
        let indices = cas.indices_in(problem.space())?;
        let owned = match solver {
            BlockSolver::ExactDiagonalization => h.internal_manifold(),
            BlockSolver::Truncated { max_internal_rank } => {
                h.internal_manifold().into_iter().filter(|s| s.rank() <= max_internal_rank).collect()
            }
        };
        Ok(Block { h, cas, frame, indices, owned })
    }

    fn effective(&self, problem: &CcProblem, t: &ClusterOperator) -> Result<EffectiveHamiltonian> {
        let t_ext = t.filtered(|s| !self.h.contains(s));
        assemble(problem, &t_ext, self.cas.clone(), self.frame.clone(), &self.indices)
    }

    /// Energy and the amplitudes this block determines.
    fn solve(
        &self,
        problem: &CcProblem,
        t: &ClusterOperator,
        cp: &ClusterOperator,
        cfg: &FlowConfig,
    ) -> Result<(f64, ClusterOperator)> {
        let heff = self.effective(problem, t)?;
        match cfg.block_solver {
            BlockSolver::ExactDiagonalization => {
                let sol = solve_block(&heff, cp)?;
                Ok((sol.energy, sol.amplitudes))
            }
            BlockSolver::Truncated { max_internal_rank } => {
                let sol = truncated_block_solve(&heff, max_internal_rank, cp, &cfg.solver)?;
                if !sol.converged {
                    log::warn!(
                        "truncated block {} stopped after {} iterations (residual {:e})",
                        self.h,
                        sol.iterations,
                        sol.residual_norm
                    );
                }
                Ok((sol.energy, sol.amplitudes))
            }
        }
    }
}

fn solve_all(
    blocks: &[Block],
    problem: &CcProblem,
    t: &ClusterOperator,
    cfg: &FlowConfig,
) -> Vec<Result<(f64, ClusterOperator)>> {
    let empty = ClusterOperator::new();
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        blocks.par_iter().map(|b| b.solve(problem, t, &empty, cfg)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        blocks.iter().map(|b| b.solve(problem, t, &empty, cfg)).collect()
    }
}

/// Runs the flow until block energies and amplitudes settle or `max_cycles`
/// is reached. Non-convergence is reported through `FlowOutcome::converged`.
pub fn run_flow(ham: &HamiltonianSpec, cfg: &FlowConfig, cap: usize) -> Result<FlowOutcome> {
    cfg.validate()?;
    if *cfg.subalgebras[0].basis() != ham.basis() {
        return Err(Error::usage("sub-algebras and Hamiltonian use different bases"));
    }
    let problem = CcProblem::new(ham, cap)?;
    run_flow_in(&problem, cfg, cap)
}

/// [`run_flow`] on an already assembled sector.
pub fn run_flow_in(problem: &CcProblem, cfg: &FlowConfig, cap: usize) -> Result<FlowOutcome> {
    cfg.validate()?;
    let ordered = order_subalgebras(&cfg.subalgebras, problem.hamiltonian(), cfg.ordering)?;
    let blocks: Vec<Block> = ordered
        .iter()
        .enumerate()
        .map(|(k, h)| Block::new(h.clone(), problem, cfg.block_solver, cap).map_err(|e| e.in_block(k)))
        .collect::<Result<_>>()?;
    let mut union = Manifold::new();
    for b in &blocks {
        union.extend(b.owned.iter().copied());
    }
    let mut state = FlowState {
        t_global: ClusterOperator::zeros(&union),
        pool: BTreeMap::new(),
        block_energies: alloc::vec![f64::NAN; blocks.len()],
        cycle: 0,
        history: Vec::new(),
        blocks: Vec::new(),
    };
    let mut converged = false;
    for cycle in 1..=cfg.max_cycles {
        state.cycle = cycle;
        let start = state.t_global.clone();
        let previous = state.block_energies.clone();
        match cfg.mode {
            FlowMode::Serial => {
                for (k, b) in blocks.iter().enumerate() {
                    let cp: ClusterOperator = state
                        .pool
                        .iter()
                        .filter(|(s, e)| e.cycle == cycle && b.owned.contains(s))
                        .map(|(&s, e)| (s, e.value))
                        .collect();
                    let (energy, x) = b.solve(problem, &state.t_global, &cp, cfg).map_err(|e| e.in_block(k))?;
                    let change = write_back(&mut state, &x, k, cycle);
                    state.block_energies[k] = energy;
                    state.blocks.push(BlockRecord {
                        cycle,
                        block: k,
                        cas_dimension: b.cas.len(),
                        eigenvalue: energy,
                        amplitude_change: change,
                    });
                }
            }
            FlowMode::Parallel => {
                let results = solve_all(&blocks, problem, &start, cfg);
                let mut solved = Vec::with_capacity(blocks.len());
                for (k, r) in results.into_iter().enumerate() {
                    solved.push(r.map_err(|e| e.in_block(k))?);
                }
                // earliest block in the ordering wins a shared amplitude
                for (k, (energy, x)) in solved.iter().enumerate().rev() {
                    let change = x.iter().map(|(s, v)| (v - start.get(s)).abs()).fold(0.0, f64::max);
                    write_back(&mut state, x, k, cycle);
                    state.block_energies[k] = *energy;
                    state.blocks.push(BlockRecord {
                        cycle,
                        block: k,
                        cas_dimension: blocks[k].cas.len(),
                        eigenvalue: *energy,
                        amplitude_change: change,
                    });
                }
                let n = state.blocks.len();
                state.blocks[n - blocks.len()..].reverse();
            }
        }
        if let Some(k) = state.block_energies.iter().position(|e| !e.is_finite()) {
            return Err(Error::numeric("non-finite block energy").in_block(k));
        }
        let de = if cycle == 1 {
            f64::INFINITY
        } else {
            state.block_energies.iter().zip(&previous).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        };
        let dt = state.t_global.max_abs_diff(&start);
        let projected_energy = problem.energy(&state.t_global)?;
        log::debug!("flow cycle {cycle}: E = {projected_energy:.12}, dE = {de:e}, dT = {dt:e}");
        state.history.push(CycleRecord { cycle, projected_energy, max_energy_change: de, max_amplitude_change: dt });
        // a lone block has no external amplitudes to wait for
        if blocks.len() == 1 || (de <= cfg.energy_tolerance && dt <= cfg.amplitude_tolerance) {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("flow did not converge in {} cycles", cfg.max_cycles);
    }

    let projected_energy = problem.energy(&state.t_global)?;
    let mut final_block_energies = Vec::with_capacity(blocks.len());
    let mut shared: Option<f64> = None;
    for (k, b) in blocks.iter().enumerate() {
        match cfg.block_solver {
            BlockSolver::ExactDiagonalization => {
                let heff = b.effective(problem, &state.t_global).map_err(|e| e.in_block(k))?;
                let sol = solve_block(&heff, &ClusterOperator::new()).map_err(|e| e.in_block(k))?;
                let own = state.t_global.restricted(&b.owned);
                let spread = sol.internal.restricted(&b.owned).max_abs_diff(&own);
                shared = Some(shared.unwrap_or(0.0).max(spread));
                final_block_energies.push(sol.energy);
            }
            BlockSolver::Truncated { .. } => final_block_energies.push(state.block_energies[k]),
        }
    }
    let lo = final_block_energies.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = final_block_energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(FlowOutcome {
        block_energy: final_block_energies[0],
        eigenvalue_spread: hi - lo,
        final_block_energies,
        shared_amplitude_spread: shared,
        projected_energy,
        converged,
        union,
        subalgebras: ordered,
        state,
    })
}

fn write_back(state: &mut FlowState, x: &ClusterOperator, owner: usize, cycle: usize) -> f64 {
    let mut change: f64 = 0.0;
    for (&s, &v) in x.iter() {
        change = change.max((v - state.t_global.get(&s)).abs());
        state.t_global.insert(s, v);
        state.pool.insert(s, PoolEntry { value: v, owner, cycle });
    }
    change
}
