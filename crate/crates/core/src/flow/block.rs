use alloc::collections::BTreeMap;
use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::algebra::{CasSpace, SubAlgebra};
use crate::cc::{iterate_amplitudes, real_mat_vec, CcProblem, CcSolution, SolverConfig};
use crate::cluster::{cluster_analysis, reference_phases, ClusterOperator, ExcitationTable};
use crate::fock::{ExcitationSignature, Manifold};
use crate::integrals::HamiltonianSpec;
use crate::linalg::select_reference_root;
use crate::{Error, Result};

/// Internal-excitation bookkeeping for one CAS: the action of every internal
/// string and the position/phase of `E_μ|Φ⟩`.
#[derive(Clone, Debug)]
pub(crate) struct CasFrame {
    table: ExcitationTable,
    slots: BTreeMap<ExcitationSignature, (usize, f64)>,
    internal: Manifold,
}

impl CasFrame {
    pub(crate) fn new(cas: &CasSpace) -> Result<Self> {
        let space = Arc::new(cas.space().clone());
        let slots = reference_phases(&space)?.into_iter().enumerate().map(|(k, (sig, s))| (sig, (k + 1, s))).collect();
        let table = ExcitationTable::for_space(space)?;
        Ok(CasFrame { table, slots, internal: cas.generator().internal_manifold() })
    }

    pub(crate) fn table(&self) -> &ExcitationTable {
        &self.table
    }

    pub(crate) fn internal(&self) -> &Manifold {
        &self.internal
    }

    pub(crate) fn slot(&self, sig: &ExcitationSignature) -> Option<(usize, f64)> {
        self.slots.get(sig).copied()
    }

    /// `exp(−T) A exp(T) |Φ⟩` over the CAS.
    pub(crate) fn transformed_reference(&self, a: &DMatrix<f64>, t: &ClusterOperator) -> Result<DVector<f64>> {
        let mut phi = DVector::zeros(a.nrows());
        phi[0] = 1.0;
        let x = self.table.exp_apply(t, 1.0, &phi)?;
        let y = real_mat_vec(a, &x);
        self.table.exp_apply(t, -1.0, &y)
    }

    pub(crate) fn project(&self, v: &DVector<f64>, sigs: impl Iterator<Item = ExcitationSignature>) -> ClusterOperator {
        sigs.map(|s| {
            let (k, phase) = self.slots[&s];
            (s, v[k] * phase)
        })
        .collect()
    }
}

/// `(P+Q_int) exp(−T_ext) H exp(T_ext) (P+Q_int)` as a dense matrix over the
/// CAS of its generator. Not symmetric once `T_ext` is nonzero.
#[derive(Clone, Debug)]
pub struct EffectiveHamiltonian {
    matrix: DMatrix<f64>,
    cas: CasSpace,
    frame: Arc<CasFrame>,
    t_ext: ClusterOperator,
    hermitian: bool,
}

impl EffectiveHamiltonian {
    /// Wraps a matrix already expressed over `cas`; `t_ext` is kept as
    /// provenance and must not contain internal excitations.
    pub fn new(matrix: DMatrix<f64>, cas: CasSpace, t_ext: ClusterOperator) -> Result<Self> {
        let frame = Arc::new(CasFrame::new(&cas)?);
        Self::with_frame(matrix, cas, frame, t_ext, false)
    }

    pub(crate) fn with_frame(
        matrix: DMatrix<f64>,
        cas: CasSpace,
        frame: Arc<CasFrame>,
        t_ext: ClusterOperator,
        hermitian: bool,
    ) -> Result<Self> {
        if matrix.shape() != (cas.len(), cas.len()) {
            return Err(Error::usage(format!(
                "effective Hamiltonian shape {:?} does not match CAS dimension {}",
                matrix.shape(),
                cas.len()
            )));
        }
        check_external(&t_ext, cas.generator())?;
        Ok(EffectiveHamiltonian { matrix, cas, frame, t_ext, hermitian })
    }

    #[inline]
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    #[inline]
    pub fn cas(&self) -> &CasSpace {
        &self.cas
    }

    #[inline]
    pub fn generator(&self) -> &SubAlgebra {
        self.cas.generator()
    }

    /// External amplitudes the matrix was built from.
    #[inline]
    pub fn t_ext(&self) -> &ClusterOperator {
        &self.t_ext
    }

    #[inline]
    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    #[inline]
    pub fn dimension(&self) -> usize {
        self.cas.len()
    }

    pub(crate) fn frame(&self) -> &Arc<CasFrame> {
        &self.frame
    }
}

fn check_external(t_ext: &ClusterOperator, h: &SubAlgebra) -> Result<()> {
    if let Some((s, _)) = t_ext.iter().find(|(s, _)| h.contains(s)) {
        return Err(Error::usage(format!("external operator holds internal excitation {s} of {h}")));
    }
    Ok(())
}

fn check_internal(t: &ClusterOperator, h: &SubAlgebra, what: &str) -> Result<()> {
    if let Some((s, _)) = t.iter().find(|(s, _)| !h.contains(s)) {
        return Err(Error::usage(format!("{what} holds excitation {s} outside {h}")));
    }
    Ok(())
}

/// Effective Hamiltonian of `h` from scratch: assembles the closed-shell sector
/// of `ham` and transforms it with `t_ext`.
pub fn build_effective_hamiltonian(
    ham: &HamiltonianSpec,
    t_ext: &ClusterOperator,
    h: &SubAlgebra,
    cap: usize,
) -> Result<EffectiveHamiltonian> {
    let problem = CcProblem::new(ham, cap)?;
    build_effective_hamiltonian_in(&problem, t_ext, h, cap)
}

/// Same as [`build_effective_hamiltonian`] on an already assembled sector.
pub fn build_effective_hamiltonian_in(
    problem: &CcProblem,
    t_ext: &ClusterOperator,
    h: &SubAlgebra,
    cap: usize,
) -> Result<EffectiveHamiltonian> {
    if *h.basis() != problem.hamiltonian().basis() {
        return Err(Error::usage("sub-algebra and Hamiltonian use different bases"));
    }
    check_external(t_ext, h)?;
    let cas = h.generate_cas(cap)?;
    let frame = Arc::new(CasFrame::new(&cas)?);
    let indices = cas.indices_in(problem.space())?;
    assemble(problem, t_ext, cas, frame, &indices)
}

pub(crate) fn assemble(
    problem: &CcProblem,
    t_ext: &ClusterOperator,
    cas: CasSpace,
    frame: Arc<CasFrame>,
    indices: &[usize],
) -> Result<EffectiveHamiltonian> {
    let cols = problem.table().transformed_columns(problem.matrix(), t_ext, indices)?;
    let n = indices.len();
    let matrix = DMatrix::from_fn(n, n, |i, j| cols[(indices[i], j)]);
    EffectiveHamiltonian::with_frame(matrix, cas, frame, t_ext.clone(), false)
}

/// Result of one computational block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockSolution {
    pub energy: f64,
    /// Amplitudes determined by this block (internal, outside the pool).
    pub amplitudes: ClusterOperator,
    /// Pool amplitudes plus `amplitudes`: the block's whole internal operator.
    pub internal: ClusterOperator,
    /// Selected eigenvector of the effective Hamiltonian, `c₀ = 1`.
    pub vector: DVector<f64>,
}

/// Diagonalizes `exp(−T_CP) H_eff exp(T_CP)` and cluster-analyzes the root with
/// the largest reference weight. `cp` holds pool amplitudes that enter as
/// known parameters.
pub fn solve_block(heff: &EffectiveHamiltonian, cp: &ClusterOperator) -> Result<BlockSolution> {
    check_internal(cp, heff.generator(), "pool operator")?;
    let frame = heff.frame();
    let table = frame.table();
    let n = heff.dimension();
    let cols: Vec<usize> = (0..n).collect();
    let m = if cp.is_empty() { heff.matrix().clone() } else { table.transformed_columns(heff.matrix(), cp, &cols)? };
    let (energy, v) = select_reference_root(&m)?;
    let relative = cluster_analysis(&v, table, Some(&frame.internal))?;
    let amplitudes = relative.filtered(|s| !cp.contains(s));
    let mut internal = relative;
    for (&s, &x) in cp.iter() {
        internal.insert(s, internal.get(&s) + x);
    }
    let vector = if cp.is_empty() { v } else { table.exp_apply(cp, 1.0, &v)? };
    Ok(BlockSolution { energy, amplitudes, internal, vector })
}

/// Connected amplitude equations inside the CAS, truncated to internal
/// excitations of rank `≤ max_internal_rank`; pool amplitudes stay fixed.
/// The energy is the reference projection.
pub fn truncated_block_solve(
    heff: &EffectiveHamiltonian,
    max_internal_rank: usize,
    cp: &ClusterOperator,
    cfg: &SolverConfig,
) -> Result<CcSolution> {
    let h = heff.generator();
    if max_internal_rank == 0 || max_internal_rank >= 2 * h.x() {
        return Err(Error::usage(format!(
            "truncation rank {max_internal_rank} must lie in 1..{} for {h}; use the eigenvalue solver otherwise",
            2 * h.x()
        )));
    }
    check_internal(cp, h, "pool operator")?;
    let frame = heff.frame();
    let unknowns: Manifold =
        frame.internal.iter().copied().filter(|s| s.rank() <= max_internal_rank && !cp.contains(s)).collect();
    let a = heff.matrix();
    iterate_amplitudes(
        ClusterOperator::zeros(&unknowns),
        cfg,
        |t| {
            let mut total = cp.clone();
            total.merge(t);
            let v = frame.transformed_reference(a, &total)?;
            Ok((v[0], frame.project(&v, t.iter().map(|(s, _)| *s))))
        },
        |s| {
            let (k, _) = frame.slot(s).expect("unknowns are internal");
            a[(k, k)] - a[(0, 0)]
        },
    )
}
