//! Global coupled-cluster equations over an arbitrary excitation manifold,
//! solved through the exact sector-space similarity transform, and the FCI
//! oracle.

use alloc::collections::VecDeque;
use alloc::sync::Arc;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

pub use crate::algebra::union_manifold;
use crate::cluster::{ClusterOperator, ExcitationTable};
use crate::error::HistoryPoint;
use crate::fock::{ExcitationSignature, Manifold};
use crate::integrals::{assemble_matrix, fock_matrix, DeterminantSpace, HamiltonianSpec, Sector};
use crate::linalg::{least_squares, symmetric_eigen, Scalar};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Bound on the 2-norm of the residual vector.
    pub residual_tolerance: f64,
    /// Number of stored iterates for DIIS; 0 disables extrapolation.
    pub diis_depth: usize,
    /// Added to every perturbative denominator.
    pub level_shift: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { max_iterations: 200, residual_tolerance: 1e-10, diis_depth: 6, level_shift: 0.0 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.residual_tolerance > 0.0) || !self.level_shift.is_finite() {
            return Err(Error::usage("residual tolerance must be positive and the level shift finite"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CcSolution {
    pub energy: f64,
    pub amplitudes: ClusterOperator,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<HistoryPoint>,
}

/// Lowest eigenpair of a sector.
#[derive(Clone, Debug)]
pub struct FciSolution {
    pub energy: f64,
    /// Normalized, with a nonnegative reference coefficient.
    pub vector: DVector<f64>,
    pub space: Arc<DeterminantSpace>,
}

/// Exact diagonalization of a particle/spin sector.
pub fn solve_fci(ham: &HamiltonianSpec, sector: Sector, cap: usize) -> Result<FciSolution> {
    let space = Arc::new(DeterminantSpace::sector(&ham.basis(), sector, cap)?);
    let h = assemble_matrix(&space, ham, cap)?;
    let (vals, vecs) = symmetric_eigen(&h)?;
    let mut vector = vecs.column(0).into_owned();
    if vector[0] < 0.0 {
        vector = -vector;
    }
    Ok(FciSolution { energy: vals[0], vector, space })
}

/// Dense closed-shell sector with its Hamiltonian matrix and the action of
/// every excitation out of the reference.
#[derive(Clone, Debug)]
pub struct CcProblem {
    ham: HamiltonianSpec,
    h: DMatrix<f64>,
    table: ExcitationTable,
    fock_diagonal: Vec<f64>,
}

impl CcProblem {
    pub fn new(ham: &HamiltonianSpec, cap: usize) -> Result<Self> {
        let sector = Sector::closed_shell(ham.n_electrons());
        let space = Arc::new(DeterminantSpace::sector(&ham.basis(), sector, cap)?);
        let h = assemble_matrix(&space, ham, cap)?;
        let table = ExcitationTable::for_space(space)?;
        let f = fock_matrix(ham);
        let fock_diagonal = (0..ham.n_spatial()).map(|p| f[(p, p)]).collect();
        Ok(CcProblem { ham: ham.clone(), h, table, fock_diagonal })
    }

    #[inline]
    pub fn hamiltonian(&self) -> &HamiltonianSpec {
        &self.ham
    }

    #[inline]
    pub fn space(&self) -> &Arc<DeterminantSpace> {
        self.table.space()
    }

    #[inline]
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.h
    }

    #[inline]
    pub fn table(&self) -> &ExcitationTable {
        &self.table
    }

    /// `⟨Φ|H|Φ⟩`.
    pub fn reference_energy(&self) -> f64 {
        self.h[(0, 0)]
    }

    /// Møller–Plesset denominator `Σ f_aa − Σ f_ii`.
    pub fn denominator(&self, sig: &ExcitationSignature) -> f64 {
        sig.particles().map(|a| self.fock_diagonal[a / 2]).sum::<f64>()
            - sig.holes().map(|i| self.fock_diagonal[i / 2]).sum::<f64>()
    }

    /// `exp(−T) H exp(T) |Φ⟩` over the sector.
    pub fn hbar_reference<T: Scalar>(&self, t: &ClusterOperator<T>) -> Result<DVector<T>> {
        let n = self.space().len();
        let mut phi = DVector::<T>::zeros(n);
        phi[0] = T::one();
        let x = self.table.exp_apply(t, 1.0, &phi)?;
        let y = real_mat_vec(&self.h, &x);
        self.table.exp_apply(t, -1.0, &y)
    }

    /// `⟨Φ_μ| exp(−T) H exp(T) |Φ⟩` for `μ` in `manifold`, with
    /// `|Φ_μ⟩ = E_μ|Φ⟩`.
    pub fn residual<T: Scalar>(&self, t: &ClusterOperator<T>, manifold: &Manifold) -> Result<ClusterOperator<T>> {
        let v = self.hbar_reference(t)?;
        self.project(&v, manifold)
    }

    /// `⟨Φ| exp(−T) H exp(T) |Φ⟩`.
    pub fn energy<T: Scalar>(&self, t: &ClusterOperator<T>) -> Result<T> {
        Ok(self.hbar_reference(t)?[0])
    }

    /// Components `⟨Φ_μ|v⟩` of a sector vector.
    pub fn project<T: Scalar>(&self, v: &DVector<T>, manifold: &Manifold) -> Result<ClusterOperator<T>> {
        let reference = self.space().det(0);
        manifold
            .iter()
            .map(|sig| {
                let (d, phase) = sig
                    .apply(reference)
                    .ok_or_else(|| Error::usage("manifold signature does not act on the reference"))?;
                let k = self
                    .space()
                    .index_of(d)
                    .ok_or_else(|| Error::usage("manifold signature leaves the closed-shell sector"))?;
                Ok((*sig, v[k] * T::from_real(phase.value())))
            })
            .collect()
    }

    /// Converges the amplitude equations on `manifold`.
    pub fn solve(
        &self,
        manifold: &Manifold,
        cfg: &SolverConfig,
        initial: Option<&ClusterOperator>,
    ) -> Result<CcSolution> {
        if manifold.is_empty() {
            return Err(Error::usage("excitation manifold is empty"));
        }
        let start = match initial {
            Some(t) => {
                let mut s = ClusterOperator::zeros(manifold);
                s.merge(&t.restricted(manifold));
                s
            }
            None => ClusterOperator::zeros(manifold),
        };
        iterate_amplitudes(
            start,
            cfg,
            |t| {
                let v = self.hbar_reference(t)?;
                Ok((v[0], self.project(&v, manifold)?))
            },
            |s| self.denominator(s),
        )
    }
}

/// `A x` for real `A` and a vector over any scalar field.
pub(crate) fn real_mat_vec<T: Scalar>(a: &DMatrix<f64>, x: &DVector<T>) -> DVector<T> {
    let mut out = DVector::<T>::zeros(a.nrows());
    for (j, &xj) in x.iter().enumerate() {
        if xj.is_zero() {
            continue;
        }
        for i in 0..a.nrows() {
            let aij = a[(i, j)];
            if aij != 0.0 {
                out[i] += xj * T::from_real(aij);
            }
        }
    }
    out
}

/// `solve_cc`: builds the sector problem and converges `manifold`.
pub fn solve_cc(ham: &HamiltonianSpec, manifold: &Manifold, cfg: &SolverConfig, cap: usize) -> Result<CcSolution> {
    cfg.validate()?;
    CcProblem::new(ham, cap)?.solve(manifold, cfg, None)
}

/// `r_μ` on the manifold.
pub fn cc_residual(
    t: &ClusterOperator,
    manifold: &Manifold,
    ham: &HamiltonianSpec,
    cap: usize,
) -> Result<ClusterOperator> {
    CcProblem::new(ham, cap)?.residual(t, manifold)
}

/// Projected energy `⟨Φ|H̄|Φ⟩`.
pub fn cc_energy(t: &ClusterOperator, ham: &HamiltonianSpec, cap: usize) -> Result<f64> {
    CcProblem::new(ham, cap)?.energy(t)
}

/// Quasi-Newton amplitude iteration `t ← t − r/(D + shift)` with optional DIIS.
/// `evaluate` returns the energy and the residual on the amplitudes' support.
pub(crate) fn iterate_amplitudes(
    start: ClusterOperator,
    cfg: &SolverConfig,
    mut evaluate: impl FnMut(&ClusterOperator) -> Result<(f64, ClusterOperator)>,
    denominator: impl Fn(&ExcitationSignature) -> f64,
) -> Result<CcSolution> {
    cfg.validate()?;
    let sigs: Vec<ExcitationSignature> = start.iter().map(|(s, _)| *s).collect();
    let denoms: Vec<f64> = sigs
        .iter()
        .map(|s| {
            let d = denominator(s) + cfg.level_shift;
            if d.abs() < 1e-8 {
                Err(Error::DegenerateDenominator { denominator: d })
            } else {
                Ok(d)
            }
        })
        .collect::<Result<_>>()?;
    let to_vec = |t: &ClusterOperator| DVector::from_iterator(sigs.len(), sigs.iter().map(|s| t.get(s)));
    let from_vec = |v: &DVector<f64>| -> ClusterOperator { sigs.iter().zip(v.iter()).map(|(&s, &x)| (s, x)).collect() };

    let mut t = to_vec(&start);
    let mut history = Vec::new();
    let mut diis_t: VecDeque<DVector<f64>> = VecDeque::new();
    let mut diis_e: VecDeque<DVector<f64>> = VecDeque::new();
    let mut growth = 0usize;
    let mut previous = f64::INFINITY;
    for iteration in 1..=cfg.max_iterations.max(1) {
        let op = from_vec(&t);
        let (energy, r) = evaluate(&op)?;
        let rv = to_vec(&r);
        let norm = rv.norm();
        history.push(HistoryPoint { iteration, energy, residual_norm: norm });
        if !norm.is_finite() || !energy.is_finite() {
            return Err(Error::Divergence { history });
        }
        if norm <= cfg.residual_tolerance {
            return Ok(CcSolution {
                energy,
                amplitudes: op,
                residual_norm: norm,
                iterations: iteration,
                converged: true,
                history,
            });
        }
        if iteration == cfg.max_iterations {
            return Ok(CcSolution {
                energy,
                amplitudes: op,
                residual_norm: norm,
                iterations: iteration,
                converged: false,
                history,
            });
        }
        growth = if norm > previous { growth + 1 } else { 0 };
        previous = norm;
        if growth >= 10 {
            return Err(Error::Divergence { history });
        }
        let step = DVector::from_iterator(sigs.len(), rv.iter().zip(&denoms).map(|(r, d)| -r / d));
        let mut next = &t + &step;
        if cfg.diis_depth > 0 {
            diis_t.push_back(next.clone());
            diis_e.push_back(step);
            if diis_t.len() > cfg.diis_depth {
                diis_t.pop_front();
                diis_e.pop_front();
            }
            if iteration > 2 && diis_t.len() > 1 {
                if let Some(x) = diis_combine(&diis_t, &diis_e) {
                    next = x;
                }
            }
        }
        t = next;
    }
    unreachable!("loop returns on its last iteration")
}

fn diis_combine(ts: &VecDeque<DVector<f64>>, es: &VecDeque<DVector<f64>>) -> Option<DVector<f64>> {
    let m = ts.len();
    let mut b = DMatrix::<f64>::zeros(m + 1, m + 1);
    for i in 0..m {
        for j in 0..m {
            b[(i, j)] = es[i].dot(&es[j]);
        }
        b[(i, m)] = -1.0;
        b[(m, i)] = -1.0;
    }
    let mut rhs = DVector::zeros(m + 1);
    rhs[m] = -1.0;
    let w = least_squares(&b, &rhs).ok()?;
    let mut out = &ts[0] * w[0];
    for i in 1..m {
        out += &ts[i] * w[i];
    }
    out.iter().all(|x| x.is_finite()).then_some(out)
}
