//! Hermitian downfolding with anti-Hermitian cluster operators and the
//! Trotterized unitary flow, with classical minimizers standing in for a
//! variational quantum solver.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::algebra::{multiplicities, CasSpace, SubAlgebra};
use crate::cluster::{ClusterOperator, ExcitationTable, OperatorMatrix};
use crate::fock::{Determinant, ExcitationSignature, Manifold};
use crate::integrals::{for_each_term, DeterminantSpace, HamiltonianSpec, Term, TwoBodySymmetry};
use crate::linalg::{asymmetry, expm, least_squares, symmetric_eigen};
use crate::{Error, Result};

/// `σ = T − T†` for real amplitudes; only the excitation part is stored.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AntiHermitianCluster {
    amplitudes: ClusterOperator,
}

impl AntiHermitianCluster {
    pub fn new(amplitudes: ClusterOperator) -> Self {
        AntiHermitianCluster { amplitudes }
    }

    #[inline]
    pub fn amplitudes(&self) -> &ClusterOperator {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> ClusterOperator {
        self.amplitudes
    }

    /// Antisymmetric matrix image over `space`.
    pub fn matrix(&self, space: &Arc<DeterminantSpace>) -> Result<DMatrix<f64>> {
        let table = ExcitationTable::new(space.clone(), self.amplitudes.support())?;
        let t = table.to_matrix(&self.amplitudes)?;
        Ok(&t - t.transpose())
    }
}

pub fn make_sigma(t: &ClusterOperator) -> AntiHermitianCluster {
    AntiHermitianCluster::new(t.clone())
}

/// `exp(−σ) A exp(σ)` with `exp(−σ) = exp(σ)ᵀ`.
pub fn unitary_transform(a: &OperatorMatrix, sigma: &AntiHermitianCluster) -> Result<OperatorMatrix> {
    let s = sigma.matrix(a.space())?;
    let u = expm(&s)?;
    OperatorMatrix::new(a.space().clone(), u.transpose() * a.entries() * u)
}

/// How the transformed operator was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    ExactUnitary,
    /// Nested commutators `[..[A, σ], .. σ]` up to this order.
    BchTruncated(usize),
}

/// Symmetric downfolded operator over a CAS.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianEffective {
    pub matrix: DMatrix<f64>,
    pub cas: CasSpace,
    pub provenance: Provenance,
}

impl HermitianEffective {
    pub fn generator(&self) -> &SubAlgebra {
        self.cas.generator()
    }

    /// Largest `|M − Mᵀ|` entry.
    pub fn symmetry_defect(&self) -> f64 {
        asymmetry(&self.matrix)
    }

    /// Eigenvalues, ascending.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        Ok(symmetric_eigen(&self.matrix)?.0)
    }
}

fn check_external_sigma(sigma: &AntiHermitianCluster, h: &SubAlgebra) -> Result<()> {
    let active = h.active_mask();
    if let Some((s, _)) = sigma.amplitudes.iter().find(|(s, _)| (s.hole_mask() | s.particle_mask()) & !active == 0) {
        return Err(Error::usage(format!("external σ amplitude {s} carries only active indices of {h}")));
    }
    Ok(())
}

fn restrict_to_cas(
    m: &DMatrix<f64>,
    space: &DeterminantSpace,
    h: &SubAlgebra,
    cap: usize,
) -> Result<(DMatrix<f64>, CasSpace)> {
    let cas = h.generate_cas(cap)?;
    let idx = cas.indices_in(space)?;
    let n = idx.len();
    Ok((DMatrix::from_fn(n, n, |i, j| m[(idx[i], idx[j])]), cas))
}

fn checked(
    matrix: DMatrix<f64>,
    cas: CasSpace,
    provenance: Provenance,
    reference: &DMatrix<f64>,
) -> Result<HermitianEffective> {
    let out = HermitianEffective { matrix, cas, provenance };
    let scale = reference.amax().max(1.0);
    let defect = out.symmetry_defect();
    if defect > 1e-10 * scale {
        return Err(Error::numeric(format!("downfolded operator lost symmetry (defect {defect:e})")));
    }
    Ok(out)
}

/// CAS restriction of `exp(−σ_ext) A exp(σ_ext)`.
pub fn downfold(
    a: &OperatorMatrix,
    sigma_ext: &AntiHermitianCluster,
    h: &SubAlgebra,
    cap: usize,
) -> Result<HermitianEffective> {
    check_external_sigma(sigma_ext, h)?;
    let transformed = unitary_transform(a, sigma_ext)?;
    let (m, cas) = restrict_to_cas(transformed.entries(), a.space(), h, cap)?;
    checked(m, cas, Provenance::ExactUnitary, a.entries())
}

/// [`downfold`] with the similarity transform expanded in nested commutators
/// through `order`.
pub fn downfold_bch(
    a: &OperatorMatrix,
    sigma_ext: &AntiHermitianCluster,
    h: &SubAlgebra,
    order: usize,
    cap: usize,
) -> Result<HermitianEffective> {
    check_external_sigma(sigma_ext, h)?;
    let s = sigma_ext.matrix(a.space())?;
    let mut total = a.entries().clone();
    let mut term = a.entries().clone();
    for k in 1..=order {
        term = (&term * &s - &s * &term) / k as f64;
        total += &term;
    }
    let (m, cas) = restrict_to_cas(&total, a.space(), h, cap)?;
    checked(m, cas, Provenance::BchTruncated(order), a.entries())
}

/// Signature value adopted from the first listed sub-algebra containing it.
fn adopted_values(subalgebras: &[SubAlgebra], sigmas: &[AntiHermitianCluster]) -> BTreeMap<ExcitationSignature, f64> {
    let mut out = BTreeMap::new();
    for (h, sigma) in subalgebras.iter().zip(sigmas) {
        for (s, &v) in sigma.amplitudes.iter() {
            if h.contains(s) {
                out.entry(*s).or_insert(v);
            }
        }
    }
    out
}

/// `X` such that `Σ σ_int(h_i) + X` counts every shared excitation once.
pub fn overcount_corrector(
    subalgebras: &[SubAlgebra],
    sigmas: &[AntiHermitianCluster],
) -> Result<AntiHermitianCluster> {
    if subalgebras.len() != sigmas.len() {
        return Err(Error::usage("one σ operator per sub-algebra is required"));
    }
    let adopted = adopted_values(subalgebras, sigmas);
    let mut x = ClusterOperator::new();
    for (s, m) in multiplicities(subalgebras) {
        if m > 1 {
            let v = adopted.get(&s).copied().unwrap_or(0.0);
            if v != 0.0 {
                x.insert(s, -((m - 1) as f64) * v);
            }
        }
    }
    Ok(AntiHermitianCluster::new(x))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Optimizer {
    /// Diagonalize the symmetrized block and fit the parameters to the
    /// ground eigenvector.
    ExactDiagFallback,
    /// Quasi-Newton descent on the energy; `step` scales the first move.
    AmplitudeDescent { step: f64, max_iters: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrotterFlowConfig {
    pub subalgebras: Vec<SubAlgebra>,
    pub trotter_n: usize,
    pub optimizer: Optimizer,
    /// Convergence threshold for energies, amplitude changes and gradients.
    pub tolerance: f64,
    pub max_cycles: usize,
}

impl TrotterFlowConfig {
    pub fn new(subalgebras: Vec<SubAlgebra>, trotter_n: usize) -> Self {
        TrotterFlowConfig {
            subalgebras,
            trotter_n,
            optimizer: Optimizer::AmplitudeDescent { step: 1.0, max_iters: 500 },
            tolerance: 1e-8,
            max_cycles: 200,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.subalgebras.is_empty() {
            return Err(Error::usage("the DUCC flow needs at least one sub-algebra"));
        }
        if self.trotter_n == 0 {
            return Err(Error::usage("trotter_n must be at least 1"));
        }
        if !(self.tolerance > 0.0) || self.max_cycles == 0 {
            return Err(Error::usage("tolerance must be positive and max_cycles at least 1"));
        }
        if let Optimizer::AmplitudeDescent { step, max_iters } = self.optimizer {
            if !(step > 0.0) || max_iters == 0 {
                return Err(Error::usage("descent step must be positive and max_iters at least 1"));
            }
        }
        Ok(())
    }
}

/// `Γ_i` together with the orthogonal `G_i` it was built from.
#[derive(Clone, Debug, PartialEq)]
pub struct TrotterGamma {
    /// `(P+Q_int) Gᵀ A G (P+Q_int)`; not symmetric in general.
    pub matrix: DMatrix<f64>,
    /// `G_i` over the space of `A`.
    pub g: DMatrix<f64>,
    pub cas: CasSpace,
}

/// `G_i = (e^{R/N} e^{σ_i/N})^{N−1} e^{R/N}` with `R = Σ_{j≠i} σ_j + X`, and
/// the CAS projection of `G_iᵀ A G_i`.
pub fn build_gamma(
    a: &OperatorMatrix,
    subalgebras: &[SubAlgebra],
    sigmas: &[AntiHermitianCluster],
    i: usize,
    trotter_n: usize,
    cap: usize,
) -> Result<TrotterGamma> {
    if i >= subalgebras.len() || subalgebras.len() != sigmas.len() {
        return Err(Error::usage("block index or σ list does not match the sub-algebras"));
    }
    if trotter_n == 0 {
        return Err(Error::usage("trotter_n must be at least 1"));
    }
    let x = overcount_corrector(subalgebras, sigmas)?;
    let mut r = x.into_amplitudes();
    for (j, sigma) in sigmas.iter().enumerate() {
        if j != i {
            for (&s, &v) in sigma.amplitudes.iter() {
                r.insert(s, r.get(&s) + v);
            }
        }
    }
    let space = a.space();
    let n = trotter_n as f64;
    let er = expm(&(AntiHermitianCluster::new(r).matrix(space)? / n))?;
    let es = expm(&(sigmas[i].matrix(space)? / n))?;
    let step = &er * &es;
    let mut g = DMatrix::identity(space.len(), space.len());
    for _ in 1..trotter_n {
        g = &g * &step;
    }
    g = &g * &er;
    let full = g.transpose() * a.entries() * &g;
    let (matrix, cas) = restrict_to_cas(&full, space, &subalgebras[i], cap)?;
    Ok(TrotterGamma { matrix, g, cas })
}

/// Outcome of one block minimization.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockMinimum {
    pub energy: f64,
    /// Optimized free parameters.
    pub theta_x: ClusterOperator,
    pub gradient_norm: f64,
    pub converged: bool,
}

/// Unitary ansatz `exp(σ(θ)/N)|Φ⟩` restricted to a CAS.
struct Ansatz {
    generators: Vec<DMatrix<f64>>,
    fixed: DMatrix<f64>,
    scale: f64,
}

impl Ansatz {
    fn new(cas: &CasSpace, frozen: &ClusterOperator, free: &[ExcitationSignature], trotter_n: usize) -> Result<Self> {
        let space = Arc::new(cas.space().clone());
        let table = ExcitationTable::new(space.clone(), free.iter().copied().chain(frozen.support()))?;
        let generators = free
            .iter()
            .map(|&s| {
                let k = table.to_matrix(&ClusterOperator::from_iter([(s, 1.0)]))?;
                Ok(&k - k.transpose())
            })
            .collect::<Result<Vec<_>>>()?;
        let f = table.to_matrix(frozen)?;
        Ok(Ansatz { generators, fixed: &f - f.transpose(), scale: 1.0 / trotter_n as f64 })
    }

    fn exponent(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let mut s = self.fixed.clone();
        for (k, g) in self.generators.iter().enumerate() {
            s += g * theta[k];
        }
        s * self.scale
    }

    fn state(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        let u = expm(&self.exponent(theta))?;
        Ok(u.column(0).into_owned())
    }

    /// State and its derivatives from the block-triangular exponential
    /// `exp([[S, K], [0, S]])`, whose upper-right block is the Fréchet
    /// derivative of `exp` at `S` along `K`.
    fn state_and_jacobian(&self, theta: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let s = self.exponent(theta);
        let n = s.nrows();
        let mut jac = DMatrix::zeros(n, self.generators.len());
        let mut psi = None;
        let mut big = DMatrix::zeros(2 * n, 2 * n);
        big.view_mut((0, 0), (n, n)).copy_from(&s);
        big.view_mut((n, n), (n, n)).copy_from(&s);
        for (k, g) in self.generators.iter().enumerate() {
            big.view_mut((0, n), (n, n)).copy_from(&(g * self.scale));
            let e = expm(&big)?;
            jac.set_column(k, &e.view((0, n), (n, n)).column(0));
            if psi.is_none() {
                psi = Some(e.view((0, 0), (n, n)).column(0).into_owned());
            }
        }
        let psi = match psi {
            Some(p) => p,
            None => self.state(theta)?,
        };
        Ok((psi, jac))
    }
}

/// Quasi-Newton minimization with backtracking; returns the minimizer, the
/// value, the final gradient norm and whether `tol` was reached.
fn bfgs(
    mut f: impl FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
    x0: DVector<f64>,
    step: f64,
    max_iters: usize,
    tol: f64,
) -> Result<(DVector<f64>, f64, f64, bool)> {
    let n = x0.len();
    let mut x = x0;
    let (mut fx, mut g) = f(&x)?;
    if n == 0 {
        return Ok((x, fx, 0.0, true));
    }
    let mut hinv = DMatrix::<f64>::identity(n, n) * step;
    for _ in 0..max_iters {
        let gnorm = g.norm();
        if gnorm <= tol {
            return Ok((x, fx, gnorm, true));
        }
        let mut d = -(&hinv * &g);
        if d.dot(&g) >= 0.0 {
            hinv = DMatrix::identity(n, n) * step;
            d = -(&g * step);
        }
        let slope = d.dot(&g);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = &x + &d * alpha;
            let (ft, gt) = f(&trial)?;
            // near the minimum the energy is flat to roundoff; fall back on
            // the gradient norm
            let flat = (ft - fx).abs() <= 1e-13 * fx.abs().max(1.0) && gt.norm() < gnorm;
            if ft.is_finite() && (ft <= fx + 1e-4 * alpha * slope || flat) {
                accepted = Some((trial, ft, gt));
                break;
            }
            alpha *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            let gnorm = g.norm();
            return Ok((x, fx, gnorm, gnorm <= tol));
        };
        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-16 {
            let rho = 1.0 / sy;
            let id = DMatrix::<f64>::identity(n, n);
            let left = &id - (&s * y.transpose()) * rho;
            let right = &id - (&y * s.transpose()) * rho;
            hinv = &left * &hinv * &right + (&s * s.transpose()) * rho;
        }
        x = xn;
        fx = fn_;
        g = gn;
    }
    let gnorm = g.norm();
    Ok((x, fx, gnorm, gnorm <= tol))
}

/// Minimizes `⟨Φ(θ)|Γ_sym|Φ(θ)⟩`, `|Φ(θ)⟩ = exp(σ(θ)/N)|Φ⟩`, over the
/// internal excitations of the CAS generator that are not in `theta_cp`.
pub fn minimize_block(
    gamma: &DMatrix<f64>,
    cas: &CasSpace,
    theta_cp: &ClusterOperator,
    trotter_n: usize,
    optimizer: Optimizer,
    tolerance: f64,
) -> Result<BlockMinimum> {
    let h = cas.generator();
    if gamma.shape() != (cas.len(), cas.len()) {
        return Err(Error::usage("Γ does not match the CAS dimension"));
    }
    if let Some((s, _)) = theta_cp.iter().find(|(s, _)| !h.contains(s)) {
        return Err(Error::usage(format!("frozen parameter {s} is not internal to {h}")));
    }
    let free: Vec<ExcitationSignature> = h.internal_manifold().into_iter().filter(|s| !theta_cp.contains(s)).collect();
    let sym = (gamma + gamma.transpose()) * 0.5;
    let ansatz = Ansatz::new(cas, theta_cp, &free, trotter_n)?;
    let energy_of = |theta: &DVector<f64>| -> Result<(f64, DVector<f64>)> {
        let (psi, jac) = ansatz.state_and_jacobian(theta)?;
        let hp = &sym * &psi;
        Ok((psi.dot(&hp), jac.transpose() * hp * 2.0))
    };
    let x0 = DVector::zeros(free.len());
    let (theta, converged) = match optimizer {
        Optimizer::AmplitudeDescent { step, max_iters } => {
            let (x, _, _, ok) = bfgs(energy_of, x0, step, max_iters, tolerance)?;
            (x, ok)
        }
        Optimizer::ExactDiagFallback => {
            let (_, vecs) = symmetric_eigen(&sym)?;
            let mut v = vecs.column(0).into_owned();
            if v[0] < 0.0 {
                v = -v;
            }
            let overlap = |theta: &DVector<f64>| -> Result<(f64, DVector<f64>)> {
                let (psi, jac) = ansatz.state_and_jacobian(theta)?;
                let o = v.dot(&psi);
                Ok((1.0 - o * o, jac.transpose() * &v * (-2.0 * o)))
            };
            let (x, defect, _, ok) = bfgs(overlap, x0, 1.0, 1000, tolerance * 1e-2)?;
            (x, ok || defect <= tolerance)
        }
    };
    let (energy, grad) = energy_of(&theta)?;
    let theta_x = free.iter().zip(theta.iter()).map(|(&s, &v)| (s, v)).collect();
    Ok(BlockMinimum { energy, theta_x, gradient_norm: grad.norm(), converged })
}

/// One block visit of the unitary flow.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DuccBlockRecord {
    pub cycle: usize,
    pub block: usize,
    pub energy: f64,
    pub gradient_norm: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DuccFlowOutcome {
    pub block_energies: Vec<f64>,
    pub sigmas: Vec<AntiHermitianCluster>,
    /// `⟨Φ(θ₁)|Γ₁|Φ(θ₁)⟩` at the final parameters.
    pub energy: f64,
    pub converged: bool,
    pub cycles: usize,
    pub history: Vec<DuccBlockRecord>,
}

impl DuccFlowOutcome {
    /// Spread of the block energies; reported only, blocks need not agree.
    pub fn energy_spread(&self) -> f64 {
        let lo = self.block_energies.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.block_energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    }
}

fn ansatz_energy(gamma: &DMatrix<f64>, cas: &CasSpace, sigma: &AntiHermitianCluster, trotter_n: usize) -> Result<f64> {
    let ansatz = Ansatz::new(cas, sigma.amplitudes(), &[], trotter_n)?;
    let psi = ansatz.state(&DVector::zeros(0))?;
    Ok(psi.dot(&(gamma * &psi)))
}

/// Cycles of `build_gamma` + `minimize_block` in the configured order.
pub fn run_ducc_flow(a: &OperatorMatrix, cfg: &TrotterFlowConfig, cap: usize) -> Result<DuccFlowOutcome> {
    cfg.validate()?;
    let subs = &cfg.subalgebras;
    let m = subs.len();
    let mut sigmas: Vec<AntiHermitianCluster> =
        subs.iter().map(|h| AntiHermitianCluster::new(ClusterOperator::zeros(&h.internal_manifold()))).collect();
    let mut energies = vec![f64::NAN; m];
    let mut history = Vec::new();
    let mut converged = false;
    let mut cycles = 0;
    for cycle in 1..=cfg.max_cycles {
        cycles = cycle;
        let pc = sigmas.clone();
        let previous = energies.clone();
        let mut pool: BTreeMap<ExcitationSignature, f64> = BTreeMap::new();
        for i in 0..m {
            let gamma = build_gamma(a, subs, &pc, i, cfg.trotter_n, cap).map_err(|e| e.in_block(i))?;
            let cp: ClusterOperator = pool.iter().filter(|(s, _)| subs[i].contains(s)).map(|(&s, &v)| (s, v)).collect();
            let min = minimize_block(&gamma.matrix, &gamma.cas, &cp, cfg.trotter_n, cfg.optimizer, cfg.tolerance)
                .map_err(|e| e.in_block(i))?;
            if !min.converged {
                log::warn!("DUCC block {i} stalled with gradient norm {:e}", min.gradient_norm);
            }
            // G_i already carries N−1 factors of the previous σ_i; the
            // minimizer only fixes the last one, so it is averaged in as one
            // factor out of N. Fixed points are unchanged.
            let n = cfg.trotter_n as f64;
            let update: ClusterOperator = min
                .theta_x
                .iter()
                .map(|(&s, &v)| (s, pc[i].amplitudes.get(&s) + (v - pc[i].amplitudes.get(&s)) / n))
                .collect();
            let mut sigma = cp.clone();
            sigma.merge(&update);
            for (&s, &v) in update.iter() {
                pool.insert(s, v);
            }
            sigmas[i] = AntiHermitianCluster::new(sigma);
            energies[i] = min.energy;
            history.push(DuccBlockRecord {
                cycle,
                block: i,
                energy: min.energy,
                gradient_norm: min.gradient_norm,
                converged: min.converged,
            });
        }
        let dt = sigmas.iter().zip(&pc).map(|(a, b)| a.amplitudes.max_abs_diff(&b.amplitudes)).fold(0.0, f64::max);
        let de = if cycle == 1 {
            f64::INFINITY
        } else {
            energies.iter().zip(&previous).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        };
        log::debug!("DUCC cycle {cycle}: E1 = {:.12}, dE = {de:e}, dθ = {dt:e}", energies[0]);
        if dt <= cfg.tolerance && (de <= cfg.tolerance || cycle == 1) {
            converged = true;
            break;
        }
    }
    let gamma = build_gamma(a, subs, &sigmas, 0, cfg.trotter_n, cap).map_err(|e| e.in_block(0))?;
    let sym = (&gamma.matrix + gamma.matrix.transpose()) * 0.5;
    let energy = ansatz_energy(&sym, &gamma.cas, &sigmas[0], cfg.trotter_n)?;
    Ok(DuccFlowOutcome { block_energies: energies, sigmas, energy, converged, cycles, history })
}

/// Qubit counts: `2(x_i + y_i)` per block, their maximum, and the count for
/// the whole basis.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QubitEstimate {
    pub per_block: Vec<usize>,
    pub max: usize,
    pub full: usize,
}

pub fn qubit_estimate(subalgebras: &[SubAlgebra]) -> QubitEstimate {
    let per_block: Vec<usize> = subalgebras.iter().map(|h| 2 * (h.x() + h.y())).collect();
    let max = per_block.iter().copied().max().unwrap_or(0);
    let full = subalgebras.first().map_or(0, |h| h.basis().n_spin_orbitals());
    QubitEstimate { per_block, max, full }
}

/// Second-quantized active-space operator fitted to a downfolded matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ActiveSpaceOperator {
    /// Active spatial orbitals (original labels): occupied first, then virtual.
    pub orbitals: Vec<usize>,
    /// Scalar, one- and two-body coefficients over the active orbitals.
    pub hamiltonian: HamiltonianSpec,
    /// Largest deviation between the fitted operator and the matrix.
    pub residual: f64,
}

/// Least-squares scalar/one-/two-body operator over the active orbitals of the
/// CAS generator whose Slater–Condon matrix reproduces `heff`. Terms beyond
/// two-body show up in `residual`.
pub fn extract_active_operator(heff: &HermitianEffective) -> Result<ActiveSpaceOperator> {
    let h = heff.generator();
    let mut orbitals: Vec<usize> = h.occupied().to_vec();
    orbitals.extend(h.virtual_orbitals());
    let n = orbitals.len();
    let mut spin_map = [usize::MAX; 64];
    for (k, &p) in orbitals.iter().enumerate() {
        spin_map[2 * p] = 2 * k;
        spin_map[2 * p + 1] = 2 * k + 1;
    }
    let reduce = |d: Determinant| -> Determinant {
        let mut bits = 0u64;
        for p in d.occupied() {
            if spin_map[p] != usize::MAX {
                bits |= 1 << spin_map[p];
            }
        }
        Determinant::from_bits(bits)
    };
    let sym = TwoBodySymmetry::FourFold;
    let mut columns: BTreeMap<Term, usize> = BTreeMap::new();
    let label = |t: Term| -> Term {
        match t {
            Term::Core => Term::Core,
            Term::One(p, q) => Term::One(p.min(q), p.max(q)),
            Term::Two(p, q, r, s) => {
                let [a, b, c, d] = sym.canonical(p, q, r, s);
                Term::Two(a, b, c, d)
            }
        }
    };
    let dets: Vec<Determinant> = heff.cas.space().dets().iter().map(|&d| reduce(d)).collect();
    let mut rows: Vec<Vec<(Term, f64)>> = Vec::new();
    let mut targets = Vec::new();
    for i in 0..dets.len() {
        for j in 0..=i {
            let mut row = Vec::new();
            for_each_term(dets[i], dets[j], |t, c| row.push((label(t), c)));
            for &(t, _) in &row {
                let next = columns.len();
                columns.entry(t).or_insert(next);
            }
            rows.push(row);
            targets.push(0.5 * (heff.matrix[(i, j)] + heff.matrix[(j, i)]));
        }
    }
    let mut design = DMatrix::zeros(rows.len(), columns.len());
    for (r, row) in rows.iter().enumerate() {
        for &(t, c) in row {
            design[(r, columns[&t])] += c;
        }
    }
    let b = DVector::from_vec(targets);
    let x = least_squares(&design, &b)?;
    let residual = (&design * &x - &b).amax();
    let mut out = HamiltonianSpec::new(n, 2 * h.x(), sym)?;
    for (&t, &k) in &columns {
        match t {
            Term::Core => out.set_core_energy(x[k])?,
            Term::One(p, q) => out.set_one_body(p, q, x[k])?,
            Term::Two(p, q, r, s) => out.set_two_body(p, q, r, s, x[k])?,
        }
    }
    Ok(ActiveSpaceOperator { orbitals, hamiltonian: out, residual })
}

/// Internal manifolds of all blocks.
pub fn parameter_manifold(subalgebras: &[SubAlgebra]) -> Manifold {
    crate::algebra::union_manifold(subalgebras)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{full_algebra, VirtualSelection};
    use crate::cc::{solve_cc, solve_fci, SolverConfig};
    use crate::fock::{enumerate_manifold, SpinFilter};
    use crate::integrals::{assemble_matrix, build_model, canonicalize, ModelSpec, ScfConfig, Sector};

    fn hubbard(sites: usize, u: f64, n: usize) -> HamiltonianSpec {
        let h =
            build_model(&ModelSpec::HubbardChain { sites, hopping: 1.0, onsite: u, periodic: false, n_electrons: n })
                .unwrap();
        canonicalize(&h, &ScfConfig::default()).unwrap().hamiltonian
    }

    fn sector_operator(ham: &HamiltonianSpec) -> OperatorMatrix {
        let space =
            Arc::new(DeterminantSpace::sector(&ham.basis(), Sector::closed_shell(ham.n_electrons()), 10_000).unwrap());
        let m = assemble_matrix(&space, ham, 10_000).unwrap();
        OperatorMatrix::new(space, m).unwrap()
    }

    fn random_sigma(ham: &HamiltonianSpec, seed: u64) -> AntiHermitianCluster {
        let b = ham.basis();
        let manifold = enumerate_manifold(&b, 2, b.occupied_mask(), b.virtual_mask(), SpinFilter::ConserveSz).unwrap();
        let mut state = seed;
        let t = manifold
            .into_iter()
            .map(|s| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s, ((state >> 33) as f64 / (1u64 << 31) as f64 - 0.5) * 0.4)
            })
            .collect();
        make_sigma(&t)
    }

    #[test]
    fn sigma_is_antisymmetric_and_exponential_orthogonal() {
        let ham = hubbard(3, 2.0, 4);
        let a = sector_operator(&ham);
        let sigma = random_sigma(&ham, 7);
        let s = sigma.matrix(a.space()).unwrap();
        assert_eq!(s.clone() + s.transpose(), DMatrix::zeros(s.nrows(), s.ncols()));
        let u = expm(&s).unwrap();
        assert!((u.transpose() * &u - DMatrix::identity(u.nrows(), u.ncols())).amax() < 1e-12);
        assert!(make_sigma(&ClusterOperator::new()).matrix(a.space()).unwrap().amax() == 0.0);
    }

    #[test]
    fn unitary_transform_preserves_spectrum() {
        let ham = hubbard(3, 2.0, 4);
        let a = sector_operator(&ham);
        let out = unitary_transform(&a, &random_sigma(&ham, 3)).unwrap();
        assert!(asymmetry(out.entries()) < 1e-10);
        let (v0, _) = symmetric_eigen(a.entries()).unwrap();
        let (v1, _) = symmetric_eigen(&((out.entries() + out.entries().transpose()) * 0.5)).unwrap();
        for (x, y) in v0.iter().zip(&v1) {
            assert!((x - y).abs() < 1e-10);
        }
        let same = unitary_transform(&a, &AntiHermitianCluster::default()).unwrap();
        assert_eq!(same.entries(), a.entries());
    }

    #[test]
    fn zero_sigma_downfold_is_cas_ci() {
        let ham = hubbard(4, 3.0, 4);
        let a = sector_operator(&ham);
        let h = SubAlgebra::new(ham.basis(), &[1], VirtualSelection::Set(vec![2])).unwrap();
        let d = downfold(&a, &AntiHermitianCluster::default(), &h, 1000).unwrap();
        let direct = assemble_matrix(d.cas.space(), &ham, 1000).unwrap();
        assert!((&d.matrix - direct).amax() < 1e-12);
        let full = full_algebra(ham.basis()).unwrap();
        let df = downfold(&a, &AntiHermitianCluster::default(), &full, 1000).unwrap();
        let fci = solve_fci(&ham, Sector::closed_shell(4), 1000).unwrap();
        assert!((df.eigenvalues().unwrap()[0] - fci.energy).abs() < 1e-12);
    }

    #[test]
    fn external_sigma_downfold_is_symmetric() {
        let ham = hubbard(4, 2.0, 4);
        let a = sector_operator(&ham);
        let b = ham.basis();
        let manifold = enumerate_manifold(&b, 2, b.occupied_mask(), b.virtual_mask(), SpinFilter::ConserveSz).unwrap();
        let cc = solve_cc(&ham, &manifold, &SolverConfig::default(), 1000).unwrap();
        let h = SubAlgebra::new(b, &[1], VirtualSelection::Set(vec![2])).unwrap();
        let ext = cc.amplitudes.filtered(|s| !h.contains(s));
        let d = downfold(&a, &make_sigma(&ext), &h, 1000).unwrap();
        assert!(d.symmetry_defect() < 1e-10);
        let bad = make_sigma(&cc.amplitudes.filtered(|s| h.contains(s)));
        assert!(downfold(&a, &bad, &h, 1000).is_err());
        let bch = downfold_bch(&a, &make_sigma(&ext), &h, 12, 1000).unwrap();
        assert!((&bch.matrix - &d.matrix).amax() < 1e-8);
    }

    #[test]
    fn overcounting_examples() {
        let ham = hubbard(4, 2.0, 6);
        let b = ham.basis();
        let h1 = SubAlgebra::new(b, &[0, 1], VirtualSelection::All).unwrap();
        let h2 = SubAlgebra::new(b, &[0, 2], VirtualSelection::All).unwrap();
        let h3 = SubAlgebra::new(b, &[0], VirtualSelection::All).unwrap();
        let d1 = SubAlgebra::new(b, &[1], VirtualSelection::All).unwrap();
        let d2 = SubAlgebra::new(b, &[2], VirtualSelection::All).unwrap();
        let v = |h: &SubAlgebra| make_sigma(&h.internal_manifold().into_iter().map(|s| (s, 0.1)).collect());
        let x = overcount_corrector(&[d1.clone(), d2.clone()], &[v(&d1), v(&d2)]).unwrap();
        assert!(x.amplitudes().is_empty());
        let x = overcount_corrector(&[h3.clone(), h3.clone()], &[v(&h3), v(&h3)]).unwrap();
        assert_eq!(x.amplitudes(), &v(&h3).amplitudes().scaled(-1.0));
        let x = overcount_corrector(&[h1.clone(), h2.clone(), h3.clone()], &[v(&h1), v(&h2), v(&h3)]).unwrap();
        let shared = ExcitationSignature::new(&[0], &[6]).unwrap();
        assert!((x.amplitudes().get(&shared) + 0.2).abs() < 1e-15);
    }

    #[test]
    fn gamma_reductions() {
        let ham = hubbard(3, 2.0, 2);
        let a = sector_operator(&ham);
        let full = full_algebra(ham.basis()).unwrap();
        let zero = vec![AntiHermitianCluster::default()];
        let g = build_gamma(&a, std::slice::from_ref(&full), &zero, 0, 1, 1000).unwrap();
        assert_eq!(g.g, DMatrix::identity(a.space().len(), a.space().len()));
        let b = ham.basis();
        let h1 = SubAlgebra::new(b, &[0], VirtualSelection::Set(vec![1])).unwrap();
        let h2 = SubAlgebra::new(b, &[0], VirtualSelection::Set(vec![2])).unwrap();
        let zeros = vec![AntiHermitianCluster::default(), AntiHermitianCluster::default()];
        for n in [1, 2, 5] {
            let g = build_gamma(&a, &[h1.clone(), h2.clone()], &zeros, 1, n, 1000).unwrap();
            let direct = assemble_matrix(g.cas.space(), &ham, 1000).unwrap();
            assert!((&g.matrix - direct).amax() < 1e-14);
        }
        let sig = |h: &SubAlgebra| make_sigma(&h.internal_manifold().into_iter().map(|s| (s, 0.15)).collect());
        for n in [1, 2, 4, 8] {
            let g = build_gamma(&a, &[h1.clone(), h2.clone()], &[sig(&h1), sig(&h2)], 0, n, 1000).unwrap();
            let id = DMatrix::identity(g.g.nrows(), g.g.ncols());
            assert!((g.g.transpose() * &g.g - id).amax() < 1e-12);
        }
    }

    #[test]
    fn minimizer_reaches_cas_ground_state() {
        let ham = hubbard(3, 3.0, 2);
        let a = sector_operator(&ham);
        let h = SubAlgebra::new(ham.basis(), &[0], VirtualSelection::Set(vec![1])).unwrap();
        let d = downfold(&a, &AntiHermitianCluster::default(), &h, 1000).unwrap();
        let e0 = d.eigenvalues().unwrap()[0];
        for opt in [Optimizer::AmplitudeDescent { step: 1.0, max_iters: 200 }, Optimizer::ExactDiagFallback] {
            let m = minimize_block(&d.matrix, &d.cas, &ClusterOperator::new(), 1, opt, 1e-9).unwrap();
            assert!(m.converged, "{opt:?} {m:?}");
            assert!((m.energy - e0).abs() < 1e-9, "{opt:?}: {} vs {e0}", m.energy);
        }
        // nothing free: energy at the frozen point
        let frozen: ClusterOperator = h.internal_manifold().into_iter().map(|s| (s, 0.05)).collect();
        let m = minimize_block(&d.matrix, &d.cas, &frozen, 1, Optimizer::ExactDiagFallback, 1e-9).unwrap();
        assert!(m.theta_x.is_empty());
        let expected = ansatz_energy(&d.matrix, &d.cas, &make_sigma(&frozen), 1).unwrap();
        assert!((m.energy - expected).abs() < 1e-14);
    }

    #[test]
    fn diagonal_gamma_keeps_reference() {
        let basis = crate::fock::SpinOrbitalBasis::new(2, 2).unwrap();
        let h = full_algebra(basis).unwrap();
        let cas = h.generate_cas(10).unwrap();
        let gamma = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, 0.5, 0.5, 2.0]));
        let m = minimize_block(
            &gamma,
            &cas,
            &ClusterOperator::new(),
            1,
            Optimizer::AmplitudeDescent { step: 1.0, max_iters: 50 },
            1e-10,
        )
        .unwrap();
        assert_eq!(m.energy, -1.0);
        assert!(m.theta_x.norm_inf() == 0.0);
    }

    #[test]
    fn single_full_block_flow_is_exact() {
        let ham = hubbard(3, 2.0, 2);
        let a = sector_operator(&ham);
        let cfg = TrotterFlowConfig::new(vec![full_algebra(ham.basis()).unwrap()], 1);
        let out = run_ducc_flow(&a, &cfg, 1000).unwrap();
        let (vals, _) = symmetric_eigen(a.entries()).unwrap();
        assert!(out.converged);
        assert!((out.energy - vals[0]).abs() < 1e-9);
    }

    #[test]
    fn trotterized_flow_settles() {
        let ham = hubbard(3, 2.0, 2);
        let a = sector_operator(&ham);
        let b = ham.basis();
        let blocks = vec![
            SubAlgebra::new(b, &[0], VirtualSelection::Set(vec![1])).unwrap(),
            SubAlgebra::new(b, &[0], VirtualSelection::Set(vec![2])).unwrap(),
        ];
        let fci = solve_fci(&ham, Sector::closed_shell(2), 100).unwrap().energy;
        for n in [2, 4] {
            let out = run_ducc_flow(&a, &TrotterFlowConfig::new(blocks.clone(), n), 100).unwrap();
            assert!(out.converged, "N = {n}");
            assert!(out.energy >= fci - 1e-12);
            assert!(out.energy - fci < 1e-5, "N = {n}: {}", out.energy - fci);
        }
    }

    #[test]
    fn uncoupled_flow_stays_at_reference() {
        let ham = hubbard(3, 0.0, 2);
        let a = sector_operator(&ham);
        let b = ham.basis();
        let h1 = SubAlgebra::new(b, &[0], VirtualSelection::Set(vec![1])).unwrap();
        let h2 = SubAlgebra::new(b, &[0], VirtualSelection::Set(vec![2])).unwrap();
        let cfg = TrotterFlowConfig::new(vec![h1, h2], 2);
        let out = run_ducc_flow(&a, &cfg, 1000).unwrap();
        assert!(out.converged);
        assert_eq!(out.cycles, 1);
        assert!((out.energy - a.entries()[(0, 0)]).abs() < 1e-12);
        assert!(out.sigmas.iter().all(|s| s.amplitudes().norm_inf() == 0.0));
    }

    #[test]
    fn qubit_counts() {
        let b = crate::fock::SpinOrbitalBasis::new(6, 4).unwrap();
        let pair = SubAlgebra::new(b, &[1], VirtualSelection::Set(vec![2])).unwrap();
        let big = SubAlgebra::new(b, &[0, 1], VirtualSelection::Set(vec![2, 3])).unwrap();
        let q = qubit_estimate(&[pair, big]);
        assert_eq!(q.per_block, vec![4, 8]);
        assert_eq!(q.max, 8);
        assert_eq!(q.full, 12);
        assert!(q.max < q.full);
        assert_eq!(qubit_estimate(&[]), QubitEstimate { per_block: vec![], max: 0, full: 0 });
    }

    #[test]
    fn bare_active_operator_fits_exactly() {
        let ham = hubbard(4, 2.5, 4);
        let a = sector_operator(&ham);
        let h = SubAlgebra::new(ham.basis(), &[1], VirtualSelection::Set(vec![2, 3])).unwrap();
        let d = downfold(&a, &AntiHermitianCluster::default(), &h, 1000).unwrap();
        let op = extract_active_operator(&d).unwrap();
        assert!(op.residual < 1e-10);
        assert_eq!(op.orbitals, vec![1, 2, 3]);
        let fci = solve_fci(&op.hamiltonian, Sector::closed_shell(2), 1000).unwrap();
        assert!((fci.energy - d.eigenvalues().unwrap()[0]).abs() < 1e-10);
    }
}
