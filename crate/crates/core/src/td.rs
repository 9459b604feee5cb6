//! Real-time propagation of cluster amplitudes (`ħ = 1`): the global
//! equations `i ṫ_μ = ⟨Φ_μ|H̄|Φ⟩`, `i Ṫ₀ = ⟨Φ|H̄|Φ⟩`, and the same dynamics
//! assembled from sub-system blocks, each evolving `e^{T_int}|Φ⟩` under its
//! time-dependent effective Hamiltonian.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use nalgebra::{ComplexField, DMatrix, DVector};
use num_complex::Complex64;

use crate::algebra::{union_manifold, SubAlgebra};
use crate::cc::CcProblem;
use crate::cluster::{cluster_analysis, ClusterOperator, OperatorMatrix};
use crate::flow::CasFrame;
use crate::fock::{ExcitationSignature, Manifold};
use crate::integrals::HamiltonianSpec;
use crate::linalg::symmetric_eigen;
use crate::{Error, Result};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Amplitudes and phase `T₀` at time `t`; the wave function is
/// `e^{T₀} e^{T}|Φ⟩`.
#[derive(Clone, Debug, PartialEq)]
pub struct TDState {
    pub t: f64,
    pub amplitudes: ClusterOperator<Complex64>,
    pub phase: Complex64,
}

impl TDState {
    pub fn new(amplitudes: ClusterOperator<Complex64>) -> Self {
        TDState { t: 0.0, amplitudes, phase: Complex64::new(0.0, 0.0) }
    }

    /// Real amplitudes lifted to a state at `t = 0`.
    pub fn from_real(t: &ClusterOperator) -> Self {
        Self::new(t.map(Complex64::from))
    }

    pub fn is_finite(&self) -> bool {
        self.phase.is_finite() && self.amplitudes.iter().all(|(_, v)| v.is_finite())
    }
}

/// `d/dt` of a [`TDState`].
#[derive(Clone, Debug, PartialEq)]
pub struct Derivative {
    pub amplitudes: ClusterOperator<Complex64>,
    pub phase: Complex64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Integrator {
    Rk4,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PropagationMode {
    Global,
    FlowSerial,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PropagatorConfig {
    pub dt: f64,
    pub t_final: f64,
    pub method: Integrator,
    pub mode: PropagationMode,
    /// Largest amplitude modulus accepted after a step.
    pub amplitude_bound: f64,
}

impl PropagatorConfig {
    pub fn new(dt: f64, t_final: f64, mode: PropagationMode) -> Self {
        PropagatorConfig { dt, t_final, method: Integrator::Rk4, mode, amplitude_bound: 1e3 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::usage("time step must be positive"));
        }
        if !(self.t_final >= 0.0) || !self.t_final.is_finite() {
            return Err(Error::usage("final time must be non-negative"));
        }
        if !(self.amplitude_bound > 0.0) {
            return Err(Error::usage("amplitude bound must be positive"));
        }
        self.steps().map(|_| ())
    }

    /// Number of steps; `t_final` must be a whole multiple of `dt`.
    pub fn steps(&self) -> Result<usize> {
        let n = ComplexField::round(self.t_final / self.dt);
        if (n * self.dt - self.t_final).abs() > 1e-9 * self.t_final.max(1.0) {
            return Err(Error::usage(format!("t_final {} is not a multiple of dt {}", self.t_final, self.dt)));
        }
        Ok(n as usize)
    }
}

/// `ṫ_μ = −i⟨Φ_μ|e^{−T} H e^{T}|Φ⟩` for `μ` in `manifold` and
/// `Ṫ₀ = −i⟨Φ|e^{−T} H e^{T}|Φ⟩`.
pub fn td_rhs_global(state: &TDState, problem: &CcProblem, manifold: &Manifold) -> Result<Derivative> {
    let v = problem.hbar_reference(&state.amplitudes)?;
    let amplitudes = problem.project(&v, manifold)?.scaled(-I);
    Ok(Derivative { amplitudes, phase: -I * v[0] })
}

/// `⟨Φ|e^{−T} H e^{T}|Φ⟩`.
pub fn td_energy(state: &TDState, problem: &CcProblem) -> Result<Complex64> {
    problem.energy(&state.amplitudes)
}

fn check_external(t_ext: &ClusterOperator<Complex64>, h: &SubAlgebra) -> Result<()> {
    if let Some((s, _)) = t_ext.iter().find(|(s, _)| h.contains(s)) {
        return Err(Error::usage(format!("external operator holds internal excitation {s} of {h}")));
    }
    Ok(())
}

/// CAS restriction of `e^{−T_ext} H e^{T_ext}` with complex external
/// amplitudes.
pub fn build_td_effective(
    problem: &CcProblem,
    h: &SubAlgebra,
    t_ext: &ClusterOperator<Complex64>,
    cap: usize,
) -> Result<OperatorMatrix<Complex64>> {
    if *h.basis() != problem.hamiltonian().basis() {
        return Err(Error::usage("sub-algebra and Hamiltonian use different bases"));
    }
    check_external(t_ext, h)?;
    let cas = h.generate_cas(cap)?;
    let indices = cas.indices_in(problem.space())?;
    let hc = problem.matrix().map(Complex64::from);
    let m = restricted_transform(problem, &hc, t_ext, &indices)?;
    OperatorMatrix::new(Arc::new(cas.space().clone()), m)
}

fn restricted_transform(
    problem: &CcProblem,
    hc: &DMatrix<Complex64>,
    t_ext: &ClusterOperator<Complex64>,
    indices: &[usize],
) -> Result<DMatrix<Complex64>> {
    let cols = problem.table().transformed_columns(hc, t_ext, indices)?;
    let n = indices.len();
    Ok(DMatrix::from_fn(n, n, |i, j| cols[(indices[i], j)]))
}

struct TdBlock {
    h: SubAlgebra,
    frame: CasFrame,
    indices: Vec<usize>,
    /// Internal signatures whose derivative this block supplies.
    owned: Vec<ExcitationSignature>,
}

/// Block-assembled right-hand side. Every block sees the same stage state;
/// the first block containing a signature supplies its derivative and the
/// first block supplies `Ṫ₀`.
struct FlowRhs {
    hc: DMatrix<Complex64>,
    blocks: Vec<TdBlock>,
}

impl FlowRhs {
    fn new(problem: &CcProblem, subalgebras: &[SubAlgebra], cap: usize) -> Result<Self> {
        let mut seen = Manifold::new();
        let mut blocks = Vec::with_capacity(subalgebras.len());
        for (i, h) in subalgebras.iter().enumerate() {
            if *h.basis() != problem.hamiltonian().basis() {
                return Err(Error::usage("sub-algebra and Hamiltonian use different bases").in_block(i));
            }
            let cas = h.generate_cas(cap).map_err(|e| e.in_block(i))?;
            let indices = cas.indices_in(problem.space()).map_err(|e| e.in_block(i))?;
            let frame = CasFrame::new(&cas).map_err(|e| e.in_block(i))?;
            let owned = frame.internal().iter().copied().filter(|s| seen.insert(*s)).collect();
            blocks.push(TdBlock { h: h.clone(), frame, indices, owned });
        }
        Ok(FlowRhs { hc: problem.matrix().map(Complex64::from), blocks })
    }

    fn eval(&self, problem: &CcProblem, state: &TDState) -> Result<Derivative> {
        let mut amplitudes = ClusterOperator::new();
        let mut phase = Complex64::new(0.0, 0.0);
        for (i, b) in self.blocks.iter().enumerate() {
            let (t_int, t_ext): (Vec<_>, Vec<_>) =
                state.amplitudes.iter().map(|(&s, &v)| (s, v)).partition(|(s, _)| b.h.contains(s));
            let t_int: ClusterOperator<Complex64> = t_int.into_iter().collect();
            let t_ext: ClusterOperator<Complex64> = t_ext.into_iter().collect();
            let heff = restricted_transform(problem, &self.hc, &t_ext, &b.indices).map_err(|e| e.in_block(i))?;
            // i d/dt e^{T_int}|Φ⟩ = H_eff e^{T_int}|Φ⟩, pulled back by e^{−T_int}
            let table = b.frame.table();
            let mut phi = DVector::zeros(b.indices.len());
            phi[0] = Complex64::new(1.0, 0.0);
            let psi = table.exp_apply(&t_int, 1.0, &phi)?;
            let w = table.exp_apply(&t_int, -1.0, &(heff * psi))?;
            if i == 0 {
                phase = -I * w[0];
            }
            for s in &b.owned {
                let (k, sign) = b.frame.slot(s).expect("owned signatures are internal");
                amplitudes.insert(*s, -I * w[k] * sign);
            }
        }
        Ok(Derivative { amplitudes, phase })
    }
}

fn advance(state: &TDState, d: &Derivative, h: f64) -> TDState {
    let mut amplitudes = state.amplitudes.clone();
    for (s, v) in amplitudes.iter_mut() {
        *v += d.amplitudes.get(s) * h;
    }
    TDState { t: state.t + h, amplitudes, phase: state.phase + d.phase * h }
}

fn rk4_step(state: &TDState, dt: f64, mut f: impl FnMut(&TDState) -> Result<Derivative>) -> Result<TDState> {
    let k1 = f(state)?;
    let k2 = f(&advance(state, &k1, 0.5 * dt))?;
    let k3 = f(&advance(state, &k2, 0.5 * dt))?;
    let k4 = f(&advance(state, &k3, dt))?;
    let mut amplitudes = state.amplitudes.clone();
    for (s, v) in amplitudes.iter_mut() {
        let incr = k1.amplitudes.get(s) + (k2.amplitudes.get(s) + k3.amplitudes.get(s)) * 2.0 + k4.amplitudes.get(s);
        *v += incr * (dt / 6.0);
    }
    let phase = state.phase + (k1.phase + (k2.phase + k3.phase) * 2.0 + k4.phase) * (dt / 6.0);
    Ok(TDState { t: state.t + dt, amplitudes, phase })
}

/// Propagates `initial`, handing every state (including the initial one) to
/// `observe`, and returns the final state. On an amplitude blow-up the error
/// carries the time of the last accepted state, which `observe` has seen.
pub fn propagate_observed(
    initial: &TDState,
    problem: &CcProblem,
    cfg: &PropagatorConfig,
    blocks: Option<&[SubAlgebra]>,
    cap: usize,
    mut observe: impl FnMut(&TDState),
) -> Result<TDState> {
    cfg.validate()?;
    if !initial.is_finite() {
        return Err(Error::usage("initial state is not finite"));
    }
    let manifold = initial.amplitudes.support();
    let flow = match cfg.mode {
        PropagationMode::Global => None,
        PropagationMode::FlowSerial => {
            let subs =
                blocks.filter(|b| !b.is_empty()).ok_or_else(|| Error::usage("flow propagation needs sub-algebras"))?;
            let union = union_manifold(subs);
            if let Some(s) = manifold.iter().find(|s| !union.contains(s)) {
                return Err(Error::usage(format!("amplitude {s} is not internal to any block")));
            }
            let rhs = FlowRhs::new(problem, subs, cap)?;
            Some((rhs, union))
        }
    };
    let mut state = initial.clone();
    if let Some((_, union)) = &flow {
        for s in union {
            if !state.amplitudes.contains(s) {
                state.amplitudes.insert(*s, Complex64::new(0.0, 0.0));
            }
        }
    }
    observe(&state);
    for _ in 0..cfg.steps()? {
        let next = match &flow {
            None => rk4_step(&state, cfg.dt, |s| td_rhs_global(s, problem, &manifold))?,
            Some((rhs, _)) => rk4_step(&state, cfg.dt, |s| rhs.eval(problem, s))?,
        };
        let norm = next.amplitudes.norm_inf();
        if !next.is_finite() || norm > cfg.amplitude_bound {
            return Err(Error::Instability { time: state.t, norm });
        }
        state = next;
        observe(&state);
    }
    Ok(state)
}

/// Every state of the trajectory, starting with the initial one.
pub fn propagate_in(
    initial: &TDState,
    problem: &CcProblem,
    cfg: &PropagatorConfig,
    blocks: Option<&[SubAlgebra]>,
    cap: usize,
) -> Result<Vec<TDState>> {
    let mut out = Vec::new();
    propagate_observed(initial, problem, cfg, blocks, cap, |s| out.push(s.clone()))?;
    Ok(out)
}

pub fn propagate(
    initial: &TDState,
    ham: &HamiltonianSpec,
    cfg: &PropagatorConfig,
    blocks: Option<&[SubAlgebra]>,
    cap: usize,
) -> Result<Vec<TDState>> {
    let problem = CcProblem::new(ham, cap)?;
    propagate_in(initial, &problem, cfg, blocks, cap)
}

/// Exact evolution `e^{−iHt}` in the closed-shell sector.
#[derive(Clone, Debug)]
pub struct ExactPropagator {
    values: Vec<f64>,
    vectors: DMatrix<f64>,
}

impl ExactPropagator {
    pub fn new(problem: &CcProblem) -> Result<Self> {
        let (values, vectors) = symmetric_eigen(problem.matrix())?;
        Ok(ExactPropagator { values, vectors })
    }

    pub fn evolve(&self, psi: &DVector<Complex64>, t: f64) -> DVector<Complex64> {
        let v = self.vectors.map(Complex64::from);
        let mut c = v.transpose() * psi;
        for (k, &e) in self.values.iter().enumerate() {
            c[k] *= Complex64::from_polar(1.0, -e * t);
        }
        v * c
    }
}

/// `e^{T₀} e^{T}|Φ⟩` over the sector.
pub fn state_vector(state: &TDState, problem: &CcProblem) -> Result<DVector<Complex64>> {
    let mut phi = DVector::zeros(problem.space().len());
    phi[0] = Complex64::new(1.0, 0.0);
    let psi = problem.table().exp_apply(&state.amplitudes, 1.0, &phi)?;
    Ok(psi * state.phase.exp())
}

/// Amplitudes on `manifold` and phase `T₀ = ln c₀` of a sector vector.
pub fn amplitudes_of(psi: &DVector<Complex64>, problem: &CcProblem, manifold: &Manifold, t: f64) -> Result<TDState> {
    let amplitudes = cluster_analysis(psi, problem.table(), Some(manifold))?;
    Ok(TDState { t, amplitudes, phase: psi[0].ln() })
}

/// Determinant of the matrix image of `e^{T}` over `frame`'s CAS.
pub(crate) fn exp_determinant(t: &ClusterOperator<Complex64>, frame: &CasFrame) -> Result<Complex64> {
    let n = frame.table().space().len();
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = Complex64::new(1.0, 0.0);
        m.set_column(j, &frame.table().exp_apply(t, 1.0, &e)?);
    }
    Ok(m.determinant())
}

/// Determinant of the matrix image of `e^{T_int}` over the CAS of `h`.
pub fn internal_exp_determinant(state: &TDState, h: &SubAlgebra, cap: usize) -> Result<Complex64> {
    let frame = CasFrame::new(&h.generate_cas(cap)?)?;
    exp_determinant(&state.amplitudes.filtered(|s| h.contains(s)), &frame)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{full_algebra, VirtualSelection};
    use crate::cc::SolverConfig;
    use crate::fock::{enumerate_manifold, SpinFilter};
    use crate::integrals::{build_model, canonicalize, ModelSpec, ScfConfig};
    use alloc::vec;

    fn hubbard(sites: usize, u: f64, n: usize) -> HamiltonianSpec {
        let h =
            build_model(&ModelSpec::HubbardChain { sites, hopping: 1.0, onsite: u, periodic: false, n_electrons: n })
                .unwrap();
        canonicalize(&h, &ScfConfig::default()).unwrap().hamiltonian
    }

    fn full_manifold(problem: &CcProblem) -> Manifold {
        problem.table().signatures().iter().copied().collect()
    }

    fn seeded_state(manifold: &Manifold, scale: f64) -> TDState {
        let amps = manifold
            .iter()
            .enumerate()
            .map(|(k, &s)| {
                (s, Complex64::new(scale * ((k as f64) * 0.7).sin(), 0.5 * scale * ((k as f64) * 1.3).cos()))
            })
            .collect();
        TDState::new(amps)
    }

    fn pair_blocks(ham: &HamiltonianSpec) -> Vec<SubAlgebra> {
        (0..ham.n_electrons() / 2).map(|i| SubAlgebra::new(ham.basis(), &[i], VirtualSelection::All).unwrap()).collect()
    }

    #[test]
    fn stationary_solution_has_zero_rate() {
        let ham = hubbard(3, 2.0, 4);
        let problem = CcProblem::new(&ham, 1000).unwrap();
        let b = ham.basis();
        let m = enumerate_manifold(&b, 2, b.occupied_mask(), b.virtual_mask(), SpinFilter::ConserveSz).unwrap();
        let cc =
            problem.solve(&m, &SolverConfig { residual_tolerance: 1e-12, ..SolverConfig::default() }, None).unwrap();
        let d = td_rhs_global(&TDState::from_real(&cc.amplitudes), &problem, &m).unwrap();
        assert!(d.amplitudes.norm_inf() < 1e-10);
        assert!((d.phase + I * cc.energy).norm() < 1e-10);
    }

    #[test]
    fn uncoupled_reference_only_rotates_phase() {
        let h = build_model(&ModelSpec::HubbardChain {
            sites: 3,
            hopping: 0.0,
            onsite: 2.0,
            periodic: false,
            n_electrons: 4,
        })
        .unwrap();
        let problem = CcProblem::new(&h, 1000).unwrap();
        let m = full_manifold(&problem);
        let d = td_rhs_global(&TDState::new(ClusterOperator::zeros(&m)), &problem, &m).unwrap();
        assert_eq!(d.amplitudes.norm_inf(), 0.0);
        let cfg = PropagatorConfig::new(0.05, 2.0, PropagationMode::Global);
        let last =
            propagate_in(&TDState::new(ClusterOperator::zeros(&m)), &problem, &cfg, None, 1000).unwrap().pop().unwrap();
        assert_eq!(last.amplitudes.norm_inf(), 0.0);
        let e = problem.reference_energy();
        assert!((last.phase - Complex64::new(0.0, -e * 2.0)).norm() < 1e-12);
    }

    #[test]
    fn rate_matches_finite_difference_of_exact_evolution() {
        let ham = hubbard(3, 3.0, 4);
        let problem = CcProblem::new(&ham, 1000).unwrap();
        let m = full_manifold(&problem);
        let exact = ExactPropagator::new(&problem).unwrap();
        let psi0 = state_vector(&seeded_state(&m, 0.1), &problem).unwrap();
        let (t, eps) = (0.3, 1e-4);
        let at = |t: f64| amplitudes_of(&exact.evolve(&psi0, t), &problem, &m, t).unwrap();
        let (plus, minus, mid) = (at(t + eps), at(t - eps), at(t));
        let d = td_rhs_global(&mid, &problem, &m).unwrap();
        for s in &m {
            let fd = (plus.amplitudes.get(s) - minus.amplitudes.get(s)) / (2.0 * eps);
            assert!((fd - d.amplitudes.get(s)).norm() < 1e-6, "{s}");
        }
    }

    #[test]
    fn full_manifold_tracks_exact_state() {
        let ham = hubbard(3, 2.0, 4);
        let problem = CcProblem::new(&ham, 1000).unwrap();
        let m = full_manifold(&problem);
        let init = TDState::new(ClusterOperator::zeros(&m));
        let cfg = PropagatorConfig::new(0.01, 2.0, PropagationMode::Global);
        let traj = propagate_in(&init, &problem, &cfg, None, 1000).unwrap();
        let exact = ExactPropagator::new(&problem).unwrap();
        let psi0 = state_vector(&init, &problem).unwrap();
        for s in traj.iter().step_by(50) {
            let ex = exact.evolve(&psi0, s.t);
            let ours = state_vector(s, &problem).unwrap();
            let overlap = ex.dotc(&ours).norm();
            assert!((overlap - 1.0).abs() < 1e-8, "t = {}: {overlap}", s.t);
        }
        // the exact norm is conserved, so is the expectation energy
        let e = |psi: &DVector<Complex64>| {
            let h = problem.matrix().map(Complex64::from);
            (psi.dotc(&(h * psi)) / psi.dotc(psi)).re
        };
        let e0 = e(&psi0);
        let last = state_vector(traj.last().unwrap(), &problem).unwrap();
        assert!((e(&last) - e0).abs() < 1e-8);
    }

    #[test]
    fn rk4_error_falls_sixteenfold() {
        let ham = hubbard(3, 2.0, 4);
        let problem = CcProblem::new(&ham, 1000).unwrap();
        let m = full_manifold(&problem);
        let init = TDState::new(ClusterOperator::zeros(&m));
        let exact = ExactPropagator::new(&problem).unwrap();
        let target =
            amplitudes_of(&exact.evolve(&state_vector(&init, &problem).unwrap(), 1.0), &problem, &m, 1.0).unwrap();
        let err = |dt: f64| {
            let cfg = PropagatorConfig::new(dt, 1.0, PropagationMode::Global);
            let last = propagate_in(&init, &problem, &cfg, None, 1000).unwrap().pop().unwrap();
            last.amplitudes.max_abs_diff(&target.amplitudes)
        };
        let ratio = err(0.05) / err(0.025);
        assert!((10.0..=24.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn flow_mode_matches_global_mode() {
        let ham = hubbard(3, 2.0, 4);
        let problem = CcProblem::new(&ham, 1000).unwrap();
        let blocks = pair_blocks(&ham);
        let union = union_manifold(&blocks);
        let init = seeded_state(&union, 0.05);
        let g = PropagatorConfig::new(0.01, 0.5, PropagationMode::Global);
        let f = PropagatorConfig { mode: PropagationMode::FlowSerial, ..g };
        let a = propagate_in(&init, &problem, &g, None, 1000).unwrap();
        let b = propagate_in(&init, &problem, &f, Some(&blocks), 1000).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert!(x.amplitudes.max_abs_diff(&y.amplitudes) < 1e-12);
            assert!((x.phase - y.phase).norm() < 1e-12);
        }
        assert!(propagate_in(&init, &problem, &f, None, 1000).is_err());
        let mut foreign = init.clone();
        foreign.amplitudes.insert(ExcitationSignature::new(&[0, 2], &[4, 4 + 1]).unwrap(), Complex64::new(0.0, 0.0));
        assert!(propagate_in(&foreign, &problem, &f, Some(&blocks), 1000).is_err());
    }

    #[test]
    fn stationary_energy_is_conserved() {
        let ham = hubbard(3, 2.0, 4);
        let problem = CcProblem::new(&ham, 1000).unwrap();
        let blocks = pair_blocks(&ham);
        let union = union_manifold(&blocks);
        let cc = problem
            .solve(&union, &SolverConfig { residual_tolerance: 1e-12, ..SolverConfig::default() }, None)
            .unwrap();
        let init = TDState::from_real(&cc.amplitudes);
        let cfg = PropagatorConfig::new(0.01, 10.0, PropagationMode::FlowSerial);
        let mut drift: f64 = 0.0;
        propagate_observed(&init, &problem, &cfg, Some(&blocks), 1000, |s| {
            drift = drift.max((td_energy(s, &problem).unwrap() - cc.energy).norm());
        })
        .unwrap();
        assert!(drift <= 1e-7, "{drift}");
    }

    #[test]
    fn internal_exponential_has_unit_determinant() {
        let ham = hubbard(4, 2.0, 4);
        let h = SubAlgebra::new(ham.basis(), &[0, 1], VirtualSelection::All).unwrap();
        let state = seeded_state(&h.internal_manifold(), 0.4);
        let d = internal_exp_determinant(&state, &h, 1000).unwrap();
        assert!((d - 1.0).norm() < 1e-12);
    }

    #[test]
    fn td_effective_reductions() {
        let ham = hubbard(4, 2.0, 6);
        let problem = CcProblem::new(&ham, 1000).unwrap();
        let h = SubAlgebra::new(ham.basis(), &[1, 2], VirtualSelection::All).unwrap();
        let bare = build_td_effective(&problem, &h, &ClusterOperator::new(), 1000).unwrap();
        let cas = h.generate_cas(1000).unwrap();
        let idx = cas.indices_in(problem.space()).unwrap();
        for i in 0..idx.len() {
            for j in 0..idx.len() {
                assert_eq!(bare.entries()[(i, j)], Complex64::from(problem.matrix()[(idx[i], idx[j])]));
            }
        }
        let blocks = vec![h.clone(), SubAlgebra::new(ham.basis(), &[0, 1], VirtualSelection::All).unwrap()];
        let union = union_manifold(&blocks);
        let cc = problem
            .solve(&union, &SolverConfig { residual_tolerance: 1e-12, ..SolverConfig::default() }, None)
            .unwrap();
        let t_ext = TDState::from_real(&cc.amplitudes).amplitudes.filtered(|s| !h.contains(s));
        let heff = build_td_effective(&problem, &h, &t_ext, 1000).unwrap();
        let vals = crate::linalg::general_eigen(heff.entries()).unwrap();
        assert!(vals.iter().any(|(e, _)| (e - cc.energy).norm() < 1e-9));
        let bad = TDState::from_real(&cc.amplitudes).amplitudes;
        assert!(build_td_effective(&problem, &h, &bad, 1000).is_err());
    }

    #[test]
    fn blow_up_is_reported() {
        let ham = hubbard(3, 2.0, 4);
        let problem = CcProblem::new(&ham, 1000).unwrap();
        let m = full_manifold(&problem);
        let cfg =
            PropagatorConfig { amplitude_bound: 1e-3, ..PropagatorConfig::new(0.01, 1.0, PropagationMode::Global) };
        let mut seen = 0;
        let err =
            propagate_observed(&TDState::new(ClusterOperator::zeros(&m)), &problem, &cfg, None, 1000, |_| seen += 1)
                .unwrap_err();
        match err {
            Error::Instability { time, norm } => {
                assert!(norm > 1e-3);
                assert!((time - 0.01 * (seen - 1) as f64).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
        assert!(PropagatorConfig::new(0.03, 1.0, PropagationMode::Global).validate().is_err());
        assert!(PropagatorConfig::new(0.0, 1.0, PropagationMode::Global).validate().is_err());
    }

    #[test]
    fn full_algebra_blocks_reduce_to_global() {
        let ham = hubbard(2, 4.0, 2);
        let problem = CcProblem::new(&ham, 100).unwrap();
        let blocks = vec![full_algebra(ham.basis()).unwrap()];
        let m = union_manifold(&blocks);
        let init = seeded_state(&m, 0.1);
        let d1 = td_rhs_global(&init, &problem, &m).unwrap();
        let d2 = FlowRhs::new(&problem, &blocks, 100).unwrap().eval(&problem, &init).unwrap();
        assert!(d1.amplitudes.max_abs_diff(&d2.amplitudes) < 1e-14);
        assert!((d1.phase - d2.phase).norm() < 1e-14);
    }
}
