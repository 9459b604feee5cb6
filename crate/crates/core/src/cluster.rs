//! Cluster operators and their exact matrix images: excitation tables,
//! terminating exponentials, similarity transforms, cluster analysis of CI
//! vectors and second-order perturbation energies.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use nalgebra::{ComplexField, DMatrix, DVector};

use crate::algebra::SubAlgebra;
use crate::fock::{Determinant, ExcitationSignature, Manifold};
use crate::integrals::{matrix_element, orbital_energies, DeterminantSpace, HamiltonianSpec};
use crate::linalg::{exp_nilpotent, Scalar};
use crate::{Error, Result};

/// Map from excitation signatures to amplitudes.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterOperator<T = f64> {
    amplitudes: BTreeMap<ExcitationSignature, T>,
}

impl<T: Scalar> Default for ClusterOperator<T> {
    fn default() -> Self {
        ClusterOperator { amplitudes: BTreeMap::new() }
    }
}

impl<T: Scalar> ClusterOperator<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Every signature of `manifold` with amplitude zero.
    pub fn zeros(manifold: &Manifold) -> Self {
        manifold.iter().map(|&s| (s, T::zero())).collect()
    }

    #[inline]
    pub fn get(&self, sig: &ExcitationSignature) -> T {
        self.amplitudes.get(sig).copied().unwrap_or_else(T::zero)
    }

    #[inline]
    pub fn contains(&self, sig: &ExcitationSignature) -> bool {
        self.amplitudes.contains_key(sig)
    }

    /// Inserts or overwrites; a non-finite value is a usage error.
    pub fn set(&mut self, sig: ExcitationSignature, value: T) -> Result<()> {
        if !value.to_complex().re.is_finite() || !value.to_complex().im.is_finite() {
            return Err(Error::usage(format!("non-finite amplitude for {sig:?}")));
        }
        self.amplitudes.insert(sig, value);
        Ok(())
    }

    pub(crate) fn insert(&mut self, sig: ExcitationSignature, value: T) {
        self.amplitudes.insert(sig, value);
    }

    pub fn remove(&mut self, sig: &ExcitationSignature) -> Option<T> {
        self.amplitudes.remove(sig)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ExcitationSignature, &T)> {
        self.amplitudes.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&ExcitationSignature, &mut T)> {
        self.amplitudes.iter_mut()
    }

    pub fn support(&self) -> Manifold {
        self.amplitudes.keys().copied().collect()
    }

    /// Entries whose signature satisfies `keep`.
    pub fn filtered(&self, mut keep: impl FnMut(&ExcitationSignature) -> bool) -> Self {
        self.amplitudes.iter().filter(|(s, _)| keep(s)).map(|(&s, &v)| (s, v)).collect()
    }

    /// Entries on the signatures of `manifold`.
    pub fn restricted(&self, manifold: &Manifold) -> Self {
        self.filtered(|s| manifold.contains(s))
    }

    /// Overwrites with every entry of `other`.
    pub fn merge(&mut self, other: &Self) {
        for (&s, &v) in other.iter() {
            self.amplitudes.insert(s, v);
        }
    }

    pub fn scaled(&self, factor: T) -> Self {
        self.amplitudes.iter().map(|(&s, &v)| (s, v * factor)).collect()
    }

    /// Largest amplitude modulus.
    pub fn norm_inf(&self) -> f64 {
        self.amplitudes.values().map(|v| v.modulus()).fold(0.0, f64::max)
    }

    pub fn norm2(&self) -> f64 {
        ComplexField::sqrt(self.amplitudes.values().map(|v| v.modulus_squared()).sum::<f64>())
    }

    /// Largest `|a_μ − b_μ|` over the union of both supports.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let mut worst: f64 = 0.0;
        for (s, &v) in self.iter() {
            worst = worst.max((v - other.get(s)).modulus());
        }
        for (s, &v) in other.iter() {
            if !self.contains(s) {
                worst = worst.max(v.modulus());
            }
        }
        worst
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> ClusterOperator<U> {
        self.amplitudes.iter().map(|(&s, &v)| (s, f(v))).collect()
    }
}

impl<T: Scalar> FromIterator<(ExcitationSignature, T)> for ClusterOperator<T> {
    fn from_iter<I: IntoIterator<Item = (ExcitationSignature, T)>>(iter: I) -> Self {
        ClusterOperator { amplitudes: iter.into_iter().collect() }
    }
}

/// Dense operator over an ordered determinant list.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorMatrix<T = f64> {
    space: Arc<DeterminantSpace>,
    entries: DMatrix<T>,
}

impl<T: Scalar> OperatorMatrix<T> {
    pub fn new(space: Arc<DeterminantSpace>, entries: DMatrix<T>) -> Result<Self> {
        if entries.nrows() != space.len() || entries.ncols() != space.len() {
            return Err(Error::usage(format!(
                "matrix shape {:?} does not match space dimension {}",
                entries.shape(),
                space.len()
            )));
        }
        Ok(OperatorMatrix { space, entries })
    }

    #[inline]
    pub fn space(&self) -> &Arc<DeterminantSpace> {
        &self.space
    }

    #[inline]
    pub fn entries(&self) -> &DMatrix<T> {
        &self.entries
    }

    pub fn into_entries(self) -> DMatrix<T> {
        self.entries
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Action {
    from: u32,
    to: u32,
    sign: f64,
}

/// Precomputed action of a set of excitation strings on a determinant space.
/// The space must be closed under every string in the table.
#[derive(Clone, Debug)]
pub struct ExcitationTable {
    space: Arc<DeterminantSpace>,
    sigs: Vec<ExcitationSignature>,
    index: BTreeMap<ExcitationSignature, usize>,
    actions: Vec<Vec<Action>>,
    max_rank_power: usize,
}

impl ExcitationTable {
    pub fn new(space: Arc<DeterminantSpace>, sigs: impl IntoIterator<Item = ExcitationSignature>) -> Result<Self> {
        let mut table =
            ExcitationTable { space, sigs: Vec::new(), index: BTreeMap::new(), actions: Vec::new(), max_rank_power: 0 };
        for sig in sigs {
            table.add(sig)?;
        }
        Ok(table)
    }

    /// Table over the signatures linking the first determinant of `space` to
    /// every other determinant.
    pub fn for_space(space: Arc<DeterminantSpace>) -> Result<Self> {
        let reference = space.det(0);
        let sigs: Vec<_> = space.dets()[1..]
            .iter()
            .map(|&d| {
                ExcitationSignature::between(reference, d)
                    .ok_or_else(|| Error::usage("space holds a determinant of another sector"))
            })
            .collect::<Result<_>>()?;
        Self::new(space, sigs)
    }

    fn add(&mut self, sig: ExcitationSignature) -> Result<()> {
        if self.index.contains_key(&sig) {
            return Ok(());
        }
        let mut acts = Vec::new();
        for (from, &d) in self.space.dets().iter().enumerate() {
            if let Some((target, phase)) = sig.apply(d) {
                let to = self
                    .space
                    .index_of(target)
                    .ok_or_else(|| Error::usage(format!("{sig:?} maps {d} outside the determinant space")))?;
                acts.push(Action { from: from as u32, to: to as u32, sign: phase.value() });
            }
        }
        self.index.insert(sig, self.sigs.len());
        self.sigs.push(sig);
        self.actions.push(acts);
        let electrons = self.space.dets().first().map_or(0, |d| d.count());
        self.max_rank_power = electrons + 1;
        Ok(())
    }

    #[inline]
    pub fn space(&self) -> &Arc<DeterminantSpace> {
        &self.space
    }

    pub fn signatures(&self) -> &[ExcitationSignature] {
        &self.sigs
    }

    pub fn contains(&self, sig: &ExcitationSignature) -> bool {
        self.index.contains_key(sig)
    }

    fn resolve<T: Scalar>(&self, op: &ClusterOperator<T>) -> Result<Vec<(usize, T)>> {
        op.iter()
            .filter(|(_, v)| !v.is_zero())
            .map(|(s, &v)| {
                self.index
                    .get(s)
                    .map(|&k| (k, v))
                    .ok_or_else(|| Error::usage(format!("signature {s:?} not tabulated for this space")))
            })
            .collect()
    }

    fn apply_resolved<T: Scalar>(&self, terms: &[(usize, T)], v: &DVector<T>) -> DVector<T> {
        let mut out = DVector::<T>::zeros(v.len());
        for &(k, amp) in terms {
            for a in &self.actions[k] {
                let x = v[a.from as usize];
                if !x.is_zero() {
                    out[a.to as usize] += amp * x * T::from_real(a.sign);
                }
            }
        }
        out
    }

    /// `T v`.
    pub fn apply<T: Scalar>(&self, op: &ClusterOperator<T>, v: &DVector<T>) -> Result<DVector<T>> {
        let terms = self.resolve(op)?;
        Ok(self.apply_resolved(&terms, v))
    }

    /// `exp(s T) v` by the terminating series.
    pub fn exp_apply<T: Scalar>(&self, op: &ClusterOperator<T>, s: f64, v: &DVector<T>) -> Result<DVector<T>> {
        let terms: Vec<(usize, T)> = self.resolve(op)?.into_iter().map(|(k, a)| (k, a * T::from_real(s))).collect();
        self.exp_resolved(&terms, v)
    }

    fn exp_resolved<T: Scalar>(&self, terms: &[(usize, T)], v: &DVector<T>) -> Result<DVector<T>> {
        let mut out = v.clone();
        let mut term = v.clone();
        for k in 1..=self.max_rank_power + 1 {
            term = self.apply_resolved(terms, &term).unscale(k as f64);
            if term.iter().all(|x| x.is_zero()) {
                return Ok(out);
            }
            out += &term;
        }
        Err(Error::usage("cluster operator is not nilpotent on this space"))
    }

    /// Columns `cols` of `exp(−T) A exp(T)` (all rows).
    pub fn transformed_columns<T: Scalar>(
        &self,
        a: &DMatrix<T>,
        op: &ClusterOperator<T>,
        cols: &[usize],
    ) -> Result<DMatrix<T>> {
        let n = self.space.len();
        if a.nrows() != n || a.ncols() != n {
            return Err(Error::usage("operator and table spaces differ"));
        }
        let plus = self.resolve(op)?;
        let minus: Vec<(usize, T)> = plus.iter().map(|&(k, v)| (k, -v)).collect();
        let mut out = DMatrix::<T>::zeros(n, cols.len());
        for (j, &c) in cols.iter().enumerate() {
            let mut e = DVector::<T>::zeros(n);
            e[c] = T::one();
            let x = self.exp_resolved(&plus, &e)?;
            let y = a * x;
            let z = self.exp_resolved(&minus, &y)?;
            out.set_column(j, &z);
        }
        Ok(out)
    }

    /// Dense matrix image of `op`.
    pub fn to_matrix<T: Scalar>(&self, op: &ClusterOperator<T>) -> Result<DMatrix<T>> {
        let n = self.space.len();
        let mut m = DMatrix::<T>::zeros(n, n);
        for (k, amp) in self.resolve(op)? {
            for a in &self.actions[k] {
                m[(a.to as usize, a.from as usize)] += amp * T::from_real(a.sign);
            }
        }
        Ok(m)
    }
}

/// Matrix image of `op` over `space`; strictly lower triangular when the space
/// is ordered by excitation rank.
pub fn to_matrix<T: Scalar>(op: &ClusterOperator<T>, space: Arc<DeterminantSpace>) -> Result<OperatorMatrix<T>> {
    let table = ExcitationTable::new(space.clone(), op.support())?;
    let m = table.to_matrix(op)?;
    OperatorMatrix::new(space, m)
}

/// Exact exponential of a nilpotent excitation-operator image.
pub fn exp_matrix<T: Scalar>(tm: &OperatorMatrix<T>) -> Result<OperatorMatrix<T>> {
    let electrons = tm.space.dets().first().map_or(0, |d| d.count());
    let e = exp_nilpotent(&tm.entries, electrons + 1)?;
    OperatorMatrix::new(tm.space.clone(), e)
}

/// `exp(−T) H exp(T)` with exact exponentials.
pub fn similarity_transform<T: Scalar>(hm: &OperatorMatrix<T>, op: &ClusterOperator<T>) -> Result<OperatorMatrix<T>> {
    let tm = to_matrix(op, hm.space.clone())?;
    let e = exp_matrix(&tm)?;
    let neg = OperatorMatrix::new(hm.space.clone(), -tm.entries)?;
    let einv = exp_matrix(&neg)?;
    OperatorMatrix::new(hm.space.clone(), einv.entries * &hm.entries * e.entries)
}

/// Phase of `E_μ |Φ⟩` for every non-reference determinant of `space`, with
/// `Φ = space[0]`.
pub(crate) fn reference_phases(space: &DeterminantSpace) -> Result<Vec<(ExcitationSignature, f64)>> {
    let reference = space.det(0);
    space.dets()[1..]
        .iter()
        .map(|&d| {
            let sig = ExcitationSignature::between(reference, d)
                .ok_or_else(|| Error::usage("space holds a determinant of another sector"))?;
            let (_, phase) = sig.apply(reference).expect("signature links reference to determinant");
            Ok((sig, phase.value()))
        })
        .collect()
}

/// Connected amplitudes reproducing a CI vector: `T = log(Ω)` where `Ω|Φ⟩ = c/c₀`.
///
/// `table` must be `ExcitationTable::for_space` of the vector's space. The
/// result is restricted to `manifold` when one is given.
pub fn cluster_analysis<T: Scalar>(
    c: &DVector<T>,
    table: &ExcitationTable,
    manifold: Option<&Manifold>,
) -> Result<ClusterOperator<T>> {
    let space = table.space();
    if c.len() != space.len() || c.is_empty() {
        return Err(Error::usage("coefficient vector does not match the space"));
    }
    let c0 = c[0];
    if c0.modulus() < 1e-14 * c.norm().max(1.0) || c0.is_zero() {
        return Err(Error::DegenerateReference);
    }
    let phases = reference_phases(space)?;
    // C' as an operator: amplitude c_μ s_μ on E_μ
    let mut cprime = ClusterOperator::<T>::new();
    for (k, &(sig, s)) in phases.iter().enumerate() {
        let v = c[k + 1] / c0;
        if !v.is_zero() {
            cprime.insert(sig, v * T::from_real(s));
        }
    }
    let terms = table.resolve(&cprime)?;
    let mut power = DVector::<T>::zeros(c.len());
    power[0] = T::one();
    let mut logv = DVector::<T>::zeros(c.len());
    let electrons = space.det(0).count();
    for k in 1..=electrons + 1 {
        power = table.apply_resolved(&terms, &power);
        if power.iter().all(|x| x.is_zero()) {
            break;
        }
        let coef = if k % 2 == 1 { 1.0 } else { -1.0 } / k as f64;
        logv += power.map(|x| x * T::from_real(coef));
    }
    let mut out = ClusterOperator::new();
    for (k, &(sig, s)) in phases.iter().enumerate() {
        let v = logv[k + 1] * T::from_real(s);
        if manifold.is_none_or(|m| m.contains(&sig)) && !v.is_zero() {
            out.insert(sig, v);
        }
    }
    if let Some(m) = manifold {
        for &sig in m {
            if !out.contains(&sig) && table.contains(&sig) {
                out.insert(sig, T::zero());
            }
        }
    }
    Ok(out)
}

/// `exp(T)|Φ⟩` over the table's space.
pub fn exponentiate_reference<T: Scalar>(op: &ClusterOperator<T>, table: &ExcitationTable) -> Result<DVector<T>> {
    let mut phi = DVector::<T>::zeros(table.space().len());
    phi[0] = T::one();
    table.exp_apply(op, 1.0, &phi)
}

fn mp2_over(
    doubles: impl Iterator<Item = ExcitationSignature>,
    reference: Determinant,
    ham: &HamiltonianSpec,
) -> Result<f64> {
    let eps = orbital_energies(ham)?;
    let mut e2 = 0.0;
    for sig in doubles.filter(|s| s.rank() == 2) {
        let (d, _) = sig.apply(reference).expect("double excitation of the reference");
        let v = matrix_element(d, reference, ham)?;
        if v == 0.0 {
            continue;
        }
        let denom: f64 =
            sig.holes().map(|i| eps[i / 2]).sum::<f64>() - sig.particles().map(|a| eps[a / 2]).sum::<f64>();
        if denom.abs() < 1e-8 {
            return Err(Error::DegenerateDenominator { denominator: denom });
        }
        e2 += v * v / denom;
    }
    Ok(e2)
}

/// Second-order Møller–Plesset energy from the internal doubles of `h`.
pub fn mbpt2_contribution(h: &SubAlgebra, ham: &HamiltonianSpec) -> Result<f64> {
    mp2_over(h.internal_manifold().into_iter(), ham.basis().reference(), ham)
}

/// Full second-order Møller–Plesset correlation energy.
pub fn mbpt2_energy(ham: &HamiltonianSpec) -> Result<f64> {
    let h = crate::algebra::full_algebra(ham.basis())?;
    mbpt2_contribution(&h, ham)
}
