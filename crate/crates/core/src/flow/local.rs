use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use super::block::{CasFrame, EffectiveHamiltonian};
use crate::algebra::{CasSpace, SubAlgebra};
use crate::cluster::ClusterOperator;
use crate::fock::Bits;
use crate::linalg::{asymmetry, symmetric_eigen};
use crate::{Error, Result};

/// Spin-summed virtual-virtual block of a one-body density.
#[derive(Clone, Debug, PartialEq)]
pub struct PairDensity {
    /// Spatial virtual orbitals labelling rows and columns.
    pub orbitals: Vec<usize>,
    pub matrix: DMatrix<f64>,
}

/// `γ_ab = Σ_σ ⟨ψ|a†_{aσ} a_{bσ}|ψ⟩` over the active virtuals of a pair block,
/// with `ψ` the normalized CAS vector.
pub fn pair_density(cas: &CasSpace, vector: &DVector<f64>) -> Result<PairDensity> {
    let h = cas.generator();
    if h.x() > 2 {
        return Err(Error::usage(format!("{h} is not a pair sub-algebra")));
    }
    let space = cas.space();
    if vector.len() != space.len() {
        return Err(Error::usage("vector does not match the CAS dimension"));
    }
    let norm = vector.norm();
    if !(norm > 0.0) {
        return Err(Error::usage("zero CAS vector"));
    }
    let c = vector / norm;
    let orbitals = h.virtual_orbitals();
    let pos = |p: usize| orbitals.iter().position(|&a| a == p / 2).expect("active virtual");
    let n = orbitals.len();
    let mut gamma = DMatrix::<f64>::zeros(n, n);
    for (k, &det) in space.dets().iter().enumerate() {
        if c[k] == 0.0 {
            continue;
        }
        for b in Bits(det.bits() & h.particle_mask()) {
            let (mid, s1) = det.annihilate_unchecked(b).expect("occupied");
            for a in Bits(h.particle_mask() & !mid.bits()).filter(|a| (a ^ b) & 1 == 0) {
                let (out, s2) = mid.create_unchecked(a).expect("empty");
                if let Some(l) = space.index_of(out) {
                    gamma[(pos(a), pos(b))] += c[l] * c[k] * (s1 * s2).value();
                }
            }
        }
    }
    Ok(PairDensity { orbitals, matrix: gamma })
}

/// Natural orbitals of a pair density.
#[derive(Clone, Debug, PartialEq)]
pub struct PnoSelection {
    /// Occupation numbers, descending.
    pub occupations: Vec<f64>,
    /// Columns are natural orbitals in the order of `occupations`.
    pub rotation: DMatrix<f64>,
    /// Positions (into `occupations`) above the threshold.
    pub kept: Vec<usize>,
}

pub fn select_pno(density: &DMatrix<f64>, threshold: f64) -> Result<PnoSelection> {
    if !density.is_square() {
        return Err(Error::usage("density matrix must be square"));
    }
    let defect = asymmetry(density);
    if defect > 1e-10 {
        return Err(Error::usage(format!("density matrix is not symmetric (defect {defect:e})")));
    }
    let (vals, vecs) = symmetric_eigen(density)?;
    let n = vals.len();
    let occupations: Vec<f64> = vals.iter().rev().copied().collect();
    let mut rotation = DMatrix::zeros(n, n);
    for k in 0..n {
        rotation.set_column(k, &vecs.column(n - 1 - k));
    }
    let kept = (0..n).filter(|&k| occupations[k] > threshold).collect();
    Ok(PnoSelection { occupations, rotation, kept })
}

/// Folds the discarded internal amplitudes `delta_t` of a block into a
/// smaller problem over the CAS of `kept` (a sub-algebra of the block's
/// generator).
pub fn secondary_downfold(
    heff: &EffectiveHamiltonian,
    kept: &SubAlgebra,
    delta_t: &ClusterOperator,
) -> Result<EffectiveHamiltonian> {
    let h = heff.generator();
    if kept.basis() != h.basis()
        || kept.hole_mask() & !h.hole_mask() != 0
        || kept.particle_mask() & !h.particle_mask() != 0
    {
        return Err(Error::usage(format!("{kept} is not contained in {h}")));
    }
    if let Some((s, _)) = delta_t.iter().find(|(s, _)| !h.contains(s) || kept.contains(s)) {
        return Err(Error::usage(format!("excitation {s} is not a discarded internal excitation")));
    }
    let cas = kept.generate_cas(usize::MAX)?;
    let indices = cas.indices_in(heff.cas().space())?;
    let cols = heff.frame().table().transformed_columns(heff.matrix(), delta_t, &indices)?;
    let n = indices.len();
    let matrix = DMatrix::from_fn(n, n, |i, j| cols[(indices[i], j)]);
    let mut t_ext = heff.t_ext().clone();
    t_ext.merge(delta_t);
    let frame = Arc::new(CasFrame::new(&cas)?);
    EffectiveHamiltonian::with_frame(matrix, cas, frame, t_ext, false)
}
