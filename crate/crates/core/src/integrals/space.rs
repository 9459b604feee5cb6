use alloc::format;
use alloc::vec::Vec;

use crate::fock::{subsets_of_size, Determinant, ExcitationSignature, SpinOrbitalBasis};
use crate::{Error, Result};

/// Particle-number and spin-projection sector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Sector {
    pub n_alpha: usize,
    pub n_beta: usize,
}

impl Sector {
    pub fn closed_shell(n_electrons: usize) -> Self {
        Sector { n_alpha: n_electrons / 2, n_beta: n_electrons - n_electrons / 2 }
    }

    pub fn n_electrons(&self) -> usize {
        self.n_alpha + self.n_beta
    }

    /// Twice the spin projection.
    pub fn ms2(&self) -> i64 {
        self.n_alpha as i64 - self.n_beta as i64
    }

    pub fn contains(&self, det: Determinant) -> bool {
        det.alpha_count() == self.n_alpha && det.beta_count() == self.n_beta
    }
}

/// Ordered list of determinants with an index for lookups.
///
/// Spaces built here put the reference first and then order by excitation
/// rank and signature relative to that reference.
#[derive(Clone, Debug, PartialEq)]
pub struct DeterminantSpace {
    dets: Vec<Determinant>,
    lookup: Vec<(u64, usize)>,
}

impl DeterminantSpace {
    /// Takes `dets` in the given order; duplicates are rejected.
    pub fn from_determinants(dets: Vec<Determinant>) -> Result<Self> {
        let mut lookup: Vec<(u64, usize)> = dets.iter().enumerate().map(|(k, d)| (d.bits(), k)).collect();
        lookup.sort_unstable();
        if lookup.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::usage("duplicate determinant in space"));
        }
        Ok(DeterminantSpace { dets, lookup })
    }

    /// Sorts `dets` by excitation rank and signature relative to `reference`
    /// (which must be among them and ends up at index 0).
    pub fn ordered_from(reference: Determinant, mut dets: Vec<Determinant>) -> Result<Self> {
        if !dets.contains(&reference) {
            return Err(Error::usage("reference missing from determinant list"));
        }
        dets.sort_by(|a, b| {
            let ka = ExcitationSignature::between(reference, *a);
            let kb = ExcitationSignature::between(reference, *b);
            ka.cmp(&kb)
        });
        Self::from_determinants(dets)
    }

    /// Every determinant of `sector` over the basis, reference first.
    pub fn sector(basis: &SpinOrbitalBasis, sector: Sector, cap: usize) -> Result<Self> {
        let n = basis.n_spatial();
        if sector.n_alpha > n || sector.n_beta > n {
            return Err(Error::usage(format!(
                "sector ({}, {}) does not fit into {n} spatial orbitals",
                sector.n_alpha, sector.n_beta
            )));
        }
        let dim = binomial(n, sector.n_alpha).saturating_mul(binomial(n, sector.n_beta));
        if dim > cap {
            return Err(Error::Resource { dimension: dim, cap });
        }
        let alpha_mask = SpinOrbitalBasis::spatial_mask(0..n) & 0x5555_5555_5555_5555;
        let beta_mask = alpha_mask << 1;
        let alphas = subsets_of_size(alpha_mask, sector.n_alpha);
        let betas = subsets_of_size(beta_mask, sector.n_beta);
        let mut dets = Vec::with_capacity(dim);
        for &a in &alphas {
            for &b in &betas {
                dets.push(Determinant::from_bits(a | b));
            }
        }
        let reference = lowest_in_sector(sector);
        Self::ordered_from(reference, dets)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.dets.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.dets.is_empty()
    }

    #[inline]
    pub fn dets(&self) -> &[Determinant] {
        &self.dets
    }

    #[inline]
    pub fn det(&self, k: usize) -> Determinant {
        self.dets[k]
    }

    #[inline]
    pub fn index_of(&self, det: Determinant) -> Option<usize> {
        self.lookup.binary_search_by_key(&det.bits(), |&(b, _)| b).ok().map(|pos| self.lookup[pos].1)
    }

    pub fn contains(&self, det: Determinant) -> bool {
        self.index_of(det).is_some()
    }
}

/// Aufbau determinant of a sector: lowest alpha and beta spin orbitals filled.
pub(crate) fn lowest_in_sector(sector: Sector) -> Determinant {
    let mut bits = 0u64;
    for k in 0..sector.n_alpha {
        bits |= 1 << (2 * k);
    }
    for k in 0..sector.n_beta {
        bits |= 1 << (2 * k + 1);
    }
    Determinant::from_bits(bits)
}

pub(crate) fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: usize = 1;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}
