//! Bitstring determinants and second-quantized operators acting on them.
//!
//! Spin orbitals are interleaved per spatial orbital: spatial orbital `k` owns
//! spin orbitals `2k` (alpha) and `2k + 1` (beta). Phases are always counted as
//! the parity of occupied spin orbitals below the acted-on index.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;
use core::ops::Mul;

use crate::{Error, Result};

pub const MAX_SPIN_ORBITALS: usize = 64;

/// Excitation manifold: an ordered set of excitation signatures.
pub type Manifold = BTreeSet<ExcitationSignature>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Spin {
    Alpha,
    Beta,
}

/// Sign picked up by a fermionic operator string.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    Plus,
    Minus,
}

impl Phase {
    #[inline]
    pub fn from_parity(odd: bool) -> Self {
        if odd {
            Phase::Minus
        } else {
            Phase::Plus
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        match self {
            Phase::Plus => 1.0,
            Phase::Minus => -1.0,
        }
    }
}

impl Mul for Phase {
    type Output = Phase;

    #[inline]
    fn mul(self, rhs: Phase) -> Phase {
        Phase::from_parity(self != rhs)
    }
}

/// Ascending iterator over set bits.
#[derive(Clone, Copy, Debug)]
pub struct Bits(pub u64);

impl Iterator for Bits {
    type Item = usize;

    #[inline]
    fn next(&mut self) -> Option<usize> {
        if self.0 == 0 {
            return None;
        }
        let p = self.0.trailing_zeros() as usize;
        self.0 &= self.0 - 1;
        Some(p)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.0.count_ones() as usize;
        (n, Some(n))
    }
}

impl ExactSizeIterator for Bits {}

#[inline]
fn below(p: usize) -> u64 {
    if p == 0 {
        0
    } else {
        u64::MAX >> (64 - p)
    }
}

/// Mask with the given indices set.
pub fn mask_of(indices: &[usize]) -> Result<u64> {
    let mut mask = 0u64;
    for &p in indices {
        if p >= MAX_SPIN_ORBITALS {
            return Err(Error::usage(alloc::format!("spin-orbital index {p} out of range")));
        }
        mask |= 1 << p;
    }
    Ok(mask)
}

/// Occupation bit set; bit `p` set means spin orbital `p` is occupied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Determinant(u64);

impl Determinant {
    #[inline]
    pub const fn from_bits(bits: u64) -> Self {
        Determinant(bits)
    }

    pub fn from_occupied(indices: &[usize]) -> Result<Self> {
        mask_of(indices).map(Determinant)
    }

    #[inline]
    pub const fn bits(self) -> u64 {
        self.0
    }

    #[inline]
    pub fn is_occupied(self, p: usize) -> bool {
        p < MAX_SPIN_ORBITALS && self.0 >> p & 1 == 1
    }

    #[inline]
    pub fn count(self) -> usize {
        self.0.count_ones() as usize
    }

    /// Number of occupied alpha (even-index) spin orbitals.
    #[inline]
    pub fn alpha_count(self) -> usize {
        (self.0 & ALPHA_MASK).count_ones() as usize
    }

    #[inline]
    pub fn beta_count(self) -> usize {
        (self.0 & !ALPHA_MASK).count_ones() as usize
    }

    #[inline]
    pub fn occupied(self) -> Bits {
        Bits(self.0)
    }

    /// `a†_p |self⟩`. `Ok(None)` when `p` is already occupied.
    pub fn create(self, p: usize) -> Result<Option<(Determinant, Phase)>> {
        check_index(p)?;
        Ok(self.create_unchecked(p))
    }

    /// `a_p |self⟩`. `Ok(None)` when `p` is empty.
    pub fn annihilate(self, p: usize) -> Result<Option<(Determinant, Phase)>> {
        check_index(p)?;
        Ok(self.annihilate_unchecked(p))
    }

    #[inline]
    pub(crate) fn create_unchecked(self, p: usize) -> Option<(Determinant, Phase)> {
        let bit = 1u64 << p;
        if self.0 & bit != 0 {
            return None;
        }
        let odd = (self.0 & below(p)).count_ones() & 1 == 1;
        Some((Determinant(self.0 | bit), Phase::from_parity(odd)))
    }

    #[inline]
    pub(crate) fn annihilate_unchecked(self, p: usize) -> Option<(Determinant, Phase)> {
        let bit = 1u64 << p;
        if self.0 & bit == 0 {
            return None;
        }
        let odd = (self.0 & below(p)).count_ones() & 1 == 1;
        Some((Determinant(self.0 & !bit), Phase::from_parity(odd)))
    }
}

impl fmt::Display for Determinant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "|")?;
        let top = 64 - self.0.leading_zeros() as usize;
        for p in 0..top.max(1) {
            write!(f, "{}", if self.is_occupied(p) { '1' } else { '0' })?;
        }
        write!(f, "⟩")
    }
}

const ALPHA_MASK: u64 = 0x5555_5555_5555_5555;

fn check_index(p: usize) -> Result<()> {
    if p >= MAX_SPIN_ORBITALS {
        Err(Error::usage(alloc::format!("spin-orbital index {p} out of range")))
    } else {
        Ok(())
    }
}

/// Closed-shell spin-orbital basis: the lowest `n_electrons / 2` spatial
/// orbitals are doubly occupied in the reference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SpinOrbitalBasis {
    n_spatial: usize,
    n_electrons: usize,
}

impl SpinOrbitalBasis {
    pub fn new(n_spatial: usize, n_electrons: usize) -> Result<Self> {
        if 2 * n_spatial > MAX_SPIN_ORBITALS {
            return Err(Error::usage(alloc::format!(
                "{n_spatial} spatial orbitals exceed the 64 spin-orbital capacity"
            )));
        }
        if n_spatial == 0 {
            return Err(Error::usage("basis needs at least one spatial orbital"));
        }
        if !n_electrons.is_multiple_of(2) {
            return Err(Error::usage("closed-shell reference needs an even electron count"));
        }
        if n_electrons > 2 * n_spatial {
            return Err(Error::usage("more electrons than spin orbitals"));
        }
        Ok(SpinOrbitalBasis { n_spatial, n_electrons })
    }

    #[inline]
    pub fn n_spatial(&self) -> usize {
        self.n_spatial
    }

    #[inline]
    pub fn n_electrons(&self) -> usize {
        self.n_electrons
    }

    #[inline]
    pub fn n_spin_orbitals(&self) -> usize {
        2 * self.n_spatial
    }

    #[inline]
    pub fn n_occupied_spatial(&self) -> usize {
        self.n_electrons / 2
    }

    #[inline]
    pub fn n_virtual_spatial(&self) -> usize {
        self.n_spatial - self.n_electrons / 2
    }

    #[inline]
    pub fn spin_orbital(spatial: usize, spin: Spin) -> usize {
        2 * spatial
            + match spin {
                Spin::Alpha => 0,
                Spin::Beta => 1,
            }
    }

    #[inline]
    pub fn spatial_of(p: usize) -> usize {
        p / 2
    }

    #[inline]
    pub fn spin_of(p: usize) -> Spin {
        if p.is_multiple_of(2) {
            Spin::Alpha
        } else {
            Spin::Beta
        }
    }

    /// Occupied spin-orbital set O.
    #[inline]
    pub fn occupied_mask(&self) -> u64 {
        below(self.n_electrons)
    }

    /// Virtual spin-orbital set V.
    #[inline]
    pub fn virtual_mask(&self) -> u64 {
        below(self.n_spin_orbitals()) & !self.occupied_mask()
    }

    #[inline]
    pub fn all_mask(&self) -> u64 {
        below(self.n_spin_orbitals())
    }

    #[inline]
    pub fn reference(&self) -> Determinant {
        Determinant(self.occupied_mask())
    }

    /// Both spin orbitals of each listed spatial orbital.
    pub fn spatial_mask<I: IntoIterator<Item = usize>>(spatial: I) -> u64 {
        spatial.into_iter().fold(0u64, |m, k| m | 0b11 << (2 * k))
    }
}

/// Excitation string `a†_{a1}…a†_{ak} a_{ik}…a_{i1}`, stored as hole and
/// particle masks. Ordered by rank, then lexicographically by holes, then by
/// particles.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct ExcitationSignature {
    holes: u64,
    particles: u64,
}

impl ExcitationSignature {
    pub fn new(holes: &[usize], particles: &[usize]) -> Result<Self> {
        let ascending = |v: &[usize]| v.windows(2).all(|w| w[0] < w[1]);
        if !ascending(holes) || !ascending(particles) {
            return Err(Error::usage("signature indices must be strictly ascending"));
        }
        Self::from_masks(mask_of(holes)?, mask_of(particles)?)
    }

    pub fn from_masks(holes: u64, particles: u64) -> Result<Self> {
        if holes.count_ones() != particles.count_ones() {
            return Err(Error::usage("hole and particle counts differ"));
        }
        if holes == 0 {
            return Err(Error::usage("excitation rank must be at least one"));
        }
        if holes & particles != 0 {
            return Err(Error::usage("an index appears as both hole and particle"));
        }
        Ok(ExcitationSignature { holes, particles })
    }

    /// Signature mapping `reference` onto `det`; `None` when they coincide or
    /// the particle numbers differ.
    pub fn between(reference: Determinant, det: Determinant) -> Option<Self> {
        let holes = reference.0 & !det.0;
        let particles = det.0 & !reference.0;
        if holes == 0 || holes.count_ones() != particles.count_ones() {
            None
        } else {
            Some(ExcitationSignature { holes, particles })
        }
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.holes.count_ones() as usize
    }

    #[inline]
    pub fn hole_mask(&self) -> u64 {
        self.holes
    }

    #[inline]
    pub fn particle_mask(&self) -> u64 {
        self.particles
    }

    #[inline]
    pub fn holes(&self) -> Bits {
        Bits(self.holes)
    }

    #[inline]
    pub fn particles(&self) -> Bits {
        Bits(self.particles)
    }

    #[inline]
    pub fn is_spin_conserving(&self) -> bool {
        (self.holes & ALPHA_MASK).count_ones() == (self.particles & ALPHA_MASK).count_ones()
    }

    /// Signature of the (commuting) product with `other`; `None` if the
    /// product vanishes because an index is shared.
    #[inline]
    pub fn combine(&self, other: &Self) -> Option<Self> {
        if self.holes & other.holes != 0 || self.particles & other.particles != 0 {
            return None;
        }
        Some(ExcitationSignature { holes: self.holes | other.holes, particles: self.particles | other.particles })
    }

    /// Apply the excitation string to `det`.
    #[inline]
    pub fn apply(&self, det: Determinant) -> Option<(Determinant, Phase)> {
        // annihilators act first, a_{i1} rightmost
        if det.0 & self.holes != self.holes || det.0 & self.particles != 0 {
            return None;
        }
        let mut bits = det.0;
        let mut odd = false;
        for i in Bits(self.holes) {
            odd ^= (bits & below(i)).count_ones() & 1 == 1;
            bits &= !(1 << i);
        }
        // a†_{ak} acts before a†_{a1}
        let mut particles = self.particles;
        while particles != 0 {
            let a = 63 - particles.leading_zeros() as usize;
            particles &= !(1 << a);
            odd ^= (bits & below(a)).count_ones() & 1 == 1;
            bits |= 1 << a;
        }
        Some((Determinant(bits), Phase::from_parity(odd)))
    }

    /// Hermitian conjugate applied to `det` (a de-excitation).
    #[inline]
    pub fn apply_adjoint(&self, det: Determinant) -> Option<(Determinant, Phase)> {
        // (E)† = a†_{i1}…a†_{ik} a_{ak}…a_{a1}; its matrix element equals the
        // forward one with bra and ket exchanged.
        let source = Determinant((det.0 & !self.particles) | self.holes);
        if det.0 & self.particles != self.particles || det.0 & self.holes != 0 {
            return None;
        }
        self.apply(source).map(|(target, phase)| {
            debug_assert_eq!(target, det);
            (source, phase)
        })
    }
}

fn cmp_bit_lists(a: u64, b: u64) -> Ordering {
    let (mut x, mut y) = (Bits(a), Bits(b));
    loop {
        match (x.next(), y.next()) {
            (Some(p), Some(q)) if p == q => continue,
            (Some(p), Some(q)) => return p.cmp(&q),
            (None, None) => return Ordering::Equal,
            (None, Some(_)) => return Ordering::Less,
            (Some(_), None) => return Ordering::Greater,
        }
    }
}

impl Ord for ExcitationSignature {
    fn cmp(&self, other: &Self) -> Ordering {
        self.rank()
            .cmp(&other.rank())
            .then_with(|| cmp_bit_lists(self.holes, other.holes))
            .then_with(|| cmp_bit_lists(self.particles, other.particles))
    }
}

impl PartialOrd for ExcitationSignature {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for ExcitationSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "E{:?}->{:?}", Bits(self.holes).collect::<Vec<_>>(), Bits(self.particles).collect::<Vec<_>>())
    }
}

impl fmt::Display for ExcitationSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.rank())?;
        for i in self.holes() {
            write!(f, " {i}")?;
        }
        for a in self.particles() {
            write!(f, " {a}")?;
        }
        Ok(())
    }
}

/// Which spin structure an enumerated signature may carry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpinFilter {
    Any,
    /// Same number of alpha holes and alpha particles (S_z preserving).
    ConserveSz,
}

/// All k-subsets of `mask`, in ascending lexicographic order of index lists.
pub(crate) fn subsets_of_size(mask: u64, k: usize) -> Vec<u64> {
    let elems: Vec<usize> = Bits(mask).collect();
    let n = elems.len();
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    if k == 0 {
        out.push(0);
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.iter().fold(0u64, |m, &i| m | 1 << elems[i]));
        let mut i = k;
        while i > 0 && idx[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
    out
}

/// Every signature with holes in `hole_domain`, particles in
/// `particle_domain` and rank in `1..=max_rank`.
pub fn enumerate_manifold(
    basis: &SpinOrbitalBasis,
    max_rank: usize,
    hole_domain: u64,
    particle_domain: u64,
    filter: SpinFilter,
) -> Result<Manifold> {
    if max_rank > basis.n_electrons() {
        return Err(Error::usage(alloc::format!(
            "max rank {max_rank} exceeds the electron count {}",
            basis.n_electrons()
        )));
    }
    if hole_domain & !basis.occupied_mask() != 0 {
        return Err(Error::usage("hole domain reaches outside the occupied set"));
    }
    if particle_domain & !basis.virtual_mask() != 0 {
        return Err(Error::usage("particle domain reaches outside the virtual set"));
    }
    let mut out = Manifold::new();
    for k in 1..=max_rank {
        let hole_sets = subsets_of_size(hole_domain, k);
        if hole_sets.is_empty() {
            break;
        }
        let particle_sets = subsets_of_size(particle_domain, k);
        for &h in &hole_sets {
            for &p in &particle_sets {
                let sig = ExcitationSignature { holes: h, particles: p };
                if filter == SpinFilter::Any || sig.is_spin_conserving() {
                    out.insert(sig);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn det(bits: &str) -> Determinant {
        let mut b = 0u64;
        for (p, c) in bits.chars().enumerate() {
            if c == '1' {
                b |= 1 << p;
            }
        }
        Determinant::from_bits(b)
    }

    #[test]
    fn creation_examples() {
        assert_eq!(det("110000").create(2).unwrap(), Some((det("111000"), Phase::Plus)));
        assert_eq!(det("100").create(0).unwrap(), None);
        assert_eq!(det("100").create(1).unwrap(), Some((det("110"), Phase::Minus)));
    }

    #[test]
    fn annihilation_examples() {
        assert_eq!(det("110").annihilate(0).unwrap(), Some((det("010"), Phase::Plus)));
        assert_eq!(det("110").annihilate(1).unwrap(), Some((det("100"), Phase::Minus)));
        assert_eq!(det("110").annihilate(2).unwrap(), None);
    }

    #[test]
    fn out_of_range_index_is_usage_error() {
        assert!(matches!(det("1").create(64), Err(Error::Usage(_))));
        assert!(matches!(det("1").annihilate(70), Err(Error::Usage(_))));
    }

    #[test]
    fn single_excitation_on_reference() {
        let basis = SpinOrbitalBasis::new(3, 2).unwrap();
        let sig = ExcitationSignature::new(&[1], &[3]).unwrap();
        let (d, ph) = sig.apply(basis.reference()).unwrap();
        assert_eq!(d, det("100100"));
        // a_1 and a†_3 each see one electron below
        assert_eq!(ph, Phase::Plus);
        let empty = ExcitationSignature::new(&[2], &[3]).unwrap();
        assert!(empty.apply(basis.reference()).is_none());
    }

    #[test]
    fn adjoint_undoes_forward() {
        let sig = ExcitationSignature::new(&[0, 3], &[4, 7]).unwrap();
        let start = det("11110000");
        let (d, ph) = sig.apply(start).unwrap();
        let (back, ph2) = sig.apply_adjoint(d).unwrap();
        assert_eq!(back, start);
        assert_eq!(ph, ph2);
    }

    #[test]
    fn manifold_counts() {
        let basis = SpinOrbitalBasis::new(2, 2).unwrap();
        let m = enumerate_manifold(&basis, 2, basis.occupied_mask(), basis.virtual_mask(), SpinFilter::Any).unwrap();
        assert_eq!(m.iter().filter(|s| s.rank() == 1).count(), 4);
        assert_eq!(m.iter().filter(|s| s.rank() == 2).count(), 1);
        assert_eq!(m.len(), 5);
        let none = enumerate_manifold(&basis, 0, basis.occupied_mask(), basis.virtual_mask(), SpinFilter::Any).unwrap();
        assert!(none.is_empty());
        let sz =
            enumerate_manifold(&basis, 2, basis.occupied_mask(), basis.virtual_mask(), SpinFilter::ConserveSz).unwrap();
        assert_eq!(sz.len(), 3);
    }

    #[test]
    fn manifold_order_is_rank_then_lexicographic() {
        let basis = SpinOrbitalBasis::new(3, 4).unwrap();
        let m = enumerate_manifold(&basis, 3, basis.occupied_mask(), basis.virtual_mask(), SpinFilter::Any).unwrap();
        let v: Vec<_> = m.iter().copied().collect();
        assert!(v.windows(2).all(|w| w[0].rank() <= w[1].rank()));
        assert_eq!(v[0], ExcitationSignature::new(&[0], &[4]).unwrap());
        assert_eq!(v[1], ExcitationSignature::new(&[0], &[5]).unwrap());
    }

    #[test]
    fn empty_domains_give_empty_manifold() {
        let basis = SpinOrbitalBasis::new(3, 2).unwrap();
        let m = enumerate_manifold(&basis, 2, 0, basis.virtual_mask(), SpinFilter::Any).unwrap();
        assert!(m.is_empty());
    }

    #[test]
    fn subsets_are_complete() {
        assert_eq!(subsets_of_size(0b1011, 2), vec![0b0011, 0b1001, 0b1010]);
        assert_eq!(subsets_of_size(0b11, 3), Vec::<u64>::new());
    }

    #[test]
    fn signature_rejects_bad_input() {
        assert!(ExcitationSignature::new(&[1, 0], &[2, 3]).is_err());
        assert!(ExcitationSignature::new(&[0], &[2, 3]).is_err());
        assert!(ExcitationSignature::new(&[], &[]).is_err());
        assert!(ExcitationSignature::new(&[0], &[0]).is_err());
    }
}
