//! Excitation sub-algebras `g(N)(x_R, y_S)`, their complete active spaces and
//! the internal/external split of an excitation manifold.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::DMatrix;

use crate::fock::{enumerate_manifold, ExcitationSignature, Manifold, SpinFilter, SpinOrbitalBasis};
use crate::integrals::DeterminantSpace;
use crate::{Error, Result};

/// Active virtual orbitals of a sub-algebra.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum VirtualSelection {
    All,
    Set(Vec<usize>),
}

/// Commutative excitation sub-algebra generated by excitations from the
/// occupied spatial orbitals `R` into the virtual spatial orbitals `S`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SubAlgebra {
    basis: SpinOrbitalBasis,
    occupied: Vec<usize>,
    virtuals: VirtualSelection,
    hole_mask: u64,
    particle_mask: u64,
}

impl SubAlgebra {
    /// `occupied` and an explicit `virtuals` list hold 0-based spatial indices.
    pub fn new(basis: SpinOrbitalBasis, occupied: &[usize], virtuals: VirtualSelection) -> Result<Self> {
        let mut r = occupied.to_vec();
        r.sort_unstable();
        r.dedup();
        if r.is_empty() {
            return Err(Error::usage("sub-algebra needs at least one active occupied orbital"));
        }
        let n_occ = basis.n_occupied_spatial();
        if let Some(&bad) = r.iter().find(|&&i| i >= n_occ) {
            return Err(Error::usage(format!("orbital {bad} is not occupied in the reference")));
        }
        let virtuals = match virtuals {
            VirtualSelection::All => VirtualSelection::All,
            VirtualSelection::Set(mut s) => {
                s.sort_unstable();
                s.dedup();
                if let Some(&bad) = s.iter().find(|&&a| a < n_occ || a >= basis.n_spatial()) {
                    return Err(Error::usage(format!("orbital {bad} is not virtual in the reference")));
                }
                VirtualSelection::Set(s)
            }
        };
        let hole_mask = SpinOrbitalBasis::spatial_mask(r.iter().copied());
        let particle_mask = match &virtuals {
            VirtualSelection::All => basis.virtual_mask(),
            VirtualSelection::Set(s) => SpinOrbitalBasis::spatial_mask(s.iter().copied()),
        };
        Ok(SubAlgebra { basis, occupied: r, virtuals, hole_mask, particle_mask })
    }

    /// Parses `R=[1,3];S=ALL` or `R=[2];S=[5,6]` (1-based spatial indices).
    pub fn parse(basis: SpinOrbitalBasis, text: &str) -> Result<Self> {
        let mut r = None;
        let mut s = None;
        for part in text.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::usage(format!("expected key=value in sub-algebra literal, got `{part}`")))?;
            match key.trim().to_ascii_uppercase().as_str() {
                "R" => r = Some(parse_index_list(value)?),
                "S" => {
                    s = Some(if value.trim().eq_ignore_ascii_case("ALL") {
                        VirtualSelection::All
                    } else {
                        VirtualSelection::Set(parse_index_list(value)?)
                    })
                }
                other => return Err(Error::usage(format!("unknown sub-algebra key `{other}`"))),
            }
        }
        let r = r.ok_or_else(|| Error::usage("sub-algebra literal lacks R"))?;
        let s = s.unwrap_or(VirtualSelection::All);
        SubAlgebra::new(basis, &r, s)
    }

    /// Every `g(N)(n_R)` over `n`-element subsets of the occupied orbitals, with
    /// all virtuals active, in lexicographic order of `R`.
    pub fn all_occupied_tuples(basis: SpinOrbitalBasis, n: usize) -> Result<Vec<SubAlgebra>> {
        let occ = basis.n_occupied_spatial();
        let mut out = Vec::new();
        let mut idx: Vec<usize> = (0..n).collect();
        if n == 0 || n > occ {
            return Ok(out);
        }
        loop {
            out.push(SubAlgebra::new(basis, &idx, VirtualSelection::All)?);
            let mut i = n;
            while i > 0 && idx[i - 1] == occ - n + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            idx[i - 1] += 1;
            for j in i..n {
                idx[j] = idx[j - 1] + 1;
            }
        }
        Ok(out)
    }

    #[inline]
    pub fn basis(&self) -> &SpinOrbitalBasis {
        &self.basis
    }

    #[inline]
    pub fn occupied(&self) -> &[usize] {
        &self.occupied
    }

    #[inline]
    pub fn virtuals(&self) -> &VirtualSelection {
        &self.virtuals
    }

    /// Active virtual spatial orbitals, with `ALL` expanded.
    pub fn virtual_orbitals(&self) -> Vec<usize> {
        match &self.virtuals {
            VirtualSelection::All => (self.basis.n_occupied_spatial()..self.basis.n_spatial()).collect(),
            VirtualSelection::Set(s) => s.clone(),
        }
    }

    #[inline]
    pub fn x(&self) -> usize {
        self.occupied.len()
    }

    #[inline]
    pub fn y(&self) -> usize {
        self.particle_mask.count_ones() as usize / 2
    }

    /// Active occupied spin orbitals.
    #[inline]
    pub fn hole_mask(&self) -> u64 {
        self.hole_mask
    }

    /// Active virtual spin orbitals.
    #[inline]
    pub fn particle_mask(&self) -> u64 {
        self.particle_mask
    }

    #[inline]
    pub fn active_mask(&self) -> u64 {
        self.hole_mask | self.particle_mask
    }

    /// Whether `sig` is an internal excitation of this sub-algebra.
    #[inline]
    pub fn contains(&self, sig: &ExcitationSignature) -> bool {
        sig.hole_mask() & !self.hole_mask == 0
            && sig.particle_mask() & !self.particle_mask == 0
            && sig.is_spin_conserving()
    }

    /// All S_z-conserving excitations from `R` into `S`, ranks `1..=2x`.
    pub fn internal_manifold(&self) -> Manifold {
        enumerate_manifold(&self.basis, 2 * self.x(), self.hole_mask, self.particle_mask, SpinFilter::ConserveSz)
            .expect("sub-algebra masks lie inside the basis")
    }

    /// Reference plus every determinant reached by an internal excitation.
    pub fn generate_cas(&self, cap: usize) -> Result<CasSpace> {
        let internal = self.internal_manifold();
        let dim = internal.len() + 1;
        if dim > cap {
            return Err(Error::Resource { dimension: dim, cap });
        }
        let reference = self.basis.reference();
        let mut dets = Vec::with_capacity(dim);
        dets.push(reference);
        for sig in &internal {
            let (d, _) = sig.apply(reference).expect("internal excitations act on the reference");
            dets.push(d);
        }
        Ok(CasSpace { space: DeterminantSpace::from_determinants(dets)?, generator: self.clone() })
    }

    /// Splits `manifold` into the internal and external excitations.
    pub fn partition(&self, manifold: &Manifold) -> ManifoldPartition {
        let (internal, external) = manifold.iter().copied().partition(|s| self.contains(s));
        ManifoldPartition { internal, external }
    }

    /// Whether this sub-algebra is a sub-system embedding sub-algebra for the
    /// given manifold. Spin symmetry holds by construction (`R`, `S` are
    /// spatial), so only the inclusion of the internal manifold is checked.
    pub fn is_ses(&self, manifold: &Manifold) -> bool {
        self.internal_manifold().iter().all(|s| manifold.contains(s))
    }

    /// Excitations internal to both sub-algebras.
    pub fn shared_amplitudes(&self, other: &SubAlgebra) -> Manifold {
        self.internal_manifold().into_iter().filter(|s| other.contains(s)).collect()
    }

    /// Literal in the config syntax (1-based).
    pub fn to_literal(&self) -> String {
        let list = |v: &[usize]| {
            let items: Vec<String> = v.iter().map(|i| format!("{}", i + 1)).collect();
            format!("[{}]", items.join(","))
        };
        let s = match &self.virtuals {
            VirtualSelection::All => String::from("ALL"),
            VirtualSelection::Set(s) => list(s),
        };
        format!("R={};S={}", list(&self.occupied), s)
    }
}

impl fmt::Display for SubAlgebra {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_literal())
    }
}

fn parse_index_list(text: &str) -> Result<Vec<usize>> {
    let t = text.trim();
    let inner = t
        .strip_prefix('[')
        .and_then(|x| x.strip_suffix(']'))
        .ok_or_else(|| Error::usage(format!("expected a bracketed index list, got `{t}`")))?;
    let mut out = Vec::new();
    for item in inner.split(',').map(str::trim).filter(|x| !x.is_empty()) {
        let k: usize = item.parse().map_err(|_| Error::usage(format!("bad orbital index `{item}`")))?;
        if k == 0 {
            return Err(Error::usage("orbital indices in literals are 1-based"));
        }
        out.push(k - 1);
    }
    Ok(out)
}

/// Internal and external parts of a manifold relative to a sub-algebra.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifoldPartition {
    pub internal: Manifold,
    pub external: Manifold,
}

/// Complete active space of a sub-algebra; the reference is element 0 and the
/// remaining determinants follow the internal manifold order.
#[derive(Clone, Debug, PartialEq)]
pub struct CasSpace {
    space: DeterminantSpace,
    generator: SubAlgebra,
}

impl CasSpace {
    #[inline]
    pub fn space(&self) -> &DeterminantSpace {
        &self.space
    }

    #[inline]
    pub fn generator(&self) -> &SubAlgebra {
        &self.generator
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.space.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.space.is_empty()
    }

    /// Positions of the CAS determinants inside `ambient`.
    pub fn indices_in(&self, ambient: &DeterminantSpace) -> Result<Vec<usize>> {
        self.space
            .dets()
            .iter()
            .map(|&d| {
                ambient
                    .index_of(d)
                    .ok_or_else(|| Error::usage(format!("CAS determinant {d} missing from ambient space")))
            })
            .collect()
    }

    /// Orthogonal projector onto the CAS in `ambient` coordinates.
    pub fn projector(&self, ambient: &DeterminantSpace) -> Result<DMatrix<f64>> {
        let n = ambient.len();
        let mut p = DMatrix::zeros(n, n);
        for k in self.indices_in(ambient)? {
            p[(k, k)] = 1.0;
        }
        Ok(p)
    }
}

/// Union of the internal manifolds; shared excitations appear once.
pub fn union_manifold(subalgebras: &[SubAlgebra]) -> Manifold {
    let mut out = Manifold::new();
    for h in subalgebras {
        out.extend(h.internal_manifold());
    }
    out
}

/// How many of the sub-algebras contain each excitation of the union.
pub fn multiplicities(subalgebras: &[SubAlgebra]) -> Vec<(ExcitationSignature, usize)> {
    union_manifold(subalgebras)
        .into_iter()
        .map(|s| (s, subalgebras.iter().filter(|h| h.contains(&s)).count()))
        .collect()
}

/// Sub-algebra spanning all occupied and virtual orbitals.
pub fn full_algebra(basis: SpinOrbitalBasis) -> Result<SubAlgebra> {
    let occ: Vec<usize> = (0..basis.n_occupied_spatial()).collect();
    SubAlgebra::new(basis, &occ, VirtualSelection::All)
}
