//! Hamiltonian data in a restricted spatial-orbital basis, model builders,
//! Slater–Condon matrix elements and dense sector assembly.

mod scf;
mod slater;
mod space;

pub use scf::{canonicalize, fock_matrix, orbital_energies, Canonical, ScfConfig};
pub use slater::{assemble_matrix, for_each_term, matrix_element, Term};
pub(crate) use space::binomial;
pub use space::{DeterminantSpace, Sector};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::fock::SpinOrbitalBasis;
use crate::{Error, Result};

/// Index permutations under which stored `(pq|rs)` values are invariant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TwoBodySymmetry {
    /// `p↔q`, `r↔s`, `(pq)↔(rs)`: real orbitals with a density-density kernel.
    EightFold,
    /// `(pq)↔(rs)` and simultaneous `p↔q, r↔s` only. Needed for pair-hopping
    /// interactions such as the reduced BCS model.
    FourFold,
}

impl TwoBodySymmetry {
    /// Every index quadruple that must carry the same value as `(p, q, r, s)`.
    pub fn images(self, p: usize, q: usize, r: usize, s: usize) -> Vec<[usize; 4]> {
        let mut out = vec![[p, q, r, s], [r, s, p, q], [q, p, s, r], [s, r, q, p]];
        if self == TwoBodySymmetry::EightFold {
            out.extend([[q, p, r, s], [p, q, s, r], [r, s, q, p], [s, r, p, q]]);
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Lexicographically smallest image; the canonical storage key.
    pub fn canonical(self, p: usize, q: usize, r: usize, s: usize) -> [usize; 4] {
        self.images(p, q, r, s)[0]
    }
}

/// Spin-free Hamiltonian `E_core + Σ h_pq E_pq + ½ Σ (pq|rs) (E_pq E_rs − δ_qr E_ps)`
/// over `n_spatial` real orbitals, with the electron count of the intended
/// closed-shell reference.
#[derive(Clone, Debug, PartialEq)]
pub struct HamiltonianSpec {
    n_spatial: usize,
    n_electrons: usize,
    core_energy: f64,
    one_body: DMatrix<f64>,
    two_body: Vec<f64>,
    symmetry: TwoBodySymmetry,
}

impl HamiltonianSpec {
    /// A Hamiltonian with zero one- and two-body parts.
    pub fn new(n_spatial: usize, n_electrons: usize, symmetry: TwoBodySymmetry) -> Result<Self> {
        SpinOrbitalBasis::new(n_spatial, n_electrons)?;
        Ok(HamiltonianSpec {
            n_spatial,
            n_electrons,
            core_energy: 0.0,
            one_body: DMatrix::zeros(n_spatial, n_spatial),
            two_body: vec![0.0; n_spatial.pow(4)],
            symmetry,
        })
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
    pub fn core_energy(&self) -> f64 {
        self.core_energy
    }

    #[inline]
    pub fn symmetry(&self) -> TwoBodySymmetry {
        self.symmetry
    }

    pub fn basis(&self) -> SpinOrbitalBasis {
        SpinOrbitalBasis::new(self.n_spatial, self.n_electrons).expect("validated at construction")
    }

    #[inline]
    pub fn one_body(&self) -> &DMatrix<f64> {
        &self.one_body
    }

    #[inline]
    pub fn h(&self, p: usize, q: usize) -> f64 {
        self.one_body[(p, q)]
    }

    /// Chemists' notation `(pq|rs)`.
    #[inline]
    pub fn eri(&self, p: usize, q: usize, r: usize, s: usize) -> f64 {
        let n = self.n_spatial;
        self.two_body[((p * n + q) * n + r) * n + s]
    }

    pub fn set_core_energy(&mut self, value: f64) -> Result<()> {
        check_finite(value)?;
        self.core_energy = value;
        Ok(())
    }

    /// Sets `h_pq = h_qp = value`.
    pub fn set_one_body(&mut self, p: usize, q: usize, value: f64) -> Result<()> {
        self.check_indices(&[p, q])?;
        check_finite(value)?;
        self.one_body[(p, q)] = value;
        self.one_body[(q, p)] = value;
        Ok(())
    }

    /// Sets `(pq|rs)` and all of its symmetry images.
    pub fn set_two_body(&mut self, p: usize, q: usize, r: usize, s: usize, value: f64) -> Result<()> {
        self.check_indices(&[p, q, r, s])?;
        check_finite(value)?;
        let n = self.n_spatial;
        for [a, b, c, d] in self.symmetry.images(p, q, r, s) {
            self.two_body[((a * n + b) * n + c) * n + d] = value;
        }
        Ok(())
    }

    /// Unique two-body entries `(canonical index, value)` in lexicographic order,
    /// zeros omitted.
    pub fn unique_two_body(&self) -> Vec<([usize; 4], f64)> {
        let n = self.n_spatial;
        let mut out = Vec::new();
        for p in 0..n {
            for q in 0..n {
                for r in 0..n {
                    for s in 0..n {
                        let v = self.eri(p, q, r, s);
                        if v != 0.0 && self.symmetry.canonical(p, q, r, s) == [p, q, r, s] {
                            out.push(([p, q, r, s], v));
                        }
                    }
                }
            }
        }
        out
    }

    /// Largest violation of the declared permutational symmetries.
    pub fn symmetry_defect(&self) -> f64 {
        let n = self.n_spatial;
        let mut worst: f64 = 0.0;
        for p in 0..n {
            for q in 0..n {
                worst = worst.max((self.h(p, q) - self.h(q, p)).abs());
                for r in 0..n {
                    for s in 0..n {
                        let v = self.eri(p, q, r, s);
                        for [a, b, c, d] in self.symmetry.images(p, q, r, s) {
                            worst = worst.max((v - self.eri(a, b, c, d)).abs());
                        }
                    }
                }
            }
        }
        worst
    }

    /// Whether the two-body tensor also has the full eight-fold symmetry.
    pub fn is_eight_fold(&self) -> bool {
        let n = self.n_spatial;
        (0..n).all(|p| (0..n).all(|q| (0..n).all(|r| (0..n).all(|s| self.eri(p, q, r, s) == self.eri(q, p, r, s)))))
    }

    /// Integrals in the orbital basis given by the columns of `c`
    /// (`φ'_k = Σ_p c_pk φ_p`).
    pub fn rotated(&self, c: &DMatrix<f64>) -> Result<HamiltonianSpec> {
        let n = self.n_spatial;
        if c.nrows() != n || c.ncols() != n {
            return Err(Error::usage("orbital rotation has the wrong shape"));
        }
        let one_body = c.transpose() * &self.one_body * c;
        let mut a = self.two_body.clone();
        let mut b = vec![0.0; a.len()];
        // transform one index per pass, cycling the slot order so each pass
        // treats the leading index
        for _ in 0..4 {
            for p in 0..n {
                for q in 0..n {
                    for r in 0..n {
                        for s in 0..n {
                            let mut acc = 0.0;
                            for t in 0..n {
                                acc += c[(t, p)] * a[((t * n + q) * n + r) * n + s];
                            }
                            // store as (q r s p) so the next pass reaches q
                            b[((q * n + r) * n + s) * n + p] = acc;
                        }
                    }
                }
            }
            core::mem::swap(&mut a, &mut b);
        }
        let mut out = HamiltonianSpec {
            n_spatial: n,
            n_electrons: self.n_electrons,
            core_energy: self.core_energy,
            one_body,
            two_body: a,
            symmetry: self.symmetry,
        };
        out.symmetrize();
        Ok(out)
    }

    /// Averages the stored values over their symmetry images.
    fn symmetrize(&mut self) {
        let n = self.n_spatial;
        let h = &self.one_body;
        self.one_body = (h + h.transpose()) * 0.5;
        let mut out = self.two_body.clone();
        for p in 0..n {
            for q in 0..n {
                for r in 0..n {
                    for s in 0..n {
                        let images = self.symmetry.images(p, q, r, s);
                        let mean =
                            images.iter().map(|&[a, b, c, d]| self.eri(a, b, c, d)).sum::<f64>() / images.len() as f64;
                        out[((p * n + q) * n + r) * n + s] = mean;
                    }
                }
            }
        }
        self.two_body = out;
    }

    fn check_indices(&self, idx: &[usize]) -> Result<()> {
        match idx.iter().find(|&&p| p >= self.n_spatial) {
            Some(p) => Err(Error::usage(format!("orbital index {p} out of range for {} orbitals", self.n_spatial))),
            None => Ok(()),
        }
    }
}

fn check_finite(v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::usage("non-finite integral value"))
    }
}

/// Built-in lattice and pairing models.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelSpec {
    /// One-band Hubbard chain in the site basis.
    HubbardChain { sites: usize, hopping: f64, onsite: f64, periodic: bool, n_electrons: usize },
    /// Reduced BCS Hamiltonian `Σ ε_p n_p − g Σ_pq P†_p P_q` over doubly
    /// degenerate levels with `ε_p = p · spacing`.
    Pairing { levels: usize, spacing: f64, strength: f64, n_electrons: usize },
}

/// Builds the integrals of a model.
pub fn build_model(spec: &ModelSpec) -> Result<HamiltonianSpec> {
    match *spec {
        ModelSpec::HubbardChain { sites, hopping, onsite, periodic, n_electrons } => {
            if sites == 0 {
                return Err(Error::usage("Hubbard chain needs at least one site"));
            }
            check_finite(hopping)?;
            check_finite(onsite)?;
            let mut ham = HamiltonianSpec::new(sites, n_electrons, TwoBodySymmetry::EightFold)?;
            let mut bonds: Vec<(usize, usize)> = (1..sites).map(|i| (i - 1, i)).collect();
            if periodic && sites > 2 {
                bonds.push((sites - 1, 0));
            }
            for (i, j) in bonds {
                let v = ham.h(i, j) - hopping;
                ham.set_one_body(i, j, v)?;
            }
            for i in 0..sites {
                ham.set_two_body(i, i, i, i, onsite)?;
            }
            Ok(ham)
        }
        ModelSpec::Pairing { levels, spacing, strength, n_electrons } => {
            if levels == 0 {
                return Err(Error::usage("pairing model needs at least one level"));
            }
            check_finite(spacing)?;
            check_finite(strength)?;
            let mut ham = HamiltonianSpec::new(levels, n_electrons, TwoBodySymmetry::FourFold)?;
            for p in 0..levels {
                ham.set_one_body(p, p, p as f64 * spacing)?;
                for q in 0..levels {
                    ham.set_two_body(p, q, p, q, -strength)?;
                }
            }
            Ok(ham)
        }
    }
}
