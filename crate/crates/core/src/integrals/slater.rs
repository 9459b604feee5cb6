use alloc::vec::Vec;

use nalgebra::DMatrix;

use super::{DeterminantSpace, HamiltonianSpec};
use crate::fock::{Bits, Determinant};
use crate::{Error, Result};

/// Integral label contributing to a matrix element (spatial indices).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    Core,
    One(usize, usize),
    Two(usize, usize, usize, usize),
}

#[inline]
fn same_spin(p: usize, q: usize) -> bool {
    (p ^ q) & 1 == 0
}

#[inline]
fn parity_below(bits: u64, p: usize) -> bool {
    let mask = if p == 0 { 0 } else { u64::MAX >> (64 - p) };
    (bits & mask).count_ones() & 1 == 1
}

/// Calls `f(term, coefficient)` for every integral entering `⟨bra|H|ket⟩`,
/// so that the element equals `Σ coefficient · value(term)`. Coefficients are
/// `±1` and already carry the fermionic phase.
pub fn for_each_term(bra: Determinant, ket: Determinant, mut f: impl FnMut(Term, f64)) {
    let (b, k) = (bra.bits(), ket.bits());
    let created = b & !k;
    let removed = k & !b;
    if created.count_ones() != removed.count_ones() {
        return;
    }
    match created.count_ones() {
        0 => {
            f(Term::Core, 1.0);
            let occ: Vec<usize> = Bits(k).collect();
            for (n, &i) in occ.iter().enumerate() {
                f(Term::One(i / 2, i / 2), 1.0);
                for &j in &occ[n + 1..] {
                    f(Term::Two(i / 2, i / 2, j / 2, j / 2), 1.0);
                    if same_spin(i, j) {
                        f(Term::Two(i / 2, j / 2, j / 2, i / 2), -1.0);
                    }
                }
            }
        }
        1 => {
            let p = created.trailing_zeros() as usize;
            let q = removed.trailing_zeros() as usize;
            if !same_spin(p, q) {
                return;
            }
            // a†_p a_q |ket⟩
            let mid = k & !(1 << q);
            let odd = parity_below(k, q) ^ parity_below(mid, p);
            let sign = if odd { -1.0 } else { 1.0 };
            f(Term::One(p / 2, q / 2), sign);
            for j in Bits(k & b) {
                f(Term::Two(p / 2, q / 2, j / 2, j / 2), sign);
                if same_spin(p, j) {
                    f(Term::Two(p / 2, j / 2, j / 2, q / 2), -sign);
                }
            }
        }
        2 => {
            let mut cr = Bits(created);
            let (p, r) = (cr.next().unwrap(), cr.next().unwrap());
            let mut rm = Bits(removed);
            let (q, s) = (rm.next().unwrap(), rm.next().unwrap());
            // a†_p a†_r a_s a_q |ket⟩
            let mut bits = k;
            let mut odd = parity_below(bits, q);
            bits &= !(1 << q);
            odd ^= parity_below(bits, s);
            bits &= !(1 << s);
            odd ^= parity_below(bits, r);
            bits |= 1 << r;
            odd ^= parity_below(bits, p);
            let sign = if odd { -1.0 } else { 1.0 };
            if same_spin(p, q) && same_spin(r, s) {
                f(Term::Two(p / 2, q / 2, r / 2, s / 2), sign);
            }
            if same_spin(p, s) && same_spin(r, q) {
                f(Term::Two(p / 2, s / 2, r / 2, q / 2), -sign);
            }
        }
        _ => {}
    }
}

#[inline]
fn term_value(h: &HamiltonianSpec, term: Term) -> f64 {
    match term {
        Term::Core => h.core_energy(),
        Term::One(p, q) => h.h(p, q),
        Term::Two(p, q, r, s) => h.eri(p, q, r, s),
    }
}

#[inline]
pub(crate) fn element_unchecked(bra: Determinant, ket: Determinant, h: &HamiltonianSpec) -> f64 {
    let mut acc = 0.0;
    for_each_term(bra, ket, |term, c| acc += c * term_value(h, term));
    acc
}

/// `⟨bra|H|ket⟩` by the Slater–Condon rules.
pub fn matrix_element(bra: Determinant, ket: Determinant, h: &HamiltonianSpec) -> Result<f64> {
    if bra.alpha_count() != ket.alpha_count() || bra.beta_count() != ket.beta_count() {
        return Err(Error::usage("determinants belong to different sectors"));
    }
    let limit = 2 * h.n_spatial();
    if (bra.bits() | ket.bits()) >> limit != 0 {
        return Err(Error::usage("determinant occupies orbitals outside the basis"));
    }
    Ok(element_unchecked(bra, ket, h))
}

/// Dense `⟨μ|H|ν⟩` over a determinant space; exactly symmetric.
pub fn assemble_matrix(space: &DeterminantSpace, h: &HamiltonianSpec, cap: usize) -> Result<DMatrix<f64>> {
    let n = space.len();
    if n > cap {
        return Err(Error::Resource { dimension: n, cap });
    }
    if let Some(first) = space.dets().first() {
        for &d in space.dets() {
            matrix_element(d, *first, h)?;
        }
    }
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = element_unchecked(space.det(i), space.det(j), h);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}
