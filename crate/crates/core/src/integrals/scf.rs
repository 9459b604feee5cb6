use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use super::HamiltonianSpec;
use crate::linalg::{least_squares, symmetric_eigen};
use crate::{Error, Result};

/// Mean-field operator of the closed-shell reference in the given orbitals,
/// `f_pq = h_pq + Σ_i [2(pq|ii) − (pi|iq)]` over doubly occupied `i`.
pub fn fock_matrix(h: &HamiltonianSpec) -> DMatrix<f64> {
    let n = h.n_spatial();
    let n_occ = h.n_electrons() / 2;
    DMatrix::from_fn(n, n, |p, q| {
        h.h(p, q) + (0..n_occ).map(|i| 2.0 * h.eri(p, q, i, i) - h.eri(p, i, i, q)).sum::<f64>()
    })
}

/// Diagonal of the mean-field operator, provided the orbitals are canonical.
pub fn orbital_energies(h: &HamiltonianSpec) -> Result<Vec<f64>> {
    let f = fock_matrix(h);
    let n = f.nrows();
    let mut off: f64 = 0.0;
    for p in 0..n {
        for q in 0..n {
            if p != q {
                off = off.max(f[(p, q)].abs());
            }
        }
    }
    if off > 1e-8 {
        return Err(Error::NonCanonical { max_off_diagonal: off });
    }
    Ok((0..n).map(|p| f[(p, p)]).collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScfConfig {
    pub max_iterations: usize,
    /// Bound on the largest orbital-gradient (occupied-virtual Fock) element.
    pub tolerance: f64,
    pub diis_depth: usize,
}

impl Default for ScfConfig {
    fn default() -> Self {
        ScfConfig { max_iterations: 500, tolerance: 1e-11, diis_depth: 8 }
    }
}

/// Result of rotating a Hamiltonian into canonical restricted Hartree–Fock orbitals.
#[derive(Clone, Debug)]
pub struct Canonical {
    pub hamiltonian: HamiltonianSpec,
    pub orbital_energies: Vec<f64>,
    /// Columns are the new orbitals in the old basis.
    pub coefficients: DMatrix<f64>,
    pub iterations: usize,
}

fn density(c: &DMatrix<f64>, n_occ: usize) -> DMatrix<f64> {
    let occ = c.columns(0, n_occ);
    occ * occ.transpose()
}

fn fock_from_density(h: &HamiltonianSpec, d: &DMatrix<f64>) -> DMatrix<f64> {
    let n = h.n_spatial();
    DMatrix::from_fn(n, n, |p, q| {
        let mut acc = h.h(p, q);
        for r in 0..n {
            for s in 0..n {
                let drs = d[(r, s)];
                if drs != 0.0 {
                    acc += drs * (2.0 * h.eri(p, q, r, s) - h.eri(p, s, r, q));
                }
            }
        }
        acc
    })
}

/// Closed-shell Roothaan iterations with DIIS, starting from the core guess,
/// followed by an integral transformation into the canonical orbitals.
pub fn canonicalize(h: &HamiltonianSpec, cfg: &ScfConfig) -> Result<Canonical> {
    let n_occ = h.n_electrons() / 2;
    let (_, mut c) = symmetric_eigen(h.one_body())?;
    let mut fock_history: VecDeque<DMatrix<f64>> = VecDeque::new();
    let mut error_history: VecDeque<DMatrix<f64>> = VecDeque::new();
    for iteration in 1..=cfg.max_iterations {
        let d = density(&c, n_occ);
        let f = fock_from_density(h, &d);
        let err = &f * &d - &d * &f;
        let gradient = err.iter().map(|x| x.abs()).fold(0.0, f64::max);
        if gradient <= cfg.tolerance {
            let (_, cf) = symmetric_eigen(&f)?;
            let hamiltonian = h.rotated(&cf)?;
            let orbital_energies = orbital_energies(&hamiltonian)?;
            return Ok(Canonical { hamiltonian, orbital_energies, coefficients: cf, iterations: iteration });
        }
        fock_history.push_back(f.clone());
        error_history.push_back(err);
        if fock_history.len() > cfg.diis_depth.max(1) {
            fock_history.pop_front();
            error_history.pop_front();
        }
        let f_next = if cfg.diis_depth > 1 && fock_history.len() > 1 {
            diis_extrapolate(&fock_history, &error_history).unwrap_or(f)
        } else {
            f
        };
        c = symmetric_eigen(&f_next)?.1;
    }
    Err(Error::numeric(format!("SCF did not converge in {} iterations", cfg.max_iterations)))
}

fn diis_extrapolate(focks: &VecDeque<DMatrix<f64>>, errors: &VecDeque<DMatrix<f64>>) -> Option<DMatrix<f64>> {
    let m = focks.len();
    let mut b = DMatrix::<f64>::zeros(m + 1, m + 1);
    for i in 0..m {
        for j in 0..m {
            b[(i, j)] = errors[i].dot(&errors[j]);
        }
        b[(i, m)] = -1.0;
        b[(m, i)] = -1.0;
    }
    let mut rhs = DVector::<f64>::zeros(m + 1);
    rhs[m] = -1.0;
    let w = least_squares(&b, &rhs).ok()?;
    let mut out = focks[0].clone() * w[0];
    for i in 1..m {
        out += &focks[i] * w[i];
    }
    out.iter().all(|x| x.is_finite()).then_some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrals::{build_model, ModelSpec};

    #[test]
    fn half_filled_chain_is_canonical_after_rotation() {
        let h = build_model(&ModelSpec::HubbardChain {
            sites: 4,
            hopping: 1.0,
            onsite: 2.0,
            periodic: false,
            n_electrons: 4,
        })
        .unwrap();
        assert!(matches!(orbital_energies(&h), Err(Error::NonCanonical { .. })));
        let canon = canonicalize(&h, &ScfConfig::default()).unwrap();
        let eps = &canon.orbital_energies;
        assert!(eps.windows(2).all(|w| w[0] <= w[1]));
        // uniform density: eps = hückel + U/2
        let huckel = 2.0 * (core::f64::consts::PI / 5.0).cos();
        assert!((eps[0] - (-huckel + 1.0)).abs() < 1e-9);
    }

    #[test]
    fn doped_chain_converges() {
        let h = build_model(&ModelSpec::HubbardChain {
            sites: 3,
            hopping: 1.0,
            onsite: 3.0,
            periodic: false,
            n_electrons: 4,
        })
        .unwrap();
        let canon = canonicalize(&h, &ScfConfig::default()).unwrap();
        let f = fock_matrix(&canon.hamiltonian);
        for p in 0..3 {
            for q in 0..3 {
                if p != q {
                    assert!(f[(p, q)].abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn pairing_model_is_already_canonical() {
        let h = build_model(&ModelSpec::Pairing { levels: 4, spacing: 1.0, strength: 0.3, n_electrons: 4 }).unwrap();
        let eps = orbital_energies(&h).unwrap();
        assert!((eps[0] - (0.0 - 0.3)).abs() < 1e-15);
        assert!((eps[3] - 3.0).abs() < 1e-15);
    }
}
