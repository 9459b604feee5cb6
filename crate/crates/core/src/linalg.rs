//! Dense linear-algebra helpers on top of nalgebra: nilpotent and scaled
//! matrix exponentials, ground-state selection for non-symmetric matrices,
//! sorted symmetric eigendecompositions and least-squares solves.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{ComplexField, DMatrix, DVector, Schur, SymmetricEigen, SVD};
use num_complex::Complex64;

use crate::{Error, Result};

/// Field of amplitudes and matrix elements: `f64` on the stationary path,
/// `Complex64` for real-time propagation.
pub trait Scalar: ComplexField<RealField = f64> + Copy + Send + Sync {
    fn to_complex(self) -> Complex64;
}

impl Scalar for f64 {
    #[inline]
    fn to_complex(self) -> Complex64 {
        Complex64::new(self, 0.0)
    }
}

impl Scalar for Complex64 {
    #[inline]
    fn to_complex(self) -> Complex64 {
        self
    }
}

const SCHUR_EPS: f64 = 1e-15;
const MAX_SWEEPS: usize = 10_000;

/// Exact `exp(m)` for a nilpotent matrix: the Taylor series is summed until a
/// power vanishes identically. More than `max_power` nonzero powers means `m`
/// is not nilpotent of the expected order.
pub fn exp_nilpotent<T: Scalar>(m: &DMatrix<T>, max_power: usize) -> Result<DMatrix<T>> {
    let n = m.nrows();
    let mut out = DMatrix::<T>::identity(n, n);
    let mut term = DMatrix::<T>::identity(n, n);
    for k in 1..=max_power + 1 {
        term = (&term * m).unscale(k as f64);
        if term.iter().all(|x| x.is_zero()) {
            return Ok(out);
        }
        out += &term;
    }
    Err(Error::usage(format!("operator is not nilpotent within {max_power} powers")))
}

/// `exp(m)` by scaling and squaring with a Taylor series truncated once a term
/// drops below machine epsilon relative to the partial sum.
pub fn expm(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let norm = m.iter().map(|x| x.abs()).fold(0.0, f64::max) * n as f64;
    let mut squarings = 0u32;
    let mut scale = 1.0;
    while norm * scale > 0.5 {
        scale *= 0.5;
        squarings += 1;
        if squarings > 1000 {
            return Err(Error::numeric("matrix exponential scaling did not terminate"));
        }
    }
    let a = m * scale;
    let mut out = DMatrix::<f64>::identity(n, n);
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut converged = false;
    for k in 1..=60 {
        term = (&term * &a) / k as f64;
        out += &term;
        let t = term.iter().map(|x| x.abs()).fold(0.0, f64::max);
        let s = out.iter().map(|x| x.abs()).fold(0.0, f64::max);
        if t <= f64::EPSILON * s {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::numeric("matrix exponential series did not converge"));
    }
    for _ in 0..squarings {
        out = &out * &out;
    }
    Ok(out)
}

/// Eigenvalues (ascending) and matching eigenvector columns of a symmetric matrix.
pub fn symmetric_eigen(m: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    if n == 0 {
        return Ok((Vec::new(), DMatrix::zeros(0, 0)));
    }
    let eig = SymmetricEigen::try_new(m.clone(), SCHUR_EPS, MAX_SWEEPS)
        .ok_or_else(|| Error::numeric("symmetric eigensolver did not converge"))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        vectors.set_column(col, &eig.eigenvectors.column(k));
    }
    Ok((values, vectors))
}

/// All eigenpairs of a general square matrix, via complex Schur form and
/// back substitution. Eigenvectors are normalized to unit 2-norm.
pub fn general_eigen<T: Scalar>(m: &DMatrix<T>) -> Result<Vec<(Complex64, DVector<Complex64>)>> {
    let n = m.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mc: DMatrix<Complex64> = m.map(|x| x.to_complex());
    if !mc.iter().all(|x| x.re.is_finite() && x.im.is_finite()) {
        return Err(Error::numeric("non-finite matrix entry"));
    }
    let (q, t) = Schur::try_new(mc, SCHUR_EPS, MAX_SWEEPS)
        .ok_or_else(|| Error::numeric("Schur decomposition did not converge"))?
        .unpack();
    let scale = t.iter().map(|x| x.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let smin = scale * f64::EPSILON;
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let lambda = t[(k, k)];
        let mut x = DVector::<Complex64>::zeros(n);
        x[k] = Complex64::new(1.0, 0.0);
        for j in (0..k).rev() {
            let mut s = Complex64::new(0.0, 0.0);
            for l in j + 1..=k {
                s += t[(j, l)] * x[l];
            }
            let mut d = t[(j, j)] - lambda;
            if d.norm() < smin {
                d = Complex64::new(smin, 0.0);
            }
            x[j] = -s / d;
        }
        let v = &q * x;
        let norm = v.norm();
        out.push((lambda, v.unscale(norm)));
    }
    Ok(out)
}

/// Ground root of a (possibly non-symmetric) effective Hamiltonian: the
/// eigenvector with the largest reference weight `|v[0]|`, ties broken by the
/// lowest real part. Returns the eigenvalue and the eigenvector in
/// intermediate normalization (`v[0] = 1`).
pub fn select_reference_root(m: &DMatrix<f64>) -> Result<(f64, DVector<f64>)> {
    let pairs = general_eigen(m)?;
    let mut best: Option<(usize, f64)> = None;
    for (k, (lambda, v)) in pairs.iter().enumerate() {
        let w = v[0].norm();
        best = match best {
            None => Some((k, w)),
            Some((b, bw)) => {
                if w > bw + 1e-10 || ((w - bw).abs() <= 1e-10 && lambda.re < pairs[b].0.re) {
                    Some((k, w))
                } else {
                    Some((b, bw))
                }
            }
        };
    }
    let (k, weight) = best.ok_or_else(|| Error::usage("empty effective Hamiltonian"))?;
    if weight < 1e-8 {
        return Err(Error::IntruderState { reference_weight: weight });
    }
    let (lambda, v) = &pairs[k];
    if lambda.im.abs() > 1e-8 * lambda.re.abs().max(1.0) {
        return Err(Error::NonRealRoot { re: lambda.re, im: lambda.im.abs() });
    }
    let c0 = v[0];
    let c = v.map(|x| (x / c0).re);
    Ok((lambda.re, c))
}

/// Minimum-norm least-squares solution of `a x = b`.
pub fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if a.ncols() == 0 {
        return Ok(DVector::zeros(0));
    }
    let svd = SVD::new(a.clone(), true, true);
    let cutoff = svd.singular_values.iter().copied().fold(0.0, f64::max) * 1e-12;
    svd.solve(b, cutoff).map_err(|e| Error::numeric(format!("least squares: {e}")))
}

/// Largest absolute entry.
pub fn max_abs<T: Scalar>(m: &DMatrix<T>) -> f64 {
    m.iter().map(|x| x.modulus()).fold(0.0, f64::max)
}

/// Largest absolute entry of `m - mᵀ`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}
