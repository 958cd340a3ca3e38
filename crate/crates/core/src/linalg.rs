//! Small dense Hermitian helpers on top of nalgebra.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;

pub const COND_LIMIT: f64 = 1e12;

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn diag(entries: &[f64]) -> CMat {
    let n = entries.len();
    CMat::from_fn(n, n, |i, j| if i == j { c(entries[i], 0.0) } else { C64::default() })
}

/// Ascending eigenvalues of the Hermitian part of `m`.
pub fn hermitian_eigenvalues(m: &CMat) -> Vec<f64> {
    let h = hermitian_part(m);
    let mut ev: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()) * c(0.5, 0.0)
}

pub fn min_eigenvalue(m: &CMat) -> f64 {
    hermitian_eigenvalues(m)[0]
}

/// Largest entrywise deviation from Hermitian symmetry.
pub fn hermitian_defect(m: &CMat) -> f64 {
    (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Inverse of a Hermitian positive-definite matrix, refusing condition numbers above `COND_LIMIT`.
pub fn inverse_guarded(m: &CMat, node: usize) -> Result<CMat> {
    let ev = hermitian_eigenvalues(m);
    let (lo, hi) = (ev[0], ev[ev.len() - 1]);
    if !(lo > 0.0) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::NotPositive { node });
    }
    let cond = hi / lo;
    if cond > COND_LIMIT {
        return Err(Error::DegenerateMetric { node, cond });
    }
    m.clone().lu().try_inverse().ok_or(Error::DegenerateMetric { node, cond: f64::INFINITY })
}

/// Eigenvalues of `a` relative to the positive-definite `b`, i.e. of `L⁻¹ a L⁻*` with `b = L L*`.
pub fn generalized_eigenvalues(a: &CMat, b: &CMat, node: usize) -> Result<Vec<f64>> {
    let chol = b.clone().cholesky().ok_or(Error::NotPositive { node })?;
    let l = chol.l();
    let linv = l.try_inverse().ok_or(Error::NotPositive { node })?;
    let m = &linv * hermitian_part(a) * linv.adjoint();
    Ok(hermitian_eigenvalues(&m))
}

/// `m^p` for Hermitian positive-definite `m`.
pub fn hermitian_power(m: &CMat, p: f64) -> CMat {
    let eig = hermitian_part(m).symmetric_eigen();
    let d = CMat::from_fn(m.nrows(), m.ncols(), |i, j| {
        if i == j {
            c(eig.eigenvalues[i].powf(p), 0.0)
        } else {
            C64::default()
        }
    });
    &eig.eigenvectors * d * eig.eigenvectors.adjoint()
}

/// `vᵀ M w̄`, the sesquilinear pairing used for all Hermitian norms.
pub fn sesq(v: &[C64], m: &CMat, w: &[C64]) -> C64 {
    let n = v.len();
    let mut acc = C64::default();
    for i in 0..n {
        for j in 0..n {
            acc += v[i] * m[(i, j)] * w[j].conj();
        }
    }
    acc
}

/// `vᵀ M w`, the complex-bilinear pairing.
pub fn bilinear(v: &[C64], m: &CMat, w: &[C64]) -> C64 {
    let n = v.len();
    let mut acc = C64::default();
    for i in 0..n {
        for j in 0..n {
            acc += v[i] * m[(i, j)] * w[j];
        }
    }
    acc
}

pub fn norm_sq(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}
