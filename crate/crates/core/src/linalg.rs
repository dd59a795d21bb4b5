//! Small dense helpers on top of nalgebra's Cholesky.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};

pub type Chol = Cholesky<f64, Dyn>;

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Cholesky factor of a symmetric matrix, failing with a labelled error.
pub fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<Chol> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite(format!("{what}: non-finite entries")));
    }
    Cholesky::new(symmetrize(m))
        .ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

/// Cholesky with one retry after adding `1e-10 * trace / d` to the diagonal.
///
/// Returns the (possibly jittered) matrix together with its factor.
pub fn cholesky_jitter(m: &DMatrix<f64>, what: &str) -> Result<(DMatrix<f64>, Chol)> {
    let s = symmetrize(m);
    if let Ok(c) = cholesky(&s, what) {
        return Ok((s, c));
    }
    let d = s.nrows();
    let jitter = 1e-10 * s.trace() / d as f64;
    if !(jitter > 0.0) {
        return Err(Error::Singular(format!("{what}: non-positive trace")));
    }
    let mut j = s;
    for i in 0..d {
        j[(i, i)] += jitter;
    }
    match Cholesky::new(j.clone()) {
        Some(c) => {
            log::debug!("{what}: accepted after diagonal jitter {jitter:e}");
            Ok((j, c))
        }
        None => Err(Error::Singular(format!("{what}: not positive definite after jitter"))),
    }
}

pub fn logdet(c: &Chol) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// `L^{-1} B` for the lower factor of `c`.
pub fn solve_lower(c: &Chol, b: &DMatrix<f64>) -> DMatrix<f64> {
    c.l()
        .solve_lower_triangular(b)
        .expect("cholesky factor has a positive diagonal")
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= tol * m.amax().max(1.0)
}

pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    m.is_square() && Cholesky::new(symmetrize(m)).is_some()
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Column-stacking vectorisation.
pub fn vec_col(m: &DMatrix<f64>) -> Vec<f64> {
    m.as_slice().to_vec()
}
