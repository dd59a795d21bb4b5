//! Oracles shared by the integration test targets.
#![allow(dead_code)]

use std::f64::consts::PI;

use matrixt::specfun::ln_gamma;
use nalgebra::{DMatrix, DVector};

pub fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    while b - a > tol {
        let c = b - r * (b - a);
        let d = a + r * (b - a);
        if f(c) >= f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

/// Liu-Rubin ECME for the multivariate t with scale matrix `Ψ`.
pub fn vector_t_ecme(x: &[DVector<f64>]) -> (f64, DVector<f64>, DMatrix<f64>) {
    let n = x.len() as f64;
    let d = x[0].len();
    let df = d as f64;
    let mut mu = x.iter().fold(DVector::zeros(d), |a, v| a + v) / n;
    let mut psi = x.iter().fold(DMatrix::zeros(d, d), |a, v| a + (v - &mu) * (v - &mu).transpose()) / n;
    let mut nu = 10.0;
    let deltas = |mu: &DVector<f64>, psi: &DMatrix<f64>| -> Vec<f64> {
        let inv = psi.clone().try_inverse().unwrap();
        x.iter()
            .map(|v| {
                let r = v - mu;
                (r.transpose() * &inv * &r)[(0, 0)]
            })
            .collect()
    };
    let loglik = |delta: &[f64], ld: f64, nu: f64| {
        delta
            .iter()
            .map(|dl| {
                ln_gamma((nu + df) / 2.0) - ln_gamma(nu / 2.0) - df / 2.0 * (nu * PI).ln() - 0.5 * ld
                    - (nu + df) / 2.0 * (1.0 + dl / nu).ln()
            })
            .sum::<f64>()
    };
    let mut ll = f64::NEG_INFINITY;
    for _ in 0..20_000 {
        let w: Vec<f64> = deltas(&mu, &psi).iter().map(|dl| (nu + df) / (nu + dl)).collect();
        let sw: f64 = w.iter().sum();
        let new_mu = x.iter().zip(&w).fold(DVector::zeros(d), |a, (v, wi)| a + v * *wi) / sw;
        let new_psi = x
            .iter()
            .zip(&w)
            .fold(DMatrix::zeros(d, d), |a, (v, wi)| a + (v - &new_mu) * (v - &new_mu).transpose() * *wi)
            / n;
        let delta = deltas(&new_mu, &new_psi);
        let ld = new_psi.determinant().ln();
        let new_nu = golden_max(|v| loglik(&delta, ld, v), 2.0, 1000.0, 1e-10);
        let new_ll = loglik(&delta, ld, new_nu);
        let step = (&new_mu - &mu).norm() + (&new_psi - &psi).norm() + (new_nu - nu).abs() / nu;
        mu = new_mu;
        psi = new_psi;
        nu = new_nu;
        if (new_ll - ll).abs() < 1e-14 * ll.abs() && step < 1e-9 {
            break;
        }
        ll = new_ll;
    }
    (nu, mu, psi)
}


/// Log-density of `vec X ~ N(vec M, Ω ⊗ Σ)` evaluated as an ordinary
/// multivariate normal.
pub fn kron_mvn_logpdf(x: &DMatrix<f64>, mean: &DMatrix<f64>, sigma: &DMatrix<f64>, omega: &DMatrix<f64>) -> f64 {
    let cov = omega.kronecker(sigma);
    let d = cov.nrows();
    let r = DVector::from_column_slice((x - mean).as_slice());
    let chol = cov.cholesky().expect("covariance is positive definite");
    let z = chol.l().solve_lower_triangular(&r).unwrap();
    let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * (d as f64 * (2.0 * PI).ln() + logdet + z.norm_squared())
}

/// Random symmetric positive definite matrix with a condition number in a
/// moderate range.
pub fn random_spd(d: usize, rng: &mut impl rand::Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(d, d) * 0.5
}
