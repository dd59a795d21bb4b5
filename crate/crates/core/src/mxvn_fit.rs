//! Flip-flop maximum likelihood for `N_{p,q}(M, Σ, Ω)`.
//!
//! Each sweep updates `M`, then `Σ` given `Ω`, then `Ω` given `Σ`; every step
//! is an exact conditional maximisation, so the log-likelihood never drops.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::datamodel::{normalize_identifiability, MatrixStack, MeanStructure, MxvnParams, StructureSpec};
use crate::distributions::mxvn_loglik;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, solve_lower, Chol};
use crate::updates::{update_mean, update_scatter, ScatterTarget};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Stop once the relative log-likelihood change falls below this.
    pub tolerance: f64,
    pub max_iter: usize,
    pub structure: StructureSpec,
    /// When set, additionally require the relative Frobenius change of the
    /// (normalised) parameters between sweeps to fall below this value.
    #[serde(default)]
    pub param_tolerance: Option<f64>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { tolerance: 1e-8, max_iter: 1000, structure: StructureSpec::default(), param_tolerance: None }
    }
}

impl FitConfig {
    pub fn with_structure(structure: StructureSpec) -> Self {
        Self { structure, ..Self::default() }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidParameter(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("max_iter must be at least 1".into()));
        }
        if let Some(t) = self.param_tolerance {
            if !(t > 0.0) {
                return Err(Error::InvalidParameter(format!("param_tolerance must be positive, got {t}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult<P> {
    pub params: P,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Log-likelihood at the starting values followed by one entry per sweep.
    pub loglik_trace: Vec<f64>,
    /// Set by the t fit when the degrees of freedom ended on a search bound.
    #[serde(default)]
    pub nu_at_bound: bool,
}

pub(crate) fn relative_change(old: f64, new: f64) -> f64 {
    (new - old).abs() / old.abs().max(f64::MIN_POSITIVE)
}

/// Largest relative Frobenius change over mean and the `Σ[0,0]`-normalised
/// scatter pair.
pub(crate) fn param_change(
    old: (&DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>),
    new: (&DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>),
) -> f64 {
    let rel = |a: &DMatrix<f64>, b: &DMatrix<f64>| (a - b).norm() / a.norm().max(1e-300);
    let (s0, s1) = (old.1[(0, 0)], new.1[(0, 0)]);
    rel(old.0, new.0)
        .max(rel(&(old.1 / s0), &(new.1 / s1)))
        .max(rel(&(old.2 * s0), &(new.2 * s1)))
}

/// Smallest `n` that guarantees existence and uniqueness of the
/// unconstrained estimate is the first integer above this bound.
pub fn sample_size_bound(p: usize, q: usize) -> f64 {
    p as f64 / q as f64 + q as f64 / p as f64 + 2.0
}

pub(crate) fn check_sample_size(n: usize, p: usize, q: usize, structure: &StructureSpec) -> Result<()> {
    let bound = sample_size_bound(p, q);
    if structure.is_unconstrained() {
        if !(n as f64 > bound) {
            return Err(Error::SampleSize(format!(
                "unconstrained {p}x{q} fit needs n > {bound:.3}, got n = {n}"
            )));
        }
    } else {
        if n < 2 {
            return Err(Error::SampleSize(format!("constrained fit needs n >= 2, got n = {n}")));
        }
        if !(n as f64 > bound) {
            log::warn!("n = {n} is below the unconstrained existence bound {bound:.3}; the constrained fit may fail");
        }
    }
    Ok(())
}

fn sigma_inverse_stats(data: &MatrixStack, chol_sigma: &Chol) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = data.n() as f64;
    let sum = data.mean() * n;
    (chol_sigma.inverse() * n, chol_sigma.solve(&sum))
}

/// One normal sweep from `(mean, sigma, omega)`.
fn sweep(
    data: &MatrixStack,
    structure: &StructureSpec,
    mean: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    omega: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let (n, p, q) = (data.n(), data.p(), data.q());
    let chol_omega = cholesky(omega, "Omega")?;
    let mean = if structure.mean == MeanStructure::Unconstrained {
        mean.clone()
    } else {
        let chol_sigma = cholesky(sigma, "Sigma")?;
        let (s_s, s_sx) = sigma_inverse_stats(data, &chol_sigma);
        update_mean(structure.mean, &s_s, &s_sx, &chol_omega)?
    };

    // Σ | Ω: Σ_i R Ω^{-1} R^T = Σ_i A A^T with A = R L_Ω^{-T}
    let mut w_sigma = DMatrix::zeros(p, p);
    for x in data.matrices() {
        let a = solve_lower(&chol_omega, &(x - &mean).transpose());
        w_sigma += a.transpose() * &a;
    }
    let (sigma, chol_sigma) = update_scatter(
        structure.row_scatter,
        ScatterTarget::Covariance { m: (n * q) as f64, w: &w_sigma },
        sigma,
        "Sigma update",
    )?;

    let mut w_omega = DMatrix::zeros(q, q);
    for x in data.matrices() {
        let b = solve_lower(&chol_sigma, &(x - &mean));
        w_omega += b.transpose() * &b;
    }
    let (omega, _) = update_scatter(
        structure.col_scatter,
        ScatterTarget::Covariance { m: (n * p) as f64, w: &w_omega },
        omega,
        "Omega update",
    )?;
    Ok((mean, sigma, omega))
}

/// Flip-flop ML fit; returns a partial result with `converged = false` when
/// `max_iter` sweeps do not reach the tolerance.
pub fn mxvn_fit(data: &MatrixStack, config: &FitConfig) -> Result<FitResult<MxvnParams>> {
    config.validate()?;
    let (n, p, q) = (data.n(), data.p(), data.q());
    check_sample_size(n, p, q, &config.structure)?;

    let mut mean = data.mean();
    let mut sigma = DMatrix::identity(p, p);
    let mut omega = DMatrix::identity(q, q);
    if config.structure.mean != MeanStructure::Unconstrained {
        let chol_i = cholesky(&omega, "Omega")?;
        let (s_s, s_sx) = sigma_inverse_stats(data, &cholesky(&sigma, "Sigma")?);
        mean = update_mean(config.structure.mean, &s_s, &s_sx, &chol_i)?;
    }
    let mut ll = mxvn_loglik(data, &MxvnParams { mean: mean.clone(), sigma: sigma.clone(), omega: omega.clone() })?;
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iter {
        iterations += 1;
        let (m1, s1, o1) = sweep(data, &config.structure, &mean, &sigma, &omega)?;
        let step = param_change((&mean, &sigma, &omega), (&m1, &s1, &o1));
        let params = MxvnParams { mean: m1, sigma: s1, omega: o1 };
        let new_ll = mxvn_loglik(data, &params)?;
        trace.push(new_ll);
        let done = relative_change(ll, new_ll) < config.tolerance
            && config.param_tolerance.is_none_or(|t| step < t);
        MxvnParams { mean, sigma, omega } = params;
        ll = new_ll;
        if done {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("flip-flop stopped after {iterations} sweeps without reaching tolerance {}", config.tolerance);
    }
    let params = normalize_identifiability(&MxvnParams { mean, sigma, omega })?;
    Ok(FitResult { params, loglik: ll, iterations, converged, loglik_trace: trace, nu_at_bound: false })
}
