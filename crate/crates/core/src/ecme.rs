//! ECME estimation of `t_{p,q}(ν, M, Σ, Ω)`.
//!
//! The t is a normal scale mixture over `S ~ W_p(ν+p-1, Σ^{-1})` with
//! `X | S ~ N_{p,q}(M, S^{-1}, Ω)`. One iteration is
//!
//! 1. E-step: `E(S_i | X_i) = κ Z_i`, `Z_i = [(X_i-M)Ω^{-1}(X_i-M)^T + Σ]^{-1}`;
//! 2. CM-step: `M`, then `Ω` given `M`, then `Σ`, from the expected
//!    complete-data log-likelihood;
//! 3. CM-step: `ν` maximising the observed log-likelihood at the new
//!    `(M, Σ, Ω)` (skipped when `ν` is fixed).
//!
//! `Z_i` does not involve `ν`, so the statistics computed for the `ν` step are
//! reused as the next E-step.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{normalize_identifiability, MatrixStack, MeanStructure, MxvtParams, StructureSpec, SufficientStats};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, logdet, solve_lower, Chol};
use crate::mxvn_fit::{param_change, relative_change, FitConfig, FitResult};
use crate::optim::brent_root;
use crate::specfun::{lmvgamma, mvdigamma};
use crate::updates::{centred_column_scatter, update_mean, update_scatter, ScatterTarget};

/// Work per E-step (in flops, roughly) above which observations are
/// processed on the rayon pool.
const PARALLEL_WORK: usize = 1 << 21;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NuMode {
    Fixed(f64),
    Estimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EcmeConfig {
    #[serde(flatten)]
    pub fit: FitConfig,
    pub nu_mode: NuMode,
    /// Search interval for `ν` when estimated.
    pub nu_bounds: (f64, f64),
    pub nu_tol: f64,
    /// Starting `ν` when estimated.
    pub nu_init: f64,
}

impl Default for EcmeConfig {
    fn default() -> Self {
        Self { fit: FitConfig::default(), nu_mode: NuMode::Estimate, nu_bounds: (2.0, 1000.0), nu_tol: 1e-6, nu_init: 10.0 }
    }
}

impl EcmeConfig {
    pub fn fixed(nu: f64) -> Self {
        Self { nu_mode: NuMode::Fixed(nu), ..Self::default() }
    }

    pub fn estimate() -> Self {
        Self::default()
    }

    pub fn with_structure(mut self, structure: StructureSpec) -> Self {
        self.fit.structure = structure;
        self
    }

    fn validate(&self) -> Result<()> {
        self.fit.validate()?;
        let (lo, hi) = self.nu_bounds;
        if !(lo >= 1.0 && hi > lo && hi.is_finite()) {
            return Err(Error::InvalidParameter(format!("nu bounds must satisfy 1 <= lo < hi < inf, got ({lo}, {hi})")));
        }
        if !(self.nu_tol > 0.0) {
            return Err(Error::InvalidParameter(format!("nu_tol must be positive, got {}", self.nu_tol)));
        }
        match self.nu_mode {
            NuMode::Fixed(v) if !(v >= 1.0 && v.is_finite()) => {
                Err(Error::InvalidParameter(format!("fixed nu must be >= 1, got {v}")))
            }
            NuMode::Estimate if !(self.nu_init >= 1.0 && self.nu_init.is_finite()) => {
                Err(Error::InvalidParameter(format!("initial nu must be >= 1, got {}", self.nu_init)))
            }
            _ => Ok(()),
        }
    }
}

struct ObsTerms {
    z: DMatrix<f64>,
    zx: DMatrix<f64>,
    xzx: DMatrix<f64>,
    logdet_z: f64,
}

fn obs_terms(x: &DMatrix<f64>, mean: &DMatrix<f64>, sigma: &DMatrix<f64>, chol_omega: &Chol) -> Result<ObsTerms> {
    // A = R L_Ω^{-T}, so A A^T = R Ω^{-1} R^T
    let a = solve_lower(chol_omega, &(x - mean).transpose()).transpose();
    let bracket = sigma + &a * a.transpose();
    let cb = cholesky(&bracket, "Sigma + R Omega^-1 R^T").map_err(|e| Error::Internal(e.to_string()))?;
    let ly = solve_lower(&cb, x);
    Ok(ObsTerms { z: cb.inverse(), zx: cb.solve(x), xzx: ly.transpose() * ly, logdet_z: -logdet(&cb) })
}

/// E-step statistics with `κ` factored out (`z_form = true`).
pub fn estep_z(data: &MatrixStack, params: &MxvtParams) -> Result<SufficientStats> {
    let (n, p, q) = (data.n(), data.p(), data.q());
    if params.mean.shape() != (p, q) {
        return Err(Error::DimensionMismatch {
            expected: format!("{p}x{q} parameters"),
            got: format!("{}x{}", params.p(), params.q()),
        });
    }
    let chol_sigma = cholesky(&params.sigma, "Sigma")?;
    let chol_omega = cholesky(&params.omega, "Omega")?;
    let sigma = crate::linalg::symmetrize(&params.sigma);
    drop(chol_sigma);
    let one = |x: &DMatrix<f64>| obs_terms(x, &params.mean, &sigma, &chol_omega);
    let work = n * (p * p * p + p * p * q + p * q * q);
    let terms: Vec<ObsTerms> = if work >= PARALLEL_WORK {
        data.matrices().par_iter().map(one).collect::<Result<_>>()?
    } else {
        data.matrices().iter().map(one).collect::<Result<_>>()?
    };
    let mut stats = SufficientStats {
        n,
        s_s: DMatrix::zeros(p, p),
        s_sx: DMatrix::zeros(p, q),
        s_xsx: DMatrix::zeros(q, q),
        s_logdet: 0.0,
        kappa: params.kappa(),
        z_form: true,
    };
    for t in &terms {
        stats.s_s += &t.z;
        stats.s_sx += &t.zx;
        stats.s_xsx += &t.xzx;
        stats.s_logdet += t.logdet_z;
    }
    Ok(stats)
}

/// E-step statistics `Σ E(S_i|X_i)`, ..., `Σ E(log|S_i| | X_i)`.
pub fn estep(data: &MatrixStack, params: &MxvtParams) -> Result<SufficientStats> {
    estep_z(data, params)?.to_s_form()
}

/// First CM step: `(M, Σ, Ω)` given `ν` and the E-step statistics.
///
/// `current` supplies `Ω` for the constrained-mean forms and the previous
/// correlation for structured scatter; its `ν` is ignored.
pub fn cme1(stats: &SufficientStats, nu: f64, structure: &StructureSpec, current: &MxvtParams) -> Result<MxvtParams> {
    let s = stats.to_s_form()?;
    let (p, q) = s.s_sx.shape();
    let n = s.n as f64;
    let mean = if structure.mean == MeanStructure::Unconstrained {
        update_mean(MeanStructure::Unconstrained, &s.s_s, &s.s_sx, &cholesky(&DMatrix::identity(1, 1), "")?)?
    } else {
        let chol_omega = cholesky(&current.omega, "Omega")?;
        update_mean(structure.mean, &s.s_s, &s.s_sx, &chol_omega)?
    };
    let w = centred_column_scatter(&s.s_s, &s.s_sx, &s.s_xsx, &mean);
    let (omega, _) = update_scatter(
        structure.col_scatter,
        ScatterTarget::Covariance { m: n * p as f64, w: &w },
        &current.omega,
        "Omega update",
    )?;
    let (sigma, _) = update_scatter(
        structure.row_scatter,
        ScatterTarget::Precision { a: n * (nu + p as f64 - 1.0), b: &s.s_s },
        &current.sigma,
        "Sigma update",
    )?;
    debug_assert_eq!(omega.nrows(), q);
    Ok(MxvtParams { nu, mean, sigma, omega })
}

/// Mean over observations of `log|Z_i| + log|Σ|`, i.e. minus the mean of
/// `log|I + Σ^{-1} R_i Ω^{-1} R_i^T|`.
fn mean_log_ratio(stats: &SufficientStats, sigma: &DMatrix<f64>) -> Result<f64> {
    if !stats.z_form {
        return Err(Error::InvalidParameter("degrees-of-freedom step needs Z-form statistics".into()));
    }
    Ok(stats.s_logdet / stats.n as f64 + logdet(&cholesky(sigma, "Sigma")?))
}

/// Derivative of the observed log-likelihood in `ν` times `-2/n`, given
/// Z-form statistics computed at the current `(M, Σ, Ω)`.
pub fn nu_estimating_function(stats: &SufficientStats, sigma: &DMatrix<f64>, q: usize, nu: f64) -> Result<f64> {
    let p = sigma.nrows();
    let c = mean_log_ratio(stats, sigma)?;
    let pf = p as f64;
    Ok(mvdigamma(p, (nu + pf - 1.0) / 2.0)? - mvdigamma(p, (nu + pf + q as f64 - 1.0) / 2.0)? - c)
}

/// The part of the observed log-likelihood (per observation) that depends on `ν`.
fn nu_profile(p: usize, q: usize, c: f64, nu: f64) -> f64 {
    let pf = p as f64;
    let kappa = nu + pf + q as f64 - 1.0;
    lmvgamma(p, kappa / 2.0).unwrap_or(f64::NAN) - lmvgamma(p, (nu + pf - 1.0) / 2.0).unwrap_or(f64::NAN)
        + 0.5 * kappa * c
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuSolution {
    pub nu: f64,
    /// False when no root exists in the bounds and a bound was returned.
    pub converged: bool,
}

/// Second CM step: the `ν` maximising the observed log-likelihood with
/// `(M, Σ, Ω)` held at the values behind `stats`.
pub fn solve_nu(stats: &SufficientStats, sigma: &DMatrix<f64>, q: usize, bounds: (f64, f64), tol: f64) -> Result<NuSolution> {
    let p = sigma.nrows();
    let c = mean_log_ratio(stats, sigma)?;
    let g = |nu: f64| {
        let pf = p as f64;
        mvdigamma(p, (nu + pf - 1.0) / 2.0).unwrap_or(f64::NAN)
            - mvdigamma(p, (nu + pf + q as f64 - 1.0) / 2.0).unwrap_or(f64::NAN)
            - c
    };
    let (lo, hi) = bounds;
    match brent_root(g, lo, hi, tol, 200) {
        Some(nu) => Ok(NuSolution { nu, converged: true }),
        None => {
            let nu = if nu_profile(p, q, c, hi) >= nu_profile(p, q, c, lo) { hi } else { lo };
            log::debug!("degrees-of-freedom equation has no root in ({lo}, {hi}); using bound {nu}");
            Ok(NuSolution { nu, converged: false })
        }
    }
}

/// Observed log-likelihood from Z-form statistics taken at `params`.
pub fn loglik_from_stats(stats: &SufficientStats, params: &MxvtParams) -> Result<f64> {
    let (p, q) = (params.p(), params.q());
    let (pf, qf) = (p as f64, q as f64);
    let n = stats.n as f64;
    let ld_sigma = logdet(&cholesky(&params.sigma, "Sigma")?);
    let ld_omega = logdet(&cholesky(&params.omega, "Omega")?);
    let kappa = params.kappa();
    let per_obs = lmvgamma(p, kappa / 2.0)? - lmvgamma(p, (params.nu + pf - 1.0) / 2.0)?
        - 0.5 * pf * qf * std::f64::consts::PI.ln()
        - 0.5 * pf * ld_omega
        - 0.5 * qf * ld_sigma;
    Ok(n * per_obs + 0.5 * kappa * (stats.s_logdet + n * ld_sigma))
}

fn initial_params(data: &MatrixStack, structure: &StructureSpec, nu: f64) -> Result<MxvtParams> {
    let (p, q) = (data.p(), data.q());
    let mut params = MxvtParams::new(nu, data.mean(), DMatrix::identity(p, p), DMatrix::identity(q, q))?;
    if structure.mean != MeanStructure::Unconstrained {
        let n = data.n() as f64;
        let chol_i = cholesky(&params.omega, "Omega")?;
        params.mean = update_mean(structure.mean, &(DMatrix::identity(p, p) * n), &(data.mean() * n), &chol_i)?;
    }
    Ok(params)
}

/// ECME fit; returns a partial result with `converged = false` on hitting
/// `max_iter` or when `ν` ends on a search bound.
pub fn mxvt_fit(data: &MatrixStack, config: &EcmeConfig) -> Result<FitResult<MxvtParams>> {
    config.validate()?;
    let n = data.n();
    if n < 2 {
        return Err(Error::SampleSize(format!("t fit needs n >= 2, got n = {n}")));
    }
    let q = data.q();
    let structure = config.fit.structure;
    let (lo, hi) = config.nu_bounds;
    let nu0 = match config.nu_mode {
        NuMode::Fixed(v) => v,
        NuMode::Estimate => config.nu_init.clamp(lo, hi),
    };
    let mut params = initial_params(data, &structure, nu0)?;
    let mut z = estep_z(data, &params)?;
    let mut ll = loglik_from_stats(&z, &params)?;
    let mut trace = vec![ll];
    let mut converged = false;
    let mut nu_at_bound = false;
    let mut iterations = 0;
    while iterations < config.fit.max_iter {
        iterations += 1;
        let mut next = cme1(&z.with_kappa(params.kappa()), params.nu, &structure, &params)?;
        let mut z_next = estep_z(data, &next)?;
        if config.nu_mode == NuMode::Estimate {
            let sol = solve_nu(&z_next, &next.sigma, q, config.nu_bounds, config.nu_tol)?;
            next.nu = sol.nu;
            nu_at_bound = !sol.converged;
            z_next = z_next.with_kappa(next.kappa());
        }
        let new_ll = loglik_from_stats(&z_next, &next)?;
        trace.push(new_ll);
        let step = param_change((&params.mean, &params.sigma, &params.omega), (&next.mean, &next.sigma, &next.omega))
            .max((next.nu - params.nu).abs() / params.nu);
        let done = relative_change(ll, new_ll) < config.fit.tolerance
            && config.fit.param_tolerance.is_none_or(|t| step < t);
        params = next;
        z = z_next;
        ll = new_ll;
        if done {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("ECME stopped after {iterations} iterations without reaching tolerance {}", config.fit.tolerance);
    }
    if nu_at_bound {
        log::warn!("degrees of freedom ended on the search bound {}", params.nu);
    }
    Ok(FitResult {
        params: normalize_identifiability(&params)?,
        loglik: ll,
        iterations,
        converged: converged && !nu_at_bound,
        loglik_trace: trace,
        nu_at_bound,
    })
}
