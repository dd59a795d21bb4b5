//! Conditional-maximisation pieces shared by the normal and t fits:
//! constrained means and AR(1) / compound-symmetry scatter.

use nalgebra::DMatrix;

use crate::datamodel::{Ar1Matrix, CsMatrix, MeanStructure, ScatterStructure};
use crate::error::Result;
use crate::linalg::{cholesky_jitter, Chol};
use crate::optim::golden_max;

const RHO_TOL: f64 = 1e-7;
const AR1_BOUND: f64 = 0.99;
const CS_LOWER_MARGIN: f64 = 1e-3;

/// Weighted least-squares mean under `structure`.
///
/// Maximises `tr(M^T S_S M Ω^{-1}) - 2 tr(S_SX Ω^{-1} M^T)` (negated) over the
/// admissible means, with `S_S` the summed row weights and `S_SX = Σ S_i X_i`.
pub(crate) fn update_mean(
    structure: MeanStructure,
    s_s: &DMatrix<f64>,
    s_sx: &DMatrix<f64>,
    omega: &Chol,
) -> Result<DMatrix<f64>> {
    let (p, q) = s_sx.shape();
    let ones_p = DMatrix::from_element(p, 1, 1.0);
    let ones_q = DMatrix::from_element(q, 1, 1.0);
    Ok(match structure {
        MeanStructure::Unconstrained => {
            let (_, c) = cholesky_jitter(s_s, "sum of row weights")?;
            c.solve(s_sx)
        }
        MeanStructure::ConstantAll => {
            let oi1 = omega.solve(&ones_q);
            let num = (ones_p.transpose() * s_sx * &oi1)[(0, 0)];
            let den = (ones_p.transpose() * s_s * &ones_p)[(0, 0)] * (ones_q.transpose() * &oi1)[(0, 0)];
            DMatrix::from_element(p, q, num / den)
        }
        MeanStructure::ConstantPerColumn => {
            let row = ones_p.transpose() * s_sx / (ones_p.transpose() * s_s * &ones_p)[(0, 0)];
            &ones_p * row
        }
        MeanStructure::ConstantPerRow => {
            let (_, c) = cholesky_jitter(s_s, "sum of row weights")?;
            let oi1 = omega.solve(&ones_q);
            let col = c.solve(&(s_sx * &oi1)) / (ones_q.transpose() * &oi1)[(0, 0)];
            col * ones_q.transpose()
        }
    })
}

/// `Σ (X_i - M)^T S_i (X_i - M)` from the accumulated statistics.
pub(crate) fn centred_column_scatter(
    s_s: &DMatrix<f64>,
    s_sx: &DMatrix<f64>,
    s_xsx: &DMatrix<f64>,
    mean: &DMatrix<f64>,
) -> DMatrix<f64> {
    let cross = s_sx.transpose() * mean;
    s_xsx - &cross - cross.transpose() + mean.transpose() * s_s * mean
}

/// Objective for a scatter update `Ψ`.
#[derive(Debug, Clone, Copy)]
pub(crate) enum ScatterTarget<'a> {
    /// Maximise `-(m/2) log|Ψ| - tr(Ψ^{-1} W)/2`.
    Covariance { m: f64, w: &'a DMatrix<f64> },
    /// Maximise `(a/2) log|Ψ| - tr(Ψ B)/2`.
    Precision { a: f64, b: &'a DMatrix<f64> },
}

impl ScatterTarget<'_> {
    fn dim(&self) -> usize {
        match self {
            Self::Covariance { w, .. } => w.nrows(),
            Self::Precision { b, .. } => b.nrows(),
        }
    }

    /// Objective at `s R` maximised over `s`, given `log|R|` and `R^{-1}` / `R`.
    fn profile(&self, logdet_r: f64, r: &DMatrix<f64>, r_inv: &DMatrix<f64>) -> (f64, f64) {
        let d = self.dim() as f64;
        match *self {
            Self::Covariance { m, w } => {
                let t = r_inv.component_mul(w).sum();
                let s = t / (m * d);
                (s, -0.5 * m * (d * s.ln() + logdet_r) - 0.5 * m * d)
            }
            Self::Precision { a, b } => {
                let t = r.component_mul(b).sum();
                let s = a * d / t;
                (s, 0.5 * a * (d * s.ln() + logdet_r) - 0.5 * a * d)
            }
        }
    }
}

fn rho_bounds(structure: ScatterStructure, d: usize) -> (f64, f64) {
    match structure {
        ScatterStructure::CompoundSymmetry => (CsMatrix::rho_lower(d) + CS_LOWER_MARGIN, AR1_BOUND),
        _ => (-AR1_BOUND, AR1_BOUND),
    }
}

/// Correlation matrix, its log-determinant and inverse.
fn correlation(structure: ScatterStructure, d: usize, rho: f64) -> (f64, DMatrix<f64>, DMatrix<f64>) {
    match structure {
        ScatterStructure::Ar1 => {
            let m = Ar1Matrix { dim: d, rho, scale: 1.0 };
            (m.logdet(), m.full(), m.inverse())
        }
        _ => {
            let m = CsMatrix { dim: d, rho, scale: 1.0 };
            (m.logdet(), m.full(), m.inverse())
        }
    }
}

/// Maximise `target` over the scatter family, returning the update and its
/// Cholesky factor.
///
/// For AR(1) and compound symmetry the scale is profiled out and the
/// correlation found by golden section; the previous correlation (read off
/// `current`) is kept unless the search beats it, so a sweep never lowers
/// the objective.
pub(crate) fn update_scatter(
    structure: ScatterStructure,
    target: ScatterTarget<'_>,
    current: &DMatrix<f64>,
    what: &str,
) -> Result<(DMatrix<f64>, Chol)> {
    let d = target.dim();
    let psi = match (structure, target) {
        (ScatterStructure::Unconstrained, ScatterTarget::Covariance { m, w }) => w / m,
        (ScatterStructure::Unconstrained, ScatterTarget::Precision { a, b }) => {
            let (_, c) = cholesky_jitter(b, what)?;
            c.inverse() * a
        }
        (_, _) if d == 1 => {
            let one = DMatrix::identity(1, 1);
            let (s, _) = target.profile(0.0, &one, &one);
            DMatrix::from_element(1, 1, s)
        }
        (structure, target) => {
            let (lo, hi) = rho_bounds(structure, d);
            let eval = |rho: f64| {
                let (ld, r, ri) = correlation(structure, d, rho);
                target.profile(ld, &r, &ri).1
            };
            let (mut rho, mut best) = golden_max(eval, lo, hi, RHO_TOL);
            if current[(0, 0)] > 0.0 {
                let prev = (current[(0, 1)] / current[(0, 0)]).clamp(lo, hi);
                let f_prev = eval(prev);
                if f_prev >= best || !best.is_finite() {
                    rho = prev;
                    best = f_prev;
                }
            }
            log::trace!("{what}: rho = {rho}, profile = {best}");
            let (ld, r, ri) = correlation(structure, d, rho);
            let (s, _) = target.profile(ld, &r, &ri);
            r * s
        }
    };
    cholesky_jitter(&psi, what)
}
