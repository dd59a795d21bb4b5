//! Constraint vocabulary for the mean and scatter matrices, and the
//! parametric AR(1) / compound-symmetry scatter forms.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeanStructure {
    #[default]
    Unconstrained,
    /// `M = μ · 1_{p,q}`.
    ConstantAll,
    /// `M = 1_{p,1} μ_{1,q}`: every column constant down its rows.
    ConstantPerColumn,
    /// `M = μ_{p,1} 1_{1,q}`: every row constant across its columns.
    ConstantPerRow,
}

impl MeanStructure {
    /// Free parameters in a `p × q` mean.
    pub fn param_count(self, p: usize, q: usize) -> usize {
        match self {
            MeanStructure::Unconstrained => p * q,
            MeanStructure::ConstantAll => 1,
            MeanStructure::ConstantPerColumn => q,
            MeanStructure::ConstantPerRow => p,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScatterStructure {
    #[default]
    Unconstrained,
    Ar1,
    CompoundSymmetry,
}

impl ScatterStructure {
    /// Free parameters in a `d × d` scatter, before the identifiability
    /// constraint is taken into account.
    pub fn param_count(self, d: usize) -> usize {
        match self {
            ScatterStructure::Unconstrained => d * (d + 1) / 2,
            _ if d == 1 => 1,
            ScatterStructure::Ar1 | ScatterStructure::CompoundSymmetry => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct StructureSpec {
    pub mean: MeanStructure,
    pub row_scatter: ScatterStructure,
    pub col_scatter: ScatterStructure,
}

impl StructureSpec {
    pub fn unconstrained() -> Self {
        Self::default()
    }

    pub fn is_unconstrained(&self) -> bool {
        *self == Self::default()
    }

    /// Free parameters of `(M, Σ, Ω)` with `Σ[0,0]` fixed to one.
    pub fn param_count(&self, p: usize, q: usize) -> usize {
        self.mean.param_count(p, q) + self.row_scatter.param_count(p) + self.col_scatter.param_count(q)
            - 1
    }
}

impl FromStr for MeanStructure {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "free" | "unconstrained" => Ok(Self::Unconstrained),
            "const" | "constant" => Ok(Self::ConstantAll),
            "col-const" => Ok(Self::ConstantPerColumn),
            "row-const" => Ok(Self::ConstantPerRow),
            _ => Err(Error::InvalidParameter(format!("unknown mean structure '{s}'"))),
        }
    }
}

impl FromStr for ScatterStructure {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "free" | "unconstrained" => Ok(Self::Unconstrained),
            "ar1" => Ok(Self::Ar1),
            "cs" => Ok(Self::CompoundSymmetry),
            _ => Err(Error::InvalidParameter(format!("unknown scatter structure '{s}'"))),
        }
    }
}

impl fmt::Display for MeanStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Unconstrained => "free",
            Self::ConstantAll => "const",
            Self::ConstantPerColumn => "col-const",
            Self::ConstantPerRow => "row-const",
        })
    }
}

impl fmt::Display for ScatterStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Unconstrained => "free",
            Self::Ar1 => "ar1",
            Self::CompoundSymmetry => "cs",
        })
    }
}

/// `scale · ρ^{|i-j|}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ar1Matrix {
    pub dim: usize,
    pub rho: f64,
    pub scale: f64,
}

/// `scale · (ρ + (1-ρ)·[i=j])`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CsMatrix {
    pub dim: usize,
    pub rho: f64,
    pub scale: f64,
}

fn check_scale(dim: usize, scale: f64) -> Result<()> {
    if dim == 0 {
        return Err(Error::InvalidParameter("dimension must be positive".into()));
    }
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::InvalidParameter(format!("scale must be positive, got {scale}")));
    }
    Ok(())
}

impl Ar1Matrix {
    pub fn new(dim: usize, rho: f64, scale: f64) -> Result<Self> {
        check_scale(dim, scale)?;
        if !(rho.abs() < 1.0) {
            return Err(Error::InvalidParameter(format!("AR(1) requires |rho| < 1, got {rho}")));
        }
        Ok(Self { dim, rho, scale })
    }

    pub fn full(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| {
            self.scale * self.rho.powi((i as i32 - j as i32).abs())
        })
    }

    /// `log|scale · R|` with `|R| = (1-ρ²)^{d-1}`.
    pub fn logdet(&self) -> f64 {
        let d = self.dim as f64;
        d * self.scale.ln() + (d - 1.0) * (1.0 - self.rho * self.rho).ln()
    }

    /// Closed-form tridiagonal inverse.
    pub fn inverse(&self) -> DMatrix<f64> {
        let d = self.dim;
        let r = self.rho;
        let c = 1.0 / ((1.0 - r * r) * self.scale);
        let mut m = DMatrix::zeros(d, d);
        if d == 1 {
            m[(0, 0)] = 1.0 / self.scale;
            return m;
        }
        for i in 0..d {
            m[(i, i)] = if i == 0 || i == d - 1 { c } else { c * (1.0 + r * r) };
            if i + 1 < d {
                m[(i, i + 1)] = -r * c;
                m[(i + 1, i)] = -r * c;
            }
        }
        m
    }
}

impl CsMatrix {
    /// Lower admissible correlation `-1/(d-1)` (or `-1` when `d = 1`).
    pub fn rho_lower(dim: usize) -> f64 {
        if dim <= 1 {
            -1.0
        } else {
            -1.0 / (dim as f64 - 1.0)
        }
    }

    pub fn new(dim: usize, rho: f64, scale: f64) -> Result<Self> {
        check_scale(dim, scale)?;
        if !(rho > Self::rho_lower(dim) && rho < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "compound symmetry of dimension {dim} requires rho in ({}, 1), got {rho}",
                Self::rho_lower(dim)
            )));
        }
        Ok(Self { dim, rho, scale })
    }

    pub fn full(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| {
            self.scale * if i == j { 1.0 } else { self.rho }
        })
    }

    /// `|R| = (1-ρ)^{d-1} (1 + (d-1)ρ)`.
    pub fn logdet(&self) -> f64 {
        let d = self.dim as f64;
        d * self.scale.ln() + (d - 1.0) * (1.0 - self.rho).ln() + (1.0 + (d - 1.0) * self.rho).ln()
    }

    /// `R^{-1} = (I - ρ/(1+(d-1)ρ) J) / (1-ρ)`.
    pub fn inverse(&self) -> DMatrix<f64> {
        let d = self.dim as f64;
        let r = self.rho;
        let a = 1.0 / ((1.0 - r) * self.scale);
        let b = r / (1.0 + (d - 1.0) * r);
        DMatrix::from_fn(self.dim, self.dim, |i, j| {
            a * (if i == j { 1.0 } else { 0.0 } - b)
        })
    }
}

/// Dense AR(1) matrix; errors when `rho` is out of range.
pub fn ar1_full(dim: usize, rho: f64, scale: f64) -> Result<DMatrix<f64>> {
    Ok(Ar1Matrix::new(dim, rho, scale)?.full())
}

/// Dense compound-symmetry matrix; errors when `rho` is out of range.
pub fn cs_full(dim: usize, rho: f64, scale: f64) -> Result<DMatrix<f64>> {
    Ok(CsMatrix::new(dim, rho, scale)?.full())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::is_symmetric;
    use approx::assert_relative_eq;

    #[test]
    fn ar1_identity_at_zero() {
        assert_eq!(ar1_full(2, 0.0, 1.0).unwrap(), DMatrix::identity(2, 2));
    }

    #[test]
    fn cs_definition() {
        let m = cs_full(3, 0.5, 1.0).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m[(i, j)], if i == j { 1.0 } else { 0.5 });
            }
        }
    }

    #[test]
    fn ar1_determinant_brute_force() {
        let m = ar1_full(3, 0.7, 1.0).unwrap();
        assert_relative_eq!(m.determinant(), 0.2601, epsilon = 1e-12);
        assert_relative_eq!(Ar1Matrix::new(3, 0.7, 1.0).unwrap().logdet(), 0.2601f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(Ar1Matrix::new(3, 1.0, 1.0).is_err());
        assert!(Ar1Matrix::new(3, -1.2, 1.0).is_err());
        assert!(CsMatrix::new(3, -0.5, 1.0).is_err());
        assert!(CsMatrix::new(3, -0.49, 1.0).is_ok());
        assert!(CsMatrix::new(3, 1.0, 1.0).is_err());
        assert!(Ar1Matrix::new(3, 0.2, 0.0).is_err());
    }

    #[test]
    fn closed_forms_match_dense_on_grid() {
        for d in 1..7 {
            for k in 0..19 {
                let rho = -0.9 + 0.1 * k as f64;
                let scale = 0.5 + 0.3 * d as f64;
                let a = Ar1Matrix::new(d, rho, scale).unwrap();
                let full = a.full();
                assert!(is_symmetric(&full, 0.0));
                let eig = full.clone().symmetric_eigen().eigenvalues.min();
                assert!(eig > 0.0);
                assert_relative_eq!(a.logdet(), full.determinant().ln(), epsilon = 1e-10);
                let id = &full * a.inverse();
                assert!((id - DMatrix::identity(d, d)).amax() < 1e-10);

                if rho > CsMatrix::rho_lower(d) + 0.05 {
                    let c = CsMatrix::new(d, rho, scale).unwrap();
                    let full = c.full();
                    assert!(is_symmetric(&full, 0.0));
                    assert!(full.clone().symmetric_eigen().eigenvalues.min() > 0.0);
                    assert_relative_eq!(c.logdet(), full.determinant().ln(), epsilon = 1e-10);
                    let id = &full * c.inverse();
                    assert!((id - DMatrix::identity(d, d)).amax() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn param_count_example() {
        let s = StructureSpec::unconstrained();
        assert_eq!(s.param_count(2, 3), 14);
    }
}
