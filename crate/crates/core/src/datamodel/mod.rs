//! Data containers shared by every estimator.

mod matstack;
mod structure;

pub use matstack::{read_matstack, write_matstack, format_f64};
pub use structure::{
    ar1_full, cs_full, Ar1Matrix, CsMatrix, MeanStructure, ScatterStructure, StructureSpec,
};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `n` real `p × q` matrices with optional integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixStack {
    p: usize,
    q: usize,
    mats: Vec<DMatrix<f64>>,
    labels: Option<Vec<usize>>,
}

impl MatrixStack {
    pub fn new(mats: Vec<DMatrix<f64>>, labels: Option<Vec<usize>>) -> Result<Self> {
        let first = mats
            .first()
            .ok_or_else(|| Error::InvalidParameter("matrix stack must hold at least one matrix".into()))?;
        let (p, q) = first.shape();
        if p == 0 || q == 0 {
            return Err(Error::InvalidParameter("matrices must be at least 1 x 1".into()));
        }
        if let Some(bad) = mats.iter().position(|m| m.shape() != (p, q)) {
            return Err(Error::DimensionMismatch {
                expected: format!("{p}x{q}"),
                got: format!("{}x{} at observation {bad}", mats[bad].nrows(), mats[bad].ncols()),
            });
        }
        if let Some(l) = &labels {
            if l.len() != mats.len() {
                return Err(Error::DimensionMismatch {
                    expected: format!("{} labels", mats.len()),
                    got: format!("{} labels", l.len()),
                });
            }
        }
        Ok(Self { p, q, mats, labels })
    }

    pub fn n(&self) -> usize {
        self.mats.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.mats
    }

    pub fn get(&self, i: usize) -> &DMatrix<f64> {
        &self.mats[i]
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn is_labeled(&self) -> bool {
        self.labels.is_some()
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} labels", self.n()),
                got: format!("{} labels", labels.len()),
            });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn without_labels(mut self) -> Self {
        self.labels = None;
        self
    }

    /// Observations at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let mats = idx.iter().map(|&i| self.mats[i].clone()).collect();
        let labels = self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect());
        Self::new(mats, labels)
    }

    /// Every observation multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            p: self.p,
            q: self.q,
            mats: self.mats.iter().map(|m| m * c).collect(),
            labels: self.labels.clone(),
        }
    }

    /// Elementwise sample mean, summed in observation order.
    pub fn mean(&self) -> DMatrix<f64> {
        let mut acc = DMatrix::zeros(self.p, self.q);
        for m in &self.mats {
            acc += m;
        }
        acc / self.n() as f64
    }

    /// Row-major flattening of observation `i`.
    pub fn row_major(&self, i: usize) -> Vec<f64> {
        let m = &self.mats[i];
        (0..self.p).flat_map(|r| (0..self.q).map(move |c| m[(r, c)])).collect()
    }
}

/// Serialize a matrix as a list of rows.
pub mod matrix_rows {
    use nalgebra::DMatrix;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(D::Error::custom("ragged matrix rows"));
        }
        Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
    }
}

/// Parameters of the matrix-variate normal `N_{p,q}(M, Σ, Ω)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MxvnParams {
    #[serde(with = "matrix_rows")]
    pub mean: DMatrix<f64>,
    #[serde(with = "matrix_rows")]
    pub sigma: DMatrix<f64>,
    #[serde(with = "matrix_rows")]
    pub omega: DMatrix<f64>,
}

/// Parameters of the matrix-variate t `t_{p,q}(ν, M, Σ, Ω)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MxvtParams {
    pub nu: f64,
    #[serde(with = "matrix_rows")]
    pub mean: DMatrix<f64>,
    #[serde(with = "matrix_rows")]
    pub sigma: DMatrix<f64>,
    #[serde(with = "matrix_rows")]
    pub omega: DMatrix<f64>,
}

fn check_shapes(mean: &DMatrix<f64>, sigma: &DMatrix<f64>, omega: &DMatrix<f64>) -> Result<()> {
    let (p, q) = mean.shape();
    if sigma.shape() != (p, p) || omega.shape() != (q, q) {
        return Err(Error::DimensionMismatch {
            expected: format!("Sigma {p}x{p}, Omega {q}x{q}"),
            got: format!(
                "Sigma {}x{}, Omega {}x{}",
                sigma.nrows(),
                sigma.ncols(),
                omega.nrows(),
                omega.ncols()
            ),
        });
    }
    Ok(())
}

impl MxvnParams {
    pub fn new(mean: DMatrix<f64>, sigma: DMatrix<f64>, omega: DMatrix<f64>) -> Result<Self> {
        check_shapes(&mean, &sigma, &omega)?;
        Ok(Self { mean, sigma, omega })
    }

    /// Zero mean and identity scatter.
    pub fn standard(p: usize, q: usize) -> Self {
        Self {
            mean: DMatrix::zeros(p, q),
            sigma: DMatrix::identity(p, p),
            omega: DMatrix::identity(q, q),
        }
    }

    pub fn p(&self) -> usize {
        self.mean.nrows()
    }

    pub fn q(&self) -> usize {
        self.mean.ncols()
    }
}

impl MxvtParams {
    pub fn new(nu: f64, mean: DMatrix<f64>, sigma: DMatrix<f64>, omega: DMatrix<f64>) -> Result<Self> {
        check_shapes(&mean, &sigma, &omega)?;
        if !(nu >= 1.0) || !nu.is_finite() {
            return Err(Error::InvalidParameter(format!("degrees of freedom must be >= 1, got {nu}")));
        }
        Ok(Self { nu, mean, sigma, omega })
    }

    pub fn standard(nu: f64, p: usize, q: usize) -> Self {
        Self {
            nu,
            mean: DMatrix::zeros(p, q),
            sigma: DMatrix::identity(p, p),
            omega: DMatrix::identity(q, q),
        }
    }

    pub fn p(&self) -> usize {
        self.mean.nrows()
    }

    pub fn q(&self) -> usize {
        self.mean.ncols()
    }

    pub fn kappa(&self) -> f64 {
        self.nu + (self.p() + self.q()) as f64 - 1.0
    }

    pub fn location_scale(&self) -> MxvnParams {
        MxvnParams {
            mean: self.mean.clone(),
            sigma: self.sigma.clone(),
            omega: self.omega.clone(),
        }
    }
}

/// Parameter records that carry a row/column scatter pair.
pub trait ScatterPair: Sized {
    fn sigma(&self) -> &DMatrix<f64>;
    fn omega(&self) -> &DMatrix<f64>;
    fn with_scatter(&self, sigma: DMatrix<f64>, omega: DMatrix<f64>) -> Self;
}

impl ScatterPair for MxvnParams {
    fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }
    fn omega(&self) -> &DMatrix<f64> {
        &self.omega
    }
    fn with_scatter(&self, sigma: DMatrix<f64>, omega: DMatrix<f64>) -> Self {
        Self { mean: self.mean.clone(), sigma, omega }
    }
}

impl ScatterPair for MxvtParams {
    fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }
    fn omega(&self) -> &DMatrix<f64> {
        &self.omega
    }
    fn with_scatter(&self, sigma: DMatrix<f64>, omega: DMatrix<f64>) -> Self {
        Self { nu: self.nu, mean: self.mean.clone(), sigma, omega }
    }
}

/// Rescale so that `Σ[0,0] = 1`, moving the factor onto `Ω`.
///
/// `Ω ⊗ Σ` is unchanged, so every density is too.
pub fn normalize_identifiability<P: ScatterPair>(params: &P) -> Result<P> {
    let s11 = params.sigma()[(0, 0)];
    if !(s11 > 0.0) || !s11.is_finite() {
        return Err(Error::InvalidParameter(format!("Sigma[1,1] must be positive, got {s11}")));
    }
    Ok(params.with_scatter(params.sigma() / s11, params.omega() * s11))
}

/// Accumulated E-step statistics.
///
/// In the Z form the common factor `κ = ν + p + q - 1` has been taken out:
/// `s_s = Σ Z_i`, `s_sx = Σ Z_i X_i`, `s_xsx = Σ X_i^T Z_i X_i` and
/// `s_logdet = Σ log|Z_i|`, with `Z_i = [(X_i - M) Ω^{-1} (X_i - M)^T + Σ]^{-1}`.
/// In the S form the matrices carry the factor and `s_logdet` holds
/// `Σ E(log|S_i| | X_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    pub n: usize,
    pub s_s: DMatrix<f64>,
    pub s_sx: DMatrix<f64>,
    pub s_xsx: DMatrix<f64>,
    pub s_logdet: f64,
    pub kappa: f64,
    pub z_form: bool,
}

impl SufficientStats {
    /// Multiply the κ factor back in; no-op in the S form.
    pub fn to_s_form(&self) -> Result<Self> {
        if !self.z_form {
            return Ok(self.clone());
        }
        let p = self.s_s.nrows();
        let k = self.kappa;
        let n = self.n as f64;
        let e_logdet = n * (crate::specfun::mvdigamma(p, k / 2.0)? + p as f64 * 2f64.ln()) + self.s_logdet;
        Ok(Self {
            n: self.n,
            s_s: &self.s_s * k,
            s_sx: &self.s_sx * k,
            s_xsx: &self.s_xsx * k,
            s_logdet: e_logdet,
            kappa: k,
            z_form: false,
        })
    }

    /// Same Z statistics viewed with a different `κ`.
    pub fn with_kappa(&self, kappa: f64) -> Self {
        assert!(self.z_form, "kappa can only be swapped on Z-form statistics");
        Self { kappa, ..self.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_scale_transfer() {
        let p = MxvnParams::new(
            DMatrix::zeros(2, 3),
            DMatrix::identity(2, 2) * 2.0,
            DMatrix::identity(3, 3),
        )
        .unwrap();
        let n = normalize_identifiability(&p).unwrap();
        assert_eq!(n.sigma, DMatrix::identity(2, 2));
        assert_eq!(n.omega, DMatrix::identity(3, 3) * 2.0);
        assert_eq!(normalize_identifiability(&n).unwrap(), n);
    }

    #[test]
    fn normalize_rejects_nonpositive_corner() {
        let mut p = MxvtParams::standard(5.0, 2, 2);
        p.sigma[(0, 0)] = 0.0;
        assert!(normalize_identifiability(&p).is_err());
    }

    #[test]
    fn stack_invariants() {
        assert!(MatrixStack::new(vec![], None).is_err());
        let a = DMatrix::zeros(2, 3);
        let b = DMatrix::zeros(3, 2);
        assert!(MatrixStack::new(vec![a.clone(), b], None).is_err());
        assert!(MatrixStack::new(vec![a.clone(), a.clone()], Some(vec![0])).is_err());
        let s = MatrixStack::new(vec![a.clone(), a], Some(vec![0, 1])).unwrap();
        assert_eq!((s.n(), s.p(), s.q()), (2, 2, 3));
    }

    #[test]
    fn t_params_reject_small_nu() {
        assert!(MxvtParams::new(0.5, DMatrix::zeros(1, 1), DMatrix::identity(1, 1), DMatrix::identity(1, 1)).is_err());
    }
}
