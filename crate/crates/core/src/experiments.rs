//! Seeded simulation studies: recovery of `ν`, RMSE of the mean and
//! covariance, fixed-`ν` misspecification curves, and fit timing.
//!
//! Replicate `r` of grid cell `c` draws from `RngSeed::new(seed).substream(c, r)`,
//! so results do not depend on the number of worker threads.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{ar1_full, format_f64, MatrixStack, MxvnParams, MxvtParams};
use crate::distributions::{sample_mxvn_with, sample_mxvt_with, sample_wishart_with};
use crate::ecme::{mxvt_fit, EcmeConfig};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, kron, solve_lower};
use crate::mxvn_fit::{mxvn_fit, sample_size_bound, FitConfig};
use crate::rng::RngSeed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    NuRecovery,
    Rmse,
    Misspec,
    Timing,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::NuRecovery => "nu-recovery",
            Self::Rmse => "rmse",
            Self::Misspec => "misspec",
            Self::Timing => "timing",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nu-recovery" => Ok(Self::NuRecovery),
            "rmse" => Ok(Self::Rmse),
            "misspec" => Ok(Self::Misspec),
            "timing" => Ok(Self::Timing),
            _ => Err(Error::InvalidParameter(format!(
                "unknown experiment '{s}' (expected nu-recovery, rmse, misspec or timing)"
            ))),
        }
    }
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One simulation setting. `nu: None` means matrix-normal data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub p: usize,
    pub q: usize,
    pub n: usize,
    pub nu: Option<f64>,
}

impl GridCell {
    pub fn t(p: usize, q: usize, n: usize, nu: f64) -> Self {
        Self { p, q, n, nu: Some(nu) }
    }

    pub fn normal(p: usize, q: usize, n: usize) -> Self {
        Self { p, q, n, nu: None }
    }

    fn nu_label(&self) -> String {
        self.nu.map_or_else(|| "normal".to_string(), format_f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: ExperimentKind,
    pub replicates: usize,
    pub grid: Vec<GridCell>,
    pub seed: u64,
    /// Directory for the CSV tables.
    #[serde(default)]
    pub output: Option<PathBuf>,
    pub max_iter: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Fixed degrees of freedom fitted in the misspecification study.
    #[serde(default)]
    pub fitted_nu: Vec<f64>,
    /// Also fit a matrix normal in the misspecification study.
    #[serde(default)]
    pub fit_normal: bool,
}

fn default_tolerance() -> f64 {
    FitConfig::default().tolerance
}

impl ExperimentSpec {
    /// Defaults for each study. `nu-recovery` uses a 10000-iteration cap so
    /// that slowly creeping fits reach the `ν` bound rather than the cap.
    pub fn default_for(name: ExperimentKind) -> Self {
        let base = Self {
            name,
            replicates: 200,
            grid: Vec::new(),
            seed: 20190601,
            output: None,
            max_iter: 1000,
            tolerance: default_tolerance(),
            fitted_nu: Vec::new(),
            fit_normal: false,
        };
        let nu_n_grid = || {
            let mut g = Vec::new();
            for nu in [5.0, 10.0, 20.0] {
                for n in [35, 50, 100] {
                    g.push(GridCell::t(5, 3, n, nu));
                }
            }
            g
        };
        match name {
            ExperimentKind::NuRecovery => Self { grid: nu_n_grid(), max_iter: 10_000, ..base },
            ExperimentKind::Rmse => Self { grid: nu_n_grid(), ..base },
            ExperimentKind::Misspec => Self {
                replicates: 1,
                grid: vec![GridCell::t(5, 8, 100, 6.0), GridCell::t(5, 8, 100, 20.0), GridCell::normal(5, 8, 100)],
                fitted_nu: (3..=100).map(f64::from).collect(),
                fit_normal: true,
                ..base
            },
            ExperimentKind::Timing => {
                let mut grid = Vec::new();
                for n in [100, 500] {
                    for p in [5, 25, 100] {
                        for q in [5, 25, 100] {
                            grid.push(GridCell::t(p, q, n, 5.0));
                        }
                    }
                }
                Self { replicates: 5, grid, ..base }
            }
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.replicates == 0 {
            return bad("replicate count must be at least 1".into());
        }
        if self.grid.is_empty() {
            return bad("experiment grid is empty".into());
        }
        if self.max_iter == 0 || !(self.tolerance > 0.0) {
            return bad("max_iter and tolerance must be positive".into());
        }
        if self.grid.len() > u32::MAX as usize || self.replicates > u32::MAX as usize {
            return bad("grid or replicate count too large".into());
        }
        for (k, c) in self.grid.iter().enumerate() {
            if c.p == 0 || c.q == 0 {
                return bad(format!("cell {k}: dimensions must be positive"));
            }
            if (c.n as f64) < sample_size_bound(c.p, c.q).max(2.0) {
                return bad(format!("cell {k}: n = {} is too small for a {}x{} fit", c.n, c.p, c.q));
            }
            if let Some(nu) = c.nu {
                if !(nu > 2.0 && nu.is_finite()) {
                    return bad(format!("cell {k}: degrees of freedom must exceed 2, got {nu}"));
                }
            }
            if self.name == ExperimentKind::Misspec && c.q as f64 > MISSPEC_WISHART_DF {
                return bad(format!("cell {k}: column dimension above {MISSPEC_WISHART_DF} is not supported"));
            }
        }
        if self.name == ExperimentKind::Misspec {
            if self.fitted_nu.is_empty() && !self.fit_normal {
                return bad("misspecification study needs fitted_nu or fit_normal".into());
            }
            if let Some(nu) = self.fitted_nu.iter().find(|v| !(**v > 2.0 && v.is_finite())) {
                return bad(format!("fitted degrees of freedom must exceed 2, got {nu}"));
            }
        }
        Ok(())
    }

    fn ecme_config(&self) -> EcmeConfig {
        let mut cfg = EcmeConfig::estimate();
        cfg.fit.max_iter = self.max_iter;
        cfg.fit.tolerance = self.tolerance;
        cfg
    }

    fn fit_config(&self) -> FitConfig {
        FitConfig { max_iter: self.max_iter, tolerance: self.tolerance, ..FitConfig::default() }
    }

    fn cell_seed(&self, cell: usize, rep: usize) -> RngSeed {
        RngSeed::new(self.seed).substream(cell as u32, rep as u32)
    }
}

/// CSV tables and a plain-text summary.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub name: ExperimentKind,
    pub replicate_csv: String,
    pub summary_csv: String,
    pub report: String,
}

impl ExperimentOutput {
    /// Writes `<name>_replicates.csv` and `<name>_summary.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut paths = Vec::new();
        for (suffix, body) in [("replicates", &self.replicate_csv), ("summary", &self.summary_csv)] {
            let path = dir.join(format!("{}_{suffix}.csv", self.name.as_str().replace('-', "_")));
            fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
            paths.push(path);
        }
        Ok(paths)
    }
}

pub fn run(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    match spec.name {
        ExperimentKind::NuRecovery => Ok(nu_recovery(spec)?.output()),
        ExperimentKind::Rmse => Ok(rmse_recovery(spec)?.output()),
        ExperimentKind::Misspec => Ok(misspecification(spec)?.output()),
        ExperimentKind::Timing => Ok(timing(spec)?.output()),
    }
}

/// Outcome of one fit within a study. Failed fits keep `NaN` estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FitStatus {
    Converged,
    NotConverged,
    AtBound,
    Failed,
}

impl FitStatus {
    fn as_str(self) -> &'static str {
        match self {
            Self::Converged => "converged",
            Self::NotConverged => "not-converged",
            Self::AtBound => "at-bound",
            Self::Failed => "failed",
        }
    }

    fn of(converged: bool, at_bound: bool) -> Self {
        if at_bound {
            Self::AtBound
        } else if converged {
            Self::Converged
        } else {
            Self::NotConverged
        }
    }
}

fn simulate(cell: &GridCell, mean: DMatrix<f64>, sigma: DMatrix<f64>, omega: DMatrix<f64>, rng: &mut impl rand::Rng) -> Result<MatrixStack> {
    match cell.nu {
        Some(nu) => sample_mxvt_with(&MxvtParams::new(nu, mean, sigma, omega)?, cell.n, rng),
        None => sample_mxvn_with(&MxvnParams::new(mean, sigma, omega)?, cell.n, rng),
    }
}

fn standard_data(cell: &GridCell, seed: RngSeed) -> Result<MatrixStack> {
    let (p, q) = (cell.p, cell.q);
    simulate(cell, DMatrix::zeros(p, q), DMatrix::identity(p, p), DMatrix::identity(q, q), &mut seed.rng())
}

fn par_cells<T: Send>(spec: &ExperimentSpec, f: impl Fn(usize, usize) -> T + Sync) -> Vec<T> {
    let jobs: Vec<(usize, usize)> =
        (0..spec.grid.len()).flat_map(|c| (0..spec.replicates).map(move |r| (c, r))).collect();
    jobs.into_par_iter().map(|(c, r)| f(c, r)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub min: f64,
    pub max: f64,
    pub median: f64,
    pub mean: f64,
    pub sd: f64,
}

impl Summary {
    /// Over the finite values; all fields `NaN` when there are none.
    pub fn of(values: &[f64]) -> Self {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        let n = v.len();
        if n == 0 {
            return Self { count: 0, min: f64::NAN, max: f64::NAN, median: f64::NAN, mean: f64::NAN, sd: f64::NAN };
        }
        v.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
        let mean = v.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            f64::NAN
        };
        Self { count: n, min: v[0], max: v[n - 1], median, mean, sd }
    }
}

fn g6(v: f64) -> String {
    if v.is_finite() {
        let a = v.abs();
        if a != 0.0 && !(1e-4..1e6).contains(&a) {
            format!("{v:.5e}")
        } else {
            let s = format!("{v:.6}");
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        }
    } else {
        format!("{v}")
    }
}

// ---------------------------------------------------------------- ν recovery

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuRecoveryRow {
    pub cell: usize,
    pub replicate: usize,
    pub nu_hat: f64,
    pub iterations: usize,
    pub status: FitStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuRecoveryCell {
    pub cell: GridCell,
    pub summary: Summary,
    pub not_converged: usize,
    pub at_bound: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuRecovery {
    pub rows: Vec<NuRecoveryRow>,
    pub cells: Vec<NuRecoveryCell>,
}

/// Fits the MxVt with estimated `ν` to data drawn with zero mean and identity
/// scatter in every cell.
pub fn nu_recovery(spec: &ExperimentSpec) -> Result<NuRecovery> {
    spec.validate()?;
    let cfg = spec.ecme_config();
    let rows = par_cells(spec, |c, r| {
        let fit = standard_data(&spec.grid[c], spec.cell_seed(c, r)).and_then(|d| mxvt_fit(&d, &cfg));
        match fit {
            Ok(f) => NuRecoveryRow {
                cell: c,
                replicate: r,
                nu_hat: f.params.nu,
                iterations: f.iterations,
                status: FitStatus::of(f.converged, f.nu_at_bound),
            },
            Err(e) => {
                log::warn!("nu-recovery cell {c} replicate {r}: {e}");
                NuRecoveryRow { cell: c, replicate: r, nu_hat: f64::NAN, iterations: 0, status: FitStatus::Failed }
            }
        }
    });
    let cells = spec
        .grid
        .iter()
        .enumerate()
        .map(|(c, cell)| {
            let mine: Vec<&NuRecoveryRow> = rows.iter().filter(|x| x.cell == c).collect();
            let count = |s: FitStatus| mine.iter().filter(|x| x.status == s).count();
            NuRecoveryCell {
                cell: *cell,
                summary: Summary::of(&mine.iter().map(|x| x.nu_hat).collect::<Vec<_>>()),
                not_converged: count(FitStatus::NotConverged),
                at_bound: count(FitStatus::AtBound),
                failed: count(FitStatus::Failed),
            }
        })
        .collect();
    Ok(NuRecovery { rows, cells })
}

impl NuRecovery {
    pub fn output(&self) -> ExperimentOutput {
        let mut rep = String::from("cell,replicate,p,q,n,nu,nu_hat,iterations,status\n");
        for r in &self.rows {
            let c = &self.cells[r.cell].cell;
            let _ = writeln!(
                rep,
                "{},{},{},{},{},{},{},{},{}",
                r.cell,
                r.replicate,
                c.p,
                c.q,
                c.n,
                c.nu_label(),
                format_f64(r.nu_hat),
                r.iterations,
                r.status.as_str()
            );
        }
        let mut sum = String::from("cell,p,q,n,nu,count,min,max,median,mean,sd,not_converged,at_bound,failed\n");
        let mut text = String::from("nu recovery\n  p  q    n      nu  median      mean        sd  range                   nc  bnd  fail\n");
        for (k, c) in self.cells.iter().enumerate() {
            let s = &c.summary;
            let _ = writeln!(
                sum,
                "{k},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                c.cell.p,
                c.cell.q,
                c.cell.n,
                c.cell.nu_label(),
                s.count,
                format_f64(s.min),
                format_f64(s.max),
                format_f64(s.median),
                format_f64(s.mean),
                format_f64(s.sd),
                c.not_converged,
                c.at_bound,
                c.failed
            );
            let _ = writeln!(
                text,
                "{:>3}{:>3}{:>5}{:>8}{:>8}{:>10}{:>10}  ({}, {}){:>5}{:>5}{:>6}",
                c.cell.p,
                c.cell.q,
                c.cell.n,
                c.cell.nu_label(),
                g6(s.median),
                g6(s.mean),
                g6(s.sd),
                g6(s.min),
                g6(s.max),
                c.not_converged,
                c.at_bound,
                c.failed
            );
        }
        ExperimentOutput { name: ExperimentKind::NuRecovery, replicate_csv: rep, summary_csv: sum, report: text }
    }
}

// ---------------------------------------------------------------- RMSE

/// Mean squared entrywise error of an estimated mean, in units where the
/// true `cov(vec X)` is the identity. `var_scale` is the true per-entry
/// variance (1/(ν−2) for identity-scatter t data).
pub fn scaled_mean_sq_error(estimate: &DMatrix<f64>, truth: &DMatrix<f64>, var_scale: f64) -> f64 {
    (estimate - truth).norm_squared() / (var_scale * estimate.len() as f64)
}

/// Mean squared entrywise error between an estimated `cov(vec X)` and the
/// truth after whitening by the true covariance: `L⁻¹ Ĉ L⁻ᵀ` against `I`.
pub fn whitened_cov_sq_error(estimate: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<f64> {
    let c = cholesky(truth, "true covariance")?;
    let a = solve_lower(&c, estimate);
    let w = solve_lower(&c, &a.transpose());
    let d = w.nrows();
    Ok((w - DMatrix::<f64>::identity(d, d)).norm_squared() / (d * d) as f64)
}

/// `cov(vec X)` of a fitted or true model (`nu: None` for the normal).
pub fn vec_covariance(sigma: &DMatrix<f64>, omega: &DMatrix<f64>, nu: Option<f64>) -> DMatrix<f64> {
    let k = kron(omega, sigma);
    match nu {
        Some(v) => k / (v - 2.0),
        None => k,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmseRow {
    pub cell: usize,
    pub replicate: usize,
    pub nu_hat: f64,
    pub mean_sq_error: f64,
    pub cov_sq_error: f64,
    pub status: FitStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseCell {
    pub cell: GridCell,
    pub rmse_mean: f64,
    pub rmse_cov: f64,
    /// Replicates with a finite covariance error (`ν̂ > 2`).
    pub used: usize,
    pub not_converged: usize,
    pub at_bound: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseRecovery {
    pub rows: Vec<RmseRow>,
    pub cells: Vec<RmseCell>,
}

fn rmse_row(cell: &GridCell, data: &MatrixStack, spec: &ExperimentSpec) -> Result<(f64, f64, f64, FitStatus)> {
    let (p, q) = (cell.p, cell.q);
    let truth_mean = DMatrix::zeros(p, q);
    let truth_cov = vec_covariance(&DMatrix::identity(p, p), &DMatrix::identity(q, q), cell.nu);
    let var_scale = cell.nu.map_or(1.0, |v| 1.0 / (v - 2.0));
    match cell.nu {
        Some(_) => {
            let f = mxvt_fit(data, &spec.ecme_config())?;
            let nu = f.params.nu;
            let cov = if nu > 2.0 {
                whitened_cov_sq_error(&vec_covariance(&f.params.sigma, &f.params.omega, Some(nu)), &truth_cov)?
            } else {
                f64::NAN
            };
            let m = scaled_mean_sq_error(&f.params.mean, &truth_mean, var_scale);
            Ok((nu, m, cov, FitStatus::of(f.converged, f.nu_at_bound)))
        }
        None => {
            let f = mxvn_fit(data, &spec.fit_config())?;
            let cov = whitened_cov_sq_error(&vec_covariance(&f.params.sigma, &f.params.omega, None), &truth_cov)?;
            let m = scaled_mean_sq_error(&f.params.mean, &truth_mean, var_scale);
            Ok((f64::INFINITY, m, cov, FitStatus::of(f.converged, false)))
        }
    }
}

/// RMSE of `M̂` and of the fitted `cov(vec X)` per cell, both on the scale
/// where the true covariance is the identity. Normal cells are fitted with
/// the matrix normal.
pub fn rmse_recovery(spec: &ExperimentSpec) -> Result<RmseRecovery> {
    spec.validate()?;
    let rows = par_cells(spec, |c, r| {
        let cell = &spec.grid[c];
        match standard_data(cell, spec.cell_seed(c, r)).and_then(|d| rmse_row(cell, &d, spec)) {
            Ok((nu_hat, m, cov, status)) => {
                RmseRow { cell: c, replicate: r, nu_hat, mean_sq_error: m, cov_sq_error: cov, status }
            }
            Err(e) => {
                log::warn!("rmse cell {c} replicate {r}: {e}");
                RmseRow {
                    cell: c,
                    replicate: r,
                    nu_hat: f64::NAN,
                    mean_sq_error: f64::NAN,
                    cov_sq_error: f64::NAN,
                    status: FitStatus::Failed,
                }
            }
        }
    });
    let cells = spec
        .grid
        .iter()
        .enumerate()
        .map(|(c, cell)| {
            let mine: Vec<&RmseRow> = rows.iter().filter(|x| x.cell == c).collect();
            let rms = |v: Vec<f64>| {
                let v: Vec<f64> = v.into_iter().filter(|x| x.is_finite()).collect();
                ((v.iter().sum::<f64>() / v.len() as f64).sqrt(), v.len())
            };
            let (rmse_mean, _) = rms(mine.iter().map(|x| x.mean_sq_error).collect());
            let (rmse_cov, used) = rms(mine.iter().map(|x| x.cov_sq_error).collect());
            let count = |s: FitStatus| mine.iter().filter(|x| x.status == s).count();
            RmseCell {
                cell: *cell,
                rmse_mean,
                rmse_cov,
                used,
                not_converged: count(FitStatus::NotConverged),
                at_bound: count(FitStatus::AtBound),
                failed: count(FitStatus::Failed),
            }
        })
        .collect();
    Ok(RmseRecovery { rows, cells })
}

impl RmseRecovery {
    pub fn output(&self) -> ExperimentOutput {
        let mut rep = String::from("cell,replicate,p,q,n,nu,nu_hat,mean_sq_error,cov_sq_error,status\n");
        for r in &self.rows {
            let c = &self.cells[r.cell].cell;
            let _ = writeln!(
                rep,
                "{},{},{},{},{},{},{},{},{},{}",
                r.cell,
                r.replicate,
                c.p,
                c.q,
                c.n,
                c.nu_label(),
                format_f64(r.nu_hat),
                format_f64(r.mean_sq_error),
                format_f64(r.cov_sq_error),
                r.status.as_str()
            );
        }
        let mut sum = String::from("cell,p,q,n,nu,rmse_mean,rmse_cov,used,not_converged,at_bound,failed\n");
        let mut text = String::from("rmse (identity-covariance scale)\n  p  q    n      nu   rmse(M)  rmse(cov)  used   nc  bnd  fail\n");
        for (k, c) in self.cells.iter().enumerate() {
            let _ = writeln!(
                sum,
                "{k},{},{},{},{},{},{},{},{},{},{}",
                c.cell.p,
                c.cell.q,
                c.cell.n,
                c.cell.nu_label(),
                format_f64(c.rmse_mean),
                format_f64(c.rmse_cov),
                c.used,
                c.not_converged,
                c.at_bound,
                c.failed
            );
            let _ = writeln!(
                text,
                "{:>3}{:>3}{:>5}{:>8}{:>10}{:>11}{:>6}{:>5}{:>5}{:>6}",
                c.cell.p,
                c.cell.q,
                c.cell.n,
                c.cell.nu_label(),
                g6(c.rmse_mean),
                g6(c.rmse_cov),
                c.used,
                c.not_converged,
                c.at_bound,
                c.failed
            );
        }
        ExperimentOutput { name: ExperimentKind::Rmse, replicate_csv: rep, summary_csv: sum, report: text }
    }
}

// ---------------------------------------------------------------- misspecification

/// Degrees of freedom of the Wishart draw used as the true column scatter.
pub const MISSPEC_WISHART_DF: f64 = 10.0;
/// Lag-one correlation of the true AR(1) row scatter.
pub const MISSPEC_AR1_RHO: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MisspecRow {
    pub cell: usize,
    pub replicate: usize,
    /// Fitted fixed `ν`; `None` for the matrix-normal fit.
    pub fitted_nu: Option<f64>,
    pub loglik: f64,
    pub mean_sq_dev: f64,
    pub cov_l2: f64,
    pub status: FitStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisspecCurve {
    pub cell: GridCell,
    /// Fitted models in grid order (normal last), averaged over replicates.
    pub fitted_nu: Vec<Option<f64>>,
    pub loglik: Vec<f64>,
    pub mean_sq_dev: Vec<f64>,
    pub cov_l2: Vec<f64>,
}

impl MisspecCurve {
    /// Fitted `ν` with the largest mean log-likelihood among the t fits.
    pub fn argmax_nu(&self) -> Option<f64> {
        self.fitted_nu
            .iter()
            .zip(&self.loglik)
            .filter_map(|(nu, ll)| nu.map(|v| (v, *ll)))
            .filter(|(_, ll)| ll.is_finite())
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(v, _)| v)
    }

    /// max − min of the t-fit log-likelihood over fitted `ν ∈ [lo, hi]`.
    pub fn loglik_spread(&self, lo: f64, hi: f64) -> f64 {
        let vals: Vec<f64> = self
            .fitted_nu
            .iter()
            .zip(&self.loglik)
            .filter_map(|(nu, ll)| nu.filter(|v| (lo..=hi).contains(v)).map(|_| *ll))
            .collect();
        let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
        max - min
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Misspecification {
    pub rows: Vec<MisspecRow>,
    pub curves: Vec<MisspecCurve>,
}

struct MisspecData {
    data: MatrixStack,
    truth_mean: DMatrix<f64>,
    truth_cov: DMatrix<f64>,
}

fn misspec_data(cell: &GridCell, seed: RngSeed) -> Result<MisspecData> {
    let mut rng = seed.rng();
    let (p, q) = (cell.p, cell.q);
    let sigma = ar1_full(p, MISSPEC_AR1_RHO, 1.0)?;
    let omega = sample_wishart_with(MISSPEC_WISHART_DF, &DMatrix::identity(q, q), &mut rng)?;
    let truth_mean = DMatrix::zeros(p, q);
    let truth_cov = vec_covariance(&sigma, &omega, cell.nu);
    let data = simulate(cell, truth_mean.clone(), sigma, omega, &mut rng)?;
    Ok(MisspecData { data, truth_mean, truth_cov })
}

fn misspec_fit(d: &MisspecData, fitted: Option<f64>, spec: &ExperimentSpec) -> Result<(f64, f64, f64, FitStatus)> {
    let (mean, cov, loglik, status) = match fitted {
        Some(nu) => {
            let mut cfg = EcmeConfig::fixed(nu);
            cfg.fit = spec.fit_config();
            let f = mxvt_fit(&d.data, &cfg)?;
            let cov = vec_covariance(&f.params.sigma, &f.params.omega, Some(nu));
            (f.params.mean, cov, f.loglik, FitStatus::of(f.converged, false))
        }
        None => {
            let f = mxvn_fit(&d.data, &spec.fit_config())?;
            let cov = vec_covariance(&f.params.sigma, &f.params.omega, None);
            (f.params.mean, cov, f.loglik, FitStatus::of(f.converged, false))
        }
    };
    let msd = (&mean - &d.truth_mean).norm_squared() / mean.len() as f64;
    let l2 = (&cov - &d.truth_cov).norm();
    Ok((loglik, msd, l2, status))
}

/// Fits each dataset with fixed `ν` over `spec.fitted_nu` (and the matrix
/// normal when `fit_normal`). Data: zero mean, AR(1) row scatter with
/// correlation 0.7, column scatter drawn from a standard Wishart with 10
/// degrees of freedom.
pub fn misspecification(spec: &ExperimentSpec) -> Result<Misspecification> {
    spec.validate()?;
    let mut fitted: Vec<Option<f64>> = spec.fitted_nu.iter().map(|&v| Some(v)).collect();
    if spec.fit_normal {
        fitted.push(None);
    }
    let datasets: Vec<Result<MisspecData>> = par_cells(spec, |c, r| misspec_data(&spec.grid[c], spec.cell_seed(c, r)));
    let jobs: Vec<(usize, usize)> = (0..datasets.len()).flat_map(|d| (0..fitted.len()).map(move |f| (d, f))).collect();
    let rows: Vec<MisspecRow> = jobs
        .into_par_iter()
        .map(|(d, f)| {
            let (cell, replicate) = (d / spec.replicates, d % spec.replicates);
            let res = datasets[d].as_ref().map_err(|e| Error::Internal(e.to_string())).and_then(|ds| misspec_fit(ds, fitted[f], spec));
            match res {
                Ok((loglik, mean_sq_dev, cov_l2, status)) => {
                    MisspecRow { cell, replicate, fitted_nu: fitted[f], loglik, mean_sq_dev, cov_l2, status }
                }
                Err(e) => {
                    log::warn!("misspec cell {cell} replicate {replicate}: {e}");
                    MisspecRow {
                        cell,
                        replicate,
                        fitted_nu: fitted[f],
                        loglik: f64::NAN,
                        mean_sq_dev: f64::NAN,
                        cov_l2: f64::NAN,
                        status: FitStatus::Failed,
                    }
                }
            }
        })
        .collect();
    let curves = spec
        .grid
        .iter()
        .enumerate()
        .map(|(c, cell)| {
            let avg = |f: usize, get: fn(&MisspecRow) -> f64| {
                let v: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.cell == c && r.fitted_nu == fitted[f])
                    .map(get)
                    .filter(|x| x.is_finite())
                    .collect();
                if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 }
            };
            MisspecCurve {
                cell: *cell,
                fitted_nu: fitted.clone(),
                loglik: (0..fitted.len()).map(|f| avg(f, |r| r.loglik)).collect(),
                mean_sq_dev: (0..fitted.len()).map(|f| avg(f, |r| r.mean_sq_dev)).collect(),
                cov_l2: (0..fitted.len()).map(|f| avg(f, |r| r.cov_l2)).collect(),
            }
        })
        .collect();
    Ok(Misspecification { rows, curves })
}

fn fitted_label(nu: Option<f64>) -> String {
    nu.map_or_else(|| "normal".to_string(), format_f64)
}

impl Misspecification {
    pub fn output(&self) -> ExperimentOutput {
        let mut rep = String::from("cell,replicate,p,q,n,nu,fitted,loglik,mean_sq_dev,cov_l2,status\n");
        for r in &self.rows {
            let c = &self.curves[r.cell].cell;
            let _ = writeln!(
                rep,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.cell,
                r.replicate,
                c.p,
                c.q,
                c.n,
                c.nu_label(),
                fitted_label(r.fitted_nu),
                format_f64(r.loglik),
                format_f64(r.mean_sq_dev),
                format_f64(r.cov_l2),
                r.status.as_str()
            );
        }
        let mut sum = String::from("cell,p,q,n,nu,fitted,loglik,mean_sq_dev,cov_l2\n");
        let mut text = String::from("misspecification (fixed-nu fits)\n");
        for (k, c) in self.curves.iter().enumerate() {
            for i in 0..c.fitted_nu.len() {
                let _ = writeln!(
                    sum,
                    "{k},{},{},{},{},{},{},{},{}",
                    c.cell.p,
                    c.cell.q,
                    c.cell.n,
                    c.cell.nu_label(),
                    fitted_label(c.fitted_nu[i]),
                    format_f64(c.loglik[i]),
                    format_f64(c.mean_sq_dev[i]),
                    format_f64(c.cov_l2[i])
                );
            }
            let normal = c.fitted_nu.iter().position(Option::is_none).map(|i| c.loglik[i]);
            let _ = writeln!(
                text,
                "  true nu {:>7} (p={}, q={}, n={}): best fitted nu {}, t loglik {}, normal loglik {}",
                c.cell.nu_label(),
                c.cell.p,
                c.cell.q,
                c.cell.n,
                c.argmax_nu().map_or("-".into(), g6),
                c.argmax_nu()
                    .and_then(|v| c.fitted_nu.iter().position(|x| *x == Some(v)))
                    .map_or("-".into(), |i| g6(c.loglik[i])),
                normal.map_or("-".into(), g6)
            );
        }
        ExperimentOutput { name: ExperimentKind::Misspec, replicate_csv: rep, summary_csv: sum, report: text }
    }
}

// ---------------------------------------------------------------- timing

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub cell: usize,
    pub replicate: usize,
    pub seconds: f64,
    pub iterations: usize,
    pub status: FitStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingCell {
    pub cell: GridCell,
    pub median_seconds: f64,
    pub median_seconds_per_iter: f64,
    pub median_iterations: f64,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub rows: Vec<TimingRow>,
    pub cells: Vec<TimingCell>,
}

impl Timing {
    pub fn median_seconds(&self, p: usize, q: usize, n: usize) -> Option<f64> {
        self.cells.iter().find(|c| (c.cell.p, c.cell.q, c.cell.n) == (p, q, n)).map(|c| c.median_seconds)
    }
}

/// Wall time of `ν`-estimating fits, run one at a time. Each cell starts
/// with an untimed warm-up fit; data generation is not timed.
pub fn timing(spec: &ExperimentSpec) -> Result<Timing> {
    spec.validate()?;
    let cfg = spec.ecme_config();
    let mut rows = Vec::new();
    for (c, cell) in spec.grid.iter().enumerate() {
        if let Ok(d) = standard_data(cell, spec.cell_seed(c, spec.replicates)) {
            let _ = mxvt_fit(&d, &cfg);
        }
        for r in 0..spec.replicates {
            let row = standard_data(cell, spec.cell_seed(c, r)).and_then(|d| {
                let t0 = Instant::now();
                let f = mxvt_fit(&d, &cfg)?;
                Ok(TimingRow {
                    cell: c,
                    replicate: r,
                    seconds: t0.elapsed().as_secs_f64(),
                    iterations: f.iterations,
                    status: FitStatus::of(f.converged, f.nu_at_bound),
                })
            });
            rows.push(row.unwrap_or_else(|e| {
                log::warn!("timing cell {c} replicate {r}: {e}");
                TimingRow { cell: c, replicate: r, seconds: f64::NAN, iterations: 0, status: FitStatus::Failed }
            }));
        }
    }
    let cells = spec
        .grid
        .iter()
        .enumerate()
        .map(|(c, cell)| {
            let mine: Vec<&TimingRow> = rows.iter().filter(|x| x.cell == c).collect();
            let med = |v: Vec<f64>| Summary::of(&v).median;
            TimingCell {
                cell: *cell,
                median_seconds: med(mine.iter().map(|x| x.seconds).collect()),
                median_seconds_per_iter: med(mine.iter().map(|x| x.seconds / x.iterations.max(1) as f64).collect()),
                median_iterations: med(
                    mine.iter().filter(|x| x.status != FitStatus::Failed).map(|x| x.iterations as f64).collect(),
                ),
                failed: mine.iter().filter(|x| x.status == FitStatus::Failed).count(),
            }
        })
        .collect();
    Ok(Timing { rows, cells })
}

impl Timing {
    pub fn output(&self) -> ExperimentOutput {
        let mut rep = String::from("cell,replicate,p,q,n,nu,seconds,iterations,status\n");
        for r in &self.rows {
            let c = &self.cells[r.cell].cell;
            let _ = writeln!(
                rep,
                "{},{},{},{},{},{},{},{},{}",
                r.cell,
                r.replicate,
                c.p,
                c.q,
                c.n,
                c.nu_label(),
                format_f64(r.seconds),
                r.iterations,
                r.status.as_str()
            );
        }
        let mut sum = String::from("cell,p,q,n,nu,median_seconds,median_seconds_per_iter,median_iterations,failed\n");
        let mut text = String::from("timing (median over replicates)\n    p    q    n   seconds  s/iter     iters\n");
        for (k, c) in self.cells.iter().enumerate() {
            let _ = writeln!(
                sum,
                "{k},{},{},{},{},{},{},{},{}",
                c.cell.p,
                c.cell.q,
                c.cell.n,
                c.cell.nu_label(),
                format_f64(c.median_seconds),
                format_f64(c.median_seconds_per_iter),
                format_f64(c.median_iterations),
                c.failed
            );
            let _ = writeln!(
                text,
                "{:>5}{:>5}{:>5}{:>10}{:>10}{:>8}",
                c.cell.p,
                c.cell.q,
                c.cell.n,
                g6(c.median_seconds),
                g6(c.median_seconds_per_iter),
                g6(c.median_iterations)
            );
        }
        for a in &self.cells {
            for b in &self.cells {
                if a.cell.p > a.cell.q && (b.cell.p, b.cell.q, b.cell.n) == (a.cell.q, a.cell.p, a.cell.n) {
                    let verdict = if a.median_seconds > b.median_seconds { "rows dominate" } else { "columns dominate" };
                    let _ = writeln!(
                        text,
                        "  (p={}, q={}) vs (p={}, q={}) at n={}: {} s vs {} s, {verdict}",
                        a.cell.p,
                        a.cell.q,
                        b.cell.p,
                        b.cell.q,
                        a.cell.n,
                        g6(a.median_seconds),
                        g6(b.median_seconds)
                    );
                }
            }
        }
        ExperimentOutput { name: ExperimentKind::Timing, replicate_csv: rep, summary_csv: sum, report: text }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(name: ExperimentKind, grid: Vec<GridCell>, reps: usize) -> ExperimentSpec {
        ExperimentSpec { replicates: reps, grid, max_iter: 2000, ..ExperimentSpec::default_for(name) }
    }

    #[test]
    fn summary_statistics() {
        let s = Summary::of(&[3.0, 1.0, f64::NAN, 2.0, 10.0]);
        assert_eq!(s.count, 4);
        assert_eq!(s.median, 2.5);
        assert_eq!(s.mean, 4.0);
        assert_eq!((s.min, s.max), (1.0, 10.0));
        assert!((s.sd - (50.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn spec_validation_and_json() {
        let spec = ExperimentSpec::default_for(ExperimentKind::NuRecovery);
        assert_eq!(spec.grid.len(), 9);
        let back = ExperimentSpec::from_json(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
        for bad in [
            ExperimentSpec { replicates: 0, ..spec.clone() },
            ExperimentSpec { grid: vec![], ..spec.clone() },
            ExperimentSpec { grid: vec![GridCell::t(5, 3, 1, 5.0)], ..spec.clone() },
            ExperimentSpec { grid: vec![GridCell::t(5, 3, 50, 1.5)], ..spec.clone() },
        ] {
            assert!(bad.validate().is_err());
        }
        assert!(ExperimentSpec::from_json(r#"{"name":"bogus"}"#).is_err());
        assert_eq!("misspec".parse::<ExperimentKind>().unwrap(), ExperimentKind::Misspec);
    }

    #[test]
    fn true_parameters_have_zero_error() {
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let o = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.2, 1.5, 0.1, 0.0, 0.1, 0.7]);
        let c = vec_covariance(&s, &o, Some(7.0));
        assert!(whitened_cov_sq_error(&c, &c).unwrap() < 1e-24);
        let m = DMatrix::from_element(2, 3, 0.4);
        assert_eq!(scaled_mean_sq_error(&m, &m, 0.2), 0.0);
    }

    #[test]
    fn rmse_matches_direct_computation() {
        let spec = small(ExperimentKind::Rmse, vec![GridCell::t(3, 2, 40, 6.0)], 1);
        let out = rmse_recovery(&spec).unwrap();
        let data = standard_data(&spec.grid[0], spec.cell_seed(0, 0)).unwrap();
        let f = mxvt_fit(&data, &spec.ecme_config()).unwrap();
        let (nu, nh) = (6.0, f.params.nu);
        let mut m = 0.0;
        for v in f.params.mean.iter() {
            m += (v * (nu - 2.0f64).sqrt()).powi(2);
        }
        m /= 6.0;
        let k = kron(&f.params.omega, &f.params.sigma);
        let mut cv = 0.0;
        for i in 0..6 {
            for j in 0..6 {
                let e = k[(i, j)] * (nu - 2.0) / (nh - 2.0) - if i == j { 1.0 } else { 0.0 };
                cv += e * e;
            }
        }
        cv /= 36.0;
        assert!((out.cells[0].rmse_mean - m.sqrt()).abs() < 1e-12);
        assert!((out.cells[0].rmse_cov - cv.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn one_point_grid_equals_direct_fit() {
        let mut spec = small(ExperimentKind::Misspec, vec![GridCell::t(3, 4, 60, 6.0)], 1);
        spec.fitted_nu = vec![8.0];
        spec.fit_normal = false;
        let out = misspecification(&spec).unwrap();
        let d = misspec_data(&spec.grid[0], spec.cell_seed(0, 0)).unwrap();
        let mut cfg = EcmeConfig::fixed(8.0);
        cfg.fit = spec.fit_config();
        let f = mxvt_fit(&d.data, &cfg).unwrap();
        assert_eq!(out.rows.len(), 1);
        assert_eq!(out.rows[0].loglik, f.loglik);
        assert_eq!(out.curves[0].argmax_nu(), Some(8.0));
    }

    #[test]
    fn reproducible_and_complete() {
        let spec = small(ExperimentKind::NuRecovery, vec![GridCell::t(3, 2, 40, 5.0), GridCell::normal(3, 2, 40)], 4);
        let a = nu_recovery(&spec).unwrap();
        let b = nu_recovery(&spec).unwrap();
        assert_eq!(a.output(), b.output());
        assert_eq!(a.rows.len(), 8);
        for c in &a.cells {
            assert_eq!(c.summary.count + c.failed, 4);
        }
        let text = a.output().replicate_csv;
        assert_eq!(text.lines().count(), 9);
    }

    #[test]
    fn timing_table() {
        let spec = small(ExperimentKind::Timing, vec![GridCell::t(4, 2, 30, 5.0), GridCell::t(2, 4, 30, 5.0)], 2);
        let t = timing(&spec).unwrap();
        assert_eq!(t.rows.len(), 4);
        assert!(t.median_seconds(4, 2, 30).unwrap() > 0.0);
        assert!(t.output().report.contains("(p=4, q=2) vs (p=2, q=4)"));
    }
}
