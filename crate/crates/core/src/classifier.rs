//! Bayes-rule discriminant analysis over matrix-variate normal or t groups.
//!
//! An observation goes to the group maximising `log η_g + log f_g(X)`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    normalize_identifiability, MatrixStack, MeanStructure, MxvnParams, MxvtParams, StructureSpec, SufficientStats,
};
use crate::distributions::{mxvn_loglik, MxvnDensity, MxvtDensity};
use crate::ecme::{estep_z, loglik_from_stats, mxvt_fit, solve_nu, EcmeConfig, NuMode};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, logdet, solve_lower};
use crate::mxvn_fit::{check_sample_size, mxvn_fit, relative_change, FitConfig};
use crate::updates::{centred_column_scatter, update_mean, update_scatter, ScatterTarget};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Family {
    Normal,
    /// t with the same fixed `ν` in every group.
    TFixed { nu: f64 },
    /// t with `ν` estimated (per group, or shared when pooled).
    TEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "values", rename_all = "kebab-case")]
pub enum Priors {
    /// Training-set group proportions.
    Empirical,
    Equal,
    /// One positive weight per group in sorted-label order; renormalised.
    Given(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GroupModel {
    Normal(MxvnParams),
    T(MxvtParams),
}

impl GroupModel {
    pub fn mean(&self) -> &DMatrix<f64> {
        match self {
            GroupModel::Normal(p) => &p.mean,
            GroupModel::T(p) => &p.mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub family: Family,
    pub structure: StructureSpec,
    pub priors: Priors,
    /// One `(Σ, Ω)` (and `ν`) shared by all groups.
    pub pooled: bool,
    pub fit: FitConfig,
    pub nu_bounds: (f64, f64),
}

impl Default for TrainOptions {
    fn default() -> Self {
        let e = EcmeConfig::default();
        Self {
            family: Family::Normal,
            structure: StructureSpec::default(),
            priors: Priors::Empirical,
            pooled: false,
            fit: FitConfig::default(),
            nu_bounds: e.nu_bounds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub p: usize,
    pub q: usize,
    pub family: Family,
    pub structure: StructureSpec,
    pub pooled: bool,
    /// Original class label of each group, ascending.
    pub labels: Vec<usize>,
    pub priors: Vec<f64>,
    pub groups: Vec<GroupModel>,
    pub train_loglik: f64,
    pub param_count: usize,
    pub n_train: usize,
    pub bic: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: usize,
    pub group: usize,
    pub scores: Vec<f64>,
    /// `R_1 - R_2`, two-group models only.
    pub log_odds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub n: usize,
    pub errors: usize,
    pub error_rate: f64,
    pub labels: Vec<usize>,
    /// `confusion[true][predicted]` in group order.
    pub confusion: Vec<Vec<usize>>,
}

fn resolve_priors(priors: &Priors, counts: &[usize]) -> Result<Vec<f64>> {
    let g = counts.len();
    let raw: Vec<f64> = match priors {
        Priors::Empirical => counts.iter().map(|&c| c as f64).collect(),
        Priors::Equal => vec![1.0; g],
        Priors::Given(v) => {
            if v.len() != g {
                return Err(Error::DimensionMismatch { expected: format!("{g} priors"), got: format!("{} priors", v.len()) });
            }
            if v.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
                return Err(Error::InvalidParameter("priors must be positive and finite".into()));
            }
            v.clone()
        }
    };
    let total: f64 = raw.iter().sum();
    Ok(raw.iter().map(|x| x / total).collect())
}

/// Split a labelled stack by distinct label, ascending.
pub fn split_groups(data: &MatrixStack) -> Result<(Vec<usize>, Vec<MatrixStack>)> {
    let labels = data
        .labels()
        .ok_or_else(|| Error::InvalidParameter("training data must be labelled".into()))?;
    let mut by_label: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_label.entry(l).or_default().push(i);
    }
    let mut keys = Vec::new();
    let mut stacks = Vec::new();
    for (l, idx) in by_label {
        keys.push(l);
        stacks.push(data.subset(&idx)?);
    }
    Ok((keys, stacks))
}

fn group_err(label: usize, e: Error) -> Error {
    Error::Group { group: label, source: Box::new(e) }
}

struct GroupFit {
    model: GroupModel,
    loglik: f64,
    converged: bool,
}

fn fit_group(data: &MatrixStack, opts: &TrainOptions) -> Result<GroupFit> {
    match opts.family {
        Family::Normal => {
            let f = mxvn_fit(data, &opts.fit)?;
            Ok(GroupFit { loglik: f.loglik, converged: f.converged, model: GroupModel::Normal(f.params) })
        }
        Family::TFixed { .. } | Family::TEstimate => {
            let nu_mode = match opts.family {
                Family::TFixed { nu } => NuMode::Fixed(nu),
                _ => NuMode::Estimate,
            };
            let cfg = EcmeConfig { fit: opts.fit, nu_mode, nu_bounds: opts.nu_bounds, ..EcmeConfig::default() };
            let f = mxvt_fit(data, &cfg)?;
            Ok(GroupFit { loglik: f.loglik, converged: f.converged, model: GroupModel::T(f.params) })
        }
    }
}

fn nu_of(family: Family) -> f64 {
    match family {
        Family::TFixed { nu } => nu,
        _ => f64::NAN,
    }
}

/// Normal groups sharing `(Σ, Ω)`: alternate group means with pooled
/// scatter sweeps.
fn fit_pooled_normal(groups: &[MatrixStack], opts: &TrainOptions) -> Result<(Vec<MxvnParams>, f64, bool)> {
    let (p, q) = (groups[0].p(), groups[0].q());
    let total: usize = groups.iter().map(MatrixStack::n).sum();
    let s = &opts.structure;
    let mut sigma = DMatrix::identity(p, p);
    let mut omega = DMatrix::identity(q, q);
    let group_means = |sigma: &DMatrix<f64>, omega: &DMatrix<f64>| -> Result<Vec<DMatrix<f64>>> {
        if s.mean == MeanStructure::Unconstrained {
            return Ok(groups.iter().map(MatrixStack::mean).collect());
        }
        let cs = cholesky(sigma, "Sigma")?;
        let co = cholesky(omega, "Omega")?;
        groups
            .iter()
            .map(|g| {
                let n = g.n() as f64;
                update_mean(s.mean, &(cs.inverse() * n), &cs.solve(&(g.mean() * n)), &co)
            })
            .collect()
    };
    let loglik = |means: &[DMatrix<f64>], sigma: &DMatrix<f64>, omega: &DMatrix<f64>| -> Result<f64> {
        groups
            .iter()
            .zip(means)
            .map(|(g, m)| mxvn_loglik(g, &MxvnParams { mean: m.clone(), sigma: sigma.clone(), omega: omega.clone() }))
            .sum()
    };
    let mut means = group_means(&sigma, &omega)?;
    let mut ll = loglik(&means, &sigma, &omega)?;
    let mut converged = false;
    for _ in 0..opts.fit.max_iter {
        means = group_means(&sigma, &omega)?;
        let co = cholesky(&omega, "Omega")?;
        let mut w = DMatrix::zeros(p, p);
        for (g, m) in groups.iter().zip(&means) {
            for x in g.matrices() {
                let a = solve_lower(&co, &(x - m).transpose());
                w += a.transpose() * &a;
            }
        }
        let (new_sigma, cs) = update_scatter(
            s.row_scatter,
            ScatterTarget::Covariance { m: (total * q) as f64, w: &w },
            &sigma,
            "pooled Sigma update",
        )?;
        let mut w = DMatrix::zeros(q, q);
        for (g, m) in groups.iter().zip(&means) {
            for x in g.matrices() {
                let b = solve_lower(&cs, &(x - m));
                w += b.transpose() * &b;
            }
        }
        let (new_omega, _) = update_scatter(
            s.col_scatter,
            ScatterTarget::Covariance { m: (total * p) as f64, w: &w },
            &omega,
            "pooled Omega update",
        )?;
        sigma = new_sigma;
        omega = new_omega;
        let new_ll = loglik(&means, &sigma, &omega)?;
        let done = relative_change(ll, new_ll) < opts.fit.tolerance;
        ll = new_ll;
        if done {
            converged = true;
            break;
        }
    }
    let params = means
        .into_iter()
        .map(|mean| normalize_identifiability(&MxvnParams { mean, sigma: sigma.clone(), omega: omega.clone() }))
        .collect::<Result<_>>()?;
    Ok((params, ll, converged))
}

/// t groups sharing `(ν, Σ, Ω)`, fit by ECME with per-group means.
fn fit_pooled_t(groups: &[MatrixStack], opts: &TrainOptions) -> Result<(Vec<MxvtParams>, f64, bool)> {
    let (p, q) = (groups[0].p(), groups[0].q());
    let total: usize = groups.iter().map(MatrixStack::n).sum();
    let s = &opts.structure;
    let estimate = opts.family == Family::TEstimate;
    let mut nu = if estimate { EcmeConfig::default().nu_init.clamp(opts.nu_bounds.0, opts.nu_bounds.1) } else { nu_of(opts.family) };
    let mut params: Vec<MxvtParams> = groups
        .iter()
        .map(|g| MxvtParams::new(nu, g.mean(), DMatrix::identity(p, p), DMatrix::identity(q, q)))
        .collect::<Result<_>>()?;
    if s.mean != MeanStructure::Unconstrained {
        let co = cholesky(&DMatrix::identity(q, q), "Omega")?;
        for (par, g) in params.iter_mut().zip(groups) {
            let n = g.n() as f64;
            par.mean = update_mean(s.mean, &(DMatrix::identity(p, p) * n), &(g.mean() * n), &co)?;
        }
    }
    let estep_all = |params: &[MxvtParams]| -> Result<Vec<SufficientStats>> {
        groups.iter().zip(params).map(|(g, par)| estep_z(g, par)).collect()
    };
    let total_ll = |zs: &[SufficientStats], params: &[MxvtParams]| -> Result<f64> {
        zs.iter().zip(params).map(|(z, par)| loglik_from_stats(z, par)).sum()
    };
    let mut zs = estep_all(&params)?;
    let mut ll = total_ll(&zs, &params)?;
    let mut converged = false;
    let mut at_bound = false;
    for _ in 0..opts.fit.max_iter {
        let (sigma, omega) = (params[0].sigma.clone(), params[0].omega.clone());
        let co = cholesky(&omega, "Omega")?;
        let mut w = DMatrix::zeros(q, q);
        let mut s_s = DMatrix::zeros(p, p);
        let mut means = Vec::with_capacity(groups.len());
        for z in &zs {
            let st = z.with_kappa(params[0].kappa()).to_s_form()?;
            let m = update_mean(s.mean, &st.s_s, &st.s_sx, &co)?;
            w += centred_column_scatter(&st.s_s, &st.s_sx, &st.s_xsx, &m);
            s_s += &st.s_s;
            means.push(m);
        }
        let (new_omega, _) = update_scatter(
            s.col_scatter,
            ScatterTarget::Covariance { m: (total * p) as f64, w: &w },
            &omega,
            "pooled Omega update",
        )?;
        let (new_sigma, _) = update_scatter(
            s.row_scatter,
            ScatterTarget::Precision { a: total as f64 * (nu + p as f64 - 1.0), b: &s_s },
            &sigma,
            "pooled Sigma update",
        )?;
        params = means
            .into_iter()
            .map(|mean| MxvtParams { nu, mean, sigma: new_sigma.clone(), omega: new_omega.clone() })
            .collect();
        zs = estep_all(&params)?;
        if estimate {
            let combined = SufficientStats {
                n: total,
                s_s: zs.iter().fold(DMatrix::zeros(p, p), |a, z| a + &z.s_s),
                s_sx: DMatrix::zeros(p, q),
                s_xsx: DMatrix::zeros(q, q),
                s_logdet: zs.iter().map(|z| z.s_logdet).sum(),
                kappa: zs[0].kappa,
                z_form: true,
            };
            let sol = solve_nu(&combined, &new_sigma, q, opts.nu_bounds, EcmeConfig::default().nu_tol)?;
            nu = sol.nu;
            at_bound = !sol.converged;
            for (par, z) in params.iter_mut().zip(zs.iter_mut()) {
                par.nu = nu;
                *z = z.with_kappa(par.kappa());
            }
        }
        let new_ll = total_ll(&zs, &params)?;
        let done = relative_change(ll, new_ll) < opts.fit.tolerance;
        ll = new_ll;
        if done {
            converged = true;
            break;
        }
    }
    let params = params.iter().map(normalize_identifiability).collect::<Result<_>>()?;
    Ok((params, ll, converged && !at_bound))
}

impl ClassifierModel {
    /// Fit one model per distinct label.
    pub fn train(data: &MatrixStack, opts: &TrainOptions) -> Result<Self> {
        let (labels, groups) = split_groups(data)?;
        if labels.len() < 2 {
            return Err(Error::InvalidParameter(format!("need at least 2 groups, got {}", labels.len())));
        }
        let counts: Vec<usize> = groups.iter().map(MatrixStack::n).collect();
        let priors = resolve_priors(&opts.priors, &counts)?;
        let (p, q) = (data.p(), data.q());
        let n_total = data.n();

        let (models, train_loglik, converged) = if opts.pooled {
            for (l, g) in labels.iter().zip(&groups) {
                if g.n() < 2 {
                    return Err(group_err(*l, Error::SampleSize(format!("group needs n >= 2, got {}", g.n()))));
                }
            }
            match opts.family {
                Family::Normal => {
                    check_sample_size(n_total, p, q, &opts.structure)?;
                    let (ps, ll, c) = fit_pooled_normal(&groups, opts)?;
                    (ps.into_iter().map(GroupModel::Normal).collect::<Vec<_>>(), ll, c)
                }
                _ => {
                    let (ps, ll, c) = fit_pooled_t(&groups, opts)?;
                    (ps.into_iter().map(GroupModel::T).collect(), ll, c)
                }
            }
        } else {
            let fits: Vec<GroupFit> = groups
                .par_iter()
                .zip(labels.par_iter())
                .map(|(g, l)| fit_group(g, opts).map_err(|e| group_err(*l, e)))
                .collect::<Result<_>>()?;
            let ll = fits.iter().map(|f| f.loglik).sum();
            let c = fits.iter().all(|f| f.converged);
            (fits.into_iter().map(|f| f.model).collect(), ll, c)
        };

        let param_count = Self::count_params(opts, labels.len(), p, q);
        let bic = -2.0 * train_loglik + param_count as f64 * (n_total as f64).ln();
        Ok(Self {
            p,
            q,
            family: opts.family,
            structure: opts.structure,
            pooled: opts.pooled,
            labels,
            priors,
            groups: models,
            train_loglik,
            param_count,
            n_train: n_total,
            bic,
            converged,
        })
    }

    /// Free density parameters: per-group means plus one scatter pair per
    /// group (once when pooled) with `Σ[0,0] = 1`, plus estimated `ν`s.
    pub fn count_params(opts: &TrainOptions, groups: usize, p: usize, q: usize) -> usize {
        let s = &opts.structure;
        let mean = s.mean.param_count(p, q);
        let scatter = s.row_scatter.param_count(p) + s.col_scatter.param_count(q) - 1;
        let nu = usize::from(opts.family == Family::TEstimate);
        if opts.pooled {
            groups * mean + scatter + nu
        } else {
            groups * (mean + scatter + nu)
        }
    }

    /// Model from known parameters, e.g. to score with the true densities.
    pub fn from_groups(labels: Vec<usize>, groups: Vec<GroupModel>, priors: Vec<f64>) -> Result<Self> {
        if groups.is_empty() || groups.len() != labels.len() || groups.len() != priors.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} groups, labels and priors", groups.len()),
                got: format!("{} labels, {} priors", labels.len(), priors.len()),
            });
        }
        let (p, q) = groups[0].mean().shape();
        if groups.iter().any(|g| g.mean().shape() != (p, q)) {
            return Err(Error::InvalidParameter("groups differ in shape".into()));
        }
        let family = match &groups[0] {
            GroupModel::Normal(_) => Family::Normal,
            GroupModel::T(t) => Family::TFixed { nu: t.nu },
        };
        let priors = resolve_priors(&Priors::Given(priors), &vec![1; groups.len()])?;
        Ok(Self {
            p,
            q,
            family,
            structure: StructureSpec::default(),
            pooled: false,
            labels,
            priors,
            groups,
            train_loglik: f64::NAN,
            param_count: 0,
            n_train: 0,
            bic: f64::NAN,
            converged: true,
        })
    }

    /// BIC of this model on `data` (normally its training data).
    pub fn bic_on(&self, data: &MatrixStack) -> Result<f64> {
        let scorer = self.scorer()?;
        let mut ll = 0.0;
        let labels = data.labels().ok_or_else(|| Error::InvalidParameter("BIC needs labelled data".into()))?;
        for (x, l) in data.matrices().iter().zip(labels) {
            let g = self.group_of(*l)?;
            ll += scorer.log_density(g, x)?;
        }
        Ok(-2.0 * ll + self.param_count as f64 * (data.n() as f64).ln())
    }

    pub fn group_of(&self, label: usize) -> Result<usize> {
        self.labels
            .iter()
            .position(|&l| l == label)
            .ok_or_else(|| Error::InvalidParameter(format!("label {label} is not one of the model's groups {:?}", self.labels)))
    }

    pub fn scorer(&self) -> Result<Scorer<'_>> {
        Scorer::new(self)
    }

    pub fn scores(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        self.scorer()?.scores(x)
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Prediction> {
        self.scorer()?.predict(x)
    }

    pub fn predict_all(&self, data: &MatrixStack) -> Result<Vec<Prediction>> {
        let s = self.scorer()?;
        data.matrices().iter().map(|x| s.predict(x)).collect()
    }

    /// Error rate and confusion matrix on labelled data.
    pub fn evaluate(&self, test: &MatrixStack) -> Result<Evaluation> {
        let truth = test.labels().ok_or_else(|| Error::InvalidParameter("evaluation data must be labelled".into()))?;
        let truth: Vec<usize> = truth.iter().map(|&l| self.group_of(l)).collect::<Result<_>>()?;
        let predicted: Vec<usize> = self.predict_all(test)?.iter().map(|p| p.group).collect();
        Ok(tabulate(&self.labels, &truth, &predicted))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    fn validate(&self) -> Result<()> {
        let g = self.groups.len();
        if g == 0 || self.labels.len() != g || self.priors.len() != g {
            return Err(Error::InvalidParameter("model groups, labels and priors disagree in length".into()));
        }
        if (self.priors.iter().sum::<f64>() - 1.0).abs() > 1e-12 || self.priors.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidParameter("model priors must be positive and sum to 1".into()));
        }
        if self.groups.iter().any(|m| m.mean().shape() != (self.p, self.q)) {
            return Err(Error::InvalidParameter("group parameters do not match the model shape".into()));
        }
        Ok(())
    }
}

fn tabulate(labels: &[usize], truth: &[usize], predicted: &[usize]) -> Evaluation {
    let g = labels.len();
    let mut confusion = vec![vec![0usize; g]; g];
    for (&t, &p) in truth.iter().zip(predicted) {
        confusion[t][p] += 1;
    }
    let errors = truth.iter().zip(predicted).filter(|(a, b)| a != b).count();
    let n = truth.len();
    Evaluation { n, errors, error_rate: errors as f64 / n as f64, labels: labels.to_vec(), confusion }
}

enum GroupScorer {
    /// Expanded quadratic form: `-tr(Ω^{-1} X^T Σ^{-1} X)/2 + <B, X> + c`.
    Normal { chol_sigma: crate::linalg::Chol, chol_omega: crate::linalg::Chol, linear: DMatrix<f64>, constant: f64, density: MxvnDensity },
    T { density: MxvtDensity, log_prior: f64 },
}

/// Cached per-group factors for repeated scoring.
pub struct Scorer<'a> {
    model: &'a ClassifierModel,
    groups: Vec<GroupScorer>,
}

impl<'a> Scorer<'a> {
    fn new(model: &'a ClassifierModel) -> Result<Self> {
        let (p, q) = (model.p as f64, model.q as f64);
        let groups = model
            .groups
            .iter()
            .zip(&model.priors)
            .map(|(g, &eta)| -> Result<GroupScorer> {
                Ok(match g {
                    GroupModel::Normal(par) => {
                        let chol_sigma = cholesky(&par.sigma, "Sigma")?;
                        let chol_omega = cholesky(&par.omega, "Omega")?;
                        // Σ^{-1} M Ω^{-1}
                        let linear = chol_omega.solve(&chol_sigma.solve(&par.mean).transpose()).transpose();
                        let quad = (par.mean.transpose() * &linear).trace();
                        let constant = -0.5 * quad
                            - 0.5 * (q * logdet(&chol_sigma) + p * logdet(&chol_omega))
                            - 0.5 * p * q * (2.0 * PI).ln()
                            + eta.ln();
                        GroupScorer::Normal { chol_sigma, chol_omega, linear, constant, density: MxvnDensity::new(par)? }
                    }
                    GroupModel::T(par) => GroupScorer::T { density: MxvtDensity::new(par)?, log_prior: eta.ln() },
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { model, groups })
    }

    fn check(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.shape() != (self.model.p, self.model.q) {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", self.model.p, self.model.q),
                got: format!("{}x{}", x.nrows(), x.ncols()),
            });
        }
        Ok(())
    }

    /// `log f_g(X)`.
    pub fn log_density(&self, g: usize, x: &DMatrix<f64>) -> Result<f64> {
        self.check(x)?;
        match &self.groups[g] {
            GroupScorer::Normal { density, .. } => density.logpdf(x),
            GroupScorer::T { density, .. } => density.logpdf(x),
        }
    }

    /// `log η_g + log f_g(X)` through the density code.
    pub fn generic_scores(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        (0..self.groups.len()).map(|g| Ok(self.model.priors[g].ln() + self.log_density(g, x)?)).collect()
    }

    /// Scores used for prediction; normal groups go through the expanded
    /// quadratic form.
    pub fn scores(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        self.check(x)?;
        self.groups
            .iter()
            .map(|g| match g {
                GroupScorer::Normal { chol_sigma, chol_omega, linear, constant, .. } => {
                    let a = solve_lower(chol_sigma, x);
                    let b = solve_lower(chol_omega, &a.transpose());
                    Ok(-0.5 * b.norm_squared() + linear.dot(x) + constant)
                }
                GroupScorer::T { density, log_prior } => Ok(log_prior + density.logpdf(x)?),
            })
            .collect()
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Prediction> {
        let scores = self.scores(x)?;
        let group = argmax(&scores);
        let log_odds = (scores.len() == 2).then(|| scores[0] - scores[1]);
        Ok(Prediction { label: self.model.labels[group], group, scores, log_odds })
    }
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Leave-one-out error: each observation is predicted by a model trained on
/// the others.
pub fn loocv(data: &MatrixStack, opts: &TrainOptions) -> Result<Evaluation> {
    let (labels, _) = split_groups(data)?;
    let truth_labels = data.labels().expect("split_groups checked labels");
    let n = data.n();
    let predicted: Vec<usize> = (0..n)
        .into_par_iter()
        .map(|i| {
            log::debug!("loocv refit {} of {n}", i + 1);
            let idx: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            let model = ClassifierModel::train(&data.subset(&idx)?, opts)?;
            let label = model.predict(data.get(i))?.label;
            Ok(labels.iter().position(|&l| l == label).expect("model labels are a subset"))
        })
        .collect::<Result<_>>()?;
    let truth: Vec<usize> = truth_labels.iter().map(|l| labels.iter().position(|k| k == l).unwrap()).collect();
    Ok(tabulate(&labels, &truth, &predicted))
}
