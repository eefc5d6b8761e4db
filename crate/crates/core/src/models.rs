//! Fixed-effect, additive random-effects and multiplicative-effect fits,
//! heterogeneity estimators and Gaussian log-likelihoods.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataset::{DesignMatrix, NetworkDataset};
use crate::error::{NmaError, Result};
use crate::heterogeneity;
use crate::numerics::{minimize_scalar, normal_quantile, Cholesky, DenseMatrix};

/// Confidence level used unless a caller asks for another.
pub const DEFAULT_CI_LEVEL: f64 = 0.95;

/// Absolute tolerance on τ² for the REML search.
pub const REML_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "FE")]
    Fe,
    #[serde(rename = "RE_DL")]
    ReDl,
    #[serde(rename = "RE_REML")]
    ReReml,
    #[serde(rename = "ME")]
    Me,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Fe => "FE",
            ModelKind::ReDl => "RE_DL",
            ModelKind::ReReml => "RE_REML",
            ModelKind::Me => "ME",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Estimator for the additive between-study variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum TauMethod {
    #[default]
    #[serde(rename = "DL")]
    Dl,
    #[serde(rename = "REML")]
    Reml,
}

impl TauMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            TauMethod::Dl => "DL",
            TauMethod::Reml => "REML",
        }
    }

    pub fn re_kind(self) -> ModelKind {
        match self {
            TauMethod::Dl => ModelKind::ReDl,
            TauMethod::Reml => ModelKind::ReReml,
        }
    }
}

impl std::str::FromStr for TauMethod {
    type Err = NmaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dl" => Ok(TauMethod::Dl),
            "reml" => Ok(TauMethod::Reml),
            other => Err(NmaError::InvalidArgument(format!("unknown tau method `{other}`"))),
        }
    }
}

impl fmt::Display for TauMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heterogeneity {
    None,
    Tau2(f64),
    Phi(f64),
}

/// A fitted contrast-based model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFit {
    pub kind: ModelKind,
    /// Effects of the non-reference treatments relative to the reference.
    pub d_hat: Vec<f64>,
    pub cov: DenseMatrix,
    pub hetero: Heterogeneity,
    /// `X d̂`.
    pub fitted: Vec<f64>,
    /// `y - X d̂`.
    pub residuals: Vec<f64>,
    pub log_lik: f64,
    /// Number of estimated parameters used for the AIC.
    pub n_params: usize,
    pub aic: f64,
    pub ci_level: f64,
}

impl ModelFit {
    pub fn se(&self, j: usize) -> f64 {
        self.cov[(j, j)].sqrt()
    }

    /// Normal quantile for the fit's two-sided confidence level.
    pub fn z(&self) -> f64 {
        normal_quantile(0.5 + 0.5 * self.ci_level).expect("ci_level validated on construction")
    }

    /// Estimate and variance of `d_b - d_a`; `None` stands for the reference.
    pub fn contrast(&self, a: Option<usize>, b: Option<usize>) -> (f64, f64) {
        let d = |j: Option<usize>| j.map_or(0.0, |j| self.d_hat[j]);
        let c = |i: Option<usize>, j: Option<usize>| match (i, j) {
            (Some(i), Some(j)) => self.cov[(i, j)],
            _ => 0.0,
        };
        let var = c(b, b) + c(a, a) - 2.0 * c(a, b);
        (d(b) - d(a), var.max(0.0))
    }

    pub fn with_ci_level(mut self, level: f64) -> Result<Self> {
        if !(level > 0.0 && level < 1.0) {
            return Err(NmaError::InvalidArgument(format!("confidence level must lie in (0, 1), got {level}")));
        }
        self.ci_level = level;
        Ok(self)
    }

    pub fn tau2(&self) -> Option<f64> {
        match self.hetero {
            Heterogeneity::Tau2(t) => Some(t),
            _ => None,
        }
    }

    pub fn phi(&self) -> Option<f64> {
        match self.hetero {
            Heterogeneity::Phi(p) => Some(p),
            _ => None,
        }
    }
}

/// Gaussian log-likelihood with independent components.
pub fn log_likelihood(y: &[f64], mean: &[f64], cov_diag: &[f64]) -> f64 {
    let m = y.len() as f64;
    let (log_det, quad) = y
        .iter()
        .zip(mean)
        .zip(cov_diag)
        .fold((0.0, 0.0), |(ld, q), ((y, mu), v)| (ld + v.ln(), q + (y - mu).powi(2) / v));
    -0.5 * (m * (2.0 * PI).ln() + log_det + quad)
}

pub(crate) fn aic(n_params: usize, log_lik: f64) -> f64 {
    2.0 * n_params as f64 - 2.0 * log_lik
}

/// Generalised least squares with diagonal covariance.
struct Gls {
    d_hat: Vec<f64>,
    cov: DenseMatrix,
    fitted: Vec<f64>,
    residuals: Vec<f64>,
    gram: Cholesky,
}

fn gls(y: &[f64], x: &DenseMatrix, variances: &[f64]) -> Result<Gls> {
    let weights: Vec<f64> = variances.iter().map(|v| 1.0 / v).collect();
    let gram = Cholesky::new(&x.weighted_gram(&weights)).map_err(|e| match e {
        NmaError::NotPositiveDefinite => NmaError::RankDeficient,
        other => other,
    })?;
    let d_hat = gram.solve(&x.weighted_xty(&weights, y));
    let cov = gram.inverse();
    let fitted = x.matvec(&d_hat);
    let residuals = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
    Ok(Gls {
        d_hat,
        cov,
        fitted,
        residuals,
        gram,
    })
}

fn require_residual_df(ds: &NetworkDataset) -> Result<()> {
    let params = ds.n() - 1;
    if ds.m() <= params {
        return Err(NmaError::NoResidualDf { m: ds.m(), params });
    }
    Ok(())
}

/// Inverse-variance weighted least squares under `V = diag(s²)`.
pub fn fit_fe(ds: &NetworkDataset, x: &DesignMatrix) -> Result<ModelFit> {
    let v = ds.variances();
    let y = ds.effects();
    let g = gls(&y, x.matrix(), &v)?;
    let log_lik = log_likelihood(&y, &g.fitted, &v);
    let n_params = ds.n() - 1;
    Ok(ModelFit {
        kind: ModelKind::Fe,
        d_hat: g.d_hat,
        cov: g.cov,
        hetero: Heterogeneity::None,
        fitted: g.fitted,
        residuals: g.residuals,
        log_lik,
        n_params,
        aic: aic(n_params, log_lik),
        ci_level: DEFAULT_CI_LEVEL,
    })
}

/// `tr(P)` with `P = W - W X (X'WX)^{-1} X'W`, `W = diag(weights)`.
fn projection_trace(x: &DenseMatrix, weights: &[f64], gram: &Cholesky) -> f64 {
    let sq: Vec<f64> = weights.iter().map(|w| w * w).collect();
    let xw2x = x.weighted_gram(&sq);
    let hat_trace = gram.solve_matrix(&xw2x).trace();
    weights.iter().sum::<f64>() - hat_trace
}

/// Method-of-moments τ² for a contrast-based network:
/// `max(0, (Q - (m - n + 1)) / tr(P))`.
pub fn estimate_tau2_dl(ds: &NetworkDataset, x: &DesignMatrix) -> Result<f64> {
    require_residual_df(ds)?;
    let fe = fit_fe(ds, x)?;
    let q = heterogeneity::q_total(ds, &fe);
    let df = (ds.m() - (ds.n() - 1)) as f64;
    let weights: Vec<f64> = ds.variances().iter().map(|v| 1.0 / v).collect();
    let gram = Cholesky::new(&x.matrix().weighted_gram(&weights))?;
    let denom = projection_trace(x.matrix(), &weights, &gram);
    Ok(((q - df) / denom).max(0.0))
}

/// Restricted log-likelihood (constant dropped) at `τ²`:
/// `-½ [ln det Σ + ln det X'Σ⁻¹X + y'Py]`.
pub fn reml_objective(tau2: f64, ds: &NetworkDataset, x: &DesignMatrix) -> Result<f64> {
    if !(tau2 >= 0.0) || !tau2.is_finite() {
        return Err(NmaError::InvalidArgument(format!("tau2 must be non-negative, got {tau2}")));
    }
    let y = ds.effects();
    let sigma: Vec<f64> = ds.variances().iter().map(|v| v + tau2).collect();
    let g = gls(&y, x.matrix(), &sigma)?;
    let log_det_sigma: f64 = sigma.iter().map(|s| s.ln()).sum();
    // y'Py equals the GLS residual quadratic form
    let ypy: f64 = g.residuals.iter().zip(&sigma).map(|(r, s)| r * r / s).sum();
    Ok(-0.5 * (log_det_sigma + g.gram.log_det() + ypy))
}

/// Derivative of [`reml_objective`] with respect to `τ²`.
pub fn reml_score(tau2: f64, ds: &NetworkDataset, x: &DesignMatrix) -> Result<f64> {
    let y = ds.effects();
    let sigma: Vec<f64> = ds.variances().iter().map(|v| v + tau2).collect();
    let g = gls(&y, x.matrix(), &sigma)?;
    let weights: Vec<f64> = sigma.iter().map(|s| 1.0 / s).collect();
    let tr_p = projection_trace(x.matrix(), &weights, &g.gram);
    let ypppy: f64 = g.residuals.iter().zip(&sigma).map(|(r, s)| (r / s).powi(2)).sum();
    Ok(0.5 * (ypppy - tr_p))
}

/// Upper end of the REML search interval:
/// `10 · var(y) + 10 · max s²` (sample variance).
pub fn reml_upper_bound(ds: &NetworkDataset) -> f64 {
    let y = ds.effects();
    let m = y.len() as f64;
    let mean = y.iter().sum::<f64>() / m;
    let var = if y.len() > 1 {
        y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)
    } else {
        0.0
    };
    let max_v = ds.variances().into_iter().fold(0.0, f64::max);
    10.0 * var + 10.0 * max_v
}

/// REML τ²: grid plus golden-section search of the restricted likelihood,
/// then bisection on its analytic derivative when the optimum is interior.
pub fn estimate_tau2_reml(ds: &NetworkDataset, x: &DesignMatrix) -> Result<f64> {
    require_residual_df(ds)?;
    let hi = reml_upper_bound(ds);
    let objective = |t: f64| reml_objective(t, ds, x).unwrap_or(f64::NAN);
    let t = minimize_scalar(|t| -objective(t), 0.0, hi, REML_TOL)?;
    polish_reml(t, hi, ds, x)
}

fn polish_reml(t: f64, hi: f64, ds: &NetworkDataset, x: &DesignMatrix) -> Result<f64> {
    let score = |t: f64| reml_score(t, ds, x);
    let step = 4.0 * REML_TOL * (1.0 + t);
    let mut lo = (t - step).max(0.0);
    let mut up = (t + step).min(hi);
    let (s_lo, s_up) = (score(lo)?, score(up)?);
    if !(s_lo > 0.0 && s_up < 0.0) {
        // boundary optimum or no sign change near the search result
        return Ok(t);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + up);
        if mid <= lo || mid >= up {
            break;
        }
        if score(mid)? > 0.0 {
            lo = mid;
        } else {
            up = mid;
        }
    }
    let polished = 0.5 * (lo + up);
    let f = |t: f64| reml_objective(t, ds, x);
    Ok(if f(polished)? >= f(t)? { polished } else { t })
}

/// Additive random-effects fit at a given `τ²` (`Σ = V + τ² I`).
pub fn fit_re(ds: &NetworkDataset, x: &DesignMatrix, tau2: f64, method: TauMethod) -> Result<ModelFit> {
    if !(tau2 >= 0.0) || !tau2.is_finite() {
        return Err(NmaError::InvalidArgument(format!("tau2 must be non-negative, got {tau2}")));
    }
    let y = ds.effects();
    let sigma: Vec<f64> = ds.variances().iter().map(|v| v + tau2).collect();
    let g = gls(&y, x.matrix(), &sigma)?;
    let log_lik = log_likelihood(&y, &g.fitted, &sigma);
    let n_params = ds.n();
    Ok(ModelFit {
        kind: method.re_kind(),
        d_hat: g.d_hat,
        cov: g.cov,
        hetero: Heterogeneity::Tau2(tau2),
        fitted: g.fitted,
        residuals: g.residuals,
        log_lik,
        n_params,
        aic: aic(n_params, log_lik),
        ci_level: DEFAULT_CI_LEVEL,
    })
}

/// Estimates τ² with the chosen method and fits the random-effects model.
pub fn fit_re_estimated(ds: &NetworkDataset, x: &DesignMatrix, method: TauMethod) -> Result<ModelFit> {
    let tau2 = match method {
        TauMethod::Dl => estimate_tau2_dl(ds, x)?,
        TauMethod::Reml => estimate_tau2_reml(ds, x)?,
    };
    fit_re(ds, x, tau2, method)
}

/// `max(1, Q_total / (m - (n - 1)))`.
pub fn estimate_phi(ds: &NetworkDataset, x: &DesignMatrix) -> Result<f64> {
    require_residual_df(ds)?;
    let fe = fit_fe(ds, x)?;
    Ok(phi_from_fe(ds, &fe))
}

fn phi_from_fe(ds: &NetworkDataset, fe: &ModelFit) -> f64 {
    let df = (ds.m() - (ds.n() - 1)) as f64;
    (heterogeneity::q_total(ds, fe) / df).max(1.0)
}

/// Multiplicative-effect fit: FE point estimates, covariance scaled by φ̂.
pub fn fit_me(ds: &NetworkDataset, x: &DesignMatrix) -> Result<ModelFit> {
    require_residual_df(ds)?;
    let fe = fit_fe(ds, x)?;
    Ok(me_from_fe(ds, fe))
}

pub(crate) fn me_from_fe(ds: &NetworkDataset, fe: ModelFit) -> ModelFit {
    let phi = phi_from_fe(ds, &fe);
    let scaled: Vec<f64> = ds.variances().iter().map(|v| phi * v).collect();
    let log_lik = log_likelihood(&ds.effects(), &fe.fitted, &scaled);
    let n_params = ds.n();
    ModelFit {
        kind: ModelKind::Me,
        cov: fe.cov.scale(phi),
        hetero: Heterogeneity::Phi(phi),
        log_lik,
        n_params,
        aic: aic(n_params, log_lik),
        ..fe
    }
}
