//! Second stage: the plug-in moment estimator, its covariance, and Wald intervals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::first_stage::{predict, Dataset, FirstStageMethod, FirstStageModel};
use crate::numerics::{normal_quantile, solve_linear, Matrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub level: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Coefficients with the estimated asymptotic covariance `V̂²` (not divided by n).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaEstimate {
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub vcov: Matrix,
    pub n: usize,
    #[serde(rename = "sigma2")]
    pub residual_variance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci: Option<ConfidenceInterval>,
}

impl BetaEstimate {
    /// Assembles an estimate, deriving `se_j = sqrt(vcov_jj / n)`.
    pub fn new(beta: Vec<f64>, vcov: Matrix, n: usize, residual_variance: f64) -> Self {
        let se = vcov.diag().iter().map(|v| (v.max(0.0) / n as f64).sqrt()).collect();
        Self { beta, se, vcov, n, residual_variance, ci: None }
    }

    /// Attaches the `1 − alpha` interval.
    pub fn with_ci(mut self, alpha: f64) -> Result<Self> {
        self.ci = Some(confidence_interval(&self, alpha)?);
        Ok(self)
    }
}

fn check_shapes(x_hat: &Matrix, x: &Matrix, y: &[f64]) -> Result<()> {
    if x_hat.shape() != x.shape() || x.rows() != y.len() {
        return Err(Error::ShapeMismatch(format!(
            "fitted {:?}, regressors {:?}, response {}",
            x_hat.shape(),
            x.shape(),
            y.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::Domain("empty sample".into()));
    }
    Ok(())
}

/// `Σ X̂_i X_iᵀ`.
pub fn cross_moment(x_hat: &Matrix, x: &Matrix) -> Result<Matrix> {
    x_hat.transpose().matmul(x)
}

fn singular(e: Error) -> Error {
    match e {
        Error::SingularMatrix(_) => Error::SingularMatrix(
            "fitted-instrument moment matrix is singular; the instruments are too weak to identify beta".into(),
        ),
        other => other,
    }
}

/// `β̂ = (Σ X̂_i X_iᵀ)⁻¹ Σ X̂_i Y_i`.
pub fn estimate_beta(x_hat: &Matrix, x: &Matrix, y: &[f64]) -> Result<Vec<f64>> {
    check_shapes(x_hat, x, y)?;
    let m = cross_moment(x_hat, x)?;
    let b = x_hat.transpose().matmul(&Matrix::column(y))?;
    Ok(solve_linear(&m, &b).map_err(singular)?.into_vec())
}

/// Residuals `Y_i − βᵀX_i`.
pub fn residuals(x: &Matrix, y: &[f64], beta: &[f64]) -> Result<Vec<f64>> {
    let fit = x.mat_vec(beta)?;
    Ok(y.iter().zip(fit).map(|(a, b)| a - b).collect())
}

/// `V̂² = n (Σ X̂_i X_iᵀ)⁻¹ σ̂²`, symmetrized, together with `σ̂² = n⁻¹Σ ε̂_i²`.
pub fn estimate_vcov(x_hat: &Matrix, x: &Matrix, y: &[f64], beta: &[f64]) -> Result<(Matrix, f64)> {
    check_shapes(x_hat, x, y)?;
    let eps = residuals(x, y, beta)?;
    let ss: f64 = eps.iter().map(|e| e * e).sum();
    let m = cross_moment(x_hat, x)?;
    let inv = m.inverse().map_err(singular)?;
    let n = y.len() as f64;
    Ok((inv.scale(ss).symmetrize(), ss / n))
}

/// Point estimate and covariance from fitted instruments.
pub fn second_stage(x_hat: &Matrix, x: &Matrix, y: &[f64]) -> Result<BetaEstimate> {
    let beta = estimate_beta(x_hat, x, y)?;
    let (vcov, sigma2) = estimate_vcov(x_hat, x, y, &beta)?;
    Ok(BetaEstimate::new(beta, vcov, y.len(), sigma2))
}

/// `β̂_j ± z_{α/2} sqrt(V̂²_jj / n)`.
pub fn confidence_interval(est: &BetaEstimate, alpha: f64) -> Result<ConfidenceInterval> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let z = normal_quantile(1.0 - alpha / 2.0)?;
    let half: Vec<f64> = est.se.iter().map(|s| z * s).collect();
    Ok(ConfidenceInterval {
        level: 1.0 - alpha,
        lower: est.beta.iter().zip(&half).map(|(b, h)| b - h).collect(),
        upper: est.beta.iter().zip(&half).map(|(b, h)| b + h).collect(),
    })
}

impl ConfidenceInterval {
    pub fn covers(&self, j: usize, value: f64) -> bool {
        self.lower[j] <= value && value <= self.upper[j]
    }
}

/// Full pipeline on `Z`: fit the first stage, predict in-sample, run the second stage.
pub fn estimate(data: &Dataset, method: &FirstStageMethod, seed: u64) -> Result<(BetaEstimate, FirstStageModel)> {
    let model = method.fit(data, seed)?;
    let x_hat = predict(&model, &data.z)?;
    Ok((second_stage(&x_hat, &data.x, &data.y)?, model))
}

/// Estimator with exogenous regressors `R`.
///
/// The first stage regresses `X` on `(R, Z)`; the second stage uses
/// `D̂ = (f̂(R, Z), R)` against `D = (X, R)`. Coefficients are ordered
/// endogenous first, then exogenous.
pub fn estimate_with_exogenous(
    data: &Dataset,
    method: &FirstStageMethod,
    seed: u64,
) -> Result<(BetaEstimate, FirstStageModel)> {
    let r = data.r.as_ref().ok_or(Error::MissingExogenous)?;
    let augmented = data.with_instruments(r.hstack(&data.z)?)?;
    let model = method.fit(&augmented, seed)?;
    let x_hat = predict(&model, &augmented.z)?;
    let d_hat = x_hat.hstack(r)?;
    let d = data.x.hstack(r)?;
    Ok((second_stage(&d_hat, &d, &data.y)?, model))
}
