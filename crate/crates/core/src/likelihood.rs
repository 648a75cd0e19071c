//! Conditional Poisson log-likelihood, the intensity gradient in ϑ, and the
//! plug-in information matrix `Ĝ = n⁻¹ Σ λ̃_t⁻¹ (∂λ̃_t/∂ϑ)(∂λ̃_t/∂ϑ)ᵀ`.
//!
//! Thresholds are held fixed, so the regime flags are constants in ϑ and the
//! gradient obeys the linear recursion
//! `∂λ̃_t = e(regime_t, y_{t-1}, λ̃_{t-1}) + β(regime_t)·∂λ̃_{t-1}` with `∂λ̃_0 = 0`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::model::{
    regime_path, CoefficientVector, CountSeries, IntensityPath, ModelKind, ModelSpec, ResolvedInit,
    Thresholds,
};

/// Largest accepted condition estimate of the scaled information matrix.
pub const MAX_CONDITION: f64 = 1e12;

pub fn log_factorial(y: u64) -> f64 {
    ln_gamma(y as f64 + 1.0)
}

/// Log-likelihood `Σ_t [−λ̃_t + y_t log λ̃_t − log y_t!]` and the path it was evaluated on.
pub fn log_likelihood(series: &CountSeries, spec: &ModelSpec) -> Result<(f64, IntensityPath)> {
    let path = crate::model::intensity_filter(series, spec)?;
    let ll = series
        .values()
        .iter()
        .zip(&path.lambdas)
        .map(|(&y, &l)| -l + y as f64 * l.ln() - log_factorial(y))
        .sum();
    Ok((ll, path))
}

/// Per-step `∂λ̃_t/∂ϑ`, aligned with the intensity path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientPath {
    pub grads: Vec<[f64; 6]>,
}

pub fn intensity_gradient(series: &CountSeries, spec: &ModelSpec) -> Result<GradientPath> {
    let path = crate::model::intensity_filter(series, spec)?;
    let init = spec.init.resolve(series, spec)?;
    let c = &spec.coefficients;
    let mut d = [0.0f64; 6];
    let mut lambda_prev = init.lambda0;
    let grads = series
        .lagged()
        .zip(path.regimes.iter().zip(&path.lambdas))
        .map(|(y, (&lower, &lambda))| {
            step_gradient(&mut d, lower, y as f64, lambda_prev, c.beta1, c.beta2);
            lambda_prev = lambda;
            d
        })
        .collect();
    Ok(GradientPath { grads })
}

#[inline]
fn step_gradient(
    d: &mut [f64; 6],
    lower: bool,
    y_prev: f64,
    lambda_prev: f64,
    beta1: f64,
    beta2: f64,
) {
    let b = if lower { beta1 } else { beta2 };
    for v in d.iter_mut() {
        *v *= b;
    }
    let off = if lower { 0 } else { 3 };
    d[off] += 1.0;
    d[off + 1] += y_prev;
    d[off + 2] += lambda_prev;
}

/// Score `Σ_t (y_t/λ̃_t − 1)·∂λ̃_t/∂ϑ`.
pub fn score(series: &CountSeries, spec: &ModelSpec) -> Result<[f64; 6]> {
    let path = crate::model::intensity_filter(series, spec)?;
    let grad = intensity_gradient(series, spec)?;
    let mut out = [0.0; 6];
    for ((&y, &l), g) in series.values().iter().zip(&path.lambdas).zip(&grad.grads) {
        let w = y as f64 / l - 1.0;
        for j in 0..6 {
            out[j] += w * g[j];
        }
    }
    Ok(out)
}

/// Plug-in information matrix `Ĝ` over the active coefficients (3 for PAR, 6 otherwise).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InformationMatrix {
    pub matrix: Vec<Vec<f64>>,
    pub n: usize,
}

impl InformationMatrix {
    pub(crate) fn from_sum(sum: &[[f64; 6]; 6], n: usize, dim: usize) -> Self {
        let matrix = (0..dim)
            .map(|i| {
                (0..dim)
                    .map(|j| sum[i.min(j)][i.max(j)] / n as f64)
                    .collect()
            })
            .collect();
        Self { matrix, n }
    }

    pub fn dim(&self) -> usize {
        self.matrix.len()
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| self.matrix[i][j])
    }

    /// `Ĝ⁻¹`, guarded against structural singularity and ill-conditioning.
    pub fn inverse(&self) -> Result<DMatrix<f64>> {
        let g = self.to_matrix();
        let d = self.dim();
        for i in 0..d {
            if !(g[(i, i)] > 0.0) {
                return Err(Error::SingularInformation(format!(
                    "coefficient {} never enters the likelihood",
                    CoefficientVector::NAMES[i]
                )));
            }
        }
        let scale: Vec<f64> = (0..d).map(|i| g[(i, i)].sqrt()).collect();
        let scaled = DMatrix::from_fn(d, d, |i, j| g[(i, j)] / (scale[i] * scale[j]));
        let eig = SymmetricEigen::new(scaled.clone());
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        if !(min > 0.0) {
            return Err(Error::SingularInformation(format!(
                "smallest scaled eigenvalue {min:.3e}"
            )));
        }
        let cond = max / min;
        if cond > MAX_CONDITION {
            return Err(Error::IllConditioned(cond));
        }
        let chol = scaled
            .cholesky()
            .ok_or_else(|| Error::SingularInformation("Cholesky factorization failed".into()))?;
        let inv_scaled = chol.inverse();
        Ok(DMatrix::from_fn(d, d, |i, j| {
            inv_scaled[(i, j)] / (scale[i] * scale[j])
        }))
    }

    /// Asymptotic covariance `Ĝ⁻¹/n`.
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        Ok(self.inverse()? / self.n as f64)
    }

    /// `sqrt(diag(Ĝ⁻¹/n))`.
    pub fn standard_errors(&self) -> Result<Vec<f64>> {
        let cov = self.covariance()?;
        Ok((0..self.dim()).map(|i| cov[(i, i)].sqrt()).collect())
    }
}

pub fn information_matrix(series: &CountSeries, spec: &ModelSpec) -> Result<InformationMatrix> {
    let init = spec.init.resolve(series, spec)?;
    spec.validate()?;
    let prepared = PreparedPath::new(series, &spec.thresholds, init)?;
    let eval = prepared.evaluate(&spec.coefficients.to_array());
    Ok(InformationMatrix::from_sum(
        &eval.fisher,
        series.len(),
        spec.kind().n_coefficients(),
    ))
}

/// Log-likelihood, score and Fisher information sum at one ϑ.
#[derive(Debug, Clone)]
pub(crate) struct Evaluation {
    pub loglik: f64,
    pub score: [f64; 6],
    pub fisher: [[f64; 6]; 6],
}

/// Data and regime flags frozen for repeated evaluation at different ϑ.
#[derive(Debug, Clone)]
pub(crate) struct PreparedPath {
    pub y: Vec<f64>,
    pub lags: Vec<f64>,
    pub regimes: Vec<bool>,
    pub lambda0: f64,
    pub kind: ModelKind,
    log_fact: f64,
}

impl PreparedPath {
    pub fn new(series: &CountSeries, thresholds: &Thresholds, init: ResolvedInit) -> Result<Self> {
        let regimes = regime_path(series, thresholds, &init)?;
        Ok(Self::from_regimes(
            series,
            regimes,
            init.lambda0,
            thresholds.kind(),
        ))
    }

    pub fn from_regimes(
        series: &CountSeries,
        regimes: Vec<bool>,
        lambda0: f64,
        kind: ModelKind,
    ) -> Self {
        Self {
            y: series.values().iter().map(|&v| v as f64).collect(),
            lags: series.lagged().map(|v| v as f64).collect(),
            regimes,
            lambda0,
            kind,
            log_fact: series.values().iter().map(|&v| log_factorial(v)).sum(),
        }
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Log-likelihood only; `-inf` when an intensity is not positive.
    pub fn loglik(&self, theta: &[f64; 6]) -> f64 {
        let mut lambda = self.lambda0;
        let mut acc = 0.0;
        for ((&y, &lag), &lower) in self.y.iter().zip(&self.lags).zip(&self.regimes) {
            let (w, a, b) = if lower {
                (theta[0], theta[1], theta[2])
            } else {
                (theta[3], theta[4], theta[5])
            };
            lambda = w + a * lag + b * lambda;
            if !(lambda > 0.0) {
                return f64::NEG_INFINITY;
            }
            acc += y * lambda.ln() - lambda;
        }
        acc - self.log_fact
    }

    pub fn evaluate(&self, theta: &[f64; 6]) -> Evaluation {
        let mut lambda = self.lambda0;
        let mut d = [0.0f64; 6];
        let mut loglik = -self.log_fact;
        let mut score = [0.0f64; 6];
        let mut fisher = [[0.0f64; 6]; 6];
        for ((&y, &lag), &lower) in self.y.iter().zip(&self.lags).zip(&self.regimes) {
            step_gradient(&mut d, lower, lag, lambda, theta[2], theta[5]);
            let (w, a, b) = if lower {
                (theta[0], theta[1], theta[2])
            } else {
                (theta[3], theta[4], theta[5])
            };
            lambda = w + a * lag + b * lambda;
            if !(lambda > 0.0) {
                loglik = f64::NEG_INFINITY;
                break;
            }
            loglik += y * lambda.ln() - lambda;
            let resid = y / lambda - 1.0;
            let inv = 1.0 / lambda;
            for i in 0..6 {
                score[i] += resid * d[i];
                let di = d[i] * inv;
                if di != 0.0 {
                    for j in i..6 {
                        fisher[i][j] += di * d[j];
                    }
                }
            }
        }
        Evaluation {
            loglik,
            score,
            fisher,
        }
    }
}
