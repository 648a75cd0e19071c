//! Separate-family score tests between the buffered and hysteretic models.
//!
//! Both tests embed the two intensities in the compound
//! `λ̃_t(δ) = (1 − δ)·λ̃_t^b + δ·λ̃_t^h` and take the score statistic for δ at
//! the null endpoint, with both legs evaluated at the null model's fitted
//! coefficients and thresholds.
//!
//! * BPART against HPART (`δ = 0`): `S_n = max_i T_n^b(c_i)` over candidate
//!   hysteresis thresholds. Its limit `max_i Z²(c_i)/σ₁(c_i, c_i)` with
//!   `Z ~ N(0, σ₂)` is simulated from plug-in estimates.
//! * HPART against BPART (`δ = 1`): `T_n^h·σ̂₁′/σ̂₂′`, referred to `χ²₁`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::estimation::{distinct_between, observed_differences, thin, FitResult};
use crate::likelihood::{information_matrix, intensity_gradient};
use crate::model::{
    intensity_filter, CountSeries, IntensityPath, ModelKind, ModelSpec, Thresholds,
};
use crate::simulate::derive_seed;

pub const DEFAULT_LEVELS: [f64; 3] = [0.10, 0.05, 0.01];
pub const DEFAULT_NULL_SIMS: usize = 20_000;
pub const MAX_DEFAULT_CANDIDATES: usize = 9;
const SIM_CHUNK: usize = 1024;
/// Relative floor applied to `σ̂₂′` when the plug-in value is not positive.
const SIGMA2P_FLOOR: f64 = 1e-6;

/// Mixing weight `δ ∈ [0, 1]` of the compound intensity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompoundWeight(f64);

impl CompoundWeight {
    pub fn new(delta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&delta) {
            return Err(Error::InvalidArgument(format!(
                "compound weight {delta} outside [0, 1]"
            )));
        }
        Ok(Self(delta))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    BpartVsHpart,
    HpartVsBpart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "test", rename_all = "snake_case")]
pub enum SigmaEstimates {
    BpartVsHpart {
        candidates: Vec<i64>,
        sigma1: Vec<Vec<f64>>,
        sigma2: Vec<Vec<f64>>,
        /// Negative eigenvalues of `σ̂₂` set to zero.
        clipped_eigenvalues: usize,
    },
    HpartVsBpart {
        sigma1p: f64,
        sigma2p: f64,
        clipped: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateStat {
    pub c: i64,
    pub statistic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelDecision {
    pub level: f64,
    pub critical_value: f64,
    pub reject: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub test: TestKind,
    /// `S_n`, or the scaled `T_n^h·σ̂₁′/σ̂₂′`.
    pub statistic: f64,
    /// Unscaled score statistic (`S_n` or `T_n^h`).
    pub raw_statistic: f64,
    pub per_c_stats: Vec<CandidateStat>,
    pub dropped_candidates: Vec<i64>,
    pub p_value: f64,
    pub decisions: Vec<LevelDecision>,
    pub sigma: SigmaEstimates,
    pub null_sims: usize,
    pub warnings: Vec<String>,
}

impl TestOutcome {
    pub fn rejects_at(&self, level: f64) -> Option<bool> {
        self.decisions
            .iter()
            .find(|d| d.level == level)
            .map(|d| d.reject)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    pub levels: Vec<f64>,
    pub null_sims: usize,
    pub seed: u64,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self {
            levels: DEFAULT_LEVELS.to_vec(),
            null_sims: DEFAULT_NULL_SIMS,
            seed: 0,
        }
    }
}

impl TestConfig {
    fn validate(&self) -> Result<()> {
        if self.levels.is_empty() || self.levels.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
            return Err(Error::InvalidArgument(format!(
                "levels {:?} must lie in (0, 1)",
                self.levels
            )));
        }
        if self.null_sims == 0 {
            return Err(Error::InvalidArgument("null_sims must be positive".into()));
        }
        Ok(())
    }
}

/// Observed differences between the 10th and 90th percentiles, at most nine.
pub fn default_candidates(series: &CountSeries) -> Vec<i64> {
    thin(
        distinct_between(&observed_differences(series), 0.1, 0.9),
        MAX_DEFAULT_CANDIDATES,
    )
}

fn require_kind(fit: &FitResult, kind: ModelKind) -> Result<(u64, u64)> {
    match fit.spec.thresholds {
        Thresholds::Bpart { r, s } if kind == ModelKind::Bpart => Ok((r, s)),
        Thresholds::Hpart { r, s, .. } if kind == ModelKind::Hpart => Ok((r, s)),
        _ => Err(Error::InvalidArgument(format!(
            "expected a {kind} fit, got {}",
            fit.kind()
        ))),
    }
}

fn leg(spec: &ModelSpec, thresholds: Thresholds) -> ModelSpec {
    ModelSpec {
        thresholds,
        ..*spec
    }
}

/// Pointwise `(1 − δ)·λ̃^b + δ·λ̃^h` with the hysteretic leg sharing `spec_b`'s ϑ, r, s.
pub fn compound_intensity(
    series: &CountSeries,
    spec_b: &ModelSpec,
    c: i64,
    delta: CompoundWeight,
) -> Result<Vec<f64>> {
    let Thresholds::Bpart { r, s } = spec_b.thresholds else {
        return Err(Error::InvalidArgument(
            "compound intensity needs a BPART spec".into(),
        ));
    };
    let b = intensity_filter(series, spec_b)?;
    let h = intensity_filter(series, &leg(spec_b, Thresholds::Hpart { r, s, c }))?;
    let d = delta.value();
    Ok(b.lambdas
        .iter()
        .zip(&h.lambdas)
        .map(|(lb, lh)| (1.0 - d) * lb + d * lh)
        .collect())
}

/// `{Σ (y/λ − 1)·d}² / Σ y·d²/λ²` with `d = alt − null`; `None` without curvature.
fn score_ratio(y: &[u64], null: &IntensityPath, alt: &IntensityPath) -> Option<f64> {
    if null.regimes == alt.regimes {
        return None;
    }
    let (mut score, mut curv) = (0.0, 0.0);
    for ((&y, &l0), &l1) in y.iter().zip(&null.lambdas).zip(&alt.lambdas) {
        let d = l1 - l0;
        let y = y as f64;
        score += (y / l0 - 1.0) * d;
        curv += y * d * d / (l0 * l0);
    }
    if !(curv > 0.0) {
        return None;
    }
    Some(if score == 0.0 {
        0.0
    } else {
        score * score / curv
    })
}

/// `T_n^b(c)` at the BPART fit.
pub fn score_stat_bpart(series: &CountSeries, fit_b: &FitResult, c: i64) -> Result<f64> {
    let (r, s) = require_kind(fit_b, ModelKind::Bpart)?;
    let b = intensity_filter(series, &fit_b.spec)?;
    let h = intensity_filter(series, &leg(&fit_b.spec, Thresholds::Hpart { r, s, c }))?;
    score_ratio(series.values(), &b, &h).ok_or_else(|| Error::PathsIdentical(format!("c = {c}")))
}

/// `n⁻¹ Σ d·∂λ/∂ϑ / λ` for one difference path.
fn cross_moment(d: &[f64], lambdas: &[f64], grads: &[[f64; 6]]) -> DVector<f64> {
    let n = d.len() as f64;
    let mut h = DVector::zeros(6);
    for ((&d, &l), g) in d.iter().zip(lambdas).zip(grads) {
        let w = d / l;
        for j in 0..6 {
            h[j] += w * g[j];
        }
    }
    h / n
}

/// Plug-in `σ̂₁`, `σ̂₂` for the candidates, with `σ̂₂` repaired to PSD.
pub fn estimate_sigma_bvh(
    series: &CountSeries,
    fit_b: &FitResult,
    candidates: &[i64],
) -> Result<SigmaEstimates> {
    let (r, s) = require_kind(fit_b, ModelKind::Bpart)?;
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no candidate c values".into()));
    }
    let b = intensity_filter(series, &fit_b.spec)?;
    let grads = intensity_gradient(series, &fit_b.spec)?.grads;
    let ginv = information_matrix(series, &fit_b.spec)?.inverse()?;
    let diffs: Vec<Vec<f64>> = candidates
        .iter()
        .map(|&c| {
            let h = intensity_filter(series, &leg(&fit_b.spec, Thresholds::Hpart { r, s, c }))?;
            Ok(h.lambdas
                .iter()
                .zip(&b.lambdas)
                .map(|(lh, lb)| lh - lb)
                .collect())
        })
        .collect::<Result<_>>()?;
    let n = series.len() as f64;
    let k = candidates.len();
    let sigma1 = DMatrix::from_fn(k, k, |i, j| {
        diffs[i]
            .iter()
            .zip(&diffs[j])
            .zip(&b.lambdas)
            .map(|((a, c), l)| a * c / l)
            .sum::<f64>()
            / n
    });
    for (i, &c) in candidates.iter().enumerate() {
        if !(sigma1[(i, i)] > 0.0) {
            return Err(Error::PathsIdentical(format!("c = {c}")));
        }
    }
    let h = DMatrix::from_columns(
        &diffs
            .iter()
            .map(|d| cross_moment(d, &b.lambdas, &grads))
            .collect::<Vec<_>>(),
    );
    let raw = &sigma1 - h.transpose() * ginv * &h;
    let raw = (&raw + raw.transpose()) * 0.5;
    let (sigma2, clipped) = clip_psd(raw);
    Ok(SigmaEstimates::BpartVsHpart {
        candidates: candidates.to_vec(),
        sigma1: to_rows(&sigma1),
        sigma2: to_rows(&sigma2),
        clipped_eigenvalues: clipped,
    })
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn from_rows(rows: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), rows.len(), |i, j| rows[i][j])
}

fn clip_psd(m: DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let eig = SymmetricEigen::new(m.clone());
    let clipped = eig.eigenvalues.iter().filter(|&&v| v < 0.0).count();
    if clipped == 0 {
        return (m, 0);
    }
    let vals = eig.eigenvalues.map(|v| v.max(0.0));
    let out = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    ((&out + out.transpose()) * 0.5, clipped)
}

/// Draws `max_i Z_i² / σ₁(i, i)` with `Z ~ N(0, σ₂)`, chunked on seed-derived streams.
pub fn simulate_null_maxima(
    sigma1: &[Vec<f64>],
    sigma2: &[Vec<f64>],
    n_sims: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let k = sigma1.len();
    let eig = SymmetricEigen::new(from_rows(sigma2));
    let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let factor = &eig.eigenvectors * DMatrix::from_diagonal(&root);
    if factor.iter().any(|v| !v.is_finite()) {
        return Err(Error::Factorization("σ̂₂ square root is not finite".into()));
    }
    let scale: Vec<f64> = (0..k).map(|i| 1.0 / sigma1[i][i]).collect();
    let chunks = n_sims.div_ceil(SIM_CHUNK);
    let out: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, chunk as u64));
            let len = SIM_CHUNK.min(n_sims - chunk * SIM_CHUNK);
            let mut z = DVector::zeros(k);
            (0..len)
                .map(|_| {
                    for v in z.iter_mut() {
                        *v = StandardNormal.sample(&mut rng);
                    }
                    let x = &factor * &z;
                    (0..k).map(|i| x[i] * x[i] * scale[i]).fold(0.0, f64::max)
                })
                .collect()
        })
        .collect();
    Ok(out.concat())
}

/// Nearest-rank empirical quantile.
fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

/// Score test of BPART (null) against HPART over candidate hysteresis thresholds.
///
/// Candidates whose hysteretic path coincides with the buffered one are
/// dropped; the test fails when none remain.
pub fn test_bpart_vs_hpart(
    series: &CountSeries,
    fit_b: &FitResult,
    candidates: &[i64],
    cfg: &TestConfig,
) -> Result<TestOutcome> {
    cfg.validate()?;
    let (r, s) = require_kind(fit_b, ModelKind::Bpart)?;
    let b = intensity_filter(series, &fit_b.spec)?;
    let mut kept = Vec::new();
    let mut per_c_stats = Vec::new();
    let mut dropped = Vec::new();
    let mut warnings = Vec::new();
    for &c in candidates {
        let h = intensity_filter(series, &leg(&fit_b.spec, Thresholds::Hpart { r, s, c }))?;
        match score_ratio(series.values(), &b, &h) {
            Some(t) => {
                kept.push(c);
                per_c_stats.push(CandidateStat { c, statistic: t });
            }
            None => dropped.push(c),
        }
    }
    if kept.is_empty() {
        return Err(Error::PathsIdentical(format!(
            "all {} candidates give the buffered path",
            candidates.len()
        )));
    }
    if !dropped.is_empty() {
        warnings.push(format!("dropped degenerate candidates {dropped:?}"));
    }
    let statistic = per_c_stats.iter().map(|p| p.statistic).fold(0.0, f64::max);
    let sigma = estimate_sigma_bvh(series, fit_b, &kept)?;
    let SigmaEstimates::BpartVsHpart {
        sigma1,
        sigma2,
        clipped_eigenvalues,
        ..
    } = &sigma
    else {
        unreachable!("buffered test yields buffered sigma estimates")
    };
    if *clipped_eigenvalues > 0 {
        warnings.push(format!(
            "clipped {clipped_eigenvalues} negative eigenvalue(s) of sigma2"
        ));
    }
    let mut sims = simulate_null_maxima(sigma1, sigma2, cfg.null_sims, cfg.seed)?;
    sims.sort_by(f64::total_cmp);
    let exceed = sims.len() - sims.partition_point(|&v| v < statistic);
    let p_value = exceed as f64 / sims.len() as f64;
    let decisions = cfg
        .levels
        .iter()
        .map(|&level| LevelDecision {
            level,
            critical_value: empirical_quantile(&sims, 1.0 - level),
            reject: p_value <= level,
        })
        .collect();
    Ok(TestOutcome {
        test: TestKind::BpartVsHpart,
        statistic,
        raw_statistic: statistic,
        per_c_stats,
        dropped_candidates: dropped,
        p_value,
        decisions,
        sigma,
        null_sims: cfg.null_sims,
        warnings,
    })
}

/// Score test of HPART (null) against BPART, scaled to a `χ²₁` limit.
pub fn test_hpart_vs_bpart(
    series: &CountSeries,
    fit_h: &FitResult,
    cfg: &TestConfig,
) -> Result<TestOutcome> {
    cfg.validate()?;
    let (r, s) = require_kind(fit_h, ModelKind::Hpart)?;
    let h = intensity_filter(series, &fit_h.spec)?;
    let b = intensity_filter(series, &leg(&fit_h.spec, Thresholds::Bpart { r, s }))?;
    let raw = score_ratio(series.values(), &h, &b)
        .ok_or_else(|| Error::PathsIdentical("hysteretic and buffered paths coincide".into()))?;

    let grads = intensity_gradient(series, &fit_h.spec)?.grads;
    let ginv = information_matrix(series, &fit_h.spec)?.inverse()?;
    let d: Vec<f64> = h
        .lambdas
        .iter()
        .zip(&b.lambdas)
        .map(|(lh, lb)| lh - lb)
        .collect();
    let n = series.len() as f64;
    let sigma1p = d
        .iter()
        .zip(&h.lambdas)
        .map(|(d, l)| d * d / l)
        .sum::<f64>()
        / n;
    let hm = cross_moment(&d, &h.lambdas, &grads);
    let quad = (hm.transpose() * ginv * &hm)[(0, 0)];
    let mut sigma2p = sigma1p - quad;
    let mut warnings = Vec::new();
    let floor = SIGMA2P_FLOOR * sigma1p;
    let clipped = !(sigma2p > floor);
    if clipped {
        warnings.push(format!(
            "sigma2' = {sigma2p:.3e} not positive; clipped to {floor:.3e}"
        ));
        sigma2p = floor;
    }
    let statistic = raw * sigma1p / sigma2p;
    let chi = ChiSquared::new(1.0).expect("one degree of freedom");
    let p_value = (1.0 - chi.cdf(statistic)).clamp(0.0, 1.0);
    let decisions = cfg
        .levels
        .iter()
        .map(|&level| LevelDecision {
            level,
            critical_value: chi.inverse_cdf(1.0 - level),
            reject: p_value <= level,
        })
        .collect();
    Ok(TestOutcome {
        test: TestKind::HpartVsBpart,
        statistic,
        raw_statistic: raw,
        per_c_stats: Vec::new(),
        dropped_candidates: Vec::new(),
        p_value,
        decisions,
        sigma: SigmaEstimates::HpartVsBpart {
            sigma1p,
            sigma2p,
            clipped,
        },
        null_sims: 0,
        warnings,
    })
}
