//! Monte Carlo replication: estimator summaries and test size/power tables.
//!
//! Replicate `i` simulates with `derive_seed(seed, i)`, so results do not
//! depend on how rayon schedules the replicates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{fit, GridConfig, OptimizerConfig, ThresholdGrid};
use crate::model::{CoefficientVector, ModelKind, ModelSpec, Thresholds};
use crate::septests::{
    default_candidates, test_bpart_vs_hpart, test_hpart_vs_bpart, TestConfig, TestKind,
};
use crate::simulate::{derive_seed, simulate, DEFAULT_BURN_IN};

/// Largest tolerated fraction of failed replicates.
pub const MAX_FAILURE_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub burn_in: usize,
    pub optimizer: OptimizerConfig,
    pub grid: GridConfig,
}

impl StudyConfig {
    pub fn new(n: usize, reps: usize, seed: u64) -> Self {
        Self {
            n,
            reps,
            seed,
            burn_in: DEFAULT_BURN_IN,
            optimizer: OptimizerConfig::default(),
            grid: GridConfig::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::InvalidArgument("reps must be at least 1".into()));
        }
        Ok(())
    }

    fn check_failures(&self, failed: usize) -> Result<()> {
        if failed as f64 > MAX_FAILURE_FRACTION * self.reps as f64 {
            return Err(Error::TooManyFailures {
                failed,
                reps: self.reps,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub truth: f64,
    /// Empirical mean.
    pub em: f64,
    /// Empirical variance; absent with fewer than two replicates.
    pub ev: Option<f64>,
    /// Mean plug-in variance `diag(Ĝ⁻¹)/n` (coefficients only).
    pub sg: Option<f64>,
    /// `EV/EM`.
    pub vm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFit {
    pub index: usize,
    pub coefficients: CoefficientVector,
    pub thresholds: Thresholds,
    pub plugin_variance: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub kind: ModelKind,
    pub n: usize,
    pub reps: usize,
    pub failures: usize,
    pub params: Vec<ParamSummary>,
    /// Replicates whose fitted thresholds equal the true ones.
    pub threshold_hits: usize,
    pub replicates: Vec<ReplicateFit>,
}

impl McSummary {
    pub fn param(&self, name: &str) -> Option<&ParamSummary> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn threshold_hit_rate(&self) -> f64 {
        self.threshold_hits as f64 / self.replicates.len().max(1) as f64
    }
}

fn summarize(name: &str, truth: f64, xs: &[f64], sg: Option<f64>) -> ParamSummary {
    let m = xs.len() as f64;
    let em = xs.iter().sum::<f64>() / m;
    let ev = (xs.len() >= 2).then(|| xs.iter().map(|x| (x - em).powi(2)).sum::<f64>() / (m - 1.0));
    let vm = ev.filter(|_| em != 0.0).map(|v| v / em);
    ParamSummary {
        name: name.to_string(),
        truth,
        em,
        ev,
        sg,
        vm,
    }
}

fn threshold_params(th: &Thresholds) -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();
    if let Some(r) = th.r() {
        out.push(("r", r as f64));
    }
    if let Some(s) = th.s() {
        if matches!(th, Thresholds::Bpart { .. } | Thresholds::Hpart { .. }) {
            out.push(("s", s as f64));
        }
    }
    if let Some(c) = th.c() {
        out.push(("c", c as f64));
    }
    out
}

/// Simulate, fit over the default grid, and aggregate EM/EV/SG/VM.
pub fn run_estimation_study(true_spec: &ModelSpec, cfg: &StudyConfig) -> Result<McSummary> {
    cfg.validate()?;
    true_spec.validate()?;
    let kind = true_spec.kind();
    let outcomes: Vec<Result<ReplicateFit>> = (0..cfg.reps)
        .into_par_iter()
        .map(|i| {
            let (series, _) = simulate(
                true_spec,
                cfg.n,
                cfg.burn_in,
                derive_seed(cfg.seed, i as u64),
            )?;
            let grid = ThresholdGrid::default_for(&series, kind, &cfg.grid)?;
            let f = fit(&series, &grid, &cfg.optimizer)?;
            let plugin_variance = f
                .std_errors
                .as_ref()
                .map(|se| se.iter().map(|s| s * s).collect());
            Ok(ReplicateFit {
                index: i,
                coefficients: f.spec.coefficients,
                thresholds: f.spec.thresholds,
                plugin_variance,
            })
        })
        .collect();
    let replicates: Vec<ReplicateFit> = outcomes
        .iter()
        .filter_map(|o| o.as_ref().ok().cloned())
        .collect();
    let failures = cfg.reps - replicates.len();
    cfg.check_failures(failures)?;
    if replicates.is_empty() {
        return Err(Error::TooManyFailures {
            failed: failures,
            reps: cfg.reps,
        });
    }

    let dim = kind.n_coefficients();
    let truth = true_spec.coefficients.to_array();
    let mut params = Vec::new();
    for j in 0..dim {
        let xs: Vec<f64> = replicates
            .iter()
            .map(|r| r.coefficients.to_array()[j])
            .collect();
        let sgs: Vec<f64> = replicates
            .iter()
            .filter_map(|r| r.plugin_variance.as_ref().map(|v| v[j]))
            .collect();
        let sg = (!sgs.is_empty()).then(|| sgs.iter().sum::<f64>() / sgs.len() as f64);
        params.push(summarize(CoefficientVector::NAMES[j], truth[j], &xs, sg));
    }
    for (idx, (name, value)) in threshold_params(&true_spec.thresholds)
        .into_iter()
        .enumerate()
    {
        let xs: Vec<f64> = replicates
            .iter()
            .map(|r| threshold_params(&r.thresholds)[idx].1)
            .collect();
        params.push(summarize(name, value, &xs, None));
    }
    let threshold_hits = replicates
        .iter()
        .filter(|r| r.thresholds == true_spec.thresholds)
        .count();
    Ok(McSummary {
        kind,
        n: cfg.n,
        reps: cfg.reps,
        failures,
        params,
        threshold_hits,
        replicates,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizePowerRow {
    pub data_model: ModelKind,
    pub c0: Option<i64>,
    pub level: f64,
    pub n: usize,
    pub rejection_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizePowerTable {
    pub test: TestKind,
    pub reps: usize,
    pub failures: usize,
    pub rows: Vec<SizePowerRow>,
    /// Test statistic of each successful replicate, in replicate order.
    pub statistics: Vec<f64>,
    pub p_values: Vec<f64>,
}

impl SizePowerTable {
    pub fn rate(&self, level: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.level == level)
            .map(|r| r.rejection_rate)
    }
}

/// Simulate from `gen_spec`, fit the null model of `test`, and tally rejections.
pub fn run_test_study(
    gen_spec: &ModelSpec,
    test: TestKind,
    cfg: &StudyConfig,
    test_cfg: &TestConfig,
) -> Result<SizePowerTable> {
    cfg.validate()?;
    gen_spec.validate()?;
    let null_kind = match test {
        TestKind::BpartVsHpart => ModelKind::Bpart,
        TestKind::HpartVsBpart => ModelKind::Hpart,
    };
    let outcomes: Vec<Result<(f64, f64)>> = (0..cfg.reps)
        .into_par_iter()
        .map(|i| {
            let (series, _) = simulate(
                gen_spec,
                cfg.n,
                cfg.burn_in,
                derive_seed(cfg.seed, i as u64),
            )?;
            let grid = ThresholdGrid::default_for(&series, null_kind, &cfg.grid)?;
            let f = fit(&series, &grid, &cfg.optimizer)?;
            let tc = TestConfig {
                seed: derive_seed(test_cfg.seed, i as u64),
                ..test_cfg.clone()
            };
            let out = match test {
                TestKind::BpartVsHpart => {
                    test_bpart_vs_hpart(&series, &f, &default_candidates(&series), &tc)?
                }
                TestKind::HpartVsBpart => test_hpart_vs_bpart(&series, &f, &tc)?,
            };
            Ok((out.statistic, out.p_value))
        })
        .collect();
    let ok: Vec<(f64, f64)> = outcomes
        .iter()
        .filter_map(|o| o.as_ref().ok().copied())
        .collect();
    let failures = cfg.reps - ok.len();
    cfg.check_failures(failures)?;
    if ok.is_empty() {
        return Err(Error::TooManyFailures {
            failed: failures,
            reps: cfg.reps,
        });
    }
    let rows = test_cfg
        .levels
        .iter()
        .map(|&level| SizePowerRow {
            data_model: gen_spec.kind(),
            c0: gen_spec.thresholds.c(),
            level,
            n: cfg.n,
            rejection_rate: ok.iter().filter(|(_, p)| *p <= level).count() as f64 / ok.len() as f64,
        })
        .collect();
    Ok(SizePowerTable {
        test,
        reps: cfg.reps,
        failures,
        rows,
        statistics: ok.iter().map(|o| o.0).collect(),
        p_values: ok.iter().map(|o| o.1).collect(),
    })
}
