//! One-step-ahead conditional means and rolling out-of-sample evaluation.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{fit, OptimizerConfig, ThresholdGrid};
use crate::model::{intensity_filter, CountSeries, ModelSpec};
use crate::simulate::next_regime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefitPolicy {
    /// Fit once on the training window and filter forward.
    #[default]
    Fixed,
    /// Refit on all data available before each forecast.
    Expanding,
}

impl FromStr for RefitPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fixed" => Ok(Self::Fixed),
            "expanding" => Ok(Self::Expanding),
            other => Err(Error::InvalidArgument(format!(
                "unknown refit policy '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastReport {
    pub predictions: Vec<f64>,
    pub actuals: Vec<u64>,
    pub mse: f64,
    pub mae: f64,
    pub refit_policy: RefitPolicy,
    pub train_len: usize,
    /// Fitted model behind each prediction (one entry under the fixed policy).
    pub specs: Vec<ModelSpec>,
}

impl ForecastReport {
    pub fn errors(&self) -> Vec<f64> {
        self.actuals
            .iter()
            .zip(&self.predictions)
            .map(|(&y, p)| y as f64 - p)
            .collect()
    }
}

/// `λ̃_{n+1}` given `y_0..y_n`: the conditional mean of the next count.
pub fn one_step_mean(prefix: &CountSeries, spec: &ModelSpec) -> Result<f64> {
    let path = intensity_filter(prefix, spec)?;
    let values = prefix.values();
    let n = values.len();
    let y_n = values[n - 1];
    let y_prev = if n >= 2 {
        values[n - 2]
    } else {
        prefix.presample()
    };
    let dy = y_n as i64 - y_prev as i64;
    let regime = next_regime(&spec.thresholds, y_n, dy, path.regimes[n - 1]);
    let (w, a, b) = spec.coefficients.triple(regime);
    Ok(w + a * y_n as f64 + b * path.lambdas[n - 1])
}

/// Fits on all but the last `holdout` observations and forecasts each of them one step ahead.
pub fn rolling_forecast(
    series: &CountSeries,
    holdout: usize,
    grid: &ThresholdGrid,
    policy: RefitPolicy,
    cfg: &OptimizerConfig,
) -> Result<ForecastReport> {
    let n = series.len();
    if holdout == 0 || 2 * holdout >= n {
        return Err(Error::InvalidArgument(format!(
            "holdout {holdout} must be positive and below half of {n}"
        )));
    }
    let train_len = n - holdout;
    let base = fit(&series.prefix(train_len)?, grid, cfg)?;
    let mut specs = vec![base.spec];
    let mut predictions = Vec::with_capacity(holdout);
    for step in 0..holdout {
        let prefix = series.prefix(train_len + step)?;
        let spec = match policy {
            RefitPolicy::Fixed => base.spec,
            RefitPolicy::Expanding if step == 0 => base.spec,
            RefitPolicy::Expanding => {
                let refit = fit(&prefix, grid, cfg).map_err(|e| Error::ForecastFit {
                    step,
                    completed: predictions.len(),
                    message: e.to_string(),
                })?;
                specs.push(refit.spec);
                refit.spec
            }
        };
        predictions.push(one_step_mean(&prefix, &spec)?);
    }
    let actuals = series.values()[train_len..].to_vec();
    let errs: Vec<f64> = actuals
        .iter()
        .zip(&predictions)
        .map(|(&y, p)| y as f64 - p)
        .collect();
    let mse = errs.iter().map(|e| e * e).sum::<f64>() / holdout as f64;
    let mae = errs.iter().map(|e| e.abs()).sum::<f64>() / holdout as f64;
    Ok(ForecastReport {
        predictions,
        actuals,
        mse,
        mae,
        refit_policy: policy,
        train_len,
        specs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::GridConfig;
    use crate::model::{CoefficientVector, InitPolicy, Lambda0, ModelKind, Thresholds};
    use crate::simulate::simulate;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Poisson};

    const SET1: [f64; 6] = [0.5, 0.6, 0.4, 0.2, 0.4, 0.5];

    fn hpart_example() -> ModelSpec {
        ModelSpec::new(
            Thresholds::Hpart { r: 3, s: 6, c: 0 },
            CoefficientVector::from_array(SET1),
        )
        .unwrap()
        .with_init(InitPolicy {
            lambda0: Lambda0::Fixed(1.0),
            ..InitPolicy::default()
        })
    }

    #[test]
    fn constant_intensity_forecast() {
        let spec =
            ModelSpec::new(Thresholds::Par, CoefficientVector::single(2.0, 0.0, 0.0)).unwrap();
        for values in [vec![0, 9, 1], vec![5], vec![100, 3, 3, 3]] {
            let p = CountSeries::new(4, values).unwrap();
            assert_eq!(one_step_mean(&p, &spec).unwrap(), 2.0);
        }
    }

    #[test]
    fn hand_recursion_forecast() {
        let prefix = CountSeries::new(2, vec![5, 7, 4]).unwrap();
        assert!((one_step_mean(&prefix, &hpart_example()).unwrap() - 4.385).abs() < 1e-12);
        let shorter = CountSeries::new(2, vec![5, 7]).unwrap();
        assert!((one_step_mean(&shorter, &hpart_example()).unwrap() - 5.17).abs() < 1e-12);
    }

    #[test]
    fn forecast_matches_simulated_continuations() {
        let spec = ModelSpec::new(
            Thresholds::Hpart { r: 3, s: 6, c: 0 },
            CoefficientVector::from_array(SET1),
        )
        .unwrap();
        let (series, _) = simulate(&spec, 150, 100, 4).unwrap();
        let spec = spec.with_init(spec.init.freeze(&series, &spec).unwrap());
        let forecast = one_step_mean(&series, &spec).unwrap();

        // independent continuation: branch labels spelled out directly
        let path = intensity_filter(&series, &spec).unwrap();
        let v = series.values();
        let (y, y_prev) = (v[v.len() - 1], v[v.len() - 2]);
        let rising = y as i64 - y_prev as i64 >= 0;
        let lower = if rising { y <= 6 } else { y <= 3 };
        let c = SET1;
        let (w, a, b) = if lower {
            (c[0], c[1], c[2])
        } else {
            (c[3], c[4], c[5])
        };
        let lambda = w + a * y as f64 + b * path.lambdas.last().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let pois = Poisson::new(lambda).unwrap();
        let reps = 100_000;
        let draws: Vec<f64> = (0..reps).map(|_| pois.sample(&mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / reps as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
        assert!(
            (forecast - mean).abs() < 3.0 * (var / reps as f64).sqrt(),
            "{forecast} vs {mean}"
        );
    }

    #[test]
    fn constant_series_forecasts_constant() {
        let series = CountSeries::new(3, vec![3; 200]).unwrap();
        let grid = ThresholdGrid::from_cells(vec![Thresholds::Par], 0.1).unwrap();
        let rep = rolling_forecast(
            &series,
            10,
            &grid,
            RefitPolicy::Fixed,
            &OptimizerConfig::default(),
        )
        .unwrap();
        assert!(
            rep.predictions.iter().all(|p| (p - 3.0).abs() < 1e-3),
            "{:?}",
            rep.predictions
        );
        assert!(rep.mse < 1e-6);
    }

    #[test]
    fn fixed_policy_matches_full_filter() {
        let spec = ModelSpec::new(
            Thresholds::Hpart { r: 3, s: 6, c: 0 },
            CoefficientVector::from_array(SET1),
        )
        .unwrap();
        let (series, _) = simulate(&spec, 300, 100, 6).unwrap();
        let grid =
            ThresholdGrid::default_for(&series, ModelKind::Hpart, &GridConfig::default()).unwrap();
        let cfg = OptimizerConfig {
            multistart: 2,
            ..OptimizerConfig::default()
        };
        let rep = rolling_forecast(&series, 20, &grid, RefitPolicy::Fixed, &cfg).unwrap();
        let full = intensity_filter(&series, &rep.specs[0]).unwrap();
        assert_eq!(rep.predictions, full.lambdas[280..].to_vec());
        assert!(rep.predictions.iter().all(|&p| p > 0.0));
        let max_err = rep.errors().iter().fold(0.0f64, |m, e| m.max(e.abs()));
        assert!(rep.mae <= max_err && rep.mse <= max_err * max_err && rep.mse >= 0.0);
    }

    #[test]
    fn expanding_policy_refits_each_step() {
        let spec =
            ModelSpec::new(Thresholds::Par, CoefficientVector::single(1.0, 0.3, 0.3)).unwrap();
        let (series, _) = simulate(&spec, 120, 50, 2).unwrap();
        let grid = ThresholdGrid::from_cells(vec![Thresholds::Par], 0.1).unwrap();
        let cfg = OptimizerConfig {
            multistart: 2,
            ..OptimizerConfig::default()
        };
        let rep = rolling_forecast(&series, 5, &grid, RefitPolicy::Expanding, &cfg).unwrap();
        assert_eq!(rep.specs.len(), 5);
        assert_eq!(rep.predictions.len(), 5);
    }

    #[test]
    fn holdout_must_be_below_half() {
        let series = CountSeries::new(1, vec![1; 40]).unwrap();
        let grid = ThresholdGrid::from_cells(vec![Thresholds::Par], 0.1).unwrap();
        let cfg = OptimizerConfig::default();
        assert!(rolling_forecast(&series, 20, &grid, RefitPolicy::Fixed, &cfg).is_err());
        assert!(rolling_forecast(&series, 0, &grid, RefitPolicy::Fixed, &cfg).is_err());
        assert_eq!(
            "Expanding".parse::<RefitPolicy>().unwrap(),
            RefitPolicy::Expanding
        );
    }
}
