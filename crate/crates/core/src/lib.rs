//! Hysteretic (HPART) and buffered (BPART) Poisson autoregressions for count
//! time series, with PAR and SETPAR baselines.
//!
//! The crate covers simulation, profile maximum likelihood over integer
//! thresholds, plug-in standard errors, separate-family score tests between
//! the buffered and hysteretic models, rolling one-step forecasts, regime
//! "ID card" diagnostics and a Monte Carlo replication engine.

pub mod diagnostics;
pub mod error;
pub mod estimation;
pub mod forecast;
pub mod likelihood;
pub mod model;
pub mod montecarlo;
mod optimize;
pub mod septests;
pub mod simulate;

pub use diagnostics::{
    contingency, exact_binomial_discordant, id_card_sequence, lr_same_chain, markov_order_bic,
    ContingencyTable2x2, IdSequence,
};
pub use error::{Error, Result};
pub use estimation::{
    fit, fit_coefficients, fit_default, standard_errors, FitResult, GridConfig, OptimizerConfig,
    ThresholdGrid,
};
pub use forecast::{one_step_mean, rolling_forecast, ForecastReport, RefitPolicy};
pub use likelihood::{information_matrix, intensity_gradient, log_likelihood, InformationMatrix};
pub use model::{
    intensity_filter, CoefficientVector, Count, CountSeries, InitPolicy, IntensityPath, Lambda0,
    ModelKind, ModelSpec, RegimeInit, Thresholds,
};
pub use montecarlo::{
    run_estimation_study, run_test_study, McSummary, SizePowerTable, StudyConfig,
};
pub use optimize::COEF_FLOOR;
pub use septests::{test_bpart_vs_hpart, test_hpart_vs_bpart, TestConfig, TestKind, TestOutcome};
pub use simulate::simulate;
