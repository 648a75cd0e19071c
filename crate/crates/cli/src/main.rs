use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use hpart::diagnostics::{markov_order_bic, OrderSelection};
use hpart::estimation::GridConfig;
use hpart::septests::{default_candidates, DEFAULT_NULL_SIMS};
use hpart::{
    contingency, exact_binomial_discordant, fit, id_card_sequence, lr_same_chain, rolling_forecast,
    run_estimation_study, run_test_study, simulate, test_bpart_vs_hpart, test_hpart_vs_bpart,
    CoefficientVector, Count, CountSeries, ModelKind, ModelSpec, OptimizerConfig, RefitPolicy,
    StudyConfig, TestConfig, TestKind, ThresholdGrid, Thresholds,
};
use hpart_cli::{
    exit, ingest_path, parse_grid, parse_list, plot_rows, regime_bands, write_csv, write_json,
    write_series, IngestError,
};
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "hpart",
    version,
    about = "Hysteretic and buffered Poisson autoregression toolkit"
)]
struct Cli {
    /// Worker threads (default: all cores); results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a count series and write it as CSV.
    Simulate(SimulateArgs),
    /// Fit a model by profile maximum likelihood over a threshold grid.
    Fit(FitArgs),
    /// Test a fitted BPART model against HPART alternatives.
    TestBvh(TestBvhArgs),
    /// Test a fitted HPART model against the BPART alternative.
    TestHvb(TestHvbArgs),
    /// Rolling one-step-ahead forecasts over a holdout window.
    Forecast(ForecastArgs),
    /// Monte Carlo study of the estimators.
    McEstimate(McEstimateArgs),
    /// Monte Carlo size/power study of a separate-family test.
    McTest(McTestArgs),
    /// Compare BPART and HPART regime ID cards.
    DiagnoseIds(DiagnoseArgs),
}

fn parse_kind(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: hpart::Error| e.to_string())
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[arg(long, value_parser = parse_kind)]
    model: ModelKind,
    /// Coefficients ω1,α1,β1,ω2,α2,β2 (three values for PAR).
    #[arg(long, allow_hyphen_values = true)]
    coef: String,
    #[arg(long)]
    r: Option<Count>,
    #[arg(long)]
    s: Option<Count>,
    #[arg(long, allow_hyphen_values = true)]
    c: Option<i64>,
}

impl ModelArgs {
    fn spec(&self) -> anyhow::Result<ModelSpec> {
        let coef: Vec<f64> = parse_list(&self.coef).map_err(anyhow::Error::msg)?;
        let coefficients = match (self.model, coef.as_slice()) {
            (ModelKind::Par, &[w, a, b]) => CoefficientVector::single(w, a, b),
            (_, &[w1, a1, b1, w2, a2, b2]) => {
                CoefficientVector::from_array([w1, a1, b1, w2, a2, b2])
            }
            _ => bail!(usage(format!(
                "--coef needs {} values",
                self.model.n_coefficients()
            ))),
        };
        let model = self.model;
        fn need<T>(v: Option<T>, name: &str, model: ModelKind) -> anyhow::Result<T> {
            v.ok_or_else(|| usage(format!("--{name} is required for {model}")))
        }
        let thresholds = match self.model {
            ModelKind::Par => Thresholds::Par,
            ModelKind::Setpar => Thresholds::Setpar {
                r: need(self.r, "r", model)?,
            },
            ModelKind::Bpart => Thresholds::Bpart {
                r: need(self.r, "r", model)?,
                s: need(self.s, "s", model)?,
            },
            ModelKind::Hpart => Thresholds::Hpart {
                r: need(self.r, "r", model)?,
                s: need(self.s, "s", model)?,
                c: need(self.c, "c", model)?,
            },
        };
        Ok(ModelSpec::new(thresholds, coefficients)?)
    }
}

#[derive(Args, Clone)]
struct GridArgs {
    /// r values, as a list (`2,3,4`) or range (`2..6`).
    #[arg(long)]
    r_grid: Option<String>,
    #[arg(long)]
    s_grid: Option<String>,
    /// c values for HPART grids, or test candidates for test-bvh.
    #[arg(long, allow_hyphen_values = true)]
    c_grid: Option<String>,
    #[arg(long, default_value_t = 0.10)]
    min_regime_frac: f64,
}

impl GridArgs {
    fn config(&self) -> anyhow::Result<GridConfig> {
        let u = |s: &Option<String>| {
            s.as_deref()
                .map(parse_grid::<u64>)
                .transpose()
                .map_err(usage)
        };
        let c = self
            .c_grid
            .as_deref()
            .map(parse_grid::<i64>)
            .transpose()
            .map_err(usage)?;
        Ok(GridConfig {
            min_regime_frac: self.min_regime_frac,
            r_values: u(&self.r_grid)?,
            s_values: u(&self.s_grid)?,
            c_values: c,
            ..GridConfig::default()
        })
    }

    fn grid(&self, series: &CountSeries, kind: ModelKind) -> anyhow::Result<ThresholdGrid> {
        Ok(ThresholdGrid::default_for(series, kind, &self.config()?)?)
    }
}

#[derive(Args, Clone)]
struct OptArgs {
    /// Master seed; 0 by default, so every run is deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    multistart: usize,
    #[arg(long, default_value_t = 2000)]
    max_iter: usize,
}

impl OptArgs {
    fn config(&self) -> OptimizerConfig {
        OptimizerConfig {
            seed: self.seed,
            multistart: self.multistart,
            max_iter: self.max_iter,
            ..Default::default()
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = hpart::simulate::DEFAULT_BURN_IN)]
    burn_in: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the true intensities and regimes.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_parser = parse_kind)]
    model: ModelKind,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    opt: OptArgs,
    /// JSON report (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Plot sidecar CSV with t, y, lambda, regime.
    #[arg(long)]
    plot: Option<PathBuf>,
    /// Regime-band CSV over the (y_{t-2}, y_{t-1}) plane (HPART only).
    #[arg(long)]
    bands: Option<PathBuf>,
}

#[derive(Args)]
struct TestArgs {
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    opt: OptArgs,
    #[arg(long, default_value = "0.10,0.05,0.01")]
    levels: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TestBvhArgs {
    #[command(flatten)]
    common: TestArgs,
    #[arg(long, default_value_t = DEFAULT_NULL_SIMS)]
    null_sims: usize,
}

#[derive(Args)]
struct TestHvbArgs {
    #[command(flatten)]
    common: TestArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Refit {
    Fixed,
    Expanding,
}

#[derive(Args)]
struct ForecastArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_parser = parse_kind)]
    model: ModelKind,
    #[arg(long, default_value_t = 20)]
    holdout: usize,
    #[arg(long, value_enum, default_value = "fixed")]
    refit: Refit,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    opt: OptArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-step prediction/actual CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct McEstimateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 200)]
    reps: usize,
    #[arg(long, default_value_t = hpart::simulate::DEFAULT_BURN_IN)]
    burn_in: usize,
    #[command(flatten)]
    opt: OptArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Parameter table CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum WhichTest {
    Bvh,
    Hvb,
}

#[derive(Args)]
struct McTestArgs {
    #[arg(long, value_enum)]
    test: WhichTest,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 200)]
    reps: usize,
    #[arg(long, default_value = "0.10,0.05,0.01")]
    levels: String,
    #[arg(long, default_value_t = DEFAULT_NULL_SIMS)]
    null_sims: usize,
    #[command(flatten)]
    opt: OptArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    opt: OptArgs,
    #[arg(long, default_value_t = 3)]
    max_order: usize,
    /// Markov order for the likelihood-ratio test (default: largest BIC choice).
    #[arg(long)]
    order: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// ID sequences as CSV (t, hpart, bpart).
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Usage(msg.into()))
}

fn load(path: &Path) -> anyhow::Result<CountSeries> {
    ingest_path(path).with_context(|| format!("reading {}", path.display()))
}

fn levels(s: &str) -> anyhow::Result<Vec<f64>> {
    parse_list(s).map_err(usage)
}

fn run_simulate(a: SimulateArgs) -> anyhow::Result<()> {
    let spec = a.model.spec()?;
    let (series, path) = simulate(&spec, a.n, a.burn_in, a.seed)?;
    write_series(&series, a.out.as_deref())?;
    if let Some(p) = &a.plot {
        let rows: Vec<_> = series
            .values()
            .iter()
            .zip(path.lambdas.iter().zip(&path.regimes))
            .enumerate()
            .map(|(i, (&y, (&lambda, &lower)))| hpart_cli::PlotRow {
                t: i + 1,
                y,
                lambda,
                regime: u8::from(lower),
            })
            .collect();
        write_csv(&rows, p)?;
    }
    Ok(())
}

fn run_fit(a: FitArgs) -> anyhow::Result<()> {
    let series = load(&a.input)?;
    let grid = a.grid.grid(&series, a.model)?;
    let result = fit(&series, &grid, &a.opt.config())?;
    write_json(&result, a.out.as_deref())?;
    if let Some(p) = &a.plot {
        write_csv(&plot_rows(&series, &result.spec)?, p)?;
    }
    if let Some(p) = &a.bands {
        let max_y = series.with_presample().into_iter().max().unwrap_or(0);
        match regime_bands(&result.spec.thresholds, max_y) {
            Some(rows) => write_csv(&rows, p)?,
            None => bail!(usage("--bands needs an HPART fit")),
        }
    }
    Ok(())
}

fn run_test_bvh(a: TestBvhArgs) -> anyhow::Result<()> {
    let c = &a.common;
    let series = load(&c.input)?;
    let grid = GridArgs {
        c_grid: None,
        ..c.grid.clone()
    }
    .grid(&series, ModelKind::Bpart)?;
    let fit_b = fit(&series, &grid, &c.opt.config())?;
    let candidates = match &c.grid.c_grid {
        Some(s) => parse_grid::<i64>(s).map_err(usage)?,
        None => default_candidates(&series),
    };
    let cfg = TestConfig {
        levels: levels(&c.levels)?,
        null_sims: a.null_sims,
        seed: c.opt.seed,
    };
    let outcome = test_bpart_vs_hpart(&series, &fit_b, &candidates, &cfg)?;
    write_json(
        &serde_json::json!({ "fit": fit_b.spec, "loglik": fit_b.loglik, "test": outcome }),
        c.out.as_deref(),
    )?;
    Ok(())
}

fn run_test_hvb(a: TestHvbArgs) -> anyhow::Result<()> {
    let c = &a.common;
    let series = load(&c.input)?;
    let fit_h = fit(
        &series,
        &c.grid.grid(&series, ModelKind::Hpart)?,
        &c.opt.config(),
    )?;
    let cfg = TestConfig {
        levels: levels(&c.levels)?,
        seed: c.opt.seed,
        ..TestConfig::default()
    };
    let outcome = test_hpart_vs_bpart(&series, &fit_h, &cfg)?;
    write_json(
        &serde_json::json!({ "fit": fit_h.spec, "loglik": fit_h.loglik, "test": outcome }),
        c.out.as_deref(),
    )?;
    Ok(())
}

#[derive(Serialize)]
struct ForecastRow {
    step: usize,
    prediction: f64,
    actual: Count,
}

fn run_forecast(a: ForecastArgs) -> anyhow::Result<()> {
    let series = load(&a.input)?;
    if 2 * a.holdout >= series.len() {
        bail!(usage(format!(
            "--holdout {} must be below half of {} observations",
            a.holdout,
            series.len()
        )));
    }
    let train = series.prefix(series.len() - a.holdout)?;
    let grid = a.grid.grid(&train, a.model)?;
    let policy = match a.refit {
        Refit::Fixed => RefitPolicy::Fixed,
        Refit::Expanding => RefitPolicy::Expanding,
    };
    let report = rolling_forecast(&series, a.holdout, &grid, policy, &a.opt.config())?;
    write_json(&report, a.out.as_deref())?;
    if let Some(p) = &a.csv {
        let rows: Vec<_> = report
            .predictions
            .iter()
            .zip(&report.actuals)
            .enumerate()
            .map(|(i, (&prediction, &actual))| ForecastRow {
                step: i + 1,
                prediction,
                actual,
            })
            .collect();
        write_csv(&rows, p)?;
    }
    Ok(())
}

fn study(n: usize, reps: usize, burn_in: usize, opt: &OptArgs) -> StudyConfig {
    StudyConfig {
        burn_in,
        optimizer: opt.config(),
        ..StudyConfig::new(n, reps, opt.seed)
    }
}

fn run_mc_estimate(a: McEstimateArgs) -> anyhow::Result<()> {
    let spec = a.model.spec()?;
    let summary = run_estimation_study(&spec, &study(a.n, a.reps, a.burn_in, &a.opt))?;
    write_json(&summary, a.out.as_deref())?;
    if let Some(p) = &a.csv {
        write_csv(&summary.params, p)?;
    }
    Ok(())
}

fn run_mc_test(a: McTestArgs) -> anyhow::Result<()> {
    let spec = a.model.spec()?;
    let test = match a.test {
        WhichTest::Bvh => TestKind::BpartVsHpart,
        WhichTest::Hvb => TestKind::HpartVsBpart,
    };
    let cfg = study(a.n, a.reps, hpart::simulate::DEFAULT_BURN_IN, &a.opt);
    let tc = TestConfig {
        levels: levels(&a.levels)?,
        null_sims: a.null_sims,
        seed: a.opt.seed,
    };
    let table = run_test_study(&spec, test, &cfg, &tc)?;
    write_json(&table, a.out.as_deref())?;
    if let Some(p) = &a.csv {
        write_csv(&table.rows, p)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct IdRow {
    t: usize,
    hpart: u8,
    bpart: u8,
}

#[derive(Serialize)]
struct IdReport {
    hpart: ModelSpec,
    bpart: ModelSpec,
    /// Rows: HPART IDs, columns: BPART IDs.
    contingency: hpart::ContingencyTable2x2,
    order_hpart: OrderSelection,
    order_bpart: OrderSelection,
    lr_order: usize,
    lr_same_chain: hpart::diagnostics::LrTest,
    exact_binomial_p: Option<f64>,
}

fn run_diagnose(a: DiagnoseArgs) -> anyhow::Result<()> {
    let series = load(&a.input)?;
    let opt = a.opt.config();
    let fit_h = fit(&series, &a.grid.grid(&series, ModelKind::Hpart)?, &opt)?;
    let grid_b = GridArgs {
        c_grid: None,
        ..a.grid.clone()
    }
    .grid(&series, ModelKind::Bpart)?;
    let fit_b = fit(&series, &grid_b, &opt)?;
    let ids_h = id_card_sequence(&series, &fit_h)?;
    let ids_b = id_card_sequence(&series, &fit_b)?;
    let table = contingency(&ids_h, &ids_b)?;
    let order_hpart = markov_order_bic(&ids_h, a.max_order)?;
    let order_bpart = markov_order_bic(&ids_b, a.max_order)?;
    let lr_order = a.order.unwrap_or(order_hpart.order.max(order_bpart.order));
    let lr = lr_same_chain(&ids_h, &ids_b, lr_order)?;
    let report = IdReport {
        hpart: fit_h.spec,
        bpart: fit_b.spec,
        contingency: table,
        order_hpart,
        order_bpart,
        lr_order,
        lr_same_chain: lr,
        exact_binomial_p: exact_binomial_discordant(&table).ok(),
    };
    write_json(&report, a.out.as_deref())?;
    if let Some(p) = &a.csv {
        let rows: Vec<_> = ids_h
            .0
            .iter()
            .zip(&ids_b.0)
            .enumerate()
            .map(|(i, (&h, &b))| IdRow {
                t: i + 1,
                hpart: h,
                bpart: b,
            })
            .collect();
        write_csv(&rows, p)?;
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<Usage>().is_some() {
        return exit::USAGE;
    }
    if err.downcast_ref::<IngestError>().is_some() {
        return exit::PARSE;
    }
    match err.downcast_ref::<hpart::Error>() {
        Some(hpart::Error::PathsIdentical(_)) => exit::DEGENERATE,
        Some(
            hpart::Error::InvalidArgument(_)
            | hpart::Error::InvalidCoefficients(_)
            | hpart::Error::InvalidThresholds(_)
            | hpart::Error::NonPositiveLambda0(_),
        ) => exit::USAGE,
        Some(_) => exit::FIT,
        None => exit::FAILURE,
    }
}

fn main() {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
        {
            eprintln!("error: {e}");
            std::process::exit(exit::USAGE);
        }
    }
    let result = match cli.command {
        Command::Simulate(a) => run_simulate(a),
        Command::Fit(a) => run_fit(a),
        Command::TestBvh(a) => run_test_bvh(a),
        Command::TestHvb(a) => run_test_hvb(a),
        Command::Forecast(a) => run_forecast(a),
        Command::McEstimate(a) => run_mc_estimate(a),
        Command::McTest(a) => run_mc_test(a),
        Command::DiagnoseIds(a) => run_diagnose(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(exit_code(&e));
    }
}
