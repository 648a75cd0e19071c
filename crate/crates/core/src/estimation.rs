//! Profile maximum likelihood: Fisher-scoring fits of ϑ nested inside an
//! exhaustive sweep over integer threshold cells.
//!
//! Cells that induce the same regime path have the same likelihood surface,
//! so each distinct path is optimized once and its result shared. Starting
//! values are seeded from the path content, which keeps a cell's fit
//! independent of which other cells are on the grid.

use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{InformationMatrix, PreparedPath};
use crate::model::{
    regime_path, CoefficientVector, Count, CountSeries, InitPolicy, Lambda0, ModelKind, ModelSpec,
    Thresholds,
};
use crate::optimize::{maximize, Bounds};
use crate::simulate::derive_seed;

pub const MIN_FIT_LENGTH: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub max_iter: usize,
    /// Stop once an iteration gains less than this in log-likelihood.
    pub tol: f64,
    pub multistart: usize,
    pub seed: u64,
    /// Additional starting points tried in every cell.
    pub extra_starts: Vec<CoefficientVector>,
    /// Upper bound for ω; defaults to `10·(1 + max y)`.
    pub omega_max: Option<f64>,
    pub alpha_max: f64,
    pub init: InitPolicy,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iter: 2000,
            tol: 1e-8,
            multistart: 5,
            seed: 0,
            extra_starts: Vec::new(),
            omega_max: None,
            alpha_max: 10.0,
            init: InitPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub min_regime_frac: f64,
    pub lower_quantile: f64,
    pub upper_quantile: f64,
    pub max_c: usize,
    pub r_values: Option<Vec<Count>>,
    pub s_values: Option<Vec<Count>>,
    pub c_values: Option<Vec<i64>>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            min_regime_frac: 0.10,
            lower_quantile: 0.10,
            upper_quantile: 0.90,
            max_c: 15,
            r_values: None,
            s_values: None,
            c_values: None,
        }
    }
}

/// Candidate threshold cells for one model kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdGrid {
    pub cells: Vec<Thresholds>,
    pub min_regime_frac: f64,
}

/// Nearest-rank quantile of a sorted slice.
fn quantile<T: Copy>(sorted: &[T], p: f64) -> T {
    let n = sorted.len();
    let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

pub(crate) fn distinct_between<T: Copy + Ord>(values: &[T], lo: f64, hi: f64) -> Vec<T> {
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let (a, b) = (quantile(&sorted, lo), quantile(&sorted, hi));
    sorted.dedup();
    sorted.into_iter().filter(|v| *v >= a && *v <= b).collect()
}

/// Keeps `cap` roughly evenly spaced entries, endpoints included.
pub(crate) fn thin<T: Copy>(values: Vec<T>, cap: usize) -> Vec<T> {
    if values.len() <= cap || cap == 0 {
        return values;
    }
    if cap == 1 {
        return vec![values[values.len() / 2]];
    }
    let last = values.len() - 1;
    let mut idx: Vec<usize> = (0..cap)
        .map(|i| (i * last + (cap - 1) / 2) / (cap - 1))
        .collect();
    idx.dedup();
    idx.into_iter().map(|i| values[i]).collect()
}

/// Observed first differences `Δy_1..Δy_n` (plus `Δy_0` when `y_{-1}` is known).
pub fn observed_differences(series: &CountSeries) -> Vec<i64> {
    let all = series.with_presample();
    let mut d: Vec<i64> = all.windows(2).map(|w| w[1] as i64 - w[0] as i64).collect();
    if let Some(p) = series.prior() {
        d.push(series.presample() as i64 - p as i64);
    }
    d
}

impl ThresholdGrid {
    /// Data-driven grid: r and s over observed counts between the configured
    /// quantiles, c over observed differences between the same quantiles.
    pub fn default_for(series: &CountSeries, kind: ModelKind, cfg: &GridConfig) -> Result<Self> {
        let counts = series.with_presample();
        let levels = || distinct_between(&counts, cfg.lower_quantile, cfg.upper_quantile);
        let r_values = cfg.r_values.clone().unwrap_or_else(levels);
        let s_values = cfg.s_values.clone().unwrap_or_else(levels);
        let cells = match kind {
            ModelKind::Par => vec![Thresholds::Par],
            ModelKind::Setpar => r_values.iter().map(|&r| Thresholds::Setpar { r }).collect(),
            ModelKind::Bpart => r_values
                .iter()
                .flat_map(|&r| {
                    s_values
                        .iter()
                        .filter(move |&&s| r < s)
                        .map(move |&s| Thresholds::Bpart { r, s })
                })
                .collect(),
            ModelKind::Hpart => {
                let c_values = match &cfg.c_values {
                    Some(c) => c.clone(),
                    None => thin(
                        distinct_between(
                            &observed_differences(series),
                            cfg.lower_quantile,
                            cfg.upper_quantile,
                        ),
                        cfg.max_c,
                    ),
                };
                let mut cells = Vec::new();
                for &r in &r_values {
                    for &s in s_values.iter().filter(|&&s| r < s) {
                        cells.extend(c_values.iter().map(|&c| Thresholds::Hpart { r, s, c }));
                    }
                }
                cells
            }
        };
        Self::from_cells(cells, cfg.min_regime_frac)
    }

    pub fn from_cells(cells: Vec<Thresholds>, min_regime_frac: f64) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::EmptyGrid);
        }
        let kind = cells[0].kind();
        for cell in &cells {
            if cell.kind() != kind {
                return Err(Error::InvalidThresholds("grid mixes model kinds".into()));
            }
            if let (Some(r), Some(s)) = (cell.r(), cell.s()) {
                if r >= s {
                    return Err(Error::InvalidThresholds(format!(
                        "grid cell {cell} needs r < s"
                    )));
                }
            }
        }
        if !(0.0..0.5).contains(&min_regime_frac) {
            return Err(Error::InvalidArgument(format!(
                "min_regime_frac {min_regime_frac} outside [0, 0.5)"
            )));
        }
        Ok(Self {
            cells,
            min_regime_frac,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.cells[0].kind()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Whether each threshold leaves enough lagged observations on both sides.
    fn admits(&self, lags: &[Count], cell: &Thresholds) -> bool {
        let n = lags.len() as f64;
        let need = self.min_regime_frac * n;
        let below = |v: Count| lags.iter().filter(|&&y| y <= v).count() as f64;
        match *cell {
            Thresholds::Par => true,
            Thresholds::Setpar { r } => below(r) >= need && n - below(r) >= need,
            Thresholds::Bpart { r, s } | Thresholds::Hpart { r, s, .. } => {
                below(r) >= need && n - below(s) >= need
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientFit {
    pub coefficients: CoefficientVector,
    pub loglik: f64,
    pub iterations: usize,
    pub starts_tried: usize,
    pub starts_converged: usize,
    pub at_bound: Vec<bool>,
}

fn fit_init(
    series: &CountSeries,
    thresholds: &Thresholds,
    init: &InitPolicy,
) -> Result<crate::model::ResolvedInit> {
    if init.lambda0 == Lambda0::UnconditionalMean {
        return Err(Error::InvalidArgument(
            "unconditional-mean initialization depends on the coefficients; use sample-mean or fixed".into(),
        ));
    }
    let placeholder = ModelSpec {
        thresholds: *thresholds,
        coefficients: CoefficientVector::single(1.0, 0.0, 0.0),
        init: *init,
    };
    init.resolve(series, &placeholder)
}

fn bounds_for(series: &CountSeries, kind: ModelKind, cfg: &OptimizerConfig) -> Bounds {
    let max_y = series.with_presample().into_iter().max().unwrap_or(0) as f64;
    Bounds::new(
        kind.n_coefficients(),
        cfg.omega_max.unwrap_or(10.0 * (1.0 + max_y)),
        cfg.alpha_max,
    )
}

fn path_seed(master: u64, regimes: &[bool]) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    regimes.hash(&mut h);
    derive_seed(master, h.finish())
}

/// Moment-style start plus `k − 1` jittered ones, then any user-supplied starts.
fn starting_points(
    path: &PreparedPath,
    k: usize,
    seed: u64,
    extras: &[CoefficientVector],
) -> Vec<[f64; 6]> {
    let mean_of = |lower: bool| {
        let (sum, cnt) = path
            .y
            .iter()
            .zip(&path.regimes)
            .filter(|(_, &r)| r == lower)
            .fold((0.0, 0usize), |(s, c), (&y, _)| (s + y, c + 1));
        if cnt == 0 {
            path.y.iter().sum::<f64>() / path.n() as f64
        } else {
            sum / cnt as f64
        }
    };
    let (m1, m2) = (mean_of(true).max(0.1), mean_of(false).max(0.1));
    let single = path.kind == ModelKind::Par;
    let mut starts = Vec::with_capacity(k + extras.len());
    if k > 0 {
        let (a, b) = (0.3, 0.3);
        let m2 = if single { m1 } else { m2 };
        starts.push([m1 * (1.0 - a - b), a, b, m2 * (1.0 - a - b), a, b]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 1..k {
        let mut triple = |m: f64| {
            let a: f64 = rng.random_range(0.05..0.6);
            let b: f64 = rng.random_range(0.05..0.9);
            let scale = if a + b > 0.95 { 0.95 / (a + b) } else { 1.0 };
            let (a, b) = (a * scale, b * scale);
            let w = (m * (1.0 - a - b) * rng.random_range(0.5..1.5)).max(0.01);
            [w, a, b]
        };
        let lo = triple(m1);
        let hi = if single { lo } else { triple(m2) };
        starts.push([lo[0], lo[1], lo[2], hi[0], hi[1], hi[2]]);
    }
    starts.extend(extras.iter().map(|c| c.to_array()));
    starts
}

fn optimize_path(
    path: &PreparedPath,
    bounds: &Bounds,
    cfg: &OptimizerConfig,
    seed: u64,
) -> Result<CoefficientFit> {
    let starts = starting_points(path, cfg.multistart, seed, &cfg.extra_starts);
    if starts.is_empty() {
        return Err(Error::InvalidArgument(
            "no starting points (multistart = 0 and no extra starts)".into(),
        ));
    }
    let mut best: Option<crate::optimize::OptOutcome> = None;
    let mut converged = 0;
    let mut last_err = None;
    for start in &starts {
        match maximize(path, *start, bounds, cfg.max_iter, cfg.tol) {
            Ok(out) => {
                converged += 1;
                if best.as_ref().is_none_or(|b| out.loglik > b.loglik) {
                    best = Some(out);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    match best {
        Some(out) => {
            let mut theta = out.theta;
            if path.kind == ModelKind::Par {
                theta[3] = theta[0];
                theta[4] = theta[1];
                theta[5] = theta[2];
            }
            Ok(CoefficientFit {
                coefficients: CoefficientVector::from_array(theta),
                loglik: out.loglik,
                iterations: out.iterations,
                starts_tried: starts.len(),
                starts_converged: converged,
                at_bound: bounds.at_bound(&theta),
            })
        }
        None => match last_err {
            Some(e @ Error::NonConvergence { .. }) => Err(e),
            _ => Err(Error::AllStartsFailed(starts.len())),
        },
    }
}

/// Maximizes the log-likelihood over ϑ with the thresholds held fixed.
pub fn fit_coefficients(
    series: &CountSeries,
    thresholds: &Thresholds,
    cfg: &OptimizerConfig,
) -> Result<CoefficientFit> {
    if series.len() < MIN_FIT_LENGTH {
        return Err(Error::SeriesTooShort {
            required: MIN_FIT_LENGTH,
            actual: series.len(),
        });
    }
    thresholds.validate()?;
    let init = fit_init(series, thresholds, &cfg.init)?;
    let path = PreparedPath::new(series, thresholds, init)?;
    let bounds = bounds_for(series, thresholds.kind(), cfg);
    optimize_path(&path, &bounds, cfg, path_seed(cfg.seed, &path.regimes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellStatus {
    Fitted { loglik: f64 },
    Skipped { reason: String },
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileEntry {
    pub thresholds: Thresholds,
    #[serde(flatten)]
    pub status: CellStatus,
}

impl ProfileEntry {
    pub fn loglik(&self) -> Option<f64> {
        match self.status {
            CellStatus::Fitted { loglik } => Some(loglik),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub multistart: usize,
    pub starts_converged: usize,
    /// Coefficients that ended on a bound of the parameter box.
    pub at_bound: Vec<bool>,
    pub cells_fitted: usize,
    pub cells_skipped: usize,
    pub cells_failed: usize,
    pub distinct_paths: usize,
    /// Top two distinct regime paths are nearly tied, so the thresholds are poorly identified.
    pub identification_suspect: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub spec: ModelSpec,
    pub loglik: f64,
    pub n: usize,
    pub info: Option<InformationMatrix>,
    pub std_errors: Option<Vec<f64>>,
    pub info_error: Option<String>,
    pub profile: Vec<ProfileEntry>,
    pub diagnostics: FitDiagnostics,
}

impl FitResult {
    pub fn kind(&self) -> ModelKind {
        self.spec.kind()
    }
}

/// Joint maximization over the grid cells and ϑ.
///
/// The winner has the largest maximized log-likelihood; exact ties go to the
/// smallest `(r, s, |c|, c)`. The returned spec has its initialization frozen
/// to the values used on `series`.
pub fn fit(series: &CountSeries, grid: &ThresholdGrid, cfg: &OptimizerConfig) -> Result<FitResult> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if series.len() < MIN_FIT_LENGTH {
        return Err(Error::SeriesTooShort {
            required: MIN_FIT_LENGTH,
            actual: series.len(),
        });
    }
    let kind = grid.kind();
    let lags: Vec<Count> = series.lagged().collect();
    let bounds = bounds_for(series, kind, cfg);

    // resolve each admissible cell to a distinct regime path
    let mut path_index: HashMap<Vec<bool>, usize> = HashMap::new();
    let mut paths: Vec<(Vec<bool>, f64)> = Vec::new();
    let mut cell_path: Vec<std::result::Result<usize, CellStatus>> = Vec::with_capacity(grid.len());
    for cell in &grid.cells {
        if !grid.admits(&lags, cell) {
            cell_path.push(Err(CellStatus::Skipped {
                reason: format!(
                    "fewer than {:.0}% of observations on one side",
                    grid.min_regime_frac * 100.0
                ),
            }));
            continue;
        }
        let resolved = fit_init(series, cell, &cfg.init)
            .and_then(|init| Ok((regime_path(series, cell, &init)?, init)));
        match resolved {
            Ok((regimes, init)) => {
                let next = paths.len();
                let idx = *path_index.entry(regimes.clone()).or_insert_with(|| {
                    paths.push((regimes, init.lambda0));
                    next
                });
                cell_path.push(Ok(idx));
            }
            Err(e) => cell_path.push(Err(CellStatus::Failed {
                error: e.to_string(),
            })),
        }
    }

    let path_fits: Vec<Result<CoefficientFit>> = paths
        .par_iter()
        .map(|(regimes, lambda0)| {
            let prepared = PreparedPath::from_regimes(series, regimes.clone(), *lambda0, kind);
            optimize_path(&prepared, &bounds, cfg, path_seed(cfg.seed, regimes))
        })
        .collect();

    let profile: Vec<ProfileEntry> = grid
        .cells
        .iter()
        .zip(&cell_path)
        .map(|(cell, p)| {
            let status = match p {
                Ok(idx) => match &path_fits[*idx] {
                    Ok(f) => CellStatus::Fitted { loglik: f.loglik },
                    Err(e) => CellStatus::Failed {
                        error: e.to_string(),
                    },
                },
                Err(s) => s.clone(),
            };
            ProfileEntry {
                thresholds: *cell,
                status,
            }
        })
        .collect();

    let best = profile
        .iter()
        .enumerate()
        .filter_map(|(i, e)| e.loglik().map(|ll| (i, ll)))
        .max_by(|(ia, a), (ib, b)| {
            a.total_cmp(b)
                .then_with(|| grid.cells[*ib].tie_key().cmp(&grid.cells[*ia].tie_key()))
        });
    let Some((best_cell, best_ll)) = best else {
        return Err(Error::AllCellsFailed(grid.len()));
    };
    let best_path = *cell_path[best_cell]
        .as_ref()
        .expect("fitted cell has a path");
    let coef_fit = path_fits[best_path]
        .as_ref()
        .expect("fitted cell has a fit");

    let runner_up = profile
        .iter()
        .zip(&cell_path)
        .filter(|(_, p)| matches!(p, Ok(idx) if *idx != best_path))
        .filter_map(|(e, _)| e.loglik())
        .fold(f64::NEG_INFINITY, f64::max);
    let identification_suspect = best_ll - runner_up < 1e-6 * series.len() as f64;

    let thresholds = grid.cells[best_cell];
    let mut spec = ModelSpec {
        thresholds,
        coefficients: coef_fit.coefficients,
        init: cfg.init,
    };
    spec.init = spec.init.freeze(series, &spec)?;
    let prepared =
        PreparedPath::from_regimes(series, paths[best_path].0.clone(), paths[best_path].1, kind);
    let eval = prepared.evaluate(&coef_fit.coefficients.to_array());
    let info = InformationMatrix::from_sum(&eval.fisher, series.len(), kind.n_coefficients());
    let (std_errors, info_error) = match info.standard_errors() {
        Ok(se) => (Some(se), None),
        Err(e) => (None, Some(e.to_string())),
    };

    let count = |f: fn(&CellStatus) -> bool| profile.iter().filter(|e| f(&e.status)).count();
    let diagnostics = FitDiagnostics {
        iterations: coef_fit.iterations,
        multistart: coef_fit.starts_tried,
        starts_converged: coef_fit.starts_converged,
        at_bound: coef_fit.at_bound.clone(),
        cells_fitted: count(|s| matches!(s, CellStatus::Fitted { .. })),
        cells_skipped: count(|s| matches!(s, CellStatus::Skipped { .. })),
        cells_failed: count(|s| matches!(s, CellStatus::Failed { .. })),
        distinct_paths: paths.len(),
        identification_suspect,
    };
    Ok(FitResult {
        spec,
        loglik: best_ll,
        n: series.len(),
        info: Some(info),
        std_errors,
        info_error,
        profile,
        diagnostics,
    })
}

/// Convenience: fit over the default data-driven grid.
pub fn fit_default(
    series: &CountSeries,
    kind: ModelKind,
    cfg: &OptimizerConfig,
) -> Result<FitResult> {
    let grid = ThresholdGrid::default_for(series, kind, &GridConfig::default())?;
    fit(series, &grid, cfg)
}

/// `sqrt(diag(Ĝ⁻¹/n))` at the fitted parameters.
pub fn standard_errors(fit: &FitResult) -> Result<Vec<f64>> {
    match &fit.info {
        Some(info) => info.standard_errors(),
        None => Err(Error::SingularInformation(
            "fit carries no information matrix".into(),
        )),
    }
}
