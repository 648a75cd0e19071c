//! Domain types, regime indicators and the intensity recursion shared by the
//! four model kinds (PAR, SETPAR, BPART, HPART).
//!
//! Time indexing follows the conditional likelihood: a [`CountSeries`] holds
//! the modelled observations `y_1..y_n` plus the presample value `y_0`
//! (and optionally `y_{-1}`), and the filter produces `λ̃_1..λ̃_n`, where
//! `λ̃_t` is built from `y_{t-1}` and `λ̃_{t-1}`.
//!
//! A regime flag of `true` means the regime indicator equals 1, i.e. the
//! first coefficient triple `(ω₁, α₁, β₁)` (the lower regime) is active.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Count = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Par,
    Setpar,
    Bpart,
    Hpart,
}

impl ModelKind {
    /// Number of free coefficients: PAR has a single triple.
    pub fn n_coefficients(self) -> usize {
        match self {
            ModelKind::Par => 3,
            _ => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Par => "par",
            ModelKind::Setpar => "setpar",
            ModelKind::Bpart => "bpart",
            ModelKind::Hpart => "hpart",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "par" => Ok(ModelKind::Par),
            "setpar" => Ok(ModelKind::Setpar),
            "bpart" => Ok(ModelKind::Bpart),
            "hpart" => Ok(ModelKind::Hpart),
            other => Err(Error::InvalidArgument(format!(
                "unknown model kind '{other}'"
            ))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Observed counts `y_1..y_n` with presample `y_0` and optional `y_{-1}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountSeries {
    presample: Count,
    prior: Option<Count>,
    values: Vec<Count>,
}

impl CountSeries {
    pub fn new(presample: Count, values: Vec<Count>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidSeries("series has no observations".into()));
        }
        Ok(Self {
            presample,
            prior: None,
            values,
        })
    }

    /// Splits a raw record so that its first element becomes `y_0`.
    pub fn from_observations(all: &[Count]) -> Result<Self> {
        match all.split_first() {
            Some((&y0, rest)) if !rest.is_empty() => Self::new(y0, rest.to_vec()),
            _ => Err(Error::InvalidSeries(
                "need at least two counts (presample plus one observation)".into(),
            )),
        }
    }

    /// Supplies `y_{-1}` so that `Δy_0 = y_0 − y_{-1}` is observed rather than assumed.
    pub fn with_prior(mut self, y_minus1: Count) -> Self {
        self.prior = Some(y_minus1);
        self
    }

    pub fn values(&self) -> &[Count] {
        &self.values
    }

    pub fn presample(&self) -> Count {
        self.presample
    }

    pub fn prior(&self) -> Option<Count> {
        self.prior
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().map(|&y| y as f64).sum::<f64>() / self.values.len() as f64
    }

    /// `y_{t-1}` for `t = 1..n`.
    pub fn lagged(&self) -> impl Iterator<Item = Count> + '_ {
        std::iter::once(self.presample).chain(self.values[..self.values.len() - 1].iter().copied())
    }

    /// `y_0, y_1, .., y_n`.
    pub fn with_presample(&self) -> Vec<Count> {
        let mut all = Vec::with_capacity(self.values.len() + 1);
        all.push(self.presample);
        all.extend_from_slice(&self.values);
        all
    }

    /// The first `m` observations with the same presample.
    pub fn prefix(&self, m: usize) -> Result<Self> {
        if m == 0 || m > self.values.len() {
            return Err(Error::InvalidArgument(format!(
                "prefix length {m} outside 1..={}",
                self.values.len()
            )));
        }
        Ok(Self {
            presample: self.presample,
            prior: self.prior,
            values: self.values[..m].to_vec(),
        })
    }

    /// `Δy_0`, observed when `y_{-1}` is known, otherwise `fallback`.
    pub fn delta_y0(&self, fallback: i64) -> i64 {
        match self.prior {
            Some(p) => self.presample as i64 - p as i64,
            None => fallback,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientVector {
    pub omega1: f64,
    pub alpha1: f64,
    pub beta1: f64,
    pub omega2: f64,
    pub alpha2: f64,
    pub beta2: f64,
}

impl CoefficientVector {
    pub const NAMES: [&'static str; 6] = ["omega1", "alpha1", "beta1", "omega2", "alpha2", "beta2"];

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            omega1: a[0],
            alpha1: a[1],
            beta1: a[2],
            omega2: a[3],
            alpha2: a[4],
            beta2: a[5],
        }
    }

    /// Single-triple coefficients; the upper triple mirrors the lower one.
    pub fn single(omega: f64, alpha: f64, beta: f64) -> Self {
        Self::from_array([omega, alpha, beta, omega, alpha, beta])
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.omega1,
            self.alpha1,
            self.beta1,
            self.omega2,
            self.alpha2,
            self.beta2,
        ]
    }

    pub fn triple(&self, lower: bool) -> (f64, f64, f64) {
        if lower {
            (self.omega1, self.alpha1, self.beta1)
        } else {
            (self.omega2, self.alpha2, self.beta2)
        }
    }

    pub fn validate(&self, kind: ModelKind) -> Result<()> {
        let a = self.to_array();
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidCoefficients("non-finite coefficient".into()));
        }
        for (i, &(w, al, b)) in [(a[0], a[1], a[2]), (a[3], a[4], a[5])].iter().enumerate() {
            let k = i + 1;
            if w <= 0.0 {
                return Err(Error::InvalidCoefficients(format!(
                    "omega{k} must be > 0, got {w}"
                )));
            }
            if al < 0.0 {
                return Err(Error::InvalidCoefficients(format!(
                    "alpha{k} must be >= 0, got {al}"
                )));
            }
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidCoefficients(format!(
                    "beta{k} must lie in [0, 1), got {b}"
                )));
            }
        }
        // PAR has one triple and needs it stationary; two-regime models constrain the upper one.
        let (al, b, k) = match kind {
            ModelKind::Par => (a[1], a[2], 1),
            _ => (a[4], a[5], 2),
        };
        if al + b >= 1.0 {
            return Err(Error::InvalidCoefficients(format!(
                "alpha{k} + beta{k} must be < 1, got {}",
                al + b
            )));
        }
        Ok(())
    }

    /// Stationary mean of the triple that anchors simulations.
    pub fn anchor_mean(&self, kind: ModelKind) -> f64 {
        match kind {
            ModelKind::Par => self.omega1 / (1.0 - self.alpha1 - self.beta1),
            _ => self.omega2 / (1.0 - self.alpha2 - self.beta2),
        }
    }
}

/// Integer thresholds; the variant determines the model kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Thresholds {
    Par,
    Setpar { r: Count },
    Bpart { r: Count, s: Count },
    Hpart { r: Count, s: Count, c: i64 },
}

impl Thresholds {
    pub fn kind(&self) -> ModelKind {
        match self {
            Thresholds::Par => ModelKind::Par,
            Thresholds::Setpar { .. } => ModelKind::Setpar,
            Thresholds::Bpart { .. } => ModelKind::Bpart,
            Thresholds::Hpart { .. } => ModelKind::Hpart,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Thresholds::Bpart { r, s } | Thresholds::Hpart { r, s, .. } if r > s => {
                Err(Error::InvalidThresholds(format!("r = {r} exceeds s = {s}")))
            }
            _ => Ok(()),
        }
    }

    pub fn r(&self) -> Option<Count> {
        match *self {
            Thresholds::Par => None,
            Thresholds::Setpar { r }
            | Thresholds::Bpart { r, .. }
            | Thresholds::Hpart { r, .. } => Some(r),
        }
    }

    pub fn s(&self) -> Option<Count> {
        match *self {
            Thresholds::Bpart { s, .. } | Thresholds::Hpart { s, .. } => Some(s),
            _ => None,
        }
    }

    pub fn c(&self) -> Option<i64> {
        match *self {
            Thresholds::Hpart { c, .. } => Some(c),
            _ => None,
        }
    }

    /// Lexicographic key used to break likelihood ties: (r, s, |c|, c).
    pub fn tie_key(&self) -> (Count, Count, u64, i64) {
        let c = self.c().unwrap_or(0);
        (
            self.r().unwrap_or(0),
            self.s().unwrap_or(0),
            c.unsigned_abs(),
            c,
        )
    }
}

impl std::fmt::Display for Thresholds {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Thresholds::Par => write!(f, "par"),
            Thresholds::Setpar { r } => write!(f, "setpar(r={r})"),
            Thresholds::Bpart { r, s } => write!(f, "bpart(r={r}, s={s})"),
            Thresholds::Hpart { r, s, c } => write!(f, "hpart(r={r}, s={s}, c={c})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lambda0 {
    Fixed(f64),
    SampleMean,
    UnconditionalMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeInit {
    Fixed(bool),
    /// `R̃_0 = I(y_0 ≤ r)`.
    BelowR,
}

/// How `λ̃_0`, `R̃_0` and `Δy_0` are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitPolicy {
    pub lambda0: Lambda0,
    pub r0: RegimeInit,
    pub delta_y0: i64,
}

impl Default for InitPolicy {
    fn default() -> Self {
        Self {
            lambda0: Lambda0::SampleMean,
            r0: RegimeInit::BelowR,
            delta_y0: 0,
        }
    }
}

/// Concrete starting values for one filtering pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolvedInit {
    pub lambda0: f64,
    pub r0: bool,
    pub delta_y0: i64,
}

impl InitPolicy {
    pub fn resolve(&self, series: &CountSeries, spec: &ModelSpec) -> Result<ResolvedInit> {
        let lambda0 = match self.lambda0 {
            Lambda0::Fixed(v) => v,
            Lambda0::SampleMean => series.mean(),
            Lambda0::UnconditionalMean => spec.coefficients.anchor_mean(spec.kind()),
        };
        if !(lambda0 > 0.0 && lambda0.is_finite()) {
            return Err(Error::NonPositiveLambda0(lambda0));
        }
        let r0 = match self.r0 {
            RegimeInit::Fixed(b) => b,
            RegimeInit::BelowR => spec.thresholds.r().is_none_or(|r| series.presample() <= r),
        };
        Ok(ResolvedInit {
            lambda0,
            r0,
            delta_y0: series.delta_y0(self.delta_y0),
        })
    }

    /// Pins every rule to the value it takes on `series`.
    pub fn freeze(&self, series: &CountSeries, spec: &ModelSpec) -> Result<InitPolicy> {
        let resolved = self.resolve(series, spec)?;
        Ok(InitPolicy {
            lambda0: Lambda0::Fixed(resolved.lambda0),
            r0: RegimeInit::Fixed(resolved.r0),
            delta_y0: resolved.delta_y0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub thresholds: Thresholds,
    pub coefficients: CoefficientVector,
    pub init: InitPolicy,
}

impl ModelSpec {
    pub fn new(thresholds: Thresholds, coefficients: CoefficientVector) -> Result<Self> {
        let spec = Self {
            thresholds,
            coefficients,
            init: InitPolicy::default(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_init(mut self, init: InitPolicy) -> Self {
        self.init = init;
        self
    }

    pub fn kind(&self) -> ModelKind {
        self.thresholds.kind()
    }

    pub fn validate(&self) -> Result<()> {
        self.thresholds.validate()?;
        self.coefficients.validate(self.kind())?;
        if let Lambda0::Fixed(v) = self.init.lambda0 {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::NonPositiveLambda0(v));
            }
        }
        Ok(())
    }
}

/// Filtered intensities `λ̃_1..λ̃_n` with their regime flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityPath {
    pub lambdas: Vec<f64>,
    pub regimes: Vec<bool>,
}

impl IntensityPath {
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }
}

/// Lower-regime indicator of the hysteretic model.
///
/// Rising or flat moves (`Δy ≥ c`) switch up only above `s`; falling moves
/// (`Δy < c`) switch up already above `r`. Equivalently
/// `I(y ≤ r) + I(r < y ≤ s)·I(Δy ≥ c)`.
#[inline]
pub fn hysteretic_indicator(y_prev: Count, dy_prev: i64, r: Count, s: Count, c: i64) -> bool {
    if dy_prev >= c {
        y_prev <= s
    } else {
        y_prev <= r
    }
}

/// Buffered indicator: `I(y ≤ r) + I(r < y ≤ s)·R_{t-1}`.
#[inline]
pub fn buffered_indicator(y_prev: Count, previous: bool, r: Count, s: Count) -> bool {
    if y_prev <= r {
        true
    } else if y_prev > s {
        false
    } else {
        previous
    }
}

fn check_band(r: Count, s: Count) -> Result<()> {
    if r > s {
        return Err(Error::InvalidThresholds(format!("r = {r} exceeds s = {s}")));
    }
    Ok(())
}

/// `R̃_1..R̃_n` of the buffered model, seeded by `R̃_0 = r0`.
pub fn regime_path_bpart(series: &CountSeries, r: Count, s: Count, r0: bool) -> Result<Vec<bool>> {
    check_band(r, s)?;
    let mut state = r0;
    Ok(series
        .lagged()
        .map(|y| {
            state = buffered_indicator(y, state, r, s);
            state
        })
        .collect())
}

/// `I_1..I_n` of the hysteretic model; `Δy_0` is taken from the series prior or `delta_y0`.
pub fn regime_path_hpart(
    series: &CountSeries,
    r: Count,
    s: Count,
    c: i64,
    delta_y0: i64,
) -> Result<Vec<bool>> {
    check_band(r, s)?;
    let mut dy = series.delta_y0(delta_y0);
    let mut prev: Option<Count> = None;
    Ok(series
        .lagged()
        .map(|y| {
            if let Some(p) = prev {
                dy = y as i64 - p as i64;
            }
            prev = Some(y);
            hysteretic_indicator(y, dy, r, s, c)
        })
        .collect())
}

pub fn regime_path_setpar(series: &CountSeries, r: Count) -> Vec<bool> {
    series.lagged().map(|y| y <= r).collect()
}

/// Regime flags for any model kind under resolved initial values.
pub fn regime_path(
    series: &CountSeries,
    thresholds: &Thresholds,
    init: &ResolvedInit,
) -> Result<Vec<bool>> {
    match *thresholds {
        Thresholds::Par => Ok(vec![true; series.len()]),
        Thresholds::Setpar { r } => Ok(regime_path_setpar(series, r)),
        Thresholds::Bpart { r, s } => regime_path_bpart(series, r, s, init.r0),
        Thresholds::Hpart { r, s, c } => regime_path_hpart(series, r, s, c, init.delta_y0),
    }
}

/// Runs the linear recursion over precomputed regimes.
pub(crate) fn filter_regimes(
    lags: impl Iterator<Item = Count>,
    regimes: &[bool],
    coefficients: &CoefficientVector,
    lambda0: f64,
) -> Vec<f64> {
    let mut lambda = lambda0;
    lags.zip(regimes)
        .map(|(y, &lower)| {
            let (w, a, b) = coefficients.triple(lower);
            lambda = w + a * y as f64 + b * lambda;
            lambda
        })
        .collect()
}

/// Conditional intensities `λ̃_t(θ)` for `t = 1..n`.
pub fn intensity_filter(series: &CountSeries, spec: &ModelSpec) -> Result<IntensityPath> {
    spec.validate()?;
    let init = spec.init.resolve(series, spec)?;
    let regimes = regime_path(series, &spec.thresholds, &init)?;
    let lambdas = filter_regimes(series.lagged(), &regimes, &spec.coefficients, init.lambda0);
    Ok(IntensityPath { lambdas, regimes })
}
