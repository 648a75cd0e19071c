//! Input parsing and report writers shared by the `hpart` binary.

use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;

use hpart::model::hysteretic_indicator;
use hpart::{intensity_filter, Count, CountSeries, ModelSpec, Thresholds};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const PARSE: i32 = 3;
    pub const FIT: i32 = 4;
    pub const DEGENERATE: i32 = 5;
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("no counts found")]
    Empty,
    #[error("{0}")]
    Series(#[from] hpart::Error),
    #[error("read failed: {0}")]
    Io(#[from] io::Error),
}

/// Reads counts, one per row, from the last column of a CSV document.
///
/// A first row whose leading field is not numeric is treated as a header.
/// The first count becomes the presample value `y_0`.
pub fn ingest_csv<R: Read>(source: R) -> Result<CountSeries, IngestError> {
    let counts = read_counts(source)?;
    Ok(CountSeries::from_observations(&counts)?)
}

pub fn read_counts<R: Read>(source: R) -> Result<Vec<Count>, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let mut counts = Vec::new();
    let mut first = true;
    for record in reader.records() {
        let record = record.map_err(|e| IngestError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.iter().all(str::is_empty) {
            continue;
        }
        if first {
            first = false;
            if record.get(0).is_some_and(|f| f.parse::<f64>().is_err()) {
                continue;
            }
        }
        let field = record.iter().next_back().unwrap_or_default();
        let value: i64 = field.parse().map_err(|_| IngestError::Parse {
            line,
            message: format!("'{field}' is not an integer count"),
        })?;
        if value < 0 {
            return Err(IngestError::Parse {
                line,
                message: format!("negative count {value}"),
            });
        }
        counts.push(value as Count);
    }
    if counts.is_empty() {
        return Err(IngestError::Empty);
    }
    Ok(counts)
}

pub fn ingest_path(path: &Path) -> Result<CountSeries, IngestError> {
    ingest_csv(File::open(path)?)
}

fn sink(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

/// Pretty JSON to `path`, or stdout when absent.
pub fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> io::Result<()> {
    let mut out = sink(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(io::Error::other)?;
    writeln!(out)?;
    out.flush()
}

pub fn write_csv<T: Serialize>(rows: &[T], path: &Path) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(io::Error::other)?;
    for row in rows {
        w.serialize(row).map_err(io::Error::other)?;
    }
    w.flush()
}

/// Writes `y_0, y_1, .., y_n`, one per line under a `count` header.
pub fn write_series(series: &CountSeries, path: Option<&Path>) -> io::Result<()> {
    let mut out = sink(path)?;
    writeln!(out, "count")?;
    for y in series.with_presample() {
        writeln!(out, "{y}")?;
    }
    out.flush()
}

/// One row of the plot sidecar; `regime` is the lower-regime indicator `I_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub t: usize,
    pub y: Count,
    pub lambda: f64,
    pub regime: u8,
}

pub fn plot_rows(series: &CountSeries, spec: &ModelSpec) -> hpart::Result<Vec<PlotRow>> {
    let path = intensity_filter(series, spec)?;
    Ok(series
        .values()
        .iter()
        .zip(path.lambdas.iter().zip(&path.regimes))
        .enumerate()
        .map(|(i, (&y, (&lambda, &lower)))| PlotRow {
            t: i + 1,
            y,
            lambda,
            regime: u8::from(lower),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Band {
    Lower,
    Hysteretic,
    Upper,
}

/// Cell of the `(y_{t-2}, y_{t-1})` plane with the hysteretic indicator it implies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandRow {
    pub y_prev2: Count,
    pub y_prev1: Count,
    pub band: Band,
    pub indicator: u8,
}

/// Regime map of a hysteretic model over `0..=max_y` squared.
pub fn regime_bands(thresholds: &Thresholds, max_y: Count) -> Option<Vec<BandRow>> {
    let Thresholds::Hpart { r, s, c } = *thresholds else {
        return None;
    };
    let mut rows = Vec::with_capacity(((max_y + 1) * (max_y + 1)) as usize);
    for y2 in 0..=max_y {
        for y1 in 0..=max_y {
            let band = if y1 <= r {
                Band::Lower
            } else if y1 <= s {
                Band::Hysteretic
            } else {
                Band::Upper
            };
            let lower = hysteretic_indicator(y1, y1 as i64 - y2 as i64, r, s, c);
            rows.push(BandRow {
                y_prev2: y2,
                y_prev1: y1,
                band,
                indicator: u8::from(lower),
            });
        }
    }
    Some(rows)
}

/// Parses `"a,b,c"` into numbers.
pub fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, String> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| format!("cannot parse '{t}'")))
        .collect()
}

/// Integer grid from a list (`1,2,5`) or an inclusive range (`2..9`).
pub fn parse_grid<T>(s: &str) -> Result<Vec<T>, String>
where
    T: std::str::FromStr + Copy + PartialOrd + std::ops::Add<Output = T> + From<u8>,
{
    if let Some((lo, hi)) = s.split_once("..") {
        let lo: T = lo
            .trim()
            .parse()
            .map_err(|_| format!("bad range start in '{s}'"))?;
        let hi: T = hi
            .trim()
            .parse()
            .map_err(|_| format!("bad range end in '{s}'"))?;
        let mut out = Vec::new();
        let mut v = lo;
        while v <= hi {
            out.push(v);
            v = v + T::from(1);
        }
        return Ok(out);
    }
    parse_list(s)
}
