//! Regime "ID card" comparisons between two fitted two-regime models.
//!
//! An ID card is the per-observation upper-regime label (1 = upper). Binary
//! Markov chains of order `m` are fitted by conditional maximum likelihood
//! given the first `m` symbols.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF};

use crate::error::{Error, Result};
use crate::estimation::FitResult;
use crate::model::{intensity_filter, CountSeries, ModelKind};

pub const MAX_MARKOV_ORDER: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IdSequence(pub Vec<u8>);

impl IdSequence {
    pub fn new(ids: Vec<u8>) -> Result<Self> {
        if ids.iter().any(|&v| v > 1) {
            return Err(Error::InvalidArgument("ID cards must be 0 or 1".into()));
        }
        Ok(Self(ids))
    }

    /// IDs from lower-regime flags.
    pub fn from_regimes(regimes: &[bool]) -> Self {
        Self(regimes.iter().map(|&lower| u8::from(!lower)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Upper-regime labels along the fitted regime path.
pub fn id_card_sequence(series: &CountSeries, fit: &FitResult) -> Result<IdSequence> {
    if !matches!(fit.kind(), ModelKind::Bpart | ModelKind::Hpart) {
        return Err(Error::InvalidArgument(format!(
            "ID cards need a BPART or HPART fit, got {}",
            fit.kind()
        )));
    }
    let path = intensity_filter(series, &fit.spec)?;
    Ok(IdSequence::from_regimes(&path.regimes))
}

/// Joint counts of two ID sequences; rows index the first, columns the second.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable2x2 {
    pub n11: usize,
    pub n10: usize,
    pub n01: usize,
    pub n00: usize,
}

impl ContingencyTable2x2 {
    pub fn total(&self) -> usize {
        self.n11 + self.n10 + self.n01 + self.n00
    }

    /// `(a = 1, a = 0)` counts.
    pub fn row_margins(&self) -> (usize, usize) {
        (self.n11 + self.n10, self.n01 + self.n00)
    }

    /// `(b = 1, b = 0)` counts.
    pub fn col_margins(&self) -> (usize, usize) {
        (self.n11 + self.n01, self.n10 + self.n00)
    }

    pub fn concordant(&self) -> usize {
        self.n11 + self.n00
    }
}

pub fn contingency(a: &IdSequence, b: &IdSequence) -> Result<ContingencyTable2x2> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "ID sequences differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let mut t = ContingencyTable2x2 {
        n11: 0,
        n10: 0,
        n01: 0,
        n00: 0,
    };
    for (&x, &y) in a.0.iter().zip(&b.0) {
        match (x, y) {
            (1, 1) => t.n11 += 1,
            (1, 0) => t.n10 += 1,
            (0, 1) => t.n01 += 1,
            _ => t.n00 += 1,
        }
    }
    Ok(t)
}

/// Transition counts `[context][next]` for an order-`m` chain.
fn transition_counts(seq: &IdSequence, order: usize) -> Vec<[f64; 2]> {
    let mut counts = vec![[0.0; 2]; 1 << order];
    for w in seq.0.windows(order + 1) {
        let ctx = w[..order]
            .iter()
            .fold(0usize, |acc, &b| (acc << 1) | b as usize);
        counts[ctx][w[order] as usize] += 1.0;
    }
    counts
}

fn counts_loglik(counts: &[[f64; 2]]) -> f64 {
    counts
        .iter()
        .map(|c| {
            let total = c[0] + c[1];
            c.iter()
                .filter(|&&k| k > 0.0)
                .map(|&k| k * (k / total).ln())
                .sum::<f64>()
        })
        .sum()
}

/// Maximized conditional log-likelihood of an order-`m` chain.
pub fn markov_loglik(seq: &IdSequence, order: usize) -> f64 {
    counts_loglik(&transition_counts(seq, order))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderSelection {
    pub order: usize,
    /// BIC for orders `0..=max_order`.
    pub bic: Vec<f64>,
}

/// Order minimizing `−2ℓ + 2^m·log(n − m)`.
pub fn markov_order_bic(seq: &IdSequence, max_order: usize) -> Result<OrderSelection> {
    if max_order > MAX_MARKOV_ORDER {
        return Err(Error::InvalidArgument(format!(
            "max_order {max_order} exceeds {MAX_MARKOV_ORDER}"
        )));
    }
    let need = 4 * (1 << max_order);
    if seq.len() <= need {
        return Err(Error::InsufficientData(format!(
            "{} ID cards, need more than {need}",
            seq.len()
        )));
    }
    let n = seq.len();
    let bic: Vec<f64> = (0..=max_order)
        .map(|m| -2.0 * markov_loglik(seq, m) + (1usize << m) as f64 * ((n - m) as f64).ln())
        .collect();
    let order = (0..bic.len()).fold(0, |best, m| if bic[m] < bic[best] { m } else { best });
    Ok(OrderSelection { order, bic })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrTest {
    pub stat: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Likelihood-ratio test that two ID sequences share one order-`m` transition law.
pub fn lr_same_chain(a: &IdSequence, b: &IdSequence, order: usize) -> Result<LrTest> {
    if order > MAX_MARKOV_ORDER {
        return Err(Error::InvalidArgument(format!(
            "order {order} exceeds {MAX_MARKOV_ORDER}"
        )));
    }
    if a.len() <= order || b.len() <= order {
        return Err(Error::InsufficientData(format!(
            "sequences must be longer than the order {order}"
        )));
    }
    let ca = transition_counts(a, order);
    let cb = transition_counts(b, order);
    let pooled: Vec<[f64; 2]> = ca
        .iter()
        .zip(&cb)
        .map(|(x, y)| [x[0] + y[0], x[1] + y[1]])
        .collect();
    let stat = (2.0 * (counts_loglik(&ca) + counts_loglik(&cb) - counts_loglik(&pooled))).max(0.0);
    let df = 1usize << order;
    let p_value = if stat == 0.0 {
        1.0
    } else {
        let chi = ChiSquared::new(df as f64).expect("positive degrees of freedom");
        (1.0 - chi.cdf(stat)).clamp(0.0, 1.0)
    };
    Ok(LrTest { stat, df, p_value })
}

/// `Σ_{i ∈ range} C(m, i)`, exact for `m ≤ 120`.
fn binomial_sum(m: u32, range: std::ops::RangeInclusive<u32>) -> u128 {
    let mut c: u128 = 1;
    let mut sum = 0;
    for i in 0..=m {
        if range.contains(&i) {
            sum += c;
        }
        c = c * (m - i) as u128 / (i + 1) as u128;
    }
    sum
}

/// Two-sided exact binomial test of `n10` successes in `n10 + n01` fair trials.
///
/// The smaller tail is doubled and capped at 1.
pub fn exact_binomial_discordant(table: &ContingencyTable2x2) -> Result<f64> {
    let m = table.n10 + table.n01;
    if m == 0 {
        return Err(Error::InsufficientData("no discordant pairs".into()));
    }
    let k = table.n10.min(table.n01) as u32;
    let tail = if m <= 120 {
        let m = m as u32;
        binomial_sum(m, 0..=k) as f64 * 0.5f64.powi(m as i32)
    } else {
        Binomial::new(0.5, m as u64)
            .expect("valid binomial")
            .cdf(k as u64)
    };
    Ok((2.0 * tail).min(1.0))
}
