//! Box-constrained Fisher scoring for the coefficient vector.
//!
//! Each iteration solves `F_ff d_f = g_f` on the free coordinates, where `F`
//! is the summed Fisher information and `g` the score, then backtracks along
//! the projected path until the Armijo condition holds. Coordinates pinned at
//! a bound with the score pushing outward are held fixed; the linear
//! stationarity constraint on one triple is handled as an equality when active.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::likelihood::PreparedPath;

/// Strict-inequality floor for every coefficient and margin below 1 for β and α + β.
pub const COEF_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Bounds {
    pub lower: [f64; 6],
    pub upper: [f64; 6],
    /// Indices `(α, β)` whose sum is capped.
    pub sum_pair: (usize, usize),
    pub sum_cap: f64,
    pub dim: usize,
}

impl Bounds {
    pub fn new(dim: usize, omega_max: f64, alpha_max: f64) -> Self {
        let hi = [omega_max, alpha_max, 1.0 - COEF_FLOOR];
        let upper = [hi[0], hi[1], hi[2], hi[0], hi[1], hi[2]];
        let sum_pair = if dim == 3 { (1, 2) } else { (4, 5) };
        Self {
            lower: [COEF_FLOOR; 6],
            upper,
            sum_pair,
            sum_cap: 1.0 - COEF_FLOOR,
            dim,
        }
    }

    /// Nearest feasible point: clip the box, then pull the capped pair back along (1, 1).
    pub fn project(&self, x: &mut [f64; 6]) {
        for i in 0..self.dim {
            x[i] = x[i].clamp(self.lower[i], self.upper[i]);
        }
        let (a, b) = self.sum_pair;
        let excess = x[a] + x[b] - self.sum_cap;
        if excess > 0.0 {
            let mut xa = x[a] - excess / 2.0;
            let mut xb = x[b] - excess / 2.0;
            if xa < self.lower[a] {
                xb -= self.lower[a] - xa;
                xa = self.lower[a];
            }
            if xb < self.lower[b] {
                xa -= self.lower[b] - xb;
                xb = self.lower[b];
            }
            x[a] = xa.max(self.lower[a]);
            x[b] = xb.max(self.lower[b]);
        }
        if self.dim == 3 {
            x[3] = x[0];
            x[4] = x[1];
            x[5] = x[2];
        }
    }

    pub fn at_bound(&self, x: &[f64; 6]) -> Vec<bool> {
        let (a, b) = self.sum_pair;
        let on_cap = x[a] + x[b] >= self.sum_cap - 1e-9;
        (0..self.dim)
            .map(|i| {
                x[i] <= self.lower[i] + 1e-9
                    || x[i] >= self.upper[i] - 1e-9
                    || (on_cap && (i == a || i == b))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct OptOutcome {
    pub theta: [f64; 6],
    pub loglik: f64,
    pub iterations: usize,
}

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 40;

/// Maximizes the log-likelihood of `path` from `start`.
pub(crate) fn maximize(
    path: &PreparedPath,
    start: [f64; 6],
    bounds: &Bounds,
    max_iter: usize,
    tol: f64,
) -> Result<OptOutcome> {
    let p = bounds.dim;
    let mut x = start;
    bounds.project(&mut x);
    let mut eval = path.evaluate(&x);
    if !eval.loglik.is_finite() {
        return Err(Error::InvalidArgument(
            "log-likelihood not finite at start".into(),
        ));
    }
    for iter in 1..=max_iter {
        let g = &eval.score;
        let (a, b) = bounds.sum_pair;
        let cap_active = x[a] + x[b] >= bounds.sum_cap - 1e-12 && g[a] + g[b] > 0.0;
        let free: Vec<usize> = (0..p)
            .filter(|&i| {
                let pinned_low = x[i] <= bounds.lower[i] + 1e-12 && g[i] < 0.0;
                let pinned_high = x[i] >= bounds.upper[i] - 1e-12 && g[i] > 0.0;
                !(pinned_low || pinned_high)
            })
            .collect();

        let direction = if free.is_empty() {
            None
        } else {
            scoring_direction(&eval.fisher, g, &free, cap_active.then_some((a, b)))
        };
        let mut step = direction.and_then(|d| line_search(path, bounds, &x, eval.loglik, g, &d));
        if step.is_none() {
            // fall back to a diagonally scaled projected gradient step
            let d: [f64; 6] = std::array::from_fn(|i| {
                if i < p && free.contains(&i) && eval.fisher[i][i] > 0.0 {
                    g[i] / eval.fisher[i][i]
                } else {
                    0.0
                }
            });
            step = line_search(path, bounds, &x, eval.loglik, g, &d);
        }
        let Some((x_new, ll_new)) = step else {
            // no ascent direction left: stationary up to rounding
            return Ok(OptOutcome {
                theta: x,
                loglik: eval.loglik,
                iterations: iter,
            });
        };
        let gain = ll_new - eval.loglik;
        x = x_new;
        eval = path.evaluate(&x);
        if gain < tol {
            return Ok(OptOutcome {
                theta: x,
                loglik: eval.loglik,
                iterations: iter,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
    })
}

/// Solves the reduced scoring system, optionally with `d_a + d_b = 0`.
fn scoring_direction(
    fisher: &[[f64; 6]; 6],
    g: &[f64; 6],
    free: &[usize],
    equality: Option<(usize, usize)>,
) -> Option<[f64; 6]> {
    let k = free.len();
    let f = DMatrix::from_fn(k, k, |i, j| {
        let (u, v) = (free[i].min(free[j]), free[i].max(free[j]));
        fisher[u][v]
    });
    let rhs = DVector::from_fn(k, |i, _| g[free[i]]);
    let max_diag = (0..k).map(|i| f[(i, i)]).fold(0.0, f64::max);
    if !(max_diag > 0.0) {
        return None;
    }
    let mut ridge = 0.0;
    let chol = loop {
        let m = &f + DMatrix::identity(k, k) * ridge;
        if let Some(c) = m.cholesky() {
            break c;
        }
        ridge = if ridge == 0.0 {
            1e-10 * max_diag
        } else {
            ridge * 100.0
        };
        if ridge > max_diag {
            return None;
        }
    };
    let mut d = chol.solve(&rhs);
    if let Some((a, b)) = equality {
        let pa = free.iter().position(|&i| i == a);
        let pb = free.iter().position(|&i| i == b);
        if let (Some(pa), Some(pb)) = (pa, pb) {
            let mut e = DVector::zeros(k);
            e[pa] = 1.0;
            e[pb] = 1.0;
            let fe = chol.solve(&e);
            let denom = e.dot(&fe);
            if denom > 0.0 {
                let lambda = e.dot(&d) / denom;
                d -= fe * lambda;
            }
        }
    }
    let mut out = [0.0; 6];
    for (i, &idx) in free.iter().enumerate() {
        out[idx] = d[i];
    }
    out.iter().all(|v| v.is_finite()).then_some(out)
}

fn line_search(
    path: &PreparedPath,
    bounds: &Bounds,
    x: &[f64; 6],
    ll: f64,
    g: &[f64; 6],
    d: &[f64; 6],
) -> Option<([f64; 6], f64)> {
    let mut t = 1.0;
    for _ in 0..MAX_HALVINGS {
        let mut trial: [f64; 6] = std::array::from_fn(|i| x[i] + t * d[i]);
        bounds.project(&mut trial);
        let delta: f64 = (0..bounds.dim).map(|i| g[i] * (trial[i] - x[i])).sum();
        if delta <= 0.0 && (0..bounds.dim).all(|i| trial[i] == x[i]) {
            return None;
        }
        let ll_new = path.loglik(&trial);
        if ll_new.is_finite() && ll_new >= ll + ARMIJO * delta.max(0.0) && ll_new >= ll {
            return Some((trial, ll_new));
        }
        t *= 0.5;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CoefficientVector, ModelSpec, Thresholds};
    use crate::simulate::simulate;

    #[test]
    fn projection_respects_constraints() {
        let b = Bounds::new(6, 50.0, 10.0);
        let mut x = [-1.0, 20.0, 1.5, 0.3, 0.9, 0.8];
        b.project(&mut x);
        assert_eq!(x[0], COEF_FLOOR);
        assert_eq!(x[1], 10.0);
        assert_eq!(x[2], 1.0 - COEF_FLOOR);
        assert!(x[4] + x[5] <= b.sum_cap + 1e-15);
        assert!(x[4] >= COEF_FLOOR && x[5] >= COEF_FLOOR);
    }

    #[test]
    fn recovers_par_mean_for_iid_counts() {
        let spec =
            ModelSpec::new(Thresholds::Par, CoefficientVector::single(4.0, 0.0, 0.0)).unwrap();
        let (series, _) = simulate(&spec, 3000, 10, 8).unwrap();
        let init = spec.init.resolve(&series, &spec).unwrap();
        let path = PreparedPath::new(&series, &Thresholds::Par, init).unwrap();
        let out = maximize(
            &path,
            [2.0, 0.2, 0.2, 2.0, 0.2, 0.2],
            &Bounds::new(3, 100.0, 10.0),
            2000,
            1e-8,
        )
        .unwrap();
        let stationary = out.theta[0] / (1.0 - out.theta[1] - out.theta[2]);
        assert!(
            (stationary - series.mean()).abs() < 0.05,
            "{out:?} mean {}",
            series.mean()
        );
        assert!(out.theta[1] < 0.05);
    }

    #[test]
    fn ascends_from_truth() {
        let spec = ModelSpec::new(
            Thresholds::Bpart { r: 4, s: 7 },
            CoefficientVector::from_array([0.6, 0.8, 0.7, 0.4, 0.2, 0.2]),
        )
        .unwrap();
        let (series, _) = simulate(&spec, 500, 500, 21).unwrap();
        let init = spec.init.resolve(&series, &spec).unwrap();
        let path = PreparedPath::new(&series, &spec.thresholds, init).unwrap();
        let truth = spec.coefficients.to_array();
        let out = maximize(&path, truth, &Bounds::new(6, 100.0, 10.0), 2000, 1e-8).unwrap();
        assert!(out.loglik >= path.loglik(&truth));
        let e = path.evaluate(&out.theta);
        // interior coordinates have a vanishing score
        let pinned = Bounds::new(6, 100.0, 10.0).at_bound(&out.theta);
        for i in 0..6 {
            if !pinned[i] {
                assert!(e.score[i].abs() < 1e-3, "score {i} = {}", e.score[i]);
            }
        }
    }
}
