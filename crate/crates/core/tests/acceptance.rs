//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero when a gating criterion fails.
//!
//! Criterion 11 needs user-supplied data (`HPART_ESCAPE_CSV`,
//! `HPART_HEPATITIS_CSV`: one count per line, optional header) and never gates.

use std::time::Instant;

use hpart::diagnostics::{contingency, exact_binomial_discordant, lr_same_chain, IdSequence};
use hpart::estimation::{fit, GridConfig, OptimizerConfig, ThresholdGrid};
use hpart::forecast::{rolling_forecast, RefitPolicy};
use hpart::likelihood::{log_likelihood, score};
use hpart::model::{hysteretic_indicator, regime_path_hpart};
use hpart::montecarlo::{run_estimation_study, run_test_study, StudyConfig};
use hpart::septests::{test_bpart_vs_hpart, SigmaEstimates, TestConfig, TestKind};
use hpart::{
    intensity_filter, simulate, CoefficientVector, Count, CountSeries, InitPolicy, Lambda0,
    ModelKind, ModelSpec, Thresholds,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, Poisson};

const SET1: [f64; 6] = [0.5, 0.6, 0.4, 0.2, 0.4, 0.5];
const SET2: [f64; 6] = [0.6, 0.8, 0.7, 0.4, 0.2, 0.2];
/// EV row of the HPART set-2 study at n = 2000.
const HPART_SET2_EV_2000: [f64; 6] = [0.024, 0.002, 0.002, 0.031, 0.001, 0.001];
const CHI2_1_95: f64 = 3.841_458_820_694_124;
/// Multistart count used inside the Monte Carlo studies.
const MC_MULTISTART: usize = 2;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn spec(th: Thresholds, coef: [f64; 6]) -> ModelSpec {
    ModelSpec::new(th, CoefficientVector::from_array(coef)).unwrap()
}

fn study(n: usize, reps: usize, seed: u64) -> StudyConfig {
    let mut cfg = StudyConfig::new(n, reps, seed);
    cfg.optimizer.multistart = MC_MULTISTART;
    cfg
}

/// A random valid spec of any kind, kept away from the parameter bounds.
fn random_spec(rng: &mut ChaCha8Rng) -> ModelSpec {
    let mut triple = |stationary: bool| {
        let w = rng.random_range(0.2..1.5);
        let a = rng.random_range(0.05..0.6);
        let cap: f64 = if stationary { 0.9 - a } else { 0.9 };
        let b = rng.random_range(0.05..cap.max(0.06));
        [w, a, b]
    };
    let lo = triple(false);
    let hi = triple(true);
    let r = rng.random_range(1..5u64);
    let s = r + rng.random_range(1..4u64);
    let c = rng.random_range(-2..3i64);
    let (th, coef) = match rng.random_range(0..4) {
        0 => (Thresholds::Par, [hi[0], hi[1], hi[2], hi[0], hi[1], hi[2]]),
        1 => (
            Thresholds::Setpar { r },
            [lo[0], lo[1], lo[2], hi[0], hi[1], hi[2]],
        ),
        2 => (
            Thresholds::Bpart { r, s },
            [lo[0], lo[1], lo[2], hi[0], hi[1], hi[2]],
        ),
        _ => (
            Thresholds::Hpart { r, s, c },
            [lo[0], lo[1], lo[2], hi[0], hi[1], hi[2]],
        ),
    };
    let lambda0 = rng.random_range(0.5..5.0);
    spec(th, coef).with_init(InitPolicy {
        lambda0: Lambda0::Fixed(lambda0),
        ..InitPolicy::default()
    })
}

fn criterion_1() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for case in 0..50 {
        let sp = random_spec(&mut rng);
        let (series, _) = simulate(&sp, 200, 100, 1000 + case).unwrap();
        let analytic = score(&series, &sp).unwrap();
        let theta = sp.coefficients.to_array();
        let dim = sp.kind().n_coefficients();
        for j in 0..dim {
            let h = 1e-6 * theta[j].abs().max(1.0);
            let at = |delta: f64| {
                let mut t = theta;
                t[j] += delta;
                if dim == 3 {
                    t[j + 3] = t[j];
                }
                let s = ModelSpec {
                    coefficients: CoefficientVector::from_array(t),
                    ..sp
                };
                log_likelihood(&series, &s).unwrap().0
            };
            let fd = (at(h) - at(-h)) / (2.0 * h);
            let a = if dim == 3 {
                analytic[j] + analytic[j + 3]
            } else {
                analytic[j]
            };
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1.0);
            worst = worst.max(rel);
        }
    }
    verdict(
        worst < 1e-6,
        format!("max relative error {worst:.2e} over 50 specs"),
    )
}

/// Independent filter: branch labels written out, λ via the plain recursion.
fn oracle_path(series: &CountSeries, sp: &ModelSpec, lambda0: f64) -> Vec<f64> {
    let all = series.with_presample();
    let c = sp.coefficients.to_array();
    let mut lambda = lambda0;
    let mut prev_lower = match sp.thresholds {
        Thresholds::Bpart { r, .. } => all[0] <= r,
        _ => true,
    };
    let mut out = Vec::new();
    for t in 1..all.len() {
        let y1 = all[t - 1];
        let dy = if t >= 2 {
            y1 as i64 - all[t - 2] as i64
        } else {
            series.delta_y0(0)
        };
        let lower = match sp.thresholds {
            Thresholds::Par => true,
            Thresholds::Setpar { r } => y1 <= r,
            Thresholds::Bpart { r, s } => {
                if y1 <= r {
                    true
                } else if y1 > s {
                    false
                } else {
                    prev_lower
                }
            }
            Thresholds::Hpart { r, s, c } => {
                if dy >= c {
                    y1 <= s
                } else {
                    y1 <= r
                }
            }
        };
        prev_lower = lower;
        let k = if lower { 0 } else { 3 };
        lambda = c[k] + c[k + 1] * y1 as f64 + c[k + 2] * lambda;
        out.push(lambda);
    }
    out
}

fn criterion_2() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_term = 0.0f64;
    let mut worst_path = 0.0f64;
    for case in 0..100 {
        let sp = random_spec(&mut rng);
        let n = rng.random_range(20..300);
        let (series, _) = simulate(&sp, n, 50, 5000 + case).unwrap();
        let lambda0 = match sp.init.lambda0 {
            Lambda0::Fixed(v) => v,
            _ => unreachable!(),
        };
        let (ll, path) = log_likelihood(&series, &sp).unwrap();
        let lambdas = oracle_path(&series, &sp, lambda0);
        let oracle: f64 = series
            .values()
            .iter()
            .zip(&lambdas)
            .map(|(&y, &l)| Poisson::new(l).unwrap().ln_pmf(y))
            .sum();
        worst_term = worst_term.max((ll - oracle).abs() / n as f64);
        for (a, b) in path.lambdas.iter().zip(&lambdas) {
            worst_path = worst_path.max((a - b).abs());
        }
    }
    verdict(
        worst_term < 1e-10 && worst_path < 1e-12,
        format!(
            "max per-term gap {worst_term:.2e}, max intensity gap {worst_path:.2e} over 100 cases"
        ),
    )
}

fn criterion_3() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0usize;
    for _ in 0..200 {
        let y0 = rng.random_range(0..12);
        let values: Vec<Count> = (0..100).map(|_| rng.random_range(0..12)).collect();
        let series = CountSeries::new(y0, values).unwrap();
        let coef = CoefficientVector::from_array(SET1);
        let r = rng.random_range(0..10);
        let init = InitPolicy {
            lambda0: Lambda0::Fixed(1.0),
            ..InitPolicy::default()
        };
        let b = intensity_filter(
            &series,
            &ModelSpec {
                thresholds: Thresholds::Bpart { r, s: r },
                coefficients: coef,
                init,
            },
        );
        let s = intensity_filter(
            &series,
            &ModelSpec {
                thresholds: Thresholds::Setpar { r },
                coefficients: coef,
                init,
            },
        );
        if b.unwrap() != s.unwrap() {
            mismatches += 1;
        }
    }
    let mut checked = 0usize;
    for r in 0..=10u64 {
        for s in r..=10u64 {
            for c in -3..=3i64 {
                for y2 in 0..=10u64 {
                    for y1 in 0..=10u64 {
                        let dy = y1 as i64 - y2 as i64;
                        let expected = if dy >= c { y1 <= s } else { y1 <= r };
                        let series = CountSeries::new(y1, vec![0]).unwrap().with_prior(y2);
                        let via_path = regime_path_hpart(&series, r, s, c, 0).unwrap()[0];
                        if hysteretic_indicator(y1, dy, r, s, c) != expected || via_path != expected
                        {
                            mismatches += 1;
                        }
                        checked += 1;
                    }
                }
            }
        }
    }
    verdict(
        mismatches == 0,
        format!("{mismatches} mismatches; 200 BPART/SETPAR paths, {checked} HPART cells"),
    )
}

fn criterion_4() -> Verdict {
    let truth = spec(Thresholds::Bpart { r: 4, s: 7 }, SET2);
    match run_estimation_study(&truth, &study(500, 200, 4)) {
        Ok(s) => {
            let rate = s.threshold_hit_rate();
            verdict(
                rate >= 0.95,
                format!(
                    "(r,s) = (4,7) in {:.1}% of {} fits, {} failed",
                    100.0 * rate,
                    s.replicates.len(),
                    s.failures
                ),
            )
        }
        Err(e) => verdict(false, format!("study failed: {e}")),
    }
}

fn criteria_5_6() -> (Verdict, Verdict) {
    let truth = spec(Thresholds::Hpart { r: 4, s: 7, c: -1 }, SET2);
    let s = match run_estimation_study(&truth, &study(2000, 200, 5)) {
        Ok(s) => s,
        Err(e) => {
            return (
                verdict(false, format!("study failed: {e}")),
                verdict(false, "no study"),
            )
        }
    };
    let mut ok5 = s.threshold_hit_rate() >= 0.95;
    let mut detail5 = format!(
        "thresholds exact in {:.1}%;",
        100.0 * s.threshold_hit_rate()
    );
    for (j, name) in CoefficientVector::NAMES.iter().enumerate() {
        let p = s.param(name).unwrap();
        let tol = 2.0 * HPART_SET2_EV_2000[j].sqrt();
        let gap = (p.em - p.truth).abs();
        ok5 &= gap <= tol;
        detail5.push_str(&format!(
            " {name} |{:.3}-{:.1}|={gap:.3}<={tol:.3}",
            p.em, p.truth
        ));
    }
    let mut ok6 = true;
    let mut detail6 = String::new();
    for name in ["alpha1", "beta1", "alpha2", "beta2"] {
        let p = s.param(name).unwrap();
        let (ev, sg) = (p.ev.unwrap_or(f64::NAN), p.sg.unwrap_or(f64::NAN));
        let ratio = sg / ev;
        ok6 &= (0.5..=2.0).contains(&ratio);
        detail6.push_str(&format!(
            " {name} SG/EV={ratio:.2} (SG {sg:.5}, EV {ev:.5})"
        ));
    }
    (
        verdict(ok5, detail5),
        verdict(ok6, detail6.trim_start().to_string()),
    )
}

fn ks_chi2_1(stats: &[f64]) -> f64 {
    let chi = ChiSquared::new(1.0).unwrap();
    let mut xs = stats.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = chi.cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

fn criterion_7() -> Verdict {
    let gen = spec(Thresholds::Hpart { r: 3, s: 6, c: 0 }, SET1);
    match run_test_study(
        &gen,
        TestKind::HpartVsBpart,
        &study(2000, 500, 7),
        &TestConfig::default(),
    ) {
        Ok(t) => {
            let size = t.rate(0.05).unwrap();
            let ks = ks_chi2_1(&t.statistics);
            verdict(
                (0.025..=0.075).contains(&size) && ks < 0.08,
                format!(
                    "size at 0.05 = {size:.3}, KS = {ks:.3} ({} reps, {} failed)",
                    t.statistics.len(),
                    t.failures
                ),
            )
        }
        Err(e) => verdict(false, format!("study failed: {e}")),
    }
}

fn criterion_8() -> Verdict {
    let gen = spec(Thresholds::Hpart { r: 3, s: 6, c: 0 }, SET1);
    let power = |n: usize| {
        run_test_study(
            &gen,
            TestKind::BpartVsHpart,
            &study(n, 300, 8),
            &TestConfig {
                seed: 8,
                ..TestConfig::default()
            },
        )
        .map(|t| t.rate(0.05).unwrap())
    };
    match (power(500), power(2000)) {
        (Ok(p500), Ok(p2000)) => verdict(
            p2000 - p500 >= 0.25,
            format!(
                "power at 0.05: n=500 {p500:.3}, n=2000 {p2000:.3}, gain {:.3}",
                p2000 - p500
            ),
        ),
        (Err(e), _) | (_, Err(e)) => verdict(false, format!("study failed: {e}")),
    }
}

fn criterion_9() -> Verdict {
    let mut worst = 0.0f64;
    let mut cases = 0;
    for (seed, c) in [(91u64, -1i64), (92, 0), (93, 1)] {
        let truth = spec(Thresholds::Bpart { r: 4, s: 7 }, SET2);
        let (series, _) = simulate(&truth, 1000, 500, seed).unwrap();
        let grid = ThresholdGrid::from_cells(vec![Thresholds::Bpart { r: 4, s: 7 }], 0.1).unwrap();
        let f = fit(&series, &grid, &OptimizerConfig::default()).unwrap();
        let cfg = TestConfig {
            levels: vec![0.05],
            null_sims: 200_000,
            seed,
        };
        let out = match test_bpart_vs_hpart(&series, &f, &[c], &cfg) {
            Ok(o) => o,
            Err(e) => return verdict(false, format!("c = {c}: {e}")),
        };
        let SigmaEstimates::BpartVsHpart { sigma1, sigma2, .. } = &out.sigma else {
            unreachable!()
        };
        let expected = sigma2[0][0] / sigma1[0][0] * CHI2_1_95;
        let rel = (out.decisions[0].critical_value / expected - 1.0).abs();
        worst = worst.max(rel);
        cases += 1;
    }
    verdict(
        worst < 0.02,
        format!(
            "max relative gap {:.4} over {cases} single-candidate nulls (200000 draws each)",
            worst
        ),
    )
}

fn criterion_10() -> Verdict {
    let mut notes = Vec::new();
    let binom = exact_binomial_discordant(&hpart::ContingencyTable2x2 {
        n11: 0,
        n10: 6,
        n01: 0,
        n00: 0,
    })
    .unwrap();
    let ok_binom = binom == 0.03125;
    notes.push(format!("binomial(6,0) = {binom}"));
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let seq = IdSequence::new((0..180).map(|_| rng.random_range(0..2u8)).collect()).unwrap();
    let lr = lr_same_chain(&seq, &seq, 1).unwrap();
    let ok_lr = lr.stat == 0.0 && lr.p_value == 1.0;
    notes.push(format!("LR on identical = ({}, {})", lr.stat, lr.p_value));
    let mut a = vec![1u8; 72];
    a.extend([1u8; 14]);
    a.extend([0u8; 94]);
    let mut b = vec![1u8; 72];
    b.extend([0u8; 14]);
    b.extend([0u8; 94]);
    let t = contingency(&IdSequence::new(a).unwrap(), &IdSequence::new(b).unwrap()).unwrap();
    let ok_table = (t.n11, t.n10, t.n01, t.n00) == (72, 14, 0, 94);
    notes.push(format!(
        "table = ({}, {}, {}, {})",
        t.n11, t.n10, t.n01, t.n00
    ));
    verdict(ok_binom && ok_lr && ok_table, notes.join("; "))
}

/// Forecast MSE per model kind with the given holdout; `None` when the data are absent.
fn real_data_ranking(var: &str, holdout: usize) -> Option<Result<Vec<(ModelKind, f64)>, String>> {
    let path = std::env::var(var).ok()?;
    let run = || -> Result<Vec<(ModelKind, f64)>, String> {
        let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
        let counts: Vec<Count> = text
            .lines()
            .filter_map(|l| l.split(',').next_back().map(str::trim))
            .filter_map(|f| f.parse().ok())
            .collect();
        let series = CountSeries::from_observations(&counts).map_err(|e| e.to_string())?;
        let train = series
            .prefix(series.len() - holdout)
            .map_err(|e| e.to_string())?;
        let mut out = Vec::new();
        for kind in [
            ModelKind::Par,
            ModelKind::Setpar,
            ModelKind::Bpart,
            ModelKind::Hpart,
        ] {
            let grid = ThresholdGrid::default_for(&train, kind, &GridConfig::default())
                .map_err(|e| e.to_string())?;
            let rep = rolling_forecast(
                &series,
                holdout,
                &grid,
                RefitPolicy::Fixed,
                &OptimizerConfig::default(),
            )
            .map_err(|e| e.to_string())?;
            out.push((kind, rep.mse));
        }
        Ok(out)
    };
    Some(run())
}

fn criterion_11() -> Option<Verdict> {
    let escape = real_data_ranking("HPART_ESCAPE_CSV", 20);
    let hepatitis = real_data_ranking("HPART_HEPATITIS_CSV", 10);
    let (Some(escape), Some(hepatitis)) = (escape, hepatitis) else {
        return None;
    };
    let mut pass = true;
    let mut detail = Vec::new();
    for (name, res) in [("escape", escape), ("hepatitis", hepatitis)] {
        match res {
            Ok(mses) => {
                let best = mses.iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap().0;
                pass &= best == ModelKind::Hpart;
                let list: Vec<String> = mses.iter().map(|(k, m)| format!("{k} {m:.2}")).collect();
                detail.push(format!("{name}: {}", list.join(", ")));
            }
            Err(e) => {
                pass = false;
                detail.push(format!("{name}: {e}"));
            }
        }
    }
    Some(verdict(pass, detail.join("; ")))
}

fn report(id: &str, title: &str, start: Instant, v: &Verdict) {
    println!(
        "criterion {id:>2} {}: {title} [{:.1}s] {}",
        if v.pass { "PASS" } else { "FAIL" },
        start.elapsed().as_secs_f64(),
        v.detail
    );
}

fn main() {
    // `cargo test` passes harness flags; a name filter that excludes this suite skips it
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    if !filters.is_empty() && !filters.iter().any(|f| "acceptance".contains(f.as_str())) {
        return;
    }
    let mut failed = Vec::new();
    let check = |failed: &mut Vec<String>, id: &str, title: &str, f: &dyn Fn() -> Verdict| {
        let start = Instant::now();
        let v = f();
        report(id, title, start, &v);
        if !v.pass {
            failed.push(id.to_string());
        }
    };
    check(
        &mut failed,
        "1",
        "gradient vs finite differences",
        &criterion_1,
    );
    check(
        &mut failed,
        "2",
        "likelihood vs Poisson log-pmf oracle",
        &criterion_2,
    );
    check(&mut failed, "3", "regime-path equivalences", &criterion_3);
    check(
        &mut failed,
        "4",
        "BPART threshold recovery, n=500",
        &criterion_4,
    );

    let start = Instant::now();
    let (v5, v6) = criteria_5_6();
    report(
        "5",
        "HPART coefficient and threshold recovery, n=2000",
        start,
        &v5,
    );
    report("6", "SG vs EV for slope coefficients, n=2000", start, &v6);
    for (id, v) in [("5", &v5), ("6", &v6)] {
        if !v.pass {
            failed.push(id.to_string());
        }
    }

    check(
        &mut failed,
        "7",
        "HPART-vs-BPART test size and chi-square fit",
        &criterion_7,
    );
    check(
        &mut failed,
        "8",
        "BPART-vs-HPART power growth from n=500 to n=2000",
        &criterion_8,
    );
    check(
        &mut failed,
        "9",
        "single-candidate null matches scaled chi-square",
        &criterion_9,
    );
    check(&mut failed, "10", "diagnostics oracles", &criterion_10);

    let start = Instant::now();
    match criterion_11() {
        Some(v) => report("11", "real-data forecast ranking (not gating)", start, &v),
        None => println!("criterion 11 SKIP: real-data forecast ranking (set HPART_ESCAPE_CSV and HPART_HEPATITIS_CSV)"),
    }

    if failed.is_empty() {
        println!("acceptance: all gating criteria passed");
    } else {
        println!("acceptance: failed criteria {}", failed.join(", "));
        std::process::exit(1);
    }
}
