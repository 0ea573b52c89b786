//! Large-deviations view of the log-likelihood ratio test.
//!
//! For a test with ratio `l̂` and data density `g`, `X = log l̂(Y)` has
//! log-moment generating function `K(u) = log ∫ l̂^u g`. The false alarm and
//! miss probabilities of `S_n = (1/n) Σ X_k` against a threshold `t` decay
//! with the Legendre transforms of `K` under the two data densities.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::density::{u_affinity, write_comment, GridDensity, GridSampler};
use crate::error::{Error, Result};
use crate::lfd_bayes::{LfdSolution, RobustLrf};
use crate::solvers::{golden_section, safeguarded_newton, scalar_root};

/// Search range for the Legendre transform.
pub const U_RANGE: f64 = 50.0;
const CHERNOFF_TOL: f64 = 1e-6;
const MIN_TRIALS: usize = 1000;
const BLOCK: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Hypothesis {
    H0,
    H1,
}

fn check_grid(lrf: &RobustLrf, data: &GridDensity) -> Result<()> {
    if lrf.grid() != data.grid() {
        return Err(Error::Parameter(
            "likelihood ratio and data density live on different grids".into(),
        ));
    }
    Ok(())
}

/// `K(u)`, `K'(u)` and `K''(u)` in one pass, with max-log shifting.
pub fn cumulants(lrf: &RobustLrf, data: &GridDensity, u: f64) -> Result<(f64, f64, f64)> {
    check_grid(lrf, data)?;
    if !u.is_finite() {
        return Err(Error::Parameter(format!("u must be finite, got {u}")));
    }
    let grid = data.grid();
    let xs = lrf.log_values();
    let terms: Vec<(usize, f64)> = data
        .values()
        .iter()
        .enumerate()
        .filter(|(_, &g)| g > 0.0)
        .map(|(i, &g)| (i, g.ln() + u * xs[i]))
        .collect();
    let m = terms.iter().fold(f64::NEG_INFINITY, |m, t| m.max(t.1));
    let (mut s, mut s1) = (0.0, 0.0);
    for &(i, a) in &terms {
        let e = grid.weight(i) * (a - m).exp();
        s += e;
        s1 += e * xs[i];
    }
    let mean = s1 / s;
    let s2: f64 = terms
        .iter()
        .map(|&(i, a)| grid.weight(i) * (a - m).exp() * (xs[i] - mean).powi(2))
        .sum();
    let k = if u == 0.0 { 0.0 } else { m + s.ln() - data.mass().ln() };
    let out = (k, mean, s2 / s);
    if !(out.0.is_finite() && out.1.is_finite() && out.2.is_finite()) {
        return Err(Error::Numeric(format!("log-MGF is not finite at u = {u}")));
    }
    Ok(out)
}

/// `log ∫ lrf^u data`, with `data` taken as normalized.
pub fn log_mgf(lrf: &RobustLrf, data: &GridDensity, u: f64) -> Result<f64> {
    cumulants(lrf, data, u).map(|c| c.0)
}

/// `E_data[log lrf]`.
pub fn mean_log_ratio(lrf: &RobustLrf, data: &GridDensity) -> Result<f64> {
    cumulants(lrf, data, 0.0).map(|c| c.1)
}

/// Legendre transform `sup_u (t u − K(u))`, returned with its maximizer.
fn legendre(lrf: &RobustLrf, data: &GridDensity, t: f64) -> Result<(f64, f64)> {
    if !t.is_finite() {
        return Err(Error::Parameter(format!("threshold must be finite, got {t}")));
    }
    let slope = |u: f64| cumulants(lrf, data, u).map(|c| c.1 - t);
    // K' is increasing; expand [lo, hi] around 0 until it brackets t.
    let at0 = slope(0.0)?;
    if at0 == 0.0 {
        return Ok((0.0, 0.0));
    }
    let dir = if at0 < 0.0 { 1.0 } else { -1.0 };
    let (mut near, mut far) = (0.0, dir);
    loop {
        if slope(far)?.signum() != at0.signum() {
            break;
        }
        if far.abs() >= U_RANGE {
            return Err(Error::Range {
                t,
                lo: -U_RANGE,
                hi: U_RANGE,
            });
        }
        near = far;
        far = (2.0 * far).clamp(-U_RANGE, U_RANGE);
    }
    let (lo, hi) = if dir > 0.0 { (near, far) } else { (far, near) };
    let mut failed = None;
    let root = safeguarded_newton(
        |u| match cumulants(lrf, data, u) {
            Ok((_, k1, k2)) => (k1 - t, k2),
            Err(e) => {
                failed = Some(e);
                (f64::NAN, f64::NAN)
            }
        },
        lo,
        hi,
        0.5 * (lo + hi),
        1e-14,
    );
    let u = match (root, failed) {
        (Ok(u), None) => u,
        (root, failed) => {
            log::debug!("Newton on the log-MGF slope failed ({root:?}, {failed:?}); using golden section");
            let mut neg = |u: f64| log_mgf(lrf, data, u).map_or(f64::INFINITY, |k| k - t * u);
            golden_section(&mut neg, lo, hi, 1e-12).0
        }
    };
    let value = t * u - log_mgf(lrf, data, u)?;
    // u = 0 is always a candidate, so the supremum is at least 0.
    Ok((value.max(0.0), u))
}

/// `I(t)` under `data`. For `H0` this is `sup_u (t u − K(u))`, the rate of
/// `P(S_n > t)`; for `H1` it is Cramér's transform for `−X`,
/// `sup_u (−t u − K(−u))`, the rate of `P(S_n ≤ t)`.
pub fn rate_function(
    lrf: &RobustLrf,
    data: &GridDensity,
    t: f64,
    hypothesis: Hypothesis,
) -> Result<f64> {
    // Substituting u → −u turns the H1 transform into the H0 one.
    match hypothesis {
        Hypothesis::H0 | Hypothesis::H1 => legendre(lrf, data, t).map(|r| r.0),
    }
}

/// Tabulated rate functions of one test under one data source.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateCurve {
    pub t_grid: Vec<f64>,
    /// NaN outside `(E_data0[X], E_data1[X])`.
    pub i0: Vec<f64>,
    pub i1: Vec<f64>,
    /// Which LFDs built the likelihood ratio.
    pub test_tag: String,
    /// Which pair generated the data.
    pub data_tag: String,
}

impl RateCurve {
    pub fn write_csv<W: Write>(&self, mut out: W, header_comment: &str) -> Result<()> {
        write_comment(&mut out, header_comment)?;
        writeln!(out, "t,i0,i1,test_tag,data_tag")?;
        for i in 0..self.t_grid.len() {
            writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{},{}",
                self.t_grid[i], self.i0[i], self.i1[i], self.test_tag, self.data_tag
            )?;
        }
        Ok(())
    }
}

/// `(E_data0[X], E_data1[X])`, the interval on which both error
/// probabilities decay.
pub fn valid_interval(
    lrf: &RobustLrf,
    data0: &GridDensity,
    data1: &GridDensity,
) -> Result<(f64, f64)> {
    Ok((mean_log_ratio(lrf, data0)?, mean_log_ratio(lrf, data1)?))
}

/// `I0` under `data0` and `I1` under `data1` on `t_grid`. Thresholds outside
/// the open interval `(E_data0[X], E_data1[X])` are marked with NaN.
pub fn rate_curves(
    lrf: &RobustLrf,
    data0: &GridDensity,
    data1: &GridDensity,
    t_grid: &[f64],
    test_tag: &str,
    data_tag: &str,
) -> Result<RateCurve> {
    let (e0, e1) = valid_interval(lrf, data0, data1)?;
    let rates: Vec<(f64, f64)> = t_grid
        .par_iter()
        .map(|&t| {
            if t > e0 && t < e1 {
                Ok((
                    rate_function(lrf, data0, t, Hypothesis::H0)?,
                    rate_function(lrf, data1, t, Hypothesis::H1)?,
                ))
            } else {
                Ok((f64::NAN, f64::NAN))
            }
        })
        .collect::<Result<_>>()?;
    Ok(RateCurve {
        t_grid: t_grid.to_vec(),
        i0: rates.iter().map(|r| r.0).collect(),
        i1: rates.iter().map(|r| r.1).collect(),
        test_tag: test_tag.into(),
        data_tag: data_tag.into(),
    })
}

/// Threshold maximizing `min{I0(t), I1(t)}`. `I0` increases and `I1`
/// decreases on the valid interval, so this is the crossing point.
pub fn optimal_threshold(lrf: &RobustLrf, g0: &GridDensity, g1: &GridDensity) -> Result<f64> {
    let (e0, e1) = valid_interval(lrf, g0, g1)?;
    if !(e0 < e1) {
        return Err(Error::Domain(format!(
            "empty threshold interval ({e0}, {e1}): the test does not separate the data"
        )));
    }
    let mut failed = None;
    let t = scalar_root(
        |t| {
            let gap = rate_function(lrf, g0, t, Hypothesis::H0)
                .and_then(|a| Ok(a - rate_function(lrf, g1, t, Hypothesis::H1)?));
            gap.unwrap_or_else(|e| {
                failed = Some(e);
                f64::NAN
            })
        },
        e0,
        e1,
    );
    match failed {
        Some(e) => Err(e),
        None => t,
    }
}

/// `−min_{0<u<1} log D_u(g0, g1)`, computed on the affinity directly.
pub fn chernoff_exponent_of(g0: &GridDensity, g1: &GridDensity) -> Result<f64> {
    chernoff_point(g0, g1).map(|(_, c)| c)
}

/// `(u*, −log D_u*)` with `u*` minimizing `D_u(g0, g1)` over `(0, 1)`.
pub fn chernoff_point(g0: &GridDensity, g1: &GridDensity) -> Result<(f64, f64)> {
    let mut failed = None;
    let mut log_d = |u: f64| match u_affinity(g0, g1, u) {
        Ok(d) => d.ln(),
        Err(e) => {
            failed = Some(e);
            f64::INFINITY
        }
    };
    let (u, v) = golden_section(&mut log_d, 1e-9, 1.0 - 1e-9, 1e-10);
    match failed {
        Some(e) => Err(e),
        None => Ok((u, -v)),
    }
}

/// Chernoff exponent of an LFD pair, cross-checked against `I0(0)` of the
/// matched rate function.
pub fn chernoff_exponent(sol: &LfdSolution) -> Result<f64> {
    let c = chernoff_exponent_of(&sol.g0_hat, &sol.g1_hat)?;
    let i0 = rate_function(&sol.lrf, &sol.g0_hat, 0.0, Hypothesis::H0)?;
    if (c - i0).abs() > CHERNOFF_TOL {
        return Err(Error::Numeric(format!(
            "Chernoff exponent {c} disagrees with the matched rate I0(0) = {i0}"
        )));
    }
    Ok(c)
}

/// Monte Carlo error rates of the test `S_n > t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McEstimate {
    pub n_values: Vec<usize>,
    pub pf_hat: Vec<f64>,
    pub pm_hat: Vec<f64>,
    /// Cells without a single error event.
    pub pf_zero: Vec<bool>,
    pub pm_zero: Vec<bool>,
    pub trials: usize,
    pub seed: u64,
    pub t: f64,
}

impl McEstimate {
    pub fn write_csv<W: Write>(&self, mut out: W, header_comment: &str) -> Result<()> {
        write_comment(&mut out, header_comment)?;
        writeln!(out, "n,pf_hat,pm_hat")?;
        for i in 0..self.n_values.len() {
            writeln!(out, "{},{:.10e},{:.10e}", self.n_values[i], self.pf_hat[i], self.pm_hat[i])?;
        }
        Ok(())
    }
}

/// Stream for one block of trials; independent of how blocks are scheduled.
fn block_rng(seed: u64, n: usize, block: usize, hypothesis: Hypothesis) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(n as u64).to_le_bytes());
    key[16..24].copy_from_slice(&(block as u64).to_le_bytes());
    key[24] = hypothesis as u8;
    ChaCha8Rng::from_seed(key)
}

fn count_events(
    sampler: &GridSampler,
    logs: &[f64],
    lrf: &RobustLrf,
    n: usize,
    trials: usize,
    seed: u64,
    hypothesis: Hypothesis,
    event: impl Fn(f64) -> bool + Sync,
) -> usize {
    let blocks = trials.div_ceil(BLOCK);
    (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = block_rng(seed, n, b, hypothesis);
            let size = BLOCK.min(trials - b * BLOCK);
            (0..size)
                .filter(|_| {
                    let s: f64 = (0..n)
                        .map(|_| lrf.grid().interpolate(logs, sampler.draw(&mut rng)))
                        .sum();
                    event(s / n as f64)
                })
                .count()
        })
        .sum()
}

/// Estimates `P(S_n > t)` under `data0` and `P(S_n ≤ t)` under `data1`.
/// Deterministic in `seed`, independent of the thread count.
pub fn monte_carlo_error(
    lrf: &RobustLrf,
    data0: &GridDensity,
    data1: &GridDensity,
    n_values: &[usize],
    trials: usize,
    t: f64,
    seed: u64,
) -> Result<McEstimate> {
    check_grid(lrf, data0)?;
    check_grid(lrf, data1)?;
    if trials < MIN_TRIALS {
        return Err(Error::Parameter(format!(
            "at least {MIN_TRIALS} trials are needed, got {trials}"
        )));
    }
    if n_values.is_empty() || n_values.contains(&0) {
        return Err(Error::Parameter("sample sizes must be a non-empty list of positive integers".into()));
    }
    if t.is_nan() {
        return Err(Error::Parameter("threshold is NaN".into()));
    }
    let logs = lrf.log_values();
    let s0 = GridSampler::new(data0);
    let s1 = GridSampler::new(data1);
    let mut est = McEstimate {
        n_values: n_values.to_vec(),
        pf_hat: Vec::new(),
        pm_hat: Vec::new(),
        pf_zero: Vec::new(),
        pm_zero: Vec::new(),
        trials,
        seed,
        t,
    };
    for &n in n_values {
        let f = count_events(&s0, &logs, lrf, n, trials, seed, Hypothesis::H0, |s| s > t);
        let m = count_events(&s1, &logs, lrf, n, trials, seed, Hypothesis::H1, |s| s <= t);
        est.pf_hat.push(f as f64 / trials as f64);
        est.pm_hat.push(m as f64 / trials as f64);
        est.pf_zero.push(f == 0);
        est.pm_zero.push(m == 0);
    }
    Ok(est)
}

/// Least-squares slope of `−log p` against `n`, skipping zero estimates.
/// `None` when fewer than two cells have events.
pub fn decay_slope(n_values: &[usize], p_hat: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = n_values
        .iter()
        .zip(p_hat)
        .filter(|(_, &p)| p > 0.0)
        .map(|(&n, &p)| (n as f64, -p.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}
