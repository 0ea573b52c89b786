//! Least favorable pairs for the Neyman-Pearson tests under KL balls, and
//! the tilted-family pair of Dabak's test used as the non-robust baseline.
//!
//! Type-I minimizes `KL(G0, G1)` over the balls. Writing `x0 = ĝ0/f0`, the
//! two stationarity conditions
//! `ĝ1 = e^(1+λ0+μ0) ĝ0^(1+λ0) f0^(-λ0)` and
//! `ĝ0 = ĝ1 (μ1 + λ1 (1 + log(ĝ1/f1)))`
//! collapse to `p e^(λ0 p / B) = e^(λ0 A / B − c)` for `p = A + B log x0`,
//! so `log x0` is explicit through the principal Lambert W branch.

use serde::Serialize;

use crate::density::{kl_divergence, DivergenceKind, Grid, GridDensity, NominalPair};
use crate::error::{Error, Result};
use crate::lfd_bayes::generator::divergence_term;
use crate::lfd_bayes::{Multipliers, RobustLrf};
use crate::solvers::{damped_newton, lambert_w0_exp, scalar_root, NewtonOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum NpVariant {
    TypeI,
    TypeII,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NpResiduals {
    pub norm0: f64,
    pub norm1: f64,
    pub ball0: f64,
    pub ball1: f64,
    /// Largest relative violation of the `ĝ1` stationarity condition.
    pub stationarity0: f64,
    /// Largest relative violation of the `ĝ0` stationarity condition.
    pub stationarity1: f64,
}

#[derive(Debug, Clone)]
pub struct NpSolution {
    pub variant: NpVariant,
    pub g0_hat: GridDensity,
    pub g1_hat: GridDensity,
    /// Multipliers of the Type-I problem that was solved; for Type-II this
    /// is the problem with the hypotheses interchanged.
    pub lambda0: f64,
    pub mu0: f64,
    pub lambda1: f64,
    pub mu1: f64,
    /// `KL(ĝ0, ĝ1)` for Type-I, `KL(ĝ1, ĝ0)` for Type-II.
    pub exponent: f64,
    pub residuals: NpResiduals,
    pub iterations: usize,
}

impl NpSolution {
    pub fn multipliers(&self) -> Multipliers {
        Multipliers {
            lambda0: self.lambda0,
            mu0: self.mu0,
            lambda1: self.lambda1,
            mu1: self.mu1,
        }
    }

    pub fn lrf(&self) -> Result<RobustLrf> {
        RobustLrf::from_pair(&self.g0_hat, &self.g1_hat)
    }

    pub fn constraint_error(&self) -> f64 {
        let r = &self.residuals;
        r.norm0.abs().max(r.norm1.abs()).max(r.ball0.abs()).max(r.ball1.abs())
    }
}

struct TypeOne {
    grid: Grid,
    lnf0: Vec<f64>,
    lnf1: Vec<f64>,
    lnl: Vec<f64>,
    eps0: f64,
    eps1: f64,
}

struct NpEval {
    lg0: Vec<f64>,
    lg1: Vec<f64>,
    residuals: Vec<f64>,
}

impl TypeOne {
    fn new(nominals: &NominalPair, eps0: f64, eps1: f64) -> Self {
        TypeOne {
            grid: *nominals.grid(),
            lnf0: nominals.f0.log_values(),
            lnf1: nominals.f1.log_values(),
            lnl: nominals.log_ratio(),
            eps0,
            eps1,
        }
    }

    fn with_radii(&self, eps0: f64, eps1: f64) -> TypeOne {
        TypeOne {
            grid: self.grid,
            lnf0: self.lnf0.clone(),
            lnf1: self.lnf1.clone(),
            lnl: self.lnl.clone(),
            eps0,
            eps1,
        }
    }

    /// `log ĝ0` and `log ĝ1` on the grid.
    fn densities(&self, m: &Multipliers) -> Result<(Vec<f64>, Vec<f64>)> {
        let Multipliers { lambda0: l0, mu0, lambda1: l1, mu1 } = *m;
        let c = 1.0 + l0 + mu0;
        let base = (l0 / ((1.0 + l0) * l1)).ln() + (-l1 - l1 * mu0 + l0 * mu1) / ((1.0 + l0) * l1);
        let k = l0 / (1.0 + l0);
        let shift = (l1 * (1.0 + 1.0 / l0)).ln();
        let mut lg0 = Vec::with_capacity(self.lnl.len());
        let mut lg1 = Vec::with_capacity(self.lnl.len());
        for (&lnl, &lnf0) in self.lnl.iter().zip(&self.lnf0) {
            let log_arg = base - k * lnl;
            let w = lambert_w0_exp(log_arg).map_err(|e| Error::Infeasible {
                y: None,
                message: format!("Lambert W argument out of range: {e}"),
            })?;
            // log W = log arg − W holds on the whole principal branch.
            let log_w = log_arg - w;
            let ln_x0 = -(c + shift + log_w) / l0;
            lg0.push(ln_x0 + lnf0);
            lg1.push(c + (1.0 + l0) * ln_x0 + lnf0);
        }
        Ok((lg0, lg1))
    }

    fn evaluate(&self, p: &[f64]) -> Result<NpEval> {
        let m = Self::multipliers(p);
        if !(m.lambda0.is_finite() && m.lambda1.is_finite() && m.lambda0 > 0.0 && m.lambda1 > 0.0)
        {
            return Err(Error::Numeric(format!("multipliers out of range: {m:?}")));
        }
        let (lg0, lg1) = self.densities(&m)?;
        let mass0 = self.grid.log_trapezoid_exp(&lg0);
        let mass1 = self.grid.log_trapezoid_exp(&lg1);
        let kl = |lg: &[f64], lnf: &[f64]| {
            let terms: Vec<f64> = lg
                .iter()
                .zip(lnf)
                .map(|(g, f)| divergence_term(DivergenceKind::Kl, *f, g - f))
                .collect();
            self.grid.trapezoid(&terms)
        };
        let residuals = vec![
            mass0.exp_m1(),
            mass1.exp_m1(),
            kl(&lg0, &self.lnf0) / self.eps0 - 1.0,
            kl(&lg1, &self.lnf1) / self.eps1 - 1.0,
        ];
        if residuals.iter().any(|r| !r.is_finite()) {
            return Err(Error::Numeric("non-finite NP residual".into()));
        }
        Ok(NpEval { lg0, lg1, residuals })
    }

    /// Small-radius expansion: `ĝ0/f0 ≈ 1 + (log l − E log l)/λ0` and
    /// `ĝ1/f1 ≈ 1 + (1/l − 1)/λ1`, so `λ_j` follows from the standard
    /// deviation of `log l` under `f0` and of `1/l` under `f1`. Each `λ_j` is
    /// then rescaled until `KL_j / ε_j` is of order one, using
    /// `KL_j ∝ λ_j^-2`; this also covers pairs where `1/l` has no variance.
    fn expansion_start(&self) -> Multipliers {
        let f0: Vec<f64> = self.lnf0.iter().map(|v| v.exp()).collect();
        let f1: Vec<f64> = self.lnf1.iter().map(|v| v.exp()).collect();
        let inv_l: Vec<f64> = self.lnl.iter().map(|v| (-v).exp()).collect();
        let mean_of = |f: &[f64], v: &[f64]| {
            let t: Vec<f64> = f.iter().zip(v).map(|(a, b)| a * b).collect();
            self.grid.trapezoid(&t)
        };
        let sd = |f: &[f64], v: &[f64], mean: f64| {
            let t: Vec<f64> = f.iter().zip(v).map(|(a, b)| a * (b - mean).powi(2)).collect();
            self.grid.trapezoid(&t).sqrt().max(1e-300)
        };
        let m0 = mean_of(&f0, &self.lnl);
        let m1 = mean_of(&f1, &inv_l);
        let at = |lambda0: f64, lambda1: f64| Multipliers {
            lambda0,
            mu0: m0 - 1.0 - lambda0,
            lambda1,
            mu1: m1 - lambda1,
        };
        let mut start = at(
            sd(&f0, &self.lnl, m0) / (2.0 * self.eps0).sqrt(),
            sd(&f1, &inv_l, m1) / (2.0 * self.eps1).sqrt(),
        );
        for _ in 0..CALIBRATION_ROUNDS {
            let Ok(ev) = self.evaluate(&Self::unknowns(&start)) else {
                break;
            };
            let ratios = [1.0 + ev.residuals[2], 1.0 + ev.residuals[3]];
            if ratios.iter().all(|r| (0.5..=2.0).contains(r)) {
                break;
            }
            let scale = ratios.map(|r| {
                if (0.5..=2.0).contains(&r) {
                    1.0
                } else {
                    r.max(0.0).sqrt().clamp(0.01, 100.0)
                }
            });
            start = at(start.lambda0 * scale[0], start.lambda1 * scale[1]);
        }
        start
    }

    /// Unknowns `(log λ0, μ0 + λ0, log λ1, μ1 + λ1)`. Near the nominals
    /// `μ_j ≈ −λ_j`, and only the sums stay of order one.
    fn unknowns(m: &Multipliers) -> Vec<f64> {
        vec![m.lambda0.ln(), m.mu0 + m.lambda0, m.lambda1.ln(), m.mu1 + m.lambda1]
    }

    fn multipliers(p: &[f64]) -> Multipliers {
        let (lambda0, lambda1) = (p[0].exp(), p[2].exp());
        Multipliers {
            lambda0,
            mu0: p[1] - lambda0,
            lambda1,
            mu1: p[3] - lambda1,
        }
    }

    fn newton(&self, start: &Multipliers) -> Result<(Vec<f64>, usize)> {
        let opts = NewtonOptions {
            max_iters: 100,
            ..NewtonOptions::default()
        };
        let report = damped_newton(|p| Ok(self.evaluate(p)?.residuals), &Self::unknowns(start), &opts)?;
        if !report.converged {
            return Err(Error::Solver {
                context: "NP multipliers".into(),
                iterations: report.iterations,
                residual: report.residual_norm,
            });
        }
        Ok((report.root, report.iterations))
    }

    /// Direct solve, then continuation in the radii from a tiny ball.
    fn solve(&self, init: Option<Multipliers>) -> Result<(Vec<f64>, usize)> {
        let start = init.unwrap_or_else(|| self.expansion_start());
        match self.newton(&start) {
            Ok(done) => Ok(done),
            Err(e) => {
                log::debug!("direct NP solve failed ({e}); continuing in the radii");
                self.continuation()
            }
        }
    }

    fn continuation(&self) -> Result<(Vec<f64>, usize)> {
        let mut frac = 1e-4;
        let first = self.with_radii(self.eps0 * frac, self.eps1 * frac);
        let (mut root, mut iterations) = first.newton(&first.expansion_start())?;
        let mut factor: f64 = 10f64.sqrt();
        while frac < 1.0 {
            let next = (frac * factor).min(1.0);
            let sub = self.with_radii(self.eps0 * next, self.eps1 * next);
            // λ ∝ ε^{-1/2}; μ0 + λ0 and μ1 + λ1 stay put to first order.
            let shrink = (frac / next).sqrt();
            let mut p = root.clone();
            p[0] += shrink.ln();
            p[2] += shrink.ln();
            let guess = Self::multipliers(&p);
            match sub.newton(&guess) {
                Ok((r, it)) => {
                    root = r;
                    iterations += it;
                    frac = next;
                    factor = (factor * factor).min(10f64.sqrt());
                }
                Err(err) => {
                    factor = factor.sqrt();
                    if factor < 1.005 {
                        return Err(err);
                    }
                }
            }
        }
        Ok((root, iterations))
    }
}

const CALIBRATION_ROUNDS: usize = 40;

fn check_radii(eps0: f64, eps1: f64) -> Result<()> {
    for eps in [eps0, eps1] {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::Parameter(format!("ball radius must be > 0, got {eps}")));
        }
    }
    Ok(())
}

/// Largest violations of the two stationarity conditions, both written for
/// `log ĝ1` and measured relative to `max(1, |log ĝ1|)`. The second condition
/// is solved for `log(ĝ1/f1)` first: in its printed form the bracket
/// cancels to `ĝ0/ĝ1` and loses all digits where that ratio is small.
fn stationarity(m: &Multipliers, lg0: &[f64], lg1: &[f64], lnf0: &[f64], lnf1: &[f64]) -> (f64, f64) {
    let c = 1.0 + m.lambda0 + m.mu0;
    let mut r0: f64 = 0.0;
    let mut r1: f64 = 0.0;
    for i in 0..lg0.len() {
        let rhs = c + (1.0 + m.lambda0) * lg0[i] - m.lambda0 * lnf0[i];
        r0 = r0.max((lg1[i] - rhs).abs() / lg1[i].abs().max(1.0));
        let rhs = lnf1[i] + ((lg0[i] - lg1[i]).exp() - m.mu1) / m.lambda1 - 1.0;
        r1 = r1.max((lg1[i] - rhs).abs() / lg1[i].abs().max(1.0));
    }
    (r0, r1)
}

fn solve_type1(
    nominals: &NominalPair,
    eps0: f64,
    eps1: f64,
    init: Option<Multipliers>,
) -> Result<NpSolution> {
    check_radii(eps0, eps1)?;
    if let Some(m) = init {
        if !(m.lambda0 > 0.0 && m.lambda1 > 0.0) {
            return Err(Error::Parameter(format!(
                "initial λ must be positive, got ({}, {})",
                m.lambda0, m.lambda1
            )));
        }
    }
    // I-projections onto a KL ball lie on the tilted family, so the balls
    // intersect exactly when the family meets the two spheres out of order.
    if let Err(e @ Error::BallTooLarge { .. }) = dabak_lfds(nominals, eps0, eps1) {
        return Err(e);
    }
    let problem = TypeOne::new(nominals, eps0, eps1);
    let (root, iterations) = problem.solve(init)?;
    let ev = problem.evaluate(&root)?;
    let m = TypeOne::multipliers(&root);
    let (stationarity0, stationarity1) =
        stationarity(&m, &ev.lg0, &ev.lg1, &problem.lnf0, &problem.lnf1);
    let grid = problem.grid;
    let g0_hat = GridDensity::from_log_values(grid, &ev.lg0)?;
    let g1_hat = GridDensity::from_log_values(grid, &ev.lg1)?;
    let residuals = NpResiduals {
        norm0: g0_hat.mass() - 1.0,
        norm1: g1_hat.mass() - 1.0,
        ball0: kl_divergence(&g0_hat, &nominals.f0)? - eps0,
        ball1: kl_divergence(&g1_hat, &nominals.f1)? - eps1,
        stationarity0,
        stationarity1,
    };
    let exponent = kl_divergence(&g0_hat, &g1_hat)?;
    Ok(NpSolution {
        variant: NpVariant::TypeI,
        g0_hat,
        g1_hat,
        lambda0: m.lambda0,
        mu0: m.mu0,
        lambda1: m.lambda1,
        mu1: m.mu1,
        exponent,
        residuals,
        iterations,
    })
}

/// Least favorable pair of the Type-I test, maximizing the miss exponent
/// subject to the false-alarm side: minimizes `KL(G0, G1)` over the balls.
pub fn solve_np_type1(
    nominals: &NominalPair,
    eps0: f64,
    eps1: f64,
    init: Option<Multipliers>,
) -> Result<NpSolution> {
    solve_type1(nominals, eps0, eps1, init)
}

/// Type-II pair: the Type-I problem with the hypotheses interchanged, with
/// the resulting densities swapped back.
pub fn solve_np_type2(
    nominals: &NominalPair,
    eps0: f64,
    eps1: f64,
    init: Option<Multipliers>,
) -> Result<NpSolution> {
    let mut sol = solve_type1(&nominals.swapped(), eps1, eps0, init)?;
    std::mem::swap(&mut sol.g0_hat, &mut sol.g1_hat);
    let r = sol.residuals;
    sol.residuals = NpResiduals {
        norm0: r.norm1,
        norm1: r.norm0,
        ball0: r.ball1,
        ball1: r.ball0,
        ..r
    };
    sol.variant = NpVariant::TypeII;
    Ok(sol)
}

/// Pair of Dabak's test: members `g_s ∝ f0^(1-s) f1^s` of the tilted family
/// on the surfaces of the two balls.
#[derive(Debug, Clone)]
pub struct DabakPair {
    pub g0_star: GridDensity,
    pub g1_star: GridDensity,
    pub s0: f64,
    pub s1: f64,
}

impl DabakPair {
    pub fn lrf(&self) -> Result<RobustLrf> {
        RobustLrf::from_pair(&self.g0_star, &self.g1_star)
    }
}

fn tilted(nominals: &NominalPair, lnf0: &[f64], lnl: &[f64], s: f64) -> Result<GridDensity> {
    let logs: Vec<f64> = lnf0.iter().zip(lnl).map(|(f, l)| f + s * l).collect();
    let norm = nominals.grid().log_trapezoid_exp(&logs);
    let v = logs.iter().map(|v| (v - norm).exp()).collect();
    GridDensity::from_values(*nominals.grid(), v)
}

pub fn dabak_lfds(nominals: &NominalPair, eps0: f64, eps1: f64) -> Result<DabakPair> {
    check_radii(eps0, eps1)?;
    let lnf0 = nominals.f0.log_values();
    let lnl = nominals.log_ratio();
    let at = |s: f64| tilted(nominals, &lnf0, &lnl, s);
    // KL(g_s, f0) grows from 0 at s = 0; KL(g_s, f1) shrinks to 0 at s = 1.
    // Endpoints of the family as evaluated, so that the bracket below is
    // consistent with the bound up to rounding.
    let max0 = kl_divergence(&at(1.0)?, &nominals.f0)?;
    let max1 = kl_divergence(&at(0.0)?, &nominals.f1)?;
    if eps0 >= max0 {
        return Err(Error::BallTooLarge { eps: eps0, max: max0 });
    }
    if eps1 >= max1 {
        return Err(Error::BallTooLarge { eps: eps1, max: max1 });
    }
    let mut failure = None;
    let mut root_of = |target: &GridDensity, eps: f64| {
        scalar_root(
            |s| match at(s).and_then(|g| kl_divergence(&g, target)) {
                Ok(d) => d - eps,
                Err(e) => {
                    failure = Some(e);
                    f64::NAN
                }
            },
            0.0,
            1.0,
        )
    };
    let s0 = root_of(&nominals.f0, eps0);
    let s1 = root_of(&nominals.f1, eps1);
    if let Some(e) = failure {
        return Err(e);
    }
    let (s0, s1) = (s0?, s1?);
    if s0 >= s1 {
        // The balls overlap along the family.
        let (lo, hi) = (kl_divergence(&at(s1)?, &nominals.f0)?, eps0);
        return Err(Error::BallTooLarge { eps: hi, max: lo });
    }
    Ok(DabakPair {
        g0_star: at(s0)?,
        g1_star: at(s1)?,
        s0,
        s1,
    })
}

/// `(E_{g0}[log lrf], E_{g1}[log lrf])`.
pub fn thresholds(lrf: &RobustLrf, g0: &GridDensity, g1: &GridDensity) -> Result<(f64, f64)> {
    if lrf.grid() != g0.grid() || lrf.grid() != g1.grid() {
        return Err(Error::Parameter("thresholds need a shared grid".into()));
    }
    let logs = lrf.log_values();
    if logs.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("likelihood ratio has zeros or infinities".into()));
    }
    Ok((g0.expectation_of(&logs), g1.expectation_of(&logs)))
}
