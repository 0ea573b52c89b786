//! Outer multiplier systems and their solution strategy.
//!
//! KL balls use a reduced three-unknown system `(log λ0, log λ1, a)` with
//! `a = ν0 − ν1`: for KL the normalizations can be solved in closed form, so
//! `ĝ_j = r_j f_j / s_j` and only the two radius constraints plus the
//! consistency of `a` remain. The power families use the four unknowns
//! `(log λ0, ν0, log λ1, ν1)` with two normalizations and two radius
//! constraints. Radius residuals are relative, `D/ε − 1`.

use super::generator::{curvature_at_one, divergence_term, slope_at_one};
use super::pointwise::{Coupling, PointState};
use crate::density::{DivergenceKind, Grid, NominalPair};
use crate::error::{Error, Result};
use crate::solvers::{damped_newton, NewtonOptions, SolveReport};

/// Multipliers with `ν_j = μ_j / λ_j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Scaled {
    pub lambda0: f64,
    pub nu0: f64,
    pub lambda1: f64,
    pub nu1: f64,
}

pub(crate) struct Problem {
    pub kind: DivergenceKind,
    pub grid: Grid,
    pub lnf0: Vec<f64>,
    pub lnf1: Vec<f64>,
    pub lnl: Vec<f64>,
    pub eps0: f64,
    pub eps1: f64,
    pub u: f64,
}

pub(crate) struct Evaluation {
    pub mult: Scaled,
    pub states: Vec<PointState>,
    /// `log ĝ_j` on the grid.
    pub lg0: Vec<f64>,
    pub lg1: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Pointwise coupling residuals `H(w)`.
    pub coupling: Vec<f64>,
}

impl Problem {
    pub fn new(kind: DivergenceKind, nominals: &NominalPair, eps0: f64, eps1: f64, u: f64) -> Self {
        Problem {
            kind,
            grid: *nominals.grid(),
            lnf0: nominals.f0.log_values(),
            lnf1: nominals.f1.log_values(),
            lnl: nominals.log_ratio(),
            eps0,
            eps1,
            u,
        }
    }

    fn with_radii(&self, eps0: f64, eps1: f64) -> Problem {
        Problem {
            kind: self.kind,
            grid: self.grid,
            lnf0: self.lnf0.clone(),
            lnf1: self.lnf1.clone(),
            lnl: self.lnl.clone(),
            eps0,
            eps1,
            u: self.u,
        }
    }

    fn is_kl(&self) -> bool {
        self.kind == DivergenceKind::Kl
    }

    pub fn to_unknowns(&self, m: &Scaled) -> Vec<f64> {
        if self.is_kl() {
            vec![m.lambda0.ln(), m.lambda1.ln(), m.nu0 - m.nu1]
        } else {
            vec![m.lambda0.ln(), m.nu0, m.lambda1.ln(), m.nu1]
        }
    }

    pub fn from_unknowns(&self, p: &[f64]) -> Scaled {
        if self.is_kl() {
            Scaled {
                lambda0: p[0].exp(),
                nu0: p[2],
                lambda1: p[1].exp(),
                nu1: 0.0,
            }
        } else {
            Scaled {
                lambda0: p[0].exp(),
                nu0: p[1],
                lambda1: p[2].exp(),
                nu1: p[3],
            }
        }
    }

    fn coupling(&self, m: &Scaled) -> Coupling {
        Coupling {
            kind: self.kind,
            u: self.u,
            lambda0: m.lambda0,
            nu0: m.nu0,
            lambda1: m.lambda1,
            nu1: m.nu1,
        }
    }

    fn divergence(&self, lnf: &[f64], s: &[f64]) -> f64 {
        let terms: Vec<f64> = lnf
            .iter()
            .zip(s)
            .map(|(&lf, &s)| divergence_term(self.kind, lf, s))
            .collect();
        self.grid.trapezoid(&terms)
    }

    pub fn evaluate(&self, p: &[f64], hints: &[PointState]) -> Result<Evaluation> {
        let m = self.from_unknowns(p);
        if !(m.lambda0 > 0.0 && m.lambda1 > 0.0 && m.lambda0.is_finite() && m.lambda1.is_finite())
        {
            return Err(Error::Numeric(format!("multipliers out of range: {m:?}")));
        }
        let cp = self.coupling(&m);
        let states = cp.solve_grid(&self.lnl, hints)?;
        let mut s0: Vec<f64> = states.iter().map(|st| st.s0).collect();
        let mut s1: Vec<f64> = states.iter().map(|st| st.s1).collect();
        let log_mass = |s: &[f64], lnf: &[f64]| {
            let logs: Vec<f64> = s.iter().zip(lnf).map(|(a, b)| a + b).collect();
            self.grid.log_trapezoid_exp(&logs)
        };
        let l0 = log_mass(&s0, &self.lnf0);
        let l1 = log_mass(&s1, &self.lnf1);
        if !(l0.is_finite() && l1.is_finite()) {
            return Err(Error::Numeric("LFD mass is not finite".into()));
        }

        let (residuals, mult) = if self.is_kl() {
            // Normalize in closed form; the true ν_j absorb the shifts.
            s0.iter_mut().for_each(|s| *s -= l0);
            s1.iter_mut().for_each(|s| *s -= l1);
            let d0 = self.divergence(&self.lnf0, &s0);
            let d1 = self.divergence(&self.lnf1, &s1);
            let mult = Scaled {
                nu0: m.nu0 + l0,
                nu1: m.nu1 + l1,
                ..m
            };
            (vec![d0 / self.eps0 - 1.0, d1 / self.eps1 - 1.0, l1 - l0], mult)
        } else {
            let d0 = self.divergence(&self.lnf0, &s0);
            let d1 = self.divergence(&self.lnf1, &s1);
            (
                vec![
                    l0.exp_m1(),
                    l1.exp_m1(),
                    d0 / self.eps0 - 1.0,
                    d1 / self.eps1 - 1.0,
                ],
                m,
            )
        };
        if residuals.iter().any(|r| !r.is_finite()) {
            return Err(Error::Numeric("non-finite KKT residual".into()));
        }
        let lg0: Vec<f64> = s0.iter().zip(&self.lnf0).map(|(a, b)| a + b).collect();
        let lg1: Vec<f64> = s1.iter().zip(&self.lnf1).map(|(a, b)| a + b).collect();
        let coupling = (0..states.len())
            .map(|i| states[i].w - s1[i] + s0[i] - self.lnl[i])
            .collect();
        Ok(Evaluation {
            mult,
            states,
            lg0,
            lg1,
            residuals,
            coupling,
        })
    }

    /// Second-order expansion about the nominals: for small radii
    /// `x_j ≈ 1 + (∂_j − E∂_j)/(λ_j φ''(1))`, where `∂_0 = (1-u) l^u` and
    /// `∂_1 = u l^(u-1)`, so the radius constraint fixes `λ_j` through the
    /// spread of `∂_j` under the nominal. The variance of `l^u` diverges for
    /// some pairs, so the spread is taken from the mean absolute deviation
    /// (scaled to match the standard deviation of a Gaussian).
    pub fn expansion_start(&self) -> Scaled {
        let (m0, spread0) = self.moments(&self.lnf0, 1.0 - self.u, self.u);
        let (m1, spread1) = self.moments(&self.lnf1, self.u, self.u - 1.0);
        let c = curvature_at_one(self.kind);
        self.start_from(
            [m0, m1],
            [
                spread0 / (2.0 * c * self.eps0).sqrt(),
                spread1 / (2.0 * c * self.eps1).sqrt(),
            ],
        )
    }

    /// `(E ∂, spread of ∂)` under the nominal `exp(lnf)` for
    /// `∂ = scale · l^expo`.
    fn moments(&self, lnf: &[f64], scale: f64, expo: f64) -> (f64, f64) {
        let logs: Vec<f64> = (0..lnf.len()).map(|i| lnf[i] + expo * self.lnl[i]).collect();
        let mean = scale * self.grid.log_trapezoid_exp(&logs).exp();
        let dev: Vec<f64> = (0..lnf.len())
            .map(|i| lnf[i].exp() * (scale * (expo * self.lnl[i]).exp() - mean).abs())
            .collect();
        let mad = self.grid.trapezoid(&dev);
        (mean, (MAD_TO_SD * mad).max(1e-300))
    }

    fn start_from(&self, mean: [f64; 2], lambda: [f64; 2]) -> Scaled {
        let f1 = slope_at_one(self.kind);
        Scaled {
            lambda0: lambda[0],
            nu0: mean[0] / lambda[0] - f1,
            lambda1: lambda[1],
            nu1: mean[1] / lambda[1] - f1,
        }
    }

    /// The expansion start with each `λ_j` rescaled until `D_j / ε_j` is of
    /// order one, using `D_j ∝ λ_j^-2` near the nominals.
    pub fn calibrated_start(&self) -> Scaled {
        let (m0, _) = self.moments(&self.lnf0, 1.0 - self.u, self.u);
        let (m1, _) = self.moments(&self.lnf1, self.u, self.u - 1.0);
        let mut start = self.expansion_start();
        let n = self.lnl.len();
        for _ in 0..CALIBRATION_ROUNDS {
            let Ok(ev) = self.evaluate(&self.to_unknowns(&start), &unset_hints(n)) else {
                break;
            };
            let k = ev.residuals.len();
            let ratios = [1.0 + ev.residuals[k - 2], 1.0 + ev.residuals[k - 1]]
                .map(|r| if self.is_kl() { r } else { r.max(0.0) });
            let mut lambda = [start.lambda0, start.lambda1];
            let mut settled = true;
            for j in 0..2 {
                if !(0.25..=4.0).contains(&ratios[j]) {
                    settled = false;
                    lambda[j] *= ratios[j].sqrt().clamp(0.01, 100.0);
                }
            }
            if settled {
                break;
            }
            start = self.start_from([m0, m1], lambda);
        }
        start
    }
}

const STALL_WINDOW: usize = 12;
const MAX_CONTINUATION_STEPS: usize = 40;
const MAD_TO_SD: f64 = 1.253_314_137_315_500_3;
const CALIBRATION_ROUNDS: usize = 40;

pub(crate) fn newton_options() -> NewtonOptions {
    NewtonOptions {
        max_iters: 100,
        ..NewtonOptions::default()
    }
}

/// Effort spent on a starting point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Patience {
    /// Up to the full iteration budget.
    Full,
    /// Abandon the start once the residual stops halving within a window.
    Brief,
}

/// Runs damped Newton from `start`, threading pointwise warm starts.
pub(crate) fn newton_from(
    problem: &Problem,
    start: &Scaled,
    hints: Vec<PointState>,
    patience: Patience,
) -> Result<(Evaluation, SolveReport)> {
    let mut hints = hints;
    let p0 = problem.to_unknowns(start);
    let report = damped_newton(
        |p| {
            let ev = problem.evaluate(p, &hints)?;
            hints = ev.states.clone();
            Ok(ev.residuals)
        },
        &p0,
        &NewtonOptions {
            stall_window: match patience {
                Patience::Full => 0,
                Patience::Brief => STALL_WINDOW,
            },
            ..newton_options()
        },
    )?;
    if !report.converged {
        return Err(Error::Solver {
            context: format!("{} LFD multipliers at u = {}", problem.kind.name(), problem.u),
            iterations: report.iterations,
            residual: report.residual_norm,
        });
    }
    let ev = problem.evaluate(&report.root, &hints)?;
    Ok((ev, report))
}

fn unset_hints(n: usize) -> Vec<PointState> {
    vec![PointState::UNSET; n]
}

/// Solves the problem from `start` (or the small-radius expansion), falling
/// back to continuation in the radii from a nearly degenerate ball.
pub(crate) fn solve(
    problem: &Problem,
    start: Option<&Scaled>,
    hints: Option<Vec<PointState>>,
) -> Result<(Evaluation, SolveReport)> {
    let n = problem.lnl.len();
    let hints = hints.unwrap_or_else(|| unset_hints(n));
    let start = start.copied().unwrap_or_else(|| problem.calibrated_start());
    let first = newton_from(problem, &start, hints, Patience::Full);
    match first {
        Ok(done) => Ok(done),
        Err(e) => {
            log::debug!(
                "direct {} solve at u = {} failed ({e}); continuing in the radii",
                problem.kind.name(),
                problem.u
            );
            radius_continuation(problem)
        }
    }
}

fn radius_continuation(problem: &Problem) -> Result<(Evaluation, SolveReport)> {
    const START_FRACTION: f64 = 1e-4;
    const MIN_FACTOR: f64 = 1.005;
    let n = problem.lnl.len();
    let mut frac = START_FRACTION;
    let first = problem.with_radii(problem.eps0 * frac, problem.eps1 * frac);
    let (mut ev, mut report) = newton_from(&first, &first.calibrated_start(), unset_hints(n), Patience::Full)?;
    let mut factor: f64 = 10f64.sqrt();
    let mut steps = 0;
    while frac < 1.0 {
        steps += 1;
        let next = (frac * factor).min(1.0);
        let sub = problem.with_radii(problem.eps0 * next, problem.eps1 * next);
        // λ scales like ε^{-1/2} near the nominals.
        let shrink = (frac / next).sqrt();
        let guess = Scaled {
            lambda0: ev.mult.lambda0 * shrink,
            lambda1: ev.mult.lambda1 * shrink,
            ..ev.mult
        };
        match newton_from(&sub, &guess, ev.states.clone(), Patience::Brief) {
            Ok((e, r)) => {
                ev = e;
                report.iterations += r.iterations;
                report.root = r.root;
                report.residuals = r.residuals;
                report.residual_norm = r.residual_norm;
                frac = next;
                factor = (factor * factor).min(10f64.sqrt());
            }
            Err(err) => {
                factor = factor.sqrt();
                if factor < MIN_FACTOR || steps >= MAX_CONTINUATION_STEPS {
                    return Err(match err {
                        Error::Solver { iterations, residual, .. } => Error::Solver {
                            context: format!(
                                "radius continuation stalled at {:.3e} of the target ({} LFD, u = {})",
                                frac,
                                problem.kind.name(),
                                problem.u
                            ),
                            iterations,
                            residual,
                        },
                        other => other,
                    });
                }
            }
        }
    }
    Ok((ev, report))
}
