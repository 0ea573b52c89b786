//! Numerical check of the saddle inequalities
//! `D_û(G0, G1) ≤ D_û(ĝ0, ĝ1) ≤ D_u(ĝ0, ĝ1)`.
//!
//! The right side is checked on a grid of `u`. The left side is checked on
//! random feasible pairs: each `ĝ_j` is tilted by `exp(t b(y))` with a random
//! bounded `b`, `t` is halved until the tilt lands in the ball, and the
//! result is mixed with the nominal. Balls are convex, so the mixture stays
//! feasible.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::LfdSolution;
use crate::density::{u_affinity, DivergenceKind, GridDensity, NominalPair};
use crate::error::{Error, Result};

const LEFT_TOL: f64 = 1e-6;
const RIGHT_TOL: f64 = 1e-8;
const U_GRID: usize = 49;
const MODES: usize = 4;
const MAX_HALVINGS: i32 = 40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SaddleViolation {
    pub seed: u64,
    /// `D_û(G0, G1)` of the offending pair.
    pub d_u: f64,
    /// `D_û(ĝ0, ĝ1)`
    pub bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SaddleReport {
    pub u_hat: f64,
    pub d_hat: f64,
    /// `(u, D_u(ĝ0, ĝ1))` with the LFDs held fixed.
    pub curve: Vec<(f64, f64)>,
    /// Grid values of `u` whose affinity falls below `D_û − 1e-8`.
    pub right_violations: Vec<f64>,
    /// `D_û(f0, f1)`
    pub d_nominal: f64,
    pub trials: usize,
    /// Trials whose tilt never entered a ball.
    pub rejected: usize,
    pub violations: Vec<SaddleViolation>,
    /// Largest `D_û(G0, G1) − D_û(ĝ0, ĝ1)` over the accepted trials.
    pub max_excess: f64,
}

impl SaddleReport {
    pub fn is_saddle(&self) -> bool {
        self.violations.is_empty()
            && self.right_violations.is_empty()
            && self.d_nominal <= self.d_hat + LEFT_TOL
    }

    pub fn into_result(self) -> Result<SaddleReport> {
        if self.is_saddle() {
            Ok(self)
        } else {
            Err(Error::SaddleViolation {
                seeds: self.violations.iter().map(|v| v.seed).collect(),
            })
        }
    }
}

/// Random bounded function `b(y) = Σ_k (a_k sin(ω_k y) + c_k cos(ω_k y)) / K`.
fn random_direction(rng: &mut ChaCha8Rng, ys: &[f64]) -> Vec<f64> {
    let modes: Vec<(f64, f64, f64)> = (0..MODES)
        .map(|_| {
            (
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(0.05..2.0),
            )
        })
        .collect();
    ys.iter()
        .map(|&y| {
            modes
                .iter()
                .map(|&(a, c, w)| a * (w * y).sin() + c * (w * y).cos())
                .sum::<f64>()
                / MODES as f64
        })
        .collect()
}

fn tilt(g: &GridDensity, b: &[f64], t: f64) -> Result<GridDensity> {
    let v = g.values().iter().zip(b).map(|(g, b)| g * (t * b).exp()).collect();
    GridDensity::new(*g.grid(), v)
}

/// One random element of the ball around `f` near its boundary point `g`.
fn perturb_one(
    kind: DivergenceKind,
    g: &GridDensity,
    f: &GridDensity,
    eps: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Option<GridDensity>> {
    let b = random_direction(rng, &g.grid().points());
    let scale = rng.random_range(0.1..3.0);
    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let theta: f64 = rng.random();
    for dir in [sign, -sign] {
        let mut t = dir * scale;
        for _ in 0..MAX_HALVINGS {
            let cand = tilt(g, &b, t)?;
            if kind.divergence(&cand, f)? <= eps {
                let mixed = cand
                    .values()
                    .iter()
                    .zip(f.values())
                    .map(|(c, f)| (1.0 - theta) * c + theta * f)
                    .collect();
                return GridDensity::new(*g.grid(), mixed).map(Some);
            }
            t *= 0.5;
        }
    }
    Ok(None)
}

/// A random feasible pair for the balls of `sol`, or `None` when the tilt
/// drawn from `seed` never enters one of the balls.
pub fn feasible_perturbation(
    sol: &LfdSolution,
    nominals: &NominalPair,
    seed: u64,
) -> Result<Option<(GridDensity, GridDensity)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g0 = perturb_one(sol.kind, &sol.g0_hat, &nominals.f0, sol.eps0, &mut rng)?;
    let g1 = perturb_one(sol.kind, &sol.g1_hat, &nominals.f1, sol.eps1, &mut rng)?;
    Ok(g0.zip(g1))
}

/// Checks both saddle inequalities; trial `i` draws its pair from seed
/// `seed + i`. Violations are reported, not raised; use
/// [`SaddleReport::into_result`] to turn them into an error.
pub fn verify_saddle(
    sol: &LfdSolution,
    kind: DivergenceKind,
    nominals: &NominalPair,
    eps0: f64,
    eps1: f64,
    trials: usize,
    seed: u64,
) -> Result<SaddleReport> {
    if kind != sol.kind || eps0 != sol.eps0 || eps1 != sol.eps1 {
        return Err(Error::Parameter(format!(
            "solution was computed for {:?} with radii ({}, {}), not {:?} with ({eps0}, {eps1})",
            sol.kind, sol.eps0, sol.eps1, kind
        )));
    }
    let u_hat = sol.u;
    let d_hat = u_affinity(&sol.g0_hat, &sol.g1_hat, u_hat)?;

    let mut us: Vec<f64> = (1..=U_GRID).map(|i| i as f64 / (U_GRID + 1) as f64).collect();
    us.extend([u_hat - 0.1, u_hat + 0.1].into_iter().filter(|u| *u > 0.0 && *u < 1.0));
    us.sort_by(f64::total_cmp);
    let mut curve = Vec::with_capacity(us.len());
    for &u in &us {
        curve.push((u, u_affinity(&sol.g0_hat, &sol.g1_hat, u)?));
    }
    let right_violations = curve
        .iter()
        .filter(|(_, d)| *d < d_hat - RIGHT_TOL)
        .map(|(u, _)| *u)
        .collect();

    let d_nominal = u_affinity(&nominals.f0, &nominals.f1, u_hat)?;
    let mut rejected = 0;
    let mut violations = Vec::new();
    let mut max_excess = f64::NEG_INFINITY;
    for i in 0..trials {
        let s = seed.wrapping_add(i as u64);
        match feasible_perturbation(sol, nominals, s)? {
            Some((g0, g1)) => {
                let d = u_affinity(&g0, &g1, u_hat)?;
                max_excess = max_excess.max(d - d_hat);
                if d > d_hat + LEFT_TOL {
                    violations.push(SaddleViolation {
                        seed: s,
                        d_u: d,
                        bound: d_hat,
                    });
                }
            }
            None => rejected += 1,
        }
    }
    Ok(SaddleReport {
        u_hat,
        d_hat,
        curve,
        right_violations,
        d_nominal,
        trials,
        rejected,
        violations,
        max_excess,
    })
}
