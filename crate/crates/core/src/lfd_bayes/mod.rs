//! Least favorable densities for the Bayesian minimax test.
//!
//! For a fixed exponent `u`, the LFDs maximize the u-affinity
//! `D_u(G0, G1)` over the two divergence balls. The KKT conditions give
//! `ĝ_j = x_j f_j` with `x_j` determined pointwise by the robust likelihood
//! ratio `z = ĝ1/ĝ0` (see [`pointwise`]), and the multipliers come from a
//! small outer Newton system (see [`kkt`]). [`minimize_over_u`] then picks
//! the `u` minimizing the resulting affinity curve.

pub(crate) mod generator;
mod kkt;
mod pointwise;
mod saddle;
mod special;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::density::{
    check_same_grid, u_affinity, write_comment, DivergenceKind, Grid, GridDensity, NominalPair,
};
use crate::error::{Error, Result};
use crate::solvers::{golden_section, scalar_root};
use kkt::{Evaluation, Patience, Problem, Scaled};
use pointwise::PointState;

pub use saddle::{feasible_perturbation, verify_saddle, SaddleReport, SaddleViolation};
pub use special::{alpha_half_coefficients, alpha_half_lrf, kl_stationarity_residuals};

/// KKT multipliers: `λ_j` for the radius constraint, `μ_j` for normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Multipliers {
    pub lambda0: f64,
    pub mu0: f64,
    pub lambda1: f64,
    pub mu1: f64,
}

impl Multipliers {
    fn scaled(&self) -> Result<Scaled> {
        if !(self.lambda0 > 0.0 && self.lambda1 > 0.0) {
            return Err(Error::Parameter(format!(
                "initial λ must be positive, got ({}, {})",
                self.lambda0, self.lambda1
            )));
        }
        Ok(Scaled {
            lambda0: self.lambda0,
            nu0: self.mu0 / self.lambda0,
            lambda1: self.lambda1,
            nu1: self.mu1 / self.lambda1,
        })
    }

    fn from_scaled(m: &Scaled) -> Self {
        Multipliers {
            lambda0: m.lambda0,
            mu0: m.lambda0 * m.nu0,
            lambda1: m.lambda1,
            mu1: m.lambda1 * m.nu1,
        }
    }
}

/// Constraint diagnostics of a solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// `∫ĝ0 − 1`
    pub norm0: f64,
    /// `∫ĝ1 − 1`
    pub norm1: f64,
    /// `D(ĝ0, f0) − ε0`
    pub ball0: f64,
    /// `D(ĝ1, f1) − ε1`
    pub ball1: f64,
    /// Largest `|log z − log((x1/x0) l)|` over the grid.
    pub coupling: f64,
}

/// Likelihood ratio `g1/g0` tabulated on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustLrf {
    grid: Grid,
    values: Vec<f64>,
}

impl RobustLrf {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Parameter(format!(
                "expected {} ratio values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::Numeric(format!(
                "likelihood ratio values must be finite and positive, found {v}"
            )));
        }
        Ok(RobustLrf { grid, values })
    }

    /// `g1/g0` with both densities floored.
    pub fn from_pair(g0: &GridDensity, g1: &GridDensity) -> Result<Self> {
        check_same_grid(g0, g1)?;
        let values = crate::density::log_ratio(g0, g1)
            .into_iter()
            .map(f64::exp)
            .collect();
        Self::new(*g0.grid(), values)
    }

    pub(crate) fn from_logs(grid: Grid, lg0: &[f64], lg1: &[f64]) -> Result<Self> {
        Self::new(grid, lg0.iter().zip(lg1).map(|(a, b)| (b - a).exp()).collect())
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn log_values(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.ln()).collect()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// Writes `y,nominal,robust` likelihood ratio columns.
pub fn write_lrf_csv<W: Write>(
    mut out: W,
    nominal: &RobustLrf,
    robust: &RobustLrf,
    header_comment: &str,
) -> Result<()> {
    write_comment(&mut out, header_comment)?;
    writeln!(out, "y,nominal,robust")?;
    for i in 0..nominal.grid.len() {
        writeln!(
            out,
            "{:.16e},{:.16e},{:.16e}",
            nominal.grid.point(i),
            nominal.values[i],
            robust.values[i]
        )?;
    }
    Ok(())
}

/// LFD pair at a fixed `u` with its multipliers and diagnostics.
#[derive(Debug, Clone)]
pub struct LfdSolution {
    pub kind: DivergenceKind,
    pub eps0: f64,
    pub eps1: f64,
    pub u: f64,
    pub g0_hat: GridDensity,
    pub g1_hat: GridDensity,
    pub lambda0: f64,
    pub mu0: f64,
    pub lambda1: f64,
    pub mu1: f64,
    pub lrf: RobustLrf,
    /// `D_u(ĝ0, ĝ1)`
    pub d_u: f64,
    pub residuals: Residuals,
    /// Outer Newton iterations, including any continuation steps.
    pub iterations: usize,
    states: Vec<PointState>,
}

impl LfdSolution {
    pub fn multipliers(&self) -> Multipliers {
        Multipliers {
            lambda0: self.lambda0,
            mu0: self.mu0,
            lambda1: self.lambda1,
            mu1: self.mu1,
        }
    }

    /// Worst of the normalization and radius residuals.
    pub fn constraint_error(&self) -> f64 {
        let r = &self.residuals;
        r.norm0.abs().max(r.norm1.abs()).max(r.ball0.abs()).max(r.ball1.abs())
    }
}

fn check_problem(kind: DivergenceKind, eps0: f64, eps1: f64, u: f64) -> Result<()> {
    kind.validate()?;
    for eps in [eps0, eps1] {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::Parameter(format!("ball radius must be > 0, got {eps}")));
        }
    }
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::Domain(format!("u must lie in (0, 1), got {u}")));
    }
    Ok(())
}

const OVERLAP_SCAN: usize = 64;

/// Fails with [`Error::Infeasible`] when a member of the geometric or the
/// arithmetic path between the nominals lies in both balls. The test is
/// sufficient, not necessary.
fn check_separated(kind: DivergenceKind, nominals: &NominalPair, eps0: f64, eps1: f64) -> Result<()> {
    let grid = *nominals.grid();
    let lnf0 = nominals.f0.log_values();
    let lnl = nominals.log_ratio();
    let (f0, f1) = (nominals.f0.values(), nominals.f1.values());
    for i in 0..=OVERLAP_SCAN {
        let s = i as f64 / OVERLAP_SCAN as f64;
        let logs: Vec<f64> = lnf0.iter().zip(&lnl).map(|(a, l)| a + s * l).collect();
        let norm = grid.log_trapezoid_exp(&logs);
        let tilted = GridDensity::from_values(grid, logs.iter().map(|v| (v - norm).exp()).collect())?;
        let mixed =
            GridDensity::from_values(grid, f0.iter().zip(f1).map(|(a, b)| (1.0 - s) * a + s * b).collect())?;
        for (path, g) in [("geometric", tilted), ("arithmetic", mixed)] {
            let d0 = kind.divergence(&g, &nominals.f0)?;
            let d1 = kind.divergence(&g, &nominals.f1)?;
            if d0 <= eps0 && d1 <= eps1 {
                return Err(Error::Infeasible {
                    y: None,
                    message: format!(
                        "the {} balls of radii ({eps0}, {eps1}) intersect: the {path} mixture at s = {s} \
                         has divergences ({d0:.4e}, {d1:.4e})",
                        kind.name()
                    ),
                });
            }
        }
    }
    Ok(())
}

fn assemble(
    problem: &Problem,
    nominals: &NominalPair,
    ev: Evaluation,
    iterations: usize,
) -> Result<LfdSolution> {
    let grid = problem.grid;
    let g0_hat = GridDensity::from_log_values(grid, &ev.lg0)?;
    let g1_hat = GridDensity::from_log_values(grid, &ev.lg1)?;
    let lrf = RobustLrf::from_logs(grid, &ev.lg0, &ev.lg1)?;
    let residuals = Residuals {
        norm0: g0_hat.mass() - 1.0,
        norm1: g1_hat.mass() - 1.0,
        ball0: problem.kind.divergence(&g0_hat, &nominals.f0)? - problem.eps0,
        ball1: problem.kind.divergence(&g1_hat, &nominals.f1)? - problem.eps1,
        coupling: ev.coupling.iter().fold(0.0, |m, v| m.max(v.abs())),
    };
    let d_u = u_affinity(&g0_hat, &g1_hat, problem.u)?;
    let m = Multipliers::from_scaled(&ev.mult);
    Ok(LfdSolution {
        kind: problem.kind,
        eps0: problem.eps0,
        eps1: problem.eps1,
        u: problem.u,
        g0_hat,
        g1_hat,
        lambda0: m.lambda0,
        mu0: m.mu0,
        lambda1: m.lambda1,
        mu1: m.mu1,
        lrf,
        d_u,
        residuals,
        iterations,
        states: ev.states,
    })
}

fn solve_with_hints(
    kind: DivergenceKind,
    nominals: &NominalPair,
    eps0: f64,
    eps1: f64,
    u: f64,
    init: Option<Multipliers>,
    hints: Option<Vec<PointState>>,
) -> Result<LfdSolution> {
    check_problem(kind, eps0, eps1, u)?;
    check_separated(kind, nominals, eps0, eps1)?;
    let problem = Problem::new(kind, nominals, eps0, eps1, u);
    let start = init.map(|m| m.scaled()).transpose()?;
    let (ev, report) = kkt::solve(&problem, start.as_ref(), hints)?;
    assemble(&problem, nominals, ev, report.iterations)
}

/// LFDs of the ball family `kind` at exponent `u`.
pub fn solve_lfd(
    kind: DivergenceKind,
    nominals: &NominalPair,
    eps0: f64,
    eps1: f64,
    u: f64,
    init: Option<Multipliers>,
) -> Result<LfdSolution> {
    solve_with_hints(kind, nominals, eps0, eps1, u, init, None)
}

/// KL-ball LFDs at exponent `u`.
pub fn solve_kl_lfd(
    nominals: &NominalPair,
    eps0: f64,
    eps1: f64,
    u: f64,
    init: Option<Multipliers>,
) -> Result<LfdSolution> {
    solve_lfd(DivergenceKind::Kl, nominals, eps0, eps1, u, init)
}

/// α-divergence-ball LFDs at exponent `u`.
pub fn solve_alpha_lfd(
    nominals: &NominalPair,
    eps0: f64,
    eps1: f64,
    alpha: f64,
    u: f64,
    init: Option<Multipliers>,
) -> Result<LfdSolution> {
    solve_lfd(DivergenceKind::Alpha(alpha), nominals, eps0, eps1, u, init)
}

/// Symmetrized-α-divergence-ball LFDs at exponent `u`.
pub fn solve_symalpha_lfd(
    nominals: &NominalPair,
    eps0: f64,
    eps1: f64,
    alpha: f64,
    u: f64,
    init: Option<Multipliers>,
) -> Result<LfdSolution> {
    solve_lfd(DivergenceKind::SymAlpha(alpha), nominals, eps0, eps1, u, init)
}

/// Settings of the scan over `u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UScanOptions {
    pub u_lo: f64,
    pub u_hi: f64,
    pub scan_points: usize,
}

impl Default for UScanOptions {
    fn default() -> Self {
        UScanOptions {
            u_lo: 0.02,
            u_hi: 0.98,
            scan_points: 49,
        }
    }
}

/// One tabulated point of the affinity curve `u ↦ D_u(ĝ0(u), ĝ1(u))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub u: f64,
    /// `None` when the inner solve failed.
    pub d_u: Option<f64>,
    pub multipliers: Option<Multipliers>,
}

#[derive(Debug, Clone)]
pub struct UScan {
    pub points: Vec<ScanPoint>,
    pub failed: usize,
    /// Solution at the minimizing `û`.
    pub solution: LfdSolution,
}

/// Warm-started solves keyed by `u`. A new solve starts from the linear
/// extrapolation of the two cached solutions nearest in `u`, then from the
/// nearest one, and finally from scratch.
struct Continuation<'a> {
    kind: DivergenceKind,
    nominals: &'a NominalPair,
    eps0: f64,
    eps1: f64,
    cache: Vec<LfdSolution>,
}

impl Continuation<'_> {
    fn by_distance(&self, u: f64) -> Vec<&LfdSolution> {
        let mut near: Vec<&LfdSolution> = self.cache.iter().collect();
        near.sort_by(|a, b| (a.u - u).abs().total_cmp(&(b.u - u).abs()));
        near
    }

    fn guesses(&self, problem: &Problem, u: f64) -> Vec<(Scaled, Vec<PointState>)> {
        let near = self.by_distance(u);
        let mut out = Vec::new();
        let Some(a) = near.first() else {
            return out;
        };
        let sa = Multipliers::scaled(&a.multipliers()).ok();
        if let (Some(b), Some(sa)) = (near.get(1), sa) {
            if let Ok(sb) = Multipliers::scaled(&b.multipliers()) {
                let t = (u - a.u) / (a.u - b.u);
                let pa = problem.to_unknowns(&sa);
                let pb = problem.to_unknowns(&sb);
                let p: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| x + t * (x - y)).collect();
                out.push((problem.from_unknowns(&p), a.states.clone()));
            }
        }
        if let Some(sa) = sa {
            out.push((sa, a.states.clone()));
        }
        out
    }

    fn solve(&mut self, u: f64) -> Result<LfdSolution> {
        if let Some(s) = self.cache.iter().find(|s| s.u == u) {
            return Ok(s.clone());
        }
        check_problem(self.kind, self.eps0, self.eps1, u)?;
        let problem = Problem::new(self.kind, self.nominals, self.eps0, self.eps1, u);
        let mut warm = None;
        let patience = [Patience::Brief, Patience::Full];
        for ((start, hints), patience) in self.guesses(&problem, u).into_iter().zip(patience) {
            match kkt::newton_from(&problem, &start, hints, patience) {
                Ok(done) => {
                    warm = Some(done);
                    break;
                }
                Err(e) => log::debug!("warm start at u = {u} failed: {e}"),
            }
        }
        let sol = match warm {
            Some((ev, report)) => assemble(&problem, self.nominals, ev, report.iterations)?,
            None => solve_lfd(self.kind, self.nominals, self.eps0, self.eps1, u, None)?,
        };
        self.cache.push(sol.clone());
        Ok(sol)
    }

    /// `dV/du = ∫ ĝ0 z^u log z` at the LFDs of `u` (the LFDs maximize `D_u`,
    /// so only the explicit dependence on `u` contributes).
    fn slope(&mut self, u: f64) -> Result<f64> {
        let s = self.solve(u)?;
        let logs = s.lrf.log_values();
        let terms: Vec<f64> = s
            .g0_hat
            .values()
            .iter()
            .zip(&logs)
            .map(|(g, lz)| g * (u * lz).exp() * lz)
            .collect();
        Ok(s.g0_hat.grid().trapezoid(&terms))
    }
}

/// Tabulates `u ↦ D_u(ĝ0(u), ĝ1(u))`, takes the best scan point and refines
/// it by golden section followed by a root search on the envelope slope.
///
/// The scan runs outward from the point nearest `u = 1/2` in both directions
/// so that each solve is warm-started from its neighbor.
pub fn minimize_over_u(
    kind: DivergenceKind,
    nominals: &NominalPair,
    eps0: f64,
    eps1: f64,
    opts: &UScanOptions,
) -> Result<UScan> {
    if !(opts.u_lo > 0.0 && opts.u_hi < 1.0 && opts.u_lo < opts.u_hi) {
        return Err(Error::Parameter(format!(
            "u range must satisfy 0 < lo < hi < 1, got ({}, {})",
            opts.u_lo, opts.u_hi
        )));
    }
    if opts.scan_points < 8 {
        return Err(Error::Parameter(format!(
            "scan_points must be at least 8, got {}",
            opts.scan_points
        )));
    }
    check_problem(kind, eps0, eps1, 0.5)?;
    check_separated(kind, nominals, eps0, eps1)?;
    let k = opts.scan_points;
    let us: Vec<f64> = (0..k)
        .map(|i| opts.u_lo + (opts.u_hi - opts.u_lo) * i as f64 / (k - 1) as f64)
        .collect();
    let centre = (0..k)
        .min_by(|&a, &b| (us[a] - 0.5).abs().total_cmp(&(us[b] - 0.5).abs()))
        .unwrap_or(0);
    let mut cont = Continuation {
        kind,
        nominals,
        eps0,
        eps1,
        cache: Vec::new(),
    };
    let mut points: Vec<ScanPoint> = us
        .iter()
        .map(|&u| ScanPoint {
            u,
            d_u: None,
            multipliers: None,
        })
        .collect();
    let order: Vec<usize> = (centre..k).chain((0..centre).rev()).collect();
    let mut failed = 0;
    for &i in &order {
        match cont.solve(us[i]) {
            Ok(s) => {
                points[i].d_u = Some(s.d_u);
                points[i].multipliers = Some(s.multipliers());
            }
            Err(e) => {
                log::warn!("u-scan gap at u = {}: {e}", us[i]);
                failed += 1;
            }
        }
        if failed as f64 > 0.3 * k as f64 {
            return Err(Error::ScanAborted { failed, total: k });
        }
    }

    let best = (0..k)
        .filter(|&i| points[i].d_u.is_some())
        .min_by(|&a, &b| points[a].d_u.unwrap().total_cmp(&points[b].d_u.unwrap()))
        .ok_or(Error::ScanAborted { failed, total: k })?;
    let lo = (0..best).rev().find(|&i| points[i].d_u.is_some()).map_or(us[best], |i| us[i]);
    let hi = (best + 1..k).find(|&i| points[i].d_u.is_some()).map_or(us[best], |i| us[i]);

    let mut u_hat = us[best];
    if hi > lo {
        let mut phi = |u: f64| cont.solve(u).map_or(f64::INFINITY, |s| s.d_u);
        let (ug, _) = golden_section(&mut phi, lo, hi, 1e-4 * (hi - lo));
        u_hat = ug;
        // Polish on the envelope slope, whose root is sharper than the
        // minimum of the flat curve.
        let a = (ug - 1e-4 * (hi - lo)).max(lo);
        let b = (ug + 1e-4 * (hi - lo)).min(hi);
        if let (Ok(sa), Ok(sb)) = (cont.slope(a), cont.slope(b)) {
            if sa.signum() != sb.signum() {
                let mut err = None;
                let root = scalar_root(
                    |u| match cont.slope(u) {
                        Ok(v) => v,
                        Err(e) => {
                            err = Some(e);
                            f64::NAN
                        }
                    },
                    a,
                    b,
                );
                if let (Ok(r), None) = (root, err) {
                    u_hat = r;
                }
            }
        }
    }
    let mut solution = cont.solve(u_hat)?;
    // Never report a refined point worse than the best scan point.
    if let Some(d) = points[best].d_u {
        if solution.d_u > d {
            solution = cont.solve(us[best])?;
        }
    }
    Ok(UScan {
        points,
        failed,
        solution,
    })
}
