//! Closed-form checks of particular solutions.

use super::LfdSolution;
use crate::density::{DivergenceKind, NominalPair};
use crate::error::{Error, Result};

/// Coefficients `(c0, c1, c2)` of `ẑ = c0 + c1 √l + c2 l` as printed for the
/// α = u = 1/2 special case.
///
/// These expressions do not reproduce the LFDs of the α = 1/2 ball; see
/// [`alpha_half_lrf`] for the form that follows from the stationarity
/// conditions.
pub fn alpha_half_coefficients(sol: &LfdSolution) -> (f64, f64, f64) {
    let (l0, l1, m0) = (sol.lambda0, sol.lambda1, sol.mu0);
    let den = 4.0 * l0 * l0 * l1 * l1 + l0 * l0 * m0 * m0 + 4.0 * l0 * l0 * l1 * m0;
    let c0 = 0.25 * l0 * l0 / den;
    let c1 = l0 * (2.0 * l0 * l1 + m0 * l1) / den;
    let c2 = (2.0 * l0 * l1 + m0 * l1) / den;
    (c0, c1, c2)
}

/// Robust likelihood ratio for α = u = 1/2 from the stationarity conditions:
/// `√ẑ = (a √l + b) / (c + d √l)` with `a = 1 + μ0/(2λ0)`, `b = 1/(4λ1)`,
/// `c = 1 + μ1/(2λ1)`, `d = 1/(4λ0)`.
pub fn alpha_half_lrf(sol: &LfdSolution, l: f64) -> Result<f64> {
    if sol.kind != DivergenceKind::Alpha(0.5) || sol.u != 0.5 {
        return Err(Error::Parameter(
            "closed form applies to the α = 1/2 ball at u = 1/2 only".into(),
        ));
    }
    let a = 1.0 + sol.mu0 / (2.0 * sol.lambda0);
    let b = 1.0 / (4.0 * sol.lambda1);
    let c = 1.0 + sol.mu1 / (2.0 * sol.lambda1);
    let d = 1.0 / (4.0 * sol.lambda0);
    let r = l.sqrt();
    let root = (a * r + b) / (c + d * r);
    Ok(root * root)
}

/// Largest relative residuals of the two KL stationarity conditions
/// `(1-u) z^u − λ0 log ĝ0 = λ0 + μ0 − λ0 log f0` and
/// `u z^(u-1) − λ1 log ĝ1 = λ1 + μ1 − λ1 log f1`.
pub fn kl_stationarity_residuals(sol: &LfdSolution, nominals: &NominalPair) -> Result<(f64, f64)> {
    if sol.kind != DivergenceKind::Kl {
        return Err(Error::Parameter("stationarity check is for KL balls".into()));
    }
    let u = sol.u;
    let lg0 = sol.g0_hat.log_values();
    let lg1 = sol.g1_hat.log_values();
    let lf0 = nominals.f0.log_values();
    let lf1 = nominals.f1.log_values();
    let lz = sol.lrf.log_values();
    let mut r0: f64 = 0.0;
    let mut r1: f64 = 0.0;
    for i in 0..lz.len() {
        let a = (1.0 - u) * (u * lz[i]).exp();
        let lhs = a - sol.lambda0 * lg0[i];
        let rhs = sol.lambda0 + sol.mu0 - sol.lambda0 * lf0[i];
        r0 = r0.max((lhs - rhs).abs() / (1.0 + a.abs() + (sol.lambda0 * lg0[i]).abs()));
        let b = u * ((u - 1.0) * lz[i]).exp();
        let lhs = b - sol.lambda1 * lg1[i];
        let rhs = sol.lambda1 + sol.mu1 - sol.lambda1 * lf1[i];
        r1 = r1.max((lhs - rhs).abs() / (1.0 + b.abs() + (sol.lambda1 * lg1[i]).abs()));
    }
    Ok((r0, r1))
}
