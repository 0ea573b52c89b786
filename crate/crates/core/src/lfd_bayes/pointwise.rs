//! Per-grid-point coupling between the robust likelihood ratio `z = ĝ1/ĝ0`
//! and the nominal ratio `l = f1/f0`.
//!
//! With `w = log z`, the stationarity conditions read
//! `φ'(x0) = (1-u) z^u / λ0 − ν0` and `φ'(x1) = u z^(u-1) / λ1 − ν1`, where
//! `x_j = ĝ_j / f_j` and `ν_j = μ_j / λ_j`. Substituting into `z = (x1/x0) l`
//! gives `H(w) = w − log x1(w) + log x0(w) − log l = 0`, and `H' ≥ 1`, so the
//! root is unique and easy to bracket.

use rayon::prelude::*;

use super::generator::{inverse_slope, slope_derivative, slope_range};
use crate::density::DivergenceKind;
use crate::error::{Error, Result};
use crate::solvers::safeguarded_newton;

/// Solution at one grid point: `w = log z`, `s_j = log x_j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct PointState {
    pub w: f64,
    pub s0: f64,
    pub s1: f64,
}

impl PointState {
    pub const UNSET: PointState = PointState {
        w: f64::NAN,
        s0: 0.0,
        s1: 0.0,
    };
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Coupling {
    pub kind: DivergenceKind,
    pub u: f64,
    pub lambda0: f64,
    pub nu0: f64,
    pub lambda1: f64,
    pub nu1: f64,
}

#[derive(Clone, Copy)]
struct Eval {
    h: f64,
    dh: f64,
    s0: f64,
    s1: f64,
}

impl Coupling {
    fn v0(&self, w: f64) -> f64 {
        (1.0 - self.u) * (self.u * w).exp() / self.lambda0 - self.nu0
    }

    fn v1(&self, w: f64) -> f64 {
        self.u * ((self.u - 1.0) * w).exp() / self.lambda1 - self.nu1
    }

    /// Open interval of `w` on which both `φ'` equations are solvable.
    /// Empty intervals mean the multipliers are infeasible.
    pub fn feasible_interval(&self) -> Result<(f64, f64)> {
        let (vmin, vmax) = slope_range(self.kind);
        let u = self.u;
        let c0 = (1.0 - u) / self.lambda0;
        let c1 = u / self.lambda1;
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        // v0 increases from −ν0 to ∞; v1 decreases from ∞ to −ν1.
        if vmax.is_finite() {
            let r0 = (vmax + self.nu0) / c0;
            let r1 = (vmax + self.nu1) / c1;
            if !(r0 > 0.0 && r1 > 0.0) {
                return Err(self.infeasible("a power base is negative for every z"));
            }
            hi = hi.min(r0.ln() / u);
            lo = lo.max(r1.ln() / (u - 1.0));
        }
        if vmin.is_finite() {
            if -self.nu0 < vmin {
                lo = lo.max(((vmin + self.nu0) / c0).ln() / u);
            }
            if -self.nu1 < vmin {
                hi = hi.min(((vmin + self.nu1) / c1).ln() / (u - 1.0));
            }
        }
        if !(lo < hi) {
            return Err(self.infeasible("no robust likelihood ratio satisfies both bases"));
        }
        Ok((lo, hi))
    }

    fn infeasible(&self, what: &str) -> Error {
        Error::Infeasible {
            y: None,
            message: format!(
                "{what} (λ0 = {:e}, μ0 = {:e}, λ1 = {:e}, μ1 = {:e})",
                self.lambda0,
                self.lambda0 * self.nu0,
                self.lambda1,
                self.lambda1 * self.nu1
            ),
        }
    }

    /// `log x` from `φ'(x) = v`, mapped to ±∞ outside the range of `φ'`.
    fn log_ratio(&self, v: f64, hint: f64) -> f64 {
        let (vmin, vmax) = slope_range(self.kind);
        if v >= vmax {
            f64::INFINITY
        } else if v <= vmin {
            f64::NEG_INFINITY
        } else {
            inverse_slope(self.kind, v, hint).unwrap_or(f64::NAN)
        }
    }

    fn eval(&self, w: f64, lnl: f64, hint: &PointState) -> Eval {
        let u = self.u;
        let v0 = self.v0(w);
        let v1 = self.v1(w);
        let s0 = self.log_ratio(v0, hint.s0);
        let s1 = self.log_ratio(v1, hint.s1);
        let h = w - s1 + s0 - lnl;
        let dh = if s0.is_finite() && s1.is_finite() {
            let ds0 = u * (v0 + self.nu0) / slope_derivative(self.kind, s0);
            let ds1 = (u - 1.0) * (v1 + self.nu1) / slope_derivative(self.kind, s1);
            1.0 + ds0 - ds1
        } else {
            f64::NAN
        };
        Eval { h, dh, s0, s1 }
    }


    pub fn solve_point(&self, lnl: f64, hint: &PointState, interval: (f64, f64)) -> Result<PointState> {
        let (wlo, whi) = interval;
        let inside = |w: f64| w > wlo && w < whi;
        let mut w0 = if hint.w.is_finite() { hint.w } else { lnl };
        if !inside(w0) {
            w0 = interior_point(wlo, whi, w0);
        }
        let mut hint = *hint;
        let e0 = self.eval(w0, lnl, &hint);
        if e0.h.is_nan() {
            return Err(Error::Numeric(format!("coupling undefined at w = {w0}")));
        }
        if e0.s0.is_finite() && e0.s1.is_finite() {
            hint.s0 = e0.s0;
            hint.s1 = e0.s1;
        }
        if e0.h == 0.0 {
            return Ok(PointState { w: w0, s0: e0.s0, s1: e0.s1 });
        }
        // H' ≥ 1, so moving |H| towards the root crosses it unless the
        // feasible interval ends first; then approach that end geometrically.
        let dir = -e0.h.signum();
        let end = if dir > 0.0 { whi } else { wlo };
        // The root lies within |H| of w0; towards an open end grow the step
        // from 1 so that a huge |H| does not produce a huge bracket.
        let bound = e0.h.abs() * (1.0 + 1e-12) + 1e-12;
        let mut step = if end.is_finite() { bound } else { bound.min(1.0) };
        let mut target = w0 + dir * step;
        let mut far = None;
        let mut last = (w0, e0);
        for k in 0..200 {
            if !inside(target) {
                target = end - (end - w0) * 0.5f64.powi(k + 1);
                if !inside(target) || target == last.0 {
                    break;
                }
            }
            let e = self.eval(target, lnl, &hint);
            if e.h.is_nan() {
                return Err(Error::Numeric(format!("coupling undefined at w = {target}")));
            }
            if e.h.signum() != e0.h.signum() {
                far = Some(target);
                break;
            }
            if e.s0.is_finite() && e.s1.is_finite() {
                hint.s0 = e.s0;
                hint.s1 = e.s1;
                last = (target, e);
            }
            target = if end.is_finite() {
                end - (end - target) * 0.5
            } else {
                step = (2.0 * step).min(bound);
                w0 + dir * step
            };
        }
        let Some(far) = far else {
            // The root sits closer to the end than w can resolve: z is
            // saturated and the diverging side follows from H = 0.
            if end.is_finite() && (end - last.0).abs() <= 1e-12 * end.abs().max(1.0) {
                return self.settle(last.0, lnl, &last.1);
            }
            return Err(Error::Numeric(format!(
                "could not bracket the coupling root for log l = {lnl}"
            )));
        };
        let (a, b) = if dir > 0.0 { (w0, far) } else { (far, w0) };
        let mut hint_cell = hint;
        let w = safeguarded_newton(
            |w| {
                let e = self.eval(w, lnl, &hint_cell);
                if e.s0.is_finite() && e.s1.is_finite() {
                    hint_cell.s0 = e.s0;
                    hint_cell.s1 = e.s1;
                }
                (e.h, e.dh)
            },
            a,
            b,
            w0,
            1e-15,
        );
        // H' ≥ 1 bounds the distance to the root by |H|, so an endpoint at
        // rounding level is already a root.
        let w = match w {
            Err(Error::Bracket { a, b, fa, fb })
                if fa.abs().min(fb.abs()) <= 1e-13 * a.abs().max(1.0) =>
            {
                if fa.abs() <= fb.abs() {
                    a
                } else {
                    b
                }
            }
            other => other?,
        };
        let e = self.eval(w, lnl, &hint_cell);
        self.settle(w, lnl, &e)
    }

    /// Final state at `w`: the side of `s0`, `s1` that is more sensitive to
    /// `w` is taken from `H = 0` rather than from the inverse slope, which
    /// cancels badly where `z` saturates.
    fn settle(&self, w: f64, lnl: f64, e: &Eval) -> Result<PointState> {
        let sens0 = (self.u * (self.v0(w) + self.nu0) / slope_derivative(self.kind, e.s0)).abs();
        let sens1 =
            ((self.u - 1.0) * (self.v1(w) + self.nu1) / slope_derivative(self.kind, e.s1)).abs();
        let (s0, s1) = match (e.s0.is_finite(), e.s1.is_finite()) {
            (true, true) if sens0 >= sens1 => (lnl + e.s1 - w, e.s1),
            (true, true) => (e.s0, w + e.s0 - lnl),
            (false, true) => (lnl + e.s1 - w, e.s1),
            (true, false) => (e.s0, w + e.s0 - lnl),
            (false, false) => {
                return Err(Error::Numeric(format!(
                    "coupling root at the edge of the admissible region for log l = {lnl}"
                )))
            }
        };
        Ok(PointState { w, s0, s1 })
    }

    /// Solves every grid point, seeding each from `hints`.
    pub fn solve_grid(&self, lnl: &[f64], hints: &[PointState]) -> Result<Vec<PointState>> {
        let interval = self.feasible_interval()?;
        lnl.par_iter()
            .zip(hints.par_iter())
            .map(|(&l, h)| self.solve_point(l, h, interval))
            .collect()
    }
}

fn interior_point(lo: f64, hi: f64, w: f64) -> f64 {
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) => {
            let pad = 0.25 * (hi - lo);
            w.clamp(lo + pad, hi - pad)
        }
        (true, false) => w.max(lo + 1.0),
        (false, true) => w.min(hi - 1.0),
        (false, false) => w,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn kinds() -> [DivergenceKind; 5] {
        [
            DivergenceKind::Kl,
            DivergenceKind::Alpha(0.1),
            DivergenceKind::Alpha(0.5),
            DivergenceKind::Alpha(2.0),
            DivergenceKind::SymAlpha(2.0),
        ]
    }

    #[test]
    fn kl_root_is_fixed_point_of_the_printed_map() {
        let c = Coupling {
            kind: DivergenceKind::Kl,
            u: 0.4,
            lambda0: 0.7,
            nu0: 0.3,
            lambda1: 1.3,
            nu1: -0.2,
        };
        let iv = c.feasible_interval().unwrap();
        for lnl in [-8.0, -1.0, 0.0, 0.5, 6.0] {
            let st = c.solve_point(lnl, &PointState::UNSET, iv).unwrap();
            let z = st.w.exp();
            // z = A exp[u z^(u-1)/λ1 + (u-1) z^u/λ0] l with A = exp(ν0 − ν1).
            let rhs = (c.nu0 - c.nu1
                + c.u * z.powf(c.u - 1.0) / c.lambda1
                + (c.u - 1.0) * z.powf(c.u) / c.lambda0
                + lnl)
                .exp();
            assert!((z - rhs).abs() <= 1e-12 * z.max(1.0), "{lnl}: {z} vs {rhs}");
        }
    }

    #[test]
    fn infeasible_alpha_multipliers() {
        // α < 1 needs v0 < 1/(1-α) somewhere; a hugely negative ν would
        // violate it everywhere.
        let c = Coupling {
            kind: DivergenceKind::Alpha(0.5),
            u: 0.5,
            lambda0: 1.0,
            nu0: -10.0,
            lambda1: 1.0,
            nu1: 0.0,
        };
        assert!(matches!(c.feasible_interval(), Err(Error::Infeasible { .. })));
    }

    proptest! {
        #[test]
        fn coupling_residual_vanishes(
            k in 0usize..5,
            u in 0.05f64..0.95,
            t0 in -2.0f64..2.0,
            t1 in -2.0f64..2.0,
            nu0 in -0.5f64..0.5,
            nu1 in -0.5f64..0.5,
            lnl in -30.0f64..30.0,
        ) {
            let c = Coupling { kind: kinds()[k], u, lambda0: t0.exp(), nu0, lambda1: t1.exp(), nu1 };
            let iv = match c.feasible_interval() {
                Ok(iv) => iv,
                Err(_) => return Ok(()),
            };
            let st = c.solve_point(lnl, &PointState::UNSET, iv).unwrap();
            // Near the ends of the interval H' blows up, so measure the
            // residual as the Newton step it implies.
            let e = c.eval(st.w, lnl, &st);
            prop_assert!((e.h / e.dh).abs() <= 1e-9 * st.w.abs().max(1.0));
            prop_assert!(st.w > iv.0 && st.w < iv.1);
        }

        #[test]
        fn robust_ratio_is_monotone_in_nominal_ratio(
            k in 0usize..5,
            u in 0.05f64..0.95,
            a in -10.0f64..10.0,
            b in -10.0f64..10.0,
        ) {
            let c = Coupling { kind: kinds()[k], u, lambda0: 0.8, nu0: 0.1, lambda1: 1.2, nu1: 0.1 };
            let iv = c.feasible_interval().unwrap();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let wa = c.solve_point(lo, &PointState::UNSET, iv).unwrap().w;
            let wb = c.solve_point(hi, &PointState::UNSET, iv).unwrap().w;
            prop_assert!(wa <= wb + 1e-12);
        }
    }
}
