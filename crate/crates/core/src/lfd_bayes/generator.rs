//! Convex generators `φ` of the three divergence families, written as
//! `D(g, f) = ∫ f φ(g/f)`, and the inverse of `φ'` used by the stationarity
//! conditions. Ratios are handled through `s = log(g/f)`.

use crate::density::{alpha_term, DivergenceKind};
use crate::solvers::safeguarded_newton;

/// `φ'(1)`.
pub(crate) fn slope_at_one(kind: DivergenceKind) -> f64 {
    match kind {
        DivergenceKind::Kl => 1.0,
        _ => 0.0,
    }
}

/// `φ''(1)`.
pub(crate) fn curvature_at_one(kind: DivergenceKind) -> f64 {
    match kind {
        DivergenceKind::SymAlpha(_) => 2.0,
        _ => 1.0,
    }
}

/// Open range `(inf φ', sup φ')`.
pub(crate) fn slope_range(kind: DivergenceKind) -> (f64, f64) {
    match kind {
        DivergenceKind::Kl => (f64::NEG_INFINITY, f64::INFINITY),
        DivergenceKind::Alpha(a) if a < 1.0 => (f64::NEG_INFINITY, 1.0 / (1.0 - a)),
        DivergenceKind::Alpha(a) => (-1.0 / (a - 1.0), f64::INFINITY),
        DivergenceKind::SymAlpha(a) if a > 0.0 && a < 1.0 => {
            (f64::NEG_INFINITY, 1.0 / (a * (1.0 - a)))
        }
        DivergenceKind::SymAlpha(_) => (f64::NEG_INFINITY, f64::INFINITY),
    }
}

/// `φ'(e^s)`.
pub(crate) fn slope(kind: DivergenceKind, s: f64) -> f64 {
    match kind {
        DivergenceKind::Kl => s + 1.0,
        DivergenceKind::Alpha(a) => -((a - 1.0) * s).exp_m1() / (1.0 - a),
        DivergenceKind::SymAlpha(a) => {
            (1.0 - a * ((a - 1.0) * s).exp() - (1.0 - a) * (-a * s).exp()) / (a * (1.0 - a))
        }
    }
}

/// `x φ''(x)` at `x = e^s`, i.e. `d φ'(e^s) / ds`.
pub(crate) fn slope_derivative(kind: DivergenceKind, s: f64) -> f64 {
    match kind {
        DivergenceKind::Kl => 1.0,
        DivergenceKind::Alpha(a) => ((a - 1.0) * s).exp(),
        DivergenceKind::SymAlpha(a) => ((a - 1.0) * s).exp() + (-a * s).exp(),
    }
}

/// Solves `φ'(e^s) = v` for `s`. Returns `None` when `v` is outside the range
/// of `φ'`. `hint` seeds the iterative inverse of the symmetric family.
pub(crate) fn inverse_slope(kind: DivergenceKind, v: f64, hint: f64) -> Option<f64> {
    let (lo, hi) = slope_range(kind);
    if !(v > lo && v < hi) {
        return None;
    }
    match kind {
        DivergenceKind::Kl => Some(v - 1.0),
        DivergenceKind::Alpha(a) => {
            let base = 1.0 - (1.0 - a) * v;
            if base > 0.0 {
                Some(base.ln() / (a - 1.0))
            } else {
                None
            }
        }
        DivergenceKind::SymAlpha(_) => inverse_sym_slope(kind, v, hint),
    }
}

fn inverse_sym_slope(kind: DivergenceKind, v: f64, hint: f64) -> Option<f64> {
    let g = |s: f64| slope(kind, s) - v;
    // g is increasing in s; expand from the hint until the sign changes.
    let s0 = if hint.is_finite() { hint } else { 0.0 };
    let g0 = g(s0);
    if g0 == 0.0 {
        return Some(s0);
    }
    let dir = if g0 < 0.0 { 1.0 } else { -1.0 };
    let mut step = 0.5;
    let mut far;
    let mut near = s0;
    loop {
        far = s0 + dir * step;
        let gf = g(far);
        if gf.is_nan() {
            return None;
        }
        if gf.signum() != g0.signum() {
            break;
        }
        near = far;
        step *= 2.0;
        if step > 4096.0 {
            return None;
        }
    }
    let (lo, hi) = if dir > 0.0 { (near, far) } else { (far, near) };
    safeguarded_newton(
        |s| (g(s), slope_derivative(kind, s)),
        lo,
        hi,
        s0.clamp(lo, hi),
        1e-15,
    )
    .ok()
}

/// `x ln x − x + 1` at `x = e^s`. Equal to `x ln x` in integral when both
/// densities carry unit mass, but free of first-order cancellation.
fn kl_excess(s: f64) -> f64 {
    if s.abs() < 0.1 {
        // Σ_{k≥2} (k−1) s^k / k!
        let mut term = s * s / 2.0;
        let mut acc = term;
        for k in 3..16 {
            term *= s / k as f64;
            acc += (k - 1) as f64 * term;
        }
        acc
    } else {
        s * s.exp() - s.exp_m1()
    }
}

/// `f φ(g/f)` with `f = e^{ln_f}` and `s = log(g/f)`, using the generator
/// shifted to vanish with its slope at one.
pub(crate) fn divergence_term(kind: DivergenceKind, ln_f: f64, s: f64) -> f64 {
    match kind {
        DivergenceKind::Kl => ln_f.exp() * kl_excess(s),
        DivergenceKind::Alpha(a) => alpha_term(ln_f, s, a) / (a * (1.0 - a)),
        DivergenceKind::SymAlpha(a) => {
            (alpha_term(ln_f, s, a) + alpha_term(ln_f + s, -s, a)) / (a * (1.0 - a))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const KINDS: [DivergenceKind; 7] = [
        DivergenceKind::Kl,
        DivergenceKind::Alpha(0.1),
        DivergenceKind::Alpha(0.5),
        DivergenceKind::Alpha(2.5),
        DivergenceKind::Alpha(-0.5),
        DivergenceKind::SymAlpha(0.3),
        DivergenceKind::SymAlpha(2.0),
    ];

    // Direct generator φ for the oracle checks below.
    fn phi(kind: DivergenceKind, x: f64) -> f64 {
        match kind {
            DivergenceKind::Kl => x * x.ln(),
            DivergenceKind::Alpha(a) => ((1.0 - a) + a * x - x.powf(a)) / (a * (1.0 - a)),
            DivergenceKind::SymAlpha(a) => {
                (1.0 - x.powf(a)) * (1.0 - x.powf(1.0 - a)) / (a * (1.0 - a))
            }
        }
    }

    #[test]
    fn slope_matches_finite_difference_of_phi() {
        for kind in KINDS {
            for x in [0.2, 0.9, 1.0, 1.7, 4.0] {
                let h = 1e-6 * x;
                let fd = (phi(kind, x + h) - phi(kind, x - h)) / (2.0 * h);
                let an = slope(kind, x.ln());
                assert!((fd - an).abs() < 1e-6 * an.abs().max(1.0), "{kind:?} {x}");
            }
        }
    }

    #[test]
    fn values_at_one() {
        for kind in KINDS {
            assert!((slope(kind, 0.0) - slope_at_one(kind)).abs() < 1e-15);
            assert!((slope_derivative(kind, 0.0) - curvature_at_one(kind)).abs() < 1e-15);
            assert_eq!(divergence_term(kind, 0.3, 0.0), 0.0);
        }
    }

    #[test]
    fn alpha_term_branches_agree() {
        for a in [0.1, 0.5, 2.0] {
            for s in [-0.999_999, 0.999_999] {
                let x: f64 = (s as f64).exp();
                let direct = a * (x - 1.0) - (x.powf(a) - 1.0);
                assert!((alpha_term(0.0, s, a) - direct).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn inverse_slope_round_trip(k in 0usize..7, s in -8.0f64..8.0) {
            let kind = KINDS[k];
            let v = slope(kind, s);
            let (lo, hi) = slope_range(kind);
            prop_assume!(v > lo && v < hi && v.is_finite());
            let back = inverse_slope(kind, v, 0.0).unwrap();
            let err = (slope(kind, back) - v).abs();
            prop_assert!(err <= 1e-10 * v.abs().max(1.0), "{:?} s={} back={}", kind, s, back);
        }

        #[test]
        fn power_generator_terms_are_nonnegative(k in 1usize..7, s in -6.0f64..6.0, lf in -5.0f64..1.0) {
            prop_assert!(divergence_term(KINDS[k], lf, s) >= -1e-15);
        }
    }
}
