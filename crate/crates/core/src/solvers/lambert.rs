use std::f64::consts::E;

use crate::error::{Error, Result};

const INV_E: f64 = 0.367_879_441_171_442_33;

/// Principal branch `W₀(x)` for `x ≥ −1/e`, by Halley iteration from a
/// log-based starting value.
pub fn lambert_w0(x: f64) -> Result<f64> {
    if x.is_nan() || x < -INV_E {
        return Err(Error::Domain(format!(
            "lambert_w0 needs x >= -1/e, got {x}"
        )));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == -INV_E {
        return Ok(-1.0);
    }
    if x == f64::INFINITY {
        return Ok(f64::INFINITY);
    }
    let mut w = initial_guess(x);
    for _ in 0..64 {
        let ew = w.exp();
        let f = w * ew - x;
        let wp1 = w + 1.0;
        if wp1 == 0.0 {
            break;
        }
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        let step = f / denom;
        w -= step;
        if step.abs() <= 4.0 * f64::EPSILON * (1.0 + w.abs()) {
            break;
        }
    }
    Ok(w)
}

fn initial_guess(x: f64) -> f64 {
    if x < -0.32 {
        // Series about the branch point.
        let p = (2.0 * (E * x + 1.0)).max(0.0).sqrt();
        -1.0 + p * (1.0 + p * (-1.0 / 3.0 + p * 11.0 / 72.0))
    } else if x < 3.0 {
        let l = x.ln_1p();
        l * (1.0 - (1.0 + l).ln() / (2.0 + l))
    } else {
        let l1 = x.ln();
        let l2 = l1.ln();
        l1 - l2 + l2 / l1
    }
}

/// `W₀(exp(log_x))`, usable when `exp(log_x)` would overflow.
pub fn lambert_w0_exp(log_x: f64) -> Result<f64> {
    if log_x.is_nan() {
        return Err(Error::Domain("lambert_w0_exp of NaN".into()));
    }
    if log_x < 500.0 {
        return lambert_w0(log_x.exp());
    }
    // Solve w + ln w = log_x.
    let mut w = log_x - log_x.ln();
    for _ in 0..64 {
        let f = w + w.ln() - log_x;
        let step = f / (1.0 + 1.0 / w);
        w -= step;
        if step.abs() <= 4.0 * f64::EPSILON * w {
            break;
        }
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn special_values() {
        assert_eq!(lambert_w0(0.0).unwrap(), 0.0);
        assert!((lambert_w0(E).unwrap() - 1.0).abs() < 1e-15);
        let w = lambert_w0(1.0).unwrap();
        assert!((w - 0.567_143_290_409_783_8).abs() < 1e-12);
        assert!((w * w.exp() - 1.0).abs() <= 1e-12);
        assert_eq!(lambert_w0(-INV_E).unwrap(), -1.0);
    }

    #[test]
    fn below_branch_point() {
        assert!(matches!(lambert_w0(-0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn log_argument_matches_direct() {
        for lx in [-5.0, 0.0, 3.0, 100.0, 499.0] {
            let a = lambert_w0_exp(lx).unwrap();
            let b = lambert_w0((lx as f64).exp()).unwrap();
            assert!((a - b).abs() <= 1e-13 * b.abs().max(1.0));
        }
        for lx in [500.0, 1e4, 1e8] {
            let w = lambert_w0_exp(lx).unwrap();
            assert!((w + w.ln() - lx).abs() <= 1e-12 * lx);
        }
    }
}
