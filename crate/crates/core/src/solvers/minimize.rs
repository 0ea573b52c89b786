use crate::error::{Error, Result};

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Scan `scan_points` equally spaced abscissae of `[a, b]`, then refine by
/// golden section on the two cells around the best scan point.
///
/// The returned value never exceeds the best scanned value.
pub fn minimize_1d<F: FnMut(f64) -> f64>(
    mut phi: F,
    a: f64,
    b: f64,
    scan_points: usize,
) -> Result<(f64, f64)> {
    if !(b > a) || !a.is_finite() || !b.is_finite() {
        return Err(Error::Parameter(format!("need finite a < b, got ({a}, {b})")));
    }
    if scan_points < 8 {
        return Err(Error::Parameter(format!(
            "scan_points must be at least 8, got {scan_points}"
        )));
    }
    let xs: Vec<f64> = (0..scan_points)
        .map(|i| a + (b - a) * i as f64 / (scan_points - 1) as f64)
        .collect();
    let mut vals = Vec::with_capacity(scan_points);
    for &x in &xs {
        let v = phi(x);
        if !v.is_finite() {
            return Err(Error::Evaluation { x });
        }
        vals.push(v);
    }
    let k = (0..scan_points)
        .min_by(|&i, &j| vals[i].total_cmp(&vals[j]))
        .unwrap_or(0);
    let lo = xs[k.saturating_sub(1)];
    let hi = xs[(k + 1).min(scan_points - 1)];
    let (x, v) = golden_section(&mut phi, lo, hi, 1e-10 * (b - a));
    if v <= vals[k] {
        Ok((x, v))
    } else {
        Ok((xs[k], vals[k]))
    }
}

/// Golden-section search on `[lo, hi]` down to width `tol`. Non-finite
/// objective values count as `+inf`.
pub fn golden_section<F: FnMut(f64) -> f64>(phi: &mut F, lo: f64, hi: f64, tol: f64) -> (f64, f64) {
    let mut eval = |x: f64| {
        let v = phi(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = eval(c);
    let mut fd = eval(d);
    while (b - a).abs() > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = eval(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = eval(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parabola() {
        let (x, v) = minimize_1d(|u| (u - 0.3) * (u - 0.3), 0.0, 1.0, 49).unwrap();
        assert!((x - 0.3).abs() < 1e-6);
        assert!(v < 1e-12);
    }

    #[test]
    fn gaussian_affinity_curve() {
        let (x, v) = minimize_1d(|u| (-2.0 * u * (1.0 - u)).exp(), 0.0, 1.0, 20).unwrap();
        assert!((x - 0.5).abs() < 1e-6);
        assert!((v - (-0.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn deeper_basin_wins() {
        // Quartic with minima near 0.2 and 0.8; the tilt makes 0.8 deeper.
        let phi = |u: f64| 0.05 + (u - 0.2).powi(2) * (u - 0.8).powi(2) - 0.01 * u;
        let (x, _) = minimize_1d(phi, 0.0, 1.0, 49).unwrap();
        let oracle = (0..=100_000)
            .map(|i| i as f64 / 100_000.0)
            .min_by(|a, b| phi(*a).total_cmp(&phi(*b)))
            .unwrap();
        assert!(oracle > 0.5);
        assert!((x - oracle).abs() < 1e-4);
    }

    #[test]
    fn nan_at_scan_point() {
        let r = minimize_1d(|u| if u > 0.5 { f64::NAN } else { u }, 0.0, 1.0, 11);
        assert!(matches!(r, Err(Error::Evaluation { x }) if x > 0.5));
    }

    #[test]
    fn argument_checks() {
        assert!(minimize_1d(|u| u, 1.0, 0.0, 10).is_err());
        assert!(minimize_1d(|u| u, 0.0, 1.0, 7).is_err());
    }
}
