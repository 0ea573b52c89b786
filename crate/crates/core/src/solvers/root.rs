use crate::error::{Error, Result};

const MAX_ITERS: usize = 300;

/// Root of `f` on `[a, b]` by Brent's method: secant and inverse quadratic
/// steps safeguarded by bisection.
///
/// Stops on an exact zero or once the bracket is narrower than
/// `1e-14 + 4·ε_mach·|x|`.
pub fn scalar_root<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64) -> Result<f64> {
    let (mut a, mut b) = (a, b);
    let (mut fa, mut fb) = (f(a), f(b));
    if !fa.is_finite() || !fb.is_finite() {
        return Err(Error::Evaluation {
            x: if fa.is_finite() { b } else { a },
        });
    }
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::Bracket { a, b, fa, fb });
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..MAX_ITERS {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5e-14;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b);
        if !fb.is_finite() {
            return Err(Error::Evaluation { x: b });
        }
    }
    Ok(b)
}

/// Newton's method with analytic derivative, kept inside `[lo, hi]` by
/// bisection. `fdf` returns `(f(x), f'(x))`; `f(lo)` and `f(hi)` must differ
/// in sign. Stops when the step falls below `xtol·max(1, |x|)`.
pub fn safeguarded_newton<F>(mut fdf: F, lo: f64, hi: f64, x0: f64, xtol: f64) -> Result<f64>
where
    F: FnMut(f64) -> (f64, f64),
{
    let (flo, _) = fdf(lo);
    let (fhi, _) = fdf(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() || flo.is_nan() || fhi.is_nan() {
        return Err(Error::Bracket {
            a: lo,
            b: hi,
            fa: flo,
            fb: fhi,
        });
    }
    // Orient so that f(xl) < 0 < f(xh).
    let (mut xl, mut xh) = if flo < 0.0 { (lo, hi) } else { (hi, lo) };
    let mut x = if x0 > lo.min(hi) && x0 < lo.max(hi) {
        x0
    } else {
        0.5 * (lo + hi)
    };
    let mut dx_old = (hi - lo).abs();
    let mut dx = dx_old;
    let (mut fx, mut dfx) = fdf(x);
    for _ in 0..MAX_ITERS {
        if fx == 0.0 {
            return Ok(x);
        }
        let newton_ok = dfx.is_finite()
            && dfx != 0.0
            && ((x - xh) * dfx - fx) * ((x - xl) * dfx - fx) < 0.0
            && (2.0 * fx).abs() <= (dx_old * dfx).abs();
        dx_old = dx;
        if newton_ok {
            dx = fx / dfx;
            x -= dx;
        } else {
            dx = 0.5 * (xh - xl);
            x = xl + dx;
        }
        if dx.abs() <= xtol * x.abs().max(1.0) {
            return Ok(x);
        }
        let r = fdf(x);
        fx = r.0;
        dfx = r.1;
        if fx.is_nan() {
            return Err(Error::Evaluation { x });
        }
        if fx < 0.0 {
            xl = x;
        } else {
            xh = x;
        }
    }
    Err(Error::Solver {
        context: "safeguarded Newton".into(),
        iterations: MAX_ITERS,
        residual: fx.abs(),
    })
}
