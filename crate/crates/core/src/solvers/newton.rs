use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Controls for [`damped_newton`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub max_iters: usize,
    /// Convergence threshold on the residual max-norm.
    pub tol: f64,
    /// Backtracking factor applied to the step length; `1.0` disables the
    /// line search.
    pub damping: f64,
    /// Smallest step length tried before giving up on the current direction.
    pub min_step: f64,
    /// Relative forward-difference step for the Jacobian.
    pub fd_step: f64,
    /// Give up once the residual has not halved over this many iterations;
    /// `0` disables the check.
    pub stall_window: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            max_iters: 200,
            tol: 1e-10,
            damping: 0.5,
            // 30 halvings
            min_step: 0.5f64.powi(30),
            fd_step: 1e-7,
            stall_window: 0,
        }
    }
}

impl NewtonOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Parameter(format!("tol must be > 0, got {}", self.tol)));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Parameter(format!(
                "damping must lie in (0, 1], got {}",
                self.damping
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::Parameter("max_iters must be at least 1".into()));
        }
        if !(self.min_step > 0.0) || !(self.fd_step > 0.0) {
            return Err(Error::Parameter("min_step and fd_step must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub root: Vec<f64>,
    pub residuals: Vec<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

const FD_ABS_FLOOR: f64 = 1e-9;
const MAX_CONDITION: f64 = 1e14;

fn max_norm(r: &[f64]) -> f64 {
    r.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn all_finite(r: &[f64]) -> bool {
    r.iter().all(|v| v.is_finite())
}

/// Newton's method with a forward-difference Jacobian and backtracking on the
/// residual max-norm.
///
/// A trial point at which `system` returns an error is treated as lying
/// outside the domain and the step is shortened. A residual containing NaN or
/// infinity is a hard error. When no step length down to `min_step` reduces
/// the residual, the current iterate is returned with `converged = false`.
pub fn damped_newton<F>(mut system: F, x0: &[f64], opts: &NewtonOptions) -> Result<SolveReport>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    opts.validate()?;
    let dim = x0.len();
    let mut x = x0.to_vec();
    let mut r = system(&x)?;
    if r.len() != dim {
        return Err(Error::Parameter(format!(
            "system maps {dim} unknowns to {} residuals",
            r.len()
        )));
    }
    if !all_finite(&r) {
        return Err(Error::Numeric(format!(
            "non-finite residual at the initial point {x:?}"
        )));
    }
    let mut norm = max_norm(&r);
    let mut history = vec![norm];
    let report = |x: Vec<f64>, r: Vec<f64>, norm: f64, it: usize, ok: bool| SolveReport {
        root: x,
        residuals: r,
        residual_norm: norm,
        iterations: it,
        converged: ok,
    };

    for iter in 0..opts.max_iters {
        if norm <= opts.tol {
            return Ok(report(x, r, norm, iter, true));
        }
        let w = opts.stall_window;
        if w > 0 && iter >= w && norm > 0.5 * history[iter - w] {
            log::debug!("newton stalled: residual {norm:e} after {iter} iterations");
            return Ok(report(x, r, norm, iter, false));
        }
        let jac = fd_jacobian(&mut system, &x, &r, opts.fd_step)?;
        let dx = newton_direction(jac, &r)?;

        if opts.damping >= 1.0 {
            x.iter_mut().zip(&dx).for_each(|(xi, d)| *xi += d);
            r = system(&x)?;
            if !all_finite(&r) {
                return Err(non_finite(iter, norm));
            }
            norm = max_norm(&r);
            history.push(norm);
            continue;
        }

        let mut t = 1.0;
        let mut accepted = None;
        while t >= opts.min_step {
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(xi, d)| xi + t * d).collect();
            match system(&trial) {
                Ok(rt) => {
                    if !all_finite(&rt) {
                        return Err(non_finite(iter, norm));
                    }
                    let nt = max_norm(&rt);
                    if nt < norm {
                        accepted = Some((trial, rt, nt));
                        break;
                    }
                }
                Err(e) => log::trace!("newton trial rejected at step {t}: {e}"),
            }
            t *= opts.damping;
        }
        match accepted {
            Some((xn, rn, nn)) => {
                x = xn;
                r = rn;
                norm = nn;
                history.push(norm);
            }
            None => {
                log::debug!("newton line search stalled at residual {norm:e}");
                return Ok(report(x, r, norm, iter + 1, false));
            }
        }
    }
    let ok = norm <= opts.tol;
    Ok(report(x, r, norm, opts.max_iters, ok))
}

fn non_finite(iter: usize, residual: f64) -> Error {
    Error::Solver {
        context: "non-finite residual during line search".into(),
        iterations: iter,
        residual,
    }
}

fn fd_jacobian<F>(system: &mut F, x: &[f64], r: &[f64], fd_step: f64) -> Result<DMatrix<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let n = x.len();
    let mut jac = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    for j in 0..n {
        // Power-of-two steps keep x + h exact, so linear residuals give an
        // exact jacobian.
        let h = (fd_step * x[j].abs()).max(FD_ABS_FLOOR);
        let h = 2f64.powi(h.log2().round() as i32);
        xp[j] = x[j] + h;
        // Fall back to a backward difference when the forward point is
        // outside the domain.
        let (rp, signed_h) = match system(&xp) {
            Ok(rp) => (rp, h),
            Err(_) => {
                xp[j] = x[j] - h;
                (system(&xp)?, -h)
            }
        };
        xp[j] = x[j];
        for i in 0..n {
            jac[(i, j)] = (rp[i] - r[i]) / signed_h;
        }
    }
    if jac.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite finite-difference jacobian".into()));
    }
    Ok(jac)
}

fn newton_direction(jac: DMatrix<f64>, r: &[f64]) -> Result<Vec<f64>> {
    // Judge conditioning with unit columns so the units of the unknowns do
    // not count against the system.
    let mut scaled = jac.clone();
    for mut col in scaled.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
    }
    let sv = scaled.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::SingularJacobian { condition });
    }
    let rhs = -DVector::from_column_slice(r);
    jac.lu()
        .solve(&rhs)
        .map(|d| d.iter().copied().collect())
        .ok_or(Error::SingularJacobian { condition })
}
