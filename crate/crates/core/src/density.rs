//! Densities tabulated on a uniform grid, trapezoid quadrature, divergence
//! functionals, likelihood ratios and inverse-CDF sampling.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower clamp applied to density values before ratios and logarithms.
pub const DENSITY_FLOOR: f64 = 1e-300;

/// Uniform grid over `[lo, hi]` with `n` points, endpoints included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    lo: f64,
    hi: f64,
    n: usize,
}

impl Default for Grid {
    /// `[-12, 12]` with 4801 points.
    fn default() -> Self {
        Grid {
            lo: -12.0,
            hi: 12.0,
            n: 4801,
        }
    }
}

impl Grid {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !lo.is_finite() || !hi.is_finite() || lo >= hi {
            return Err(Error::Parameter(format!(
                "grid bounds must be finite with lo < hi, got [{lo}, {hi}]"
            )));
        }
        if n < 3 {
            return Err(Error::Parameter(format!(
                "grid needs at least 3 points, got {n}"
            )));
        }
        Ok(Grid { lo, hi, n })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.hi
        } else {
            self.lo + (self.hi - self.lo) * i as f64 / (self.n - 1) as f64
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.point(i)).collect()
    }

    /// Trapezoid weight of grid point `i`.
    pub fn weight(&self, i: usize) -> f64 {
        if i == 0 || i + 1 == self.n {
            0.5 * self.step()
        } else {
            self.step()
        }
    }

    /// Trapezoid rule; rejects non-finite input and length mismatches.
    pub fn integrate(&self, values: &[f64]) -> Result<f64> {
        self.check_len(values.len())?;
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite integrand {} at y = {}",
                values[i],
                self.point(i)
            )));
        }
        Ok(self.trapezoid(values))
    }

    /// Trapezoid rule without validation.
    pub(crate) fn trapezoid(&self, values: &[f64]) -> f64 {
        let n = values.len();
        let interior: f64 = values[1..n - 1].iter().sum();
        self.step() * (interior + 0.5 * (values[0] + values[n - 1]))
    }

    /// `log ∫ exp(logs)` by the trapezoid rule with max-log shifting.
    /// Returns `-inf` when every term is `-inf`.
    pub(crate) fn log_trapezoid_exp(&self, logs: &[f64]) -> f64 {
        let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY || !m.is_finite() {
            return m;
        }
        let s: f64 = logs
            .iter()
            .enumerate()
            .map(|(i, &l)| self.weight(i) * (l - m).exp())
            .sum();
        m + s.ln()
    }

    /// Piecewise-linear interpolation of grid values; clamps outside `[lo, hi]`.
    pub fn interpolate(&self, values: &[f64], y: f64) -> f64 {
        let pos = (y - self.lo) / self.step();
        if pos <= 0.0 {
            return values[0];
        }
        let i = pos.floor() as usize;
        if i + 1 >= self.n {
            return values[self.n - 1];
        }
        let frac = pos - i as f64;
        values[i] + frac * (values[i + 1] - values[i])
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n {
            return Err(Error::Parameter(format!(
                "expected {} grid values, got {len}",
                self.n
            )));
        }
        Ok(())
    }
}

/// Probability density tabulated on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    grid: Grid,
    values: Vec<f64>,
}

impl GridDensity {
    /// Validates and rescales `values` to unit trapezoid mass.
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        let d = Self::from_values(grid, values)?;
        let mass = grid.trapezoid(&d.values);
        Ok(GridDensity {
            grid,
            values: d.values.into_iter().map(|v| v / mass).collect(),
        })
    }

    /// Validates `values` but keeps them as given.
    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        grid.check_len(values.len())?;
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Parameter(format!(
                "density value {} at y = {} is negative or not finite",
                values[i],
                grid.point(i)
            )));
        }
        if !values.iter().any(|&v| v > 0.0) {
            return Err(Error::Parameter("density is identically zero".into()));
        }
        Ok(GridDensity { grid, values })
    }

    /// Builds a density from log-values, exponentiating without rescaling.
    pub(crate) fn from_log_values(grid: Grid, logs: &[f64]) -> Result<Self> {
        Self::from_values(grid, logs.iter().map(|l| l.exp()).collect())
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn lo(&self) -> f64 {
        self.grid.lo
    }

    pub fn hi(&self) -> f64 {
        self.grid.hi
    }

    pub fn n(&self) -> usize {
        self.grid.n
    }

    pub fn mass(&self) -> f64 {
        self.grid.trapezoid(&self.values)
    }

    /// `∫ h(y) g(y) dy`.
    pub fn expectation(&self, h: impl Fn(f64) -> f64) -> f64 {
        let prod: Vec<f64> = (0..self.grid.n)
            .map(|i| {
                let v = self.values[i];
                if v == 0.0 {
                    0.0
                } else {
                    v * h(self.grid.point(i))
                }
            })
            .collect();
        self.grid.trapezoid(&prod)
    }

    /// `∫ w g` for a tabulated weight.
    pub fn expectation_of(&self, w: &[f64]) -> f64 {
        let prod: Vec<f64> = self
            .values
            .iter()
            .zip(w)
            .map(|(&v, &w)| if v == 0.0 { 0.0 } else { v * w })
            .collect();
        self.grid.trapezoid(&prod)
    }

    /// Logarithm of the floored values.
    pub fn log_values(&self) -> Vec<f64> {
        self.values
            .iter()
            .map(|v| v.max(DENSITY_FLOOR).ln())
            .collect()
    }

    /// Mirror image `y ↦ g(lo + hi − y)`.
    pub fn reflected(&self) -> GridDensity {
        let mut values = self.values.clone();
        values.reverse();
        GridDensity {
            grid: self.grid,
            values,
        }
    }

    /// Largest pointwise absolute difference.
    pub fn sup_distance(&self, other: &GridDensity) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, mut out: W, header_comment: &str) -> Result<()> {
        write_comment(&mut out, header_comment)?;
        writeln!(out, "y,value")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(out, "{:.16e},{:.16e}", self.grid.point(i), v)?;
        }
        Ok(())
    }
}

/// Writes each line of `text` prefixed with `# `.
pub(crate) fn write_comment<W: Write>(out: &mut W, text: &str) -> Result<()> {
    for line in text.lines() {
        writeln!(out, "# {line}")?;
    }
    Ok(())
}

pub(crate) fn check_same_grid(a: &GridDensity, b: &GridDensity) -> Result<()> {
    if a.grid != b.grid {
        return Err(Error::Parameter(format!(
            "densities live on different grids: {:?} vs {:?}",
            a.grid, b.grid
        )));
    }
    Ok(())
}

/// Parametric families used to build nominal densities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    Gaussian { mean: f64, var: f64 },
    Laplace { loc: f64, scale: f64 },
    /// Standard Laplace density modulated by `sin(2πy) + 1`.
    LaplaceSine,
}

impl Family {
    fn validate(&self) -> Result<()> {
        match *self {
            Family::Gaussian { mean, var } => {
                if !mean.is_finite() || !(var > 0.0 && var.is_finite()) {
                    return Err(Error::Parameter(format!(
                        "gaussian needs finite mean and var > 0, got ({mean}, {var})"
                    )));
                }
            }
            Family::Laplace { loc, scale } => {
                if !loc.is_finite() || !(scale > 0.0 && scale.is_finite()) {
                    return Err(Error::Parameter(format!(
                        "laplace needs finite loc and scale > 0, got ({loc}, {scale})"
                    )));
                }
            }
            Family::LaplaceSine => {}
        }
        Ok(())
    }

    pub fn pdf(&self, y: f64) -> f64 {
        match *self {
            Family::Gaussian { mean, var } => {
                let d = y - mean;
                (-0.5 * d * d / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
            }
            Family::Laplace { loc, scale } => (-(y - loc).abs() / scale).exp() / (2.0 * scale),
            Family::LaplaceSine => {
                0.5 * (-y.abs()).exp() * ((2.0 * std::f64::consts::PI * y).sin() + 1.0)
            }
        }
    }
}

/// Tabulates `family` on `grid`, floors at [`DENSITY_FLOOR`] and normalizes.
pub fn make_nominal(family: Family, grid: Grid) -> Result<GridDensity> {
    family.validate()?;
    let values = grid
        .points()
        .into_iter()
        .map(|y| family.pdf(y).max(DENSITY_FLOOR))
        .collect();
    GridDensity::new(grid, values)
}

/// Nominal densities under the two hypotheses.
#[derive(Debug, Clone)]
pub struct NominalPair {
    pub f0: GridDensity,
    pub f1: GridDensity,
    pub label: String,
}

impl NominalPair {
    pub fn new(f0: GridDensity, f1: GridDensity, label: impl Into<String>) -> Result<Self> {
        check_same_grid(&f0, &f1)?;
        Ok(NominalPair {
            f0,
            f1,
            label: label.into(),
        })
    }

    pub fn from_families(f0: Family, f1: Family, grid: Grid, label: &str) -> Result<Self> {
        Self::new(make_nominal(f0, grid)?, make_nominal(f1, grid)?, label)
    }

    /// The pairs `d1`, `d2`, `d3` used throughout the simulations.
    pub fn standard(label: &str, grid: Grid) -> Result<Self> {
        let (f0, f1) = standard_families(label)?;
        Self::from_families(f0, f1, grid, label)
    }

    pub fn grid(&self) -> &Grid {
        self.f0.grid()
    }

    /// `log(f1/f0)` on the grid, with both densities floored.
    pub fn log_ratio(&self) -> Vec<f64> {
        log_ratio(&self.f0, &self.f1)
    }

    /// Same pair with the hypotheses interchanged.
    pub fn swapped(&self) -> NominalPair {
        NominalPair {
            f0: self.f1.clone(),
            f1: self.f0.clone(),
            label: self.label.clone(),
        }
    }
}

pub fn standard_families(label: &str) -> Result<(Family, Family)> {
    match label {
        "d1" => Ok((
            Family::Gaussian {
                mean: -1.0,
                var: 1.0,
            },
            Family::Gaussian {
                mean: 1.0,
                var: 1.0,
            },
        )),
        "d2" => Ok((
            Family::Gaussian {
                mean: -1.0,
                var: 1.0,
            },
            Family::Gaussian {
                mean: 1.0,
                var: 4.0,
            },
        )),
        "d3" => Ok((
            Family::Laplace {
                loc: 0.0,
                scale: 1.0,
            },
            Family::LaplaceSine,
        )),
        other => Err(Error::Parameter(format!(
            "unknown nominal pair '{other}' (expected d1, d2 or d3)"
        ))),
    }
}

/// `log(g1/g0)` with both densities floored at [`DENSITY_FLOOR`].
pub fn log_ratio(g0: &GridDensity, g1: &GridDensity) -> Vec<f64> {
    g0.values
        .iter()
        .zip(&g1.values)
        .map(|(&a, &b)| b.max(DENSITY_FLOOR).ln() - a.max(DENSITY_FLOOR).ln())
        .collect()
}

/// Divergence family defining an uncertainty ball.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "alpha", rename_all = "snake_case")]
pub enum DivergenceKind {
    Kl,
    Alpha(f64),
    SymAlpha(f64),
}

impl DivergenceKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DivergenceKind::Kl => Ok(()),
            DivergenceKind::Alpha(a) | DivergenceKind::SymAlpha(a) => check_alpha(a),
        }
    }

    /// `D(g, f)` for this family.
    pub fn divergence(&self, g: &GridDensity, f: &GridDensity) -> Result<f64> {
        match *self {
            DivergenceKind::Kl => kl_divergence(g, f),
            DivergenceKind::Alpha(a) => alpha_divergence(g, f, a),
            DivergenceKind::SymAlpha(a) => sym_alpha_divergence(g, f, a),
        }
    }

    pub fn name(&self) -> String {
        match *self {
            DivergenceKind::Kl => "kl".into(),
            DivergenceKind::Alpha(a) => format!("alpha({a})"),
            DivergenceKind::SymAlpha(a) => format!("symalpha({a})"),
        }
    }
}

/// Uncertainty class `{g : D(g, nominal) ≤ epsilon}`.
#[derive(Debug, Clone)]
pub struct DivergenceBall {
    pub kind: DivergenceKind,
    pub epsilon: f64,
    pub nominal: GridDensity,
}

impl DivergenceBall {
    pub fn new(kind: DivergenceKind, epsilon: f64, nominal: GridDensity) -> Result<Self> {
        kind.validate()?;
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::Parameter(format!(
                "ball radius must be finite and nonnegative, got {epsilon}"
            )));
        }
        Ok(DivergenceBall {
            kind,
            epsilon,
            nominal,
        })
    }

    pub fn divergence_from_center(&self, g: &GridDensity) -> Result<f64> {
        self.kind.divergence(g, &self.nominal)
    }

    pub fn contains(&self, g: &GridDensity, slack: f64) -> Result<bool> {
        Ok(self.divergence_from_center(g)? <= self.epsilon + slack)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !alpha.is_finite() || alpha == 0.0 || alpha == 1.0 {
        return Err(Error::Domain(format!(
            "alpha must be finite and differ from 0 and 1, got {alpha}"
        )));
    }
    Ok(())
}

/// `D_u(g0, g1) = ∫ g1^u g0^(1-u)`.
pub fn u_affinity(g0: &GridDensity, g1: &GridDensity, u: f64) -> Result<f64> {
    check_same_grid(g0, g1)?;
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::Domain(format!("u must lie in [0, 1], got {u}")));
    }
    let terms: Vec<f64> = g0
        .values
        .iter()
        .zip(&g1.values)
        .map(|(&a, &b)| {
            if u == 0.0 {
                a
            } else if u == 1.0 {
                b
            } else if a == 0.0 || b == 0.0 {
                0.0
            } else {
                (u * b.ln() + (1.0 - u) * a.ln()).exp()
            }
        })
        .collect();
    Ok(g0.grid.trapezoid(&terms))
}

/// `∫ g log(g/f)`.
pub fn kl_divergence(g: &GridDensity, f: &GridDensity) -> Result<f64> {
    check_same_grid(g, f)?;
    let mut terms = Vec::with_capacity(g.n());
    for (i, (&gv, &fv)) in g.values.iter().zip(&f.values).enumerate() {
        if gv == 0.0 {
            terms.push(0.0);
        } else if fv == 0.0 {
            return Err(support_violation(g, i));
        } else {
            terms.push(gv * (gv.ln() - fv.ln()));
        }
    }
    Ok(g.grid.trapezoid(&terms).max(0.0))
}

/// `(1/(α(1-α))) ∫ ((1-α) f + α g - g^α f^(1-α))`.
pub fn alpha_divergence(g: &GridDensity, f: &GridDensity, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    check_same_grid(g, f)?;
    let a = alpha;
    let mut terms = Vec::with_capacity(g.n());
    for (i, (&gv, &fv)) in g.values.iter().zip(&f.values).enumerate() {
        let t = if gv > 0.0 && fv > 0.0 {
            alpha_term(fv.ln(), gv.ln() - fv.ln(), a)
        } else if gv == 0.0 && fv == 0.0 {
            0.0
        } else if fv == 0.0 {
            if a > 1.0 {
                return Err(support_violation(g, i));
            }
            a * gv
        } else {
            if a < 0.0 {
                return Err(support_violation(f, i));
            }
            (1.0 - a) * fv
        };
        terms.push(t);
    }
    Ok((g.grid.trapezoid(&terms) / (a * (1.0 - a))).max(0.0))
}

/// `f (α expm1(s) − expm1(α s))` with `f = e^{ln_f}` and `s = log(g/f)`:
/// the unscaled α-divergence integrand. The expm1 form cancels the
/// first-order terms exactly, which keeps small divergences accurate.
pub(crate) fn alpha_term(ln_f: f64, s: f64, a: f64) -> f64 {
    if s.abs() < 1.0 {
        ln_f.exp() * (a * s.exp_m1() - (a * s).exp_m1())
    } else {
        let f = ln_f.exp();
        a * ((ln_f + s).exp() - f) - ((ln_f + a * s).exp() - f)
    }
}

/// `D_α(g, f) + D_α(f, g)`.
pub fn sym_alpha_divergence(g: &GridDensity, f: &GridDensity, alpha: f64) -> Result<f64> {
    Ok(alpha_divergence(g, f, alpha)? + alpha_divergence(f, g, alpha)?)
}

fn support_violation(g: &GridDensity, i: usize) -> Error {
    Error::Domain(format!(
        "reference density vanishes at y = {} where the other has mass {}",
        g.grid.point(i),
        g.values[i]
    ))
}

/// Inverse-CDF sampler over the piecewise-linear cumulative trapezoid.
#[derive(Debug, Clone)]
pub struct GridSampler {
    grid: Grid,
    cdf: Vec<f64>,
}

impl GridSampler {
    pub fn new(g: &GridDensity) -> Self {
        let h = g.grid.step();
        let mut cdf = Vec::with_capacity(g.n());
        let mut acc = 0.0;
        cdf.push(0.0);
        for w in g.values.windows(2) {
            acc += 0.5 * h * (w[0] + w[1]);
            cdf.push(acc);
        }
        GridSampler { grid: g.grid, cdf }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let total = self.cdf[self.cdf.len() - 1];
        let target = rng.random::<f64>() * total;
        // First knot with cdf > target; the cell is [k-1, k].
        let k = self.cdf.partition_point(|&c| c <= target).clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[k - 1], self.cdf[k]);
        let frac = if c1 > c0 { (target - c0) / (c1 - c0) } else { 0.5 };
        self.grid.point(k - 1) + frac * self.grid.step()
    }
}

/// `count` i.i.d. draws from `g`, deterministic in `seed`.
pub fn sample(g: &GridDensity, count: usize, seed: u64) -> Result<Vec<f64>> {
    if count == 0 {
        return Err(Error::Parameter("sample count must be at least 1".into()));
    }
    let sampler = GridSampler::new(g);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count).map(|_| sampler.draw(&mut rng)).collect())
}
