//! Command-line front end. Every command writes CSV data plus a
//! `summary.json` into the output directory; each CSV starts with `# `
//! comment lines holding the library version and the invocation.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::asymptotics::{self, chernoff_point, decay_slope, monte_carlo_error, rate_curves};
use crate::density::{
    kl_divergence, u_affinity, DivergenceKind, Family, Grid, GridDensity, NominalPair,
};
use crate::error::{Error, Result};
use crate::lfd_bayes::{
    minimize_over_u, solve_lfd, write_lrf_csv, LfdSolution, RobustLrf, UScanOptions,
};
use crate::lfd_np::{dabak_lfds, solve_np_type1, solve_np_type2, thresholds, NpSolution};
use crate::VERSION;

/// Radius used for a zero radius paired with a positive one; the solvers
/// need an interior point.
pub const ZERO_RADIUS: f64 = 1e-10;

#[derive(Debug, Parser)]
#[command(name = "robust-lrt", version, about = "Least favorable distributions and robust likelihood ratio tests")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Nominal and least favorable densities.
    Lfd(ScenarioArgs),
    /// Nominal and robust likelihood ratio functions.
    Lrf(ScenarioArgs),
    /// u-affinity and KKT multipliers as functions of u.
    Uscan {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 49)]
        scan_points: usize,
    },
    /// Neyman–Pearson least favorable pair for KL balls.
    Np {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, value_enum, default_value_t = Variant::Type1)]
        variant: Variant,
    },
    /// Rate functions of every (test, data) combination.
    Rates {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Threshold or grid `lo:hi:n`.
        #[arg(long = "t", default_value = "-3:3:121", allow_hyphen_values = true)]
        t: String,
    },
    /// Monte Carlo error probabilities.
    Mc {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, value_enum, default_value_t = Test::N)]
        test: Test,
        #[arg(long, default_value = "5,10,20,40")]
        n_values: String,
        #[arg(long, default_value_t = 100_000)]
        trials: usize,
        #[arg(long = "t", default_value = "0", allow_hyphen_values = true)]
        t: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Variant {
    Type1,
    Type2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Ball {
    Kl,
    Alpha,
    Symalpha,
}

/// Which LFD pair builds the test (and, for `mc`, draws the data).
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Test {
    /// Bayesian minimax pair at û.
    A,
    /// Exponential-tilt pair.
    AStar,
    /// Nominal pair.
    N,
}

impl Test {
    fn tag(self) -> &'static str {
        match self {
            Test::A => "a",
            Test::AStar => "a_star",
            Test::N => "n",
        }
    }
}

/// Scenario flags; anything left unset falls back to `--config`, then to
/// the defaults of [`ScenarioConfig`].
#[derive(Debug, Clone, Default, Args)]
pub struct ScenarioArgs {
    #[arg(long)]
    pub nominal: Option<String>,
    #[arg(long, value_enum)]
    pub ball: Option<Ball>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// `e0` or `e0,e1`.
    #[arg(long)]
    pub eps: Option<String>,
    /// Fixed `u` or `auto`.
    #[arg(long)]
    pub u: Option<String>,
    /// `lo,hi,n`.
    #[arg(long, allow_hyphen_values = true)]
    pub grid: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON document with the fields of the scenario.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

/// Fully resolved scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_label")]
    pub nominal_label: String,
    /// Custom `(f0, f1)` families; overrides the standard pair of the label.
    #[serde(default)]
    pub families: Option<(Family, Family)>,
    #[serde(default = "default_ball")]
    pub ball: DivergenceKind,
    #[serde(default = "default_eps")]
    pub eps0: f64,
    #[serde(default = "default_eps")]
    pub eps1: f64,
    #[serde(default = "default_grid")]
    pub grid: GridSpec,
    #[serde(default)]
    pub u: Option<f64>,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
}

fn default_label() -> String {
    "d1".into()
}

fn default_ball() -> DivergenceKind {
    DivergenceKind::Kl
}

fn default_eps() -> f64 {
    0.1
}

fn default_grid() -> GridSpec {
    let g = Grid::default();
    GridSpec {
        lo: g.lo(),
        hi: g.hi(),
        n: g.len(),
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            nominal_label: default_label(),
            families: None,
            ball: default_ball(),
            eps0: default_eps(),
            eps1: default_eps(),
            grid: default_grid(),
            u: None,
            output_dir: default_out(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.grid.lo, self.grid.hi, self.grid.n)
    }

    pub fn nominals(&self) -> Result<NominalPair> {
        let grid = self.grid()?;
        match self.families {
            Some((f0, f1)) => NominalPair::from_families(f0, f1, grid, &self.nominal_label),
            None => NominalPair::standard(&self.nominal_label, grid),
        }
    }

    /// Radii as passed to the solvers, with `0` replaced by [`ZERO_RADIUS`].
    pub fn radii(&self) -> (f64, f64) {
        let fix = |e: f64| if e == 0.0 { ZERO_RADIUS } else { e };
        (fix(self.eps0), fix(self.eps1))
    }

    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        self.ball.validate()?;
        for e in [self.eps0, self.eps1] {
            if !(e.is_finite() && e >= 0.0) {
                return Err(Error::Parameter(format!("radius must be finite and ≥ 0, got {e}")));
            }
        }
        if let Some(u) = self.u {
            if !(u > 0.0 && u < 1.0) {
                return Err(Error::Parameter(format!("u must lie in (0, 1), got {u}")));
            }
        }
        if self.families.is_none() {
            crate::density::standard_families(&self.nominal_label)?;
        }
        Ok(())
    }
}

fn parse_f64(what: &str, s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Parameter(format!("{what}: cannot parse '{s}' as a number")))
}

fn parse_usize(what: &str, s: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| Error::Parameter(format!("{what}: cannot parse '{s}' as a count")))
}

pub fn parse_eps(s: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = s.split(',').collect();
    match parts.as_slice() {
        [e] => {
            let e = parse_f64("--eps", e)?;
            Ok((e, e))
        }
        [e0, e1] => Ok((parse_f64("--eps", e0)?, parse_f64("--eps", e1)?)),
        _ => Err(Error::Parameter(format!("--eps expects e0 or e0,e1, got '{s}'"))),
    }
}

pub fn parse_grid(s: &str) -> Result<GridSpec> {
    let parts: Vec<&str> = s.split(',').collect();
    let [lo, hi, n] = parts.as_slice() else {
        return Err(Error::Parameter(format!("--grid expects lo,hi,n, got '{s}'")));
    };
    Ok(GridSpec {
        lo: parse_f64("--grid", lo)?,
        hi: parse_f64("--grid", hi)?,
        n: parse_usize("--grid", n)?,
    })
}

/// A single threshold or `lo:hi:n` with endpoints included.
pub fn parse_t(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [t] => Ok(vec![parse_f64("--t", t)?]),
        [lo, hi, n] => {
            let (lo, hi, n) = (parse_f64("--t", lo)?, parse_f64("--t", hi)?, parse_usize("--t", n)?);
            if n < 2 || !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Parameter(format!("--t grid needs lo < hi and n ≥ 2, got '{s}'")));
            }
            Ok((0..n)
                .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
                .collect())
        }
        _ => Err(Error::Parameter(format!("--t expects a number or lo:hi:n, got '{s}'"))),
    }
}

fn parse_list(s: &str) -> Result<Vec<usize>> {
    s.split(',').map(|v| parse_usize("--n-values", v)).collect()
}

impl ScenarioArgs {
    /// Flags over config file over defaults.
    pub fn resolve(&self) -> Result<ScenarioConfig> {
        let mut cfg = match &self.config {
            Some(path) => ScenarioConfig::from_json(&fs::read_to_string(path)?)?,
            None => ScenarioConfig::default(),
        };
        if let Some(label) = &self.nominal {
            cfg.nominal_label = label.clone();
            cfg.families = None;
        }
        let alpha = self.alpha.or(match cfg.ball {
            DivergenceKind::Alpha(a) | DivergenceKind::SymAlpha(a) => Some(a),
            DivergenceKind::Kl => None,
        });
        let need_alpha = || {
            alpha.ok_or_else(|| Error::Parameter("--ball alpha and symalpha need --alpha".into()))
        };
        cfg.ball = match self.ball {
            Some(Ball::Kl) => DivergenceKind::Kl,
            Some(Ball::Alpha) => DivergenceKind::Alpha(need_alpha()?),
            Some(Ball::Symalpha) => DivergenceKind::SymAlpha(need_alpha()?),
            None => match (cfg.ball, self.alpha) {
                (DivergenceKind::Alpha(_), Some(a)) => DivergenceKind::Alpha(a),
                (DivergenceKind::SymAlpha(_), Some(a)) => DivergenceKind::SymAlpha(a),
                (k, _) => k,
            },
        };
        if let Some(e) = &self.eps {
            (cfg.eps0, cfg.eps1) = parse_eps(e)?;
        }
        if let Some(u) = &self.u {
            cfg.u = match u.trim() {
                "auto" => None,
                v => Some(parse_f64("--u", v)?),
            };
        }
        if let Some(g) = &self.grid {
            cfg.grid = parse_grid(g)?;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, S>(args: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let args: Vec<String> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let msg = e.to_string();
            return Err(Error::Parameter(msg.trim_start_matches("error: ").trim_end().to_string()));
        }
        Err(e) => {
            // --help and --version
            // A closed pipe is not worth a panic.
            let _ = write!(std::io::stdout(), "{e}");
            return Ok(());
        }
    };
    execute(&cli.command, &invocation(&args))
}

fn invocation(args: &[String]) -> String {
    args.iter()
        .map(|a| {
            if a.is_empty() || a.contains(|c: char| c.is_whitespace() || c == '\'' || c == '"') {
                format!("'{}'", a.replace('\'', "'\\''"))
            } else {
                a.clone()
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn execute(command: &Command, invocation: &str) -> Result<()> {
    match command {
        Command::Lfd(s) => cmd_lfd(&s.resolve()?, invocation),
        Command::Lrf(s) => cmd_lrf(&s.resolve()?, invocation),
        Command::Uscan {
            scenario,
            scan_points,
        } => cmd_uscan(&scenario.resolve()?, *scan_points, invocation),
        Command::Np { scenario, variant } => cmd_np(&scenario.resolve()?, *variant, invocation),
        Command::Rates { scenario, t } => cmd_rates(&scenario.resolve()?, &parse_t(t)?, invocation),
        Command::Mc {
            scenario,
            test,
            n_values,
            trials,
            t,
            seed,
        } => {
            let t = match parse_t(t)?.as_slice() {
                [t] => *t,
                _ => return Err(Error::Parameter("mc takes a single threshold".into())),
            };
            cmd_mc(
                &scenario.resolve()?,
                *test,
                &parse_list(n_values)?,
                *trials,
                t,
                *seed,
                invocation,
            )
        }
    }
}

/// Output directory plus the header written into every file.
struct Output {
    dir: PathBuf,
    header: String,
}

impl Output {
    fn new(cfg: &ScenarioConfig, invocation: &str) -> Result<Self> {
        fs::create_dir_all(&cfg.output_dir)?;
        Ok(Output {
            dir: cfg.output_dir.clone(),
            header: format!("robust-lrt {VERSION}\ninvocation: {invocation}"),
        })
    }

    fn file(&self, name: &str) -> Result<BufWriter<File>> {
        Ok(BufWriter::new(File::create(self.dir.join(name))?))
    }

    fn density(&self, name: &str, g: &GridDensity) -> Result<()> {
        let mut f = self.file(name)?;
        g.write_csv(&mut f, &self.header)?;
        Ok(f.flush()?)
    }

    fn lrf(&self, name: &str, nominal: &RobustLrf, robust: &RobustLrf) -> Result<()> {
        let mut f = self.file(name)?;
        write_lrf_csv(&mut f, nominal, robust, &self.header)?;
        Ok(f.flush()?)
    }

    fn summary(&self, command: &str, cfg: &ScenarioConfig, body: Value) -> Result<()> {
        let mut doc = json!({
            "version": VERSION,
            "invocation": self.header.lines().nth(1).unwrap_or_default().trim_start_matches("invocation: "),
            "command": command,
            "config": cfg,
        });
        if let (Value::Object(doc), Value::Object(body)) = (&mut doc, body) {
            doc.extend(body);
        }
        let mut f = self.file("summary.json")?;
        serde_json::to_writer_pretty(&mut f, &doc)?;
        writeln!(f)?;
        Ok(f.flush()?)
    }

    fn path(&self) -> &Path {
        &self.dir
    }
}

/// Pair of the Bayesian minimax test with the fields reported for it.
struct BayesPair {
    g0: GridDensity,
    g1: GridDensity,
    lrf: RobustLrf,
    u: f64,
    d_u: f64,
    summary: Value,
}

/// LFD pair at the configured `u`, or at the minimizing û when unset.
/// Balls of radius zero hold only the nominals and are not solved for.
fn bayes_pair(cfg: &ScenarioConfig, nominals: &NominalPair) -> Result<BayesPair> {
    let (f0, f1) = (&nominals.f0, &nominals.f1);
    if cfg.eps0 == 0.0 && cfg.eps1 == 0.0 {
        let (u, source) = match cfg.u {
            Some(u) => (u, "fixed"),
            None => (chernoff_point(f0, f1)?.0, "minimized"),
        };
        let d_u = u_affinity(f0, f1, u)?;
        return Ok(BayesPair {
            g0: f0.clone(),
            g1: f1.clone(),
            lrf: RobustLrf::from_pair(f0, f1)?,
            u,
            d_u,
            summary: json!({
                "ball": cfg.ball,
                "eps0": 0.0,
                "eps1": 0.0,
                "u": u,
                "u_source": source,
                "d_u": d_u,
                "chernoff_exponent": -d_u.ln(),
                "multipliers": null,
                "divergence0": 0.0,
                "divergence1": 0.0,
            }),
        });
    }
    let (e0, e1) = cfg.radii();
    let (sol, source) = match cfg.u {
        Some(u) => (solve_lfd(cfg.ball, nominals, e0, e1, u, None)?, "fixed"),
        None => (
            minimize_over_u(cfg.ball, nominals, e0, e1, &UScanOptions::default())?.solution,
            "minimized",
        ),
    };
    let summary = solution_summary(&sol, nominals, source)?;
    Ok(BayesPair {
        u: sol.u,
        d_u: sol.d_u,
        summary,
        g0: sol.g0_hat,
        g1: sol.g1_hat,
        lrf: sol.lrf,
    })
}

fn solution_summary(sol: &LfdSolution, nominals: &NominalPair, u_source: &str) -> Result<Value> {
    Ok(json!({
        "ball": sol.kind,
        "eps0": sol.eps0,
        "eps1": sol.eps1,
        "u": sol.u,
        "u_source": u_source,
        "d_u": sol.d_u,
        "chernoff_exponent": -sol.d_u.ln(),
        "multipliers": sol.multipliers(),
        "residuals": sol.residuals,
        "divergence0": sol.kind.divergence(&sol.g0_hat, &nominals.f0)?,
        "divergence1": sol.kind.divergence(&sol.g1_hat, &nominals.f1)?,
        "iterations": sol.iterations,
    }))
}

pub fn cmd_lfd(cfg: &ScenarioConfig, invocation: &str) -> Result<()> {
    let nominals = cfg.nominals()?;
    let pair = bayes_pair(cfg, &nominals)?;
    let out = Output::new(cfg, invocation)?;
    out.density("f0.csv", &nominals.f0)?;
    out.density("f1.csv", &nominals.f1)?;
    out.density("g0_hat.csv", &pair.g0)?;
    out.density("g1_hat.csv", &pair.g1)?;
    out.summary("lfd", cfg, pair.summary)?;
    log::info!("lfd: u = {}, D_u = {}, files in {}", pair.u, pair.d_u, out.path().display());
    Ok(())
}

pub fn cmd_lrf(cfg: &ScenarioConfig, invocation: &str) -> Result<()> {
    let nominals = cfg.nominals()?;
    let pair = bayes_pair(cfg, &nominals)?;
    let nominal = RobustLrf::from_pair(&nominals.f0, &nominals.f1)?;
    let out = Output::new(cfg, invocation)?;
    out.lrf("lrf.csv", &nominal, &pair.lrf)?;
    let mut body = pair.summary;
    body["nominal_lrf_max"] = json!(nominal.max());
    body["robust_lrf_max"] = json!(pair.lrf.max());
    out.summary("lrf", cfg, body)?;
    Ok(())
}

pub fn cmd_uscan(cfg: &ScenarioConfig, scan_points: usize, invocation: &str) -> Result<()> {
    let nominals = cfg.nominals()?;
    let (e0, e1) = cfg.radii();
    let opts = UScanOptions {
        scan_points,
        ..UScanOptions::default()
    };
    let scan = minimize_over_u(cfg.ball, &nominals, e0, e1, &opts)?;
    let out = Output::new(cfg, invocation)?;
    let mut f = out.file("uscan.csv")?;
    crate::density::write_comment(&mut f, &out.header)?;
    writeln!(f, "u,d_u,lambda0,mu0,lambda1,mu1")?;
    for p in &scan.points {
        let d = p.d_u.unwrap_or(f64::NAN);
        let m = p.multipliers;
        let [l0, m0, l1, m1] = m.map_or([f64::NAN; 4], |m| [m.lambda0, m.mu0, m.lambda1, m.mu1]);
        writeln!(f, "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}", p.u, d, l0, m0, l1, m1)?;
    }
    f.flush()?;
    let mut body = solution_summary(&scan.solution, &nominals, "minimized")?;
    body["scan_points"] = json!(scan.points.len());
    body["failed"] = json!(scan.failed);
    out.summary("uscan", cfg, body)?;
    Ok(())
}

fn require_kl(cfg: &ScenarioConfig, command: &str) -> Result<()> {
    if cfg.ball != DivergenceKind::Kl {
        return Err(Error::Parameter(format!(
            "{command} is only defined for KL balls, got {}",
            cfg.ball.name()
        )));
    }
    Ok(())
}

pub fn cmd_np(cfg: &ScenarioConfig, variant: Variant, invocation: &str) -> Result<()> {
    require_kl(cfg, "np")?;
    let nominals = cfg.nominals()?;
    let (e0, e1) = cfg.radii();
    let sol: NpSolution = match variant {
        Variant::Type1 => solve_np_type1(&nominals, e0, e1, None)?,
        Variant::Type2 => solve_np_type2(&nominals, e0, e1, None)?,
    };
    let nominal = RobustLrf::from_pair(&nominals.f0, &nominals.f1)?;
    let out = Output::new(cfg, invocation)?;
    out.density("g0_hat.csv", &sol.g0_hat)?;
    out.density("g1_hat.csv", &sol.g1_hat)?;
    out.lrf("lrf.csv", &nominal, &sol.lrf()?)?;
    out.summary(
        "np",
        cfg,
        json!({
            "variant": sol.variant,
            "exponent": sol.exponent,
            "nominal_exponent": match variant {
                Variant::Type1 => kl_divergence(&nominals.f0, &nominals.f1)?,
                Variant::Type2 => kl_divergence(&nominals.f1, &nominals.f0)?,
            },
            "multipliers": sol.multipliers(),
            "residuals": sol.residuals,
            "iterations": sol.iterations,
        }),
    )?;
    Ok(())
}

/// LFD pairs of the three tests: `(tag, g0, g1, extra summary fields)`.
fn test_pairs(cfg: &ScenarioConfig, nominals: &NominalPair) -> Result<Vec<(Test, GridDensity, GridDensity, Value)>> {
    let (e0, e1) = cfg.radii();
    let a = bayes_pair(cfg, nominals)?;
    let d = dabak_lfds(nominals, e0, e1)?;
    Ok(vec![
        (
            Test::A,
            a.g0,
            a.g1,
            json!({"u": a.u, "u_source": a.summary["u_source"], "d_u": a.d_u}),
        ),
        (Test::AStar, d.g0_star, d.g1_star, json!({"s0": d.s0, "s1": d.s1})),
        (Test::N, nominals.f0.clone(), nominals.f1.clone(), json!({})),
    ])
}

pub fn cmd_rates(cfg: &ScenarioConfig, t_grid: &[f64], invocation: &str) -> Result<()> {
    require_kl(cfg, "rates")?;
    let nominals = cfg.nominals()?;
    let pairs = test_pairs(cfg, &nominals)?;
    let out = Output::new(cfg, invocation)?;
    let mut marks = out.file("thresholds.csv")?;
    crate::density::write_comment(&mut marks, &out.header)?;
    writeln!(marks, "test_tag,data_tag,t0,t1")?;
    let mut tests = serde_json::Map::new();
    let mut markers = Vec::new();
    for (test, g0, g1, extra) in &pairs {
        let lrf = RobustLrf::from_pair(g0, g1)?;
        for (data, d0, d1, _) in &pairs {
            let curve = rate_curves(&lrf, d0, d1, t_grid, test.tag(), data.tag())?;
            let mut f = out.file(&format!("rates_{}_{}.csv", test.tag(), data.tag()))?;
            curve.write_csv(&mut f, &out.header)?;
            f.flush()?;
            let (t0, t1) = thresholds(&lrf, d0, d1)?;
            writeln!(marks, "{},{},{:.16e},{:.16e}", test.tag(), data.tag(), t0, t1)?;
            markers.push(json!({"test": test.tag(), "data": data.tag(), "t0": t0, "t1": t1}));
        }
        let mut entry = extra.clone();
        entry["optimal_threshold"] = json!(asymptotics::optimal_threshold(&lrf, g0, g1)?);
        tests.insert(test.tag().into(), entry);
    }
    marks.flush()?;
    out.summary(
        "rates",
        cfg,
        json!({"tests": tests, "thresholds": markers, "t_points": t_grid.len()}),
    )?;
    Ok(())
}

pub fn cmd_mc(
    cfg: &ScenarioConfig,
    test: Test,
    n_values: &[usize],
    trials: usize,
    t: f64,
    seed: u64,
    invocation: &str,
) -> Result<()> {
    let nominals = cfg.nominals()?;
    let (g0, g1) = match test {
        Test::N => (nominals.f0.clone(), nominals.f1.clone()),
        Test::A => {
            let pair = bayes_pair(cfg, &nominals)?;
            (pair.g0, pair.g1)
        }
        Test::AStar => {
            require_kl(cfg, "mc --test a-star")?;
            let (e0, e1) = cfg.radii();
            let d = dabak_lfds(&nominals, e0, e1)?;
            (d.g0_star, d.g1_star)
        }
    };
    let lrf = RobustLrf::from_pair(&g0, &g1)?;
    let est = monte_carlo_error(&lrf, &g0, &g1, n_values, trials, t, seed)?;
    let out = Output::new(cfg, invocation)?;
    let mut f = out.file("mc.csv")?;
    est.write_csv(&mut f, &out.header)?;
    f.flush()?;
    out.summary(
        "mc",
        cfg,
        json!({
            "test": test.tag(),
            "n_values": est.n_values,
            "trials": est.trials,
            "seed": est.seed,
            "t": est.t,
            "pf_hat": est.pf_hat,
            "pm_hat": est.pm_hat,
            "pf_zero": est.pf_zero,
            "pm_zero": est.pm_zero,
            "slope_pf": decay_slope(&est.n_values, &est.pf_hat),
            "slope_pm": decay_slope(&est.n_values, &est.pm_hat),
        }),
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eps_forms() {
        assert_eq!(parse_eps("0.1").unwrap(), (0.1, 0.1));
        assert_eq!(parse_eps("0.1,0.2").unwrap(), (0.1, 0.2));
        assert!(parse_eps("0.1,0.2,0.3").is_err());
        assert!(parse_eps("x").is_err());
    }

    #[test]
    fn t_forms() {
        assert_eq!(parse_t("-1.5").unwrap(), vec![-1.5]);
        assert_eq!(parse_t("-1:1:3").unwrap(), vec![-1.0, 0.0, 1.0]);
        assert!(parse_t("1:-1:3").is_err());
        assert_eq!(parse_t("-inf").unwrap(), vec![f64::NEG_INFINITY]);
    }

    #[test]
    fn grid_form() {
        let g = parse_grid("-8,8,801").unwrap();
        assert_eq!((g.lo, g.hi, g.n), (-8.0, 8.0, 801));
        assert!(parse_grid("-8,8").is_err());
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(
            &path,
            r#"{"nominal_label": "d2", "ball": {"kind": "alpha", "alpha": 0.5}, "eps0": 0.05, "eps1": 0.05}"#,
        )
        .unwrap();
        let args = ScenarioArgs {
            config: Some(path.clone()),
            eps: Some("0.2".into()),
            ..Default::default()
        };
        let cfg = args.resolve().unwrap();
        assert_eq!(cfg.nominal_label, "d2");
        assert_eq!(cfg.ball, DivergenceKind::Alpha(0.5));
        assert_eq!((cfg.eps0, cfg.eps1), (0.2, 0.2));
        let args = ScenarioArgs {
            config: Some(path),
            alpha: Some(2.0),
            ..Default::default()
        };
        assert_eq!(args.resolve().unwrap().ball, DivergenceKind::Alpha(2.0));
    }

    #[test]
    fn bad_scenarios_are_parameter_errors() {
        let bad = [
            ScenarioArgs {
                ball: Some(Ball::Alpha),
                ..Default::default()
            },
            ScenarioArgs {
                nominal: Some("d9".into()),
                ..Default::default()
            },
            ScenarioArgs {
                eps: Some("-0.1".into()),
                ..Default::default()
            },
            ScenarioArgs {
                u: Some("1.5".into()),
                ..Default::default()
            },
        ];
        for a in bad {
            assert_eq!(a.resolve().unwrap_err().exit_code(), 2, "{a:?}");
        }
    }

    #[test]
    fn zero_radius_is_lifted() {
        let cfg = ScenarioConfig {
            eps0: 0.0,
            ..Default::default()
        };
        assert_eq!(cfg.radii(), (ZERO_RADIUS, 0.1));
    }

    #[test]
    fn quoting() {
        let args = ["robust-lrt", "lfd", "--out", "a b"].map(String::from);
        assert_eq!(invocation(&args), "robust-lrt lfd --out 'a b'");
    }
}
