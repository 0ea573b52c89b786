//! Error type shared by every module.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("no sign change on bracket [{a}, {b}]: f(a) = {fa}, f(b) = {fb}")]
    Bracket { a: f64, b: f64, fa: f64, fb: f64 },

    #[error("objective is not finite at x = {x}")]
    Evaluation { x: f64 },

    #[error("jacobian is singular (condition estimate {condition:e})")]
    SingularJacobian { condition: f64 },

    #[error("{context}: no convergence after {iterations} iterations (residual {residual:e})")]
    Solver {
        context: String,
        iterations: usize,
        residual: f64,
    },

    #[error("infeasible parameters{}: {message}", at_y(*.y))]
    Infeasible { y: Option<f64>, message: String },

    #[error("ambiguous root at y = {y}: {roots} admissible roots")]
    AmbiguousRoot { y: f64, roots: usize },

    #[error("ball radius {eps} reaches or exceeds the attainable maximum {max}")]
    BallTooLarge { eps: f64, max: f64 },

    #[error("supremum for t = {t} is not attained inside [{lo}, {hi}]")]
    Range { t: f64, lo: f64, hi: f64 },

    #[error("u-scan aborted: {failed} of {total} inner solves failed")]
    ScanAborted { failed: usize, total: usize },

    #[error("saddle inequality violated by perturbations with seeds {seeds:?}")]
    SaddleViolation { seeds: Vec<u64> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn at_y(y: Option<f64>) -> String {
    match y {
        Some(y) => format!(" at y = {y}"),
        None => String::new(),
    }
}

impl Error {
    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parameter(_)
            | Error::Domain(_)
            | Error::Bracket { .. }
            | Error::Io(_)
            | Error::Json(_) => 2,
            Error::Infeasible { .. } | Error::BallTooLarge { .. } => 4,
            Error::Numeric(_)
            | Error::Evaluation { .. }
            | Error::SingularJacobian { .. }
            | Error::Solver { .. }
            | Error::AmbiguousRoot { .. }
            | Error::Range { .. }
            | Error::ScanAborted { .. }
            | Error::SaddleViolation { .. } => 3,
        }
    }
}
