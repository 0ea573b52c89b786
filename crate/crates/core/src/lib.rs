//! Least favorable distributions and asymptotically minimax robust
//! likelihood ratio tests for uncertainty balls defined by the KL, α- and
//! symmetrized α-divergences.
//!
//! All densities live on a shared uniform grid (see [`density::Grid`]).
//! The Bayesian minimax tests are built in [`lfd_bayes`], the Neyman–Pearson
//! variants and the exponential-tilt baseline in [`lfd_np`], and the
//! large-deviations machinery used to assess them in [`asymptotics`].

pub mod asymptotics;
pub mod cli;
pub mod density;
pub mod error;
pub mod lfd_bayes;
pub mod lfd_np;
pub mod solvers;

pub use error::{Error, Result};

/// Library version embedded in every output file.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
