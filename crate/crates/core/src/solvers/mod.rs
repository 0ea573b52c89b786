//! Numerical kernels: damped Newton for small nonlinear systems, bracketed
//! scalar root finding, the principal Lambert-W branch and scan-based 1-D
//! minimization.

mod lambert;
mod minimize;
mod newton;
mod root;

pub use lambert::{lambert_w0, lambert_w0_exp};
pub use minimize::{golden_section, minimize_1d};
pub use newton::{damped_newton, NewtonOptions, SolveReport};
pub use root::{safeguarded_newton, scalar_root};
