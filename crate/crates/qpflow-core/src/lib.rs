//! Solver library for quasi-polynomial (QP) autonomous ODE systems.
//!
//! A quasi-polynomial system is one whose right-hand side is, for each
//! component, the state variable times a finite sum of power products with
//! real exponents:
//!
//! ```text
//! dx_i/dt = x_i * sum_j A[i][j] * prod_k x_k^B[j][k]
//! ```
//!
//! Every such system embeds into a Lotka-Volterra system `du_j/dt =
//! u_j * sum_l M[j][l] * u_l` with `M = B*A`, and the Lotka-Volterra Cauchy
//! problem has an explicit Taylor-series solution whose coefficients obey a
//! short convolution recursion. This crate provides:
//!
//! - [`qp`]: the QP/LV data model, quasi-monomial changes of variables, the
//!   `B*A` invariant, and canonicalization to Lotka-Volterra form;
//! - [`series`]: truncated power-series arithmetic and convergence-radius
//!   estimation;
//! - [`taylor`]: Taylor coefficients for LV and QP systems plus a step
//!   integrator that advances by re-expanding the local series;
//! - [`oracle`]: literal brute-force evaluation of the closed-form
//!   coefficient sums and the generalized-factorial tensor behind them,
//!   used as ground truth in tests and for combinatorial exploration;
//! - [`parser`]: a small text format for writing QP systems as plain ODEs.
//!
//! States are restricted to the positive cone: real exponents make powers of
//! non-positive numbers undefined over the reals, so construction and every
//! state evaluation enforce strict positivity.

pub mod oracle;
pub mod parser;
pub mod qp;
pub mod series;
pub mod taylor;

pub use qp::{LvEmbedding, LvSystem, QmTransform, QpError, QpSystem};
pub use series::{SeriesBundle, SeriesError};
pub use taylor::{
    lv_taylor_coefficients, qp_taylor_coefficients, taylor_solve, taylor_step_integrate,
    SeriesExpandable, TaylorSolution, Trajectory, TrajectoryMeta,
};
