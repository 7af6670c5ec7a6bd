//! Explicit and implicit methods for variational inequalities with negatively
//! comonotone operators: iterates, convergence bounds, certificates and
//! performance-estimation semidefinite programs.
//!
//! ```
//! use comonotone_core::bounds::{check_trace, BoundKind, BoundSpec};
//! use comonotone_core::{run_pp, LinearOperator, Method, Point};
//!
//! # fn main() -> comonotone_core::Result<()> {
//! let op = LinearOperator::pp_worst_case(0.1, 0.5, 10)?;
//! let trace = run_pp(&op, &Point::unit(2, 0), 0.5, 11)?;
//! let spec = BoundSpec {
//!     method: Method::Pp, kind: BoundKind::LastIterate,
//!     rho: 0.1, l: 1.0, r: 1.0, gamma1: 0.5, gamma2: 0.5, n: 11,
//! };
//! assert!(check_trace(&trace, &spec, Some(&Point::zeros(2)))?.satisfied);
//! # Ok(())
//! # }
//! ```

pub mod error;
pub mod operators;
pub mod solvers;
pub mod bounds;
pub mod interpolation;
pub mod sdp;
pub mod pep;

pub use error::{Error, Result};
pub use operators::{FnOperator, LinearOperator, Operator, OperatorCertificate, OperatorKind, Point};
pub use solvers::{run, run_eg, run_og, run_pp, Method, ResidualSeries, RunOptions, StepSizes, Trace};
