//! Dual-extrapolation methods of order `p` for monotone equations `F(x) = 0`.
//!
//! The crate is organised around the pieces of the method:
//!
//! - [`operator`] and [`zoo`]: the operator interface, derivative oracles and
//!   a set of test problems with known solutions.
//! - [`taylor`]: the regularized Taylor model and exact solvers for its zero.
//! - [`de`]: the dual-extrapolation loop with its Lyapunov bookkeeping and
//!   certificate checks.
//! - [`restart`]: the restarted scheme with local order-`p` convergence.
//! - [`flow`]: a simulator for the rescaled gradient flow the method
//!   discretizes.
//! - [`merit`]: the restricted merit function.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certificate;
pub mod de;
pub mod error;
pub mod flow;
pub mod linalg;
pub mod merit;
pub mod operator;
pub mod point;
pub mod restart;
pub mod taylor;
pub mod zoo;

pub use error::{Error, Result};
pub use operator::{FnOperator, JacobianMode, JacobianOracle, Operator, Problem};
pub use point::Point;
