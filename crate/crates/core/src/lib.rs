//! Heavy-traffic control of a multiclass single-server queue whose classes
//! share one finite buffer.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`]: instance definition, heavy-traffic parameters, validation.
//! * [`holding_cost`]: the rejection index, the order of accumulation, the
//!   one-dimensional holding cost `h̄` and its minimizing curve `γ`.
//! * [`hjb`]: the free-boundary Bellman equation for the workload and its
//!   boundary point `x*`.
//! * [`reflect`]: the two-sided Skorokhod map, reflected Brownian paths and
//!   Monte Carlo evaluation of the workload control cost.
//! * [`policy`]: the margin curve `γᵃ`, priority sets, service allocation and
//!   admission decisions.
//! * [`des`]: a discrete-event simulator of the `n`-th system under the policy
//!   together with the state-space-collapse diagnostic.
//!
//! Replication-level work (Monte Carlo paths, simulation seeds) runs through
//! [`exec::Execution`], which uses rayon when the `parallel` feature is on.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod des;
pub mod error;
pub mod exec;
pub mod hjb;
pub mod holding_cost;
pub mod model;
pub mod policy;
pub mod reflect;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
pub use exec::Execution;
