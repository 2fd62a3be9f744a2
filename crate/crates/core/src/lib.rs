//! Simulation and learning library for task offloading in mobile edge
//! computing networks with time-varying server capacities.
//!
//! Tasks arrive at users, each user asks its nearest servers about their
//! recent capacities and backlogs, and a policy decides whether to run the
//! task locally or upload it to one of them. The [`sim`] module replays the
//! consequences exactly; [`estimator`] and [`agent`] implement the learned
//! policy.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod capacity;
pub mod cost;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod nn;
pub mod policy;
pub mod radio;
pub mod sim;

pub use error::{Error, Result};
