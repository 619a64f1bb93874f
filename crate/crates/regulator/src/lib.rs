//! Robust output regulation with a time-varying internal model.
//!
//! The crate estimates unknown reference frequencies online, rebuilds an
//! internal-model controller from the estimates, schedules stabilizing gains
//! and simulates the resulting non-autonomous closed loop, including a
//! finite-element diffusion plant with an online reference optimizer.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod numerics;
pub mod exosystem;
pub mod estimator;
pub mod plant;
pub mod internal_model;
pub mod scheduler;
pub mod closed_loop;
pub mod optimizer;
pub mod scenario;

pub use error::{Error, Result};
