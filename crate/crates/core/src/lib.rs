//! Boxed-abstraction out-of-distribution monitors over neural-network
//! features, with symbolic (BDD) search for unsupported box corners, local
//! repair of the network against those corners, and gradient-based test
//! input generation that steers features into them.

// NaN-rejecting checks are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod neuralnet;
pub mod optim;

pub use error::{Error, Result};
pub mod bdd;
pub mod cli;
pub mod encoding;
pub mod io;
pub mod kmeans;
pub mod monitor;
pub mod prioritize;
pub mod repair;
pub mod synth;
pub mod testgen;
