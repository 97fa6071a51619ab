//! Delay-sensitive asynchronous SGD: step-size policies, delay processes, a
//! parameter-server simulator and convergence diagnostics.

pub mod delay;
pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod problems;
pub mod seed;
pub mod simulator;
pub mod stepsize;
pub mod types;
pub mod vector;

pub use error::{Error, Result};
