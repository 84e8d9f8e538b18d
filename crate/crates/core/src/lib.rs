//! Continuous-time branching random walks on `Z^d` with a single branching
//! source at the origin.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod error;
pub mod linalg;
pub mod model;
pub mod moments;
pub mod montecarlo;
pub mod ode;
pub mod operators;
pub mod output;
pub mod vaccination;

pub use error::{Error, Result};
