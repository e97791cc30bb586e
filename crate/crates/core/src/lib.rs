//! Numerical laboratory for overlap fluctuations in the Hopfield model.

pub mod error;
pub mod free_energy;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod sampling;
pub mod stein;
pub mod study;

pub use error::{Error, Result};
