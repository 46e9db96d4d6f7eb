//! Simulation of entanglement generation between two atoms chirally coupled
//! to a finite spin chain acting as a cavity.

pub mod cli;
pub mod disorder;
pub mod dynamics;
pub mod entanglement;
pub mod error;
pub mod linalg;
pub mod model;
pub mod optimizer;
pub mod parallel;
pub mod perturbation;
pub mod plot;
pub mod studies;
pub mod trotter;

pub use error::{Error, Result};
