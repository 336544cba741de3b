//! Simulation, parameter estimation and volatility change-point testing for
//! linear parabolic SPDEs observed on discrete space-time grids.

pub mod coords;
pub mod cpt;
pub mod dataset;
pub mod error;
pub mod estimation;
pub mod harness;
pub mod model;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};
