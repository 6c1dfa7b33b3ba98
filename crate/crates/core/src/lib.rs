//! Simulation and mean-field limits of particle systems on weighted,
//! possibly adaptive, interaction networks.

pub mod dynamics;
pub mod error;
pub mod graphs;
pub mod harness;
pub mod ldp;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod pde;
pub mod tanaka;

mod force;

pub use error::{Error, Result};
