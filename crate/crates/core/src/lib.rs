//! Absorption reconstruction in a 2-D half-space by annealing a spin Hamiltonian.

pub mod annealer;
pub mod config;
pub mod error;
pub mod experiment;
pub mod forward;
pub mod greens;
pub mod hamiltonian;
pub mod io;
pub mod model;
pub mod svd;

pub use error::{Error, Result};
