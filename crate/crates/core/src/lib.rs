//! Co-design of soft lattice robots: morphology decoding, differentiable
//! simulation, gradient-based controller training and evolutionary search.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod controller;
pub mod error;
pub mod evolution;
pub mod lattice;
pub mod learning;
pub mod rng;
pub mod simulator;
pub mod terrain;

pub use error::{Error, Result};
