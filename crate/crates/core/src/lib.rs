//! Physics-informed ensemble of value networks for infinite-horizon optimal
//! control of control-affine systems.
//!
//! The pipeline: generate a labelled state mesh ([`dataset`]), warm-start a
//! value network on it, refine an ensemble against the steady-state HJB
//! residual ([`training`]), then drive noisy closed-loop simulations with the
//! learned controllers ([`control`]) and export comparison surfaces
//! ([`evaluation`]).

pub mod config;
pub mod control;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod integrators;
pub mod pipeline;
pub mod rng;
pub mod system;
pub mod training;
pub mod value_net;

pub use error::{Error, Result};

/// Two-dimensional state vector.
pub type State = [f64; 2];
