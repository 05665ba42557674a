//! Simulation and certification of vehicle platoons under a distributed
//! feedforward control law with artificial potential fields.

pub mod analysis;
pub mod apf;
pub mod config;
pub mod controller;
pub mod dynamics;
pub mod error;
pub mod output;
pub mod scenario;
pub mod sigma;
pub mod simulator;
pub mod vector;

pub use error::{PlatoonError, Result};
pub use scenario::Scenario;
pub use simulator::{run, TerminationStatus, TrajectoryLog};
