//! Critic-only integral reinforcement learning for saturated optimal tracking.

pub mod artifacts;
pub mod basis;
pub mod check;
pub mod benchmarks;
pub mod config;
pub mod error;
pub mod learner;
pub mod model;
pub mod policy;
pub mod quad;
pub mod sim;

pub use basis::{quad_basis, QuadraticBasis, RegressorBasis};
pub use error::{IrlError, Result};
pub use learner::{LearnerConfig, UpdateLaw};
pub use policy::SaturationSpec;
pub use sim::{run_experiment, SimConfig, Telemetry};
