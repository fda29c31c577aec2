//! Experiment harness around `ncs-core`: configuration, parallel episodes,
//! sweeps, the optimality and bound drivers, and CSV/JSON output.

pub mod config;
pub mod error;
pub mod experiments;
pub mod output;
pub mod runner;

pub use config::SimConfig;
pub use error::{SimError, SimResult};
