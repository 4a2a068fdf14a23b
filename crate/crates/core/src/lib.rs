//! Simulator for a heterogeneous battery energy storage system under
//! decentralized broadcast control, with a centralized baseline for
//! comparison and post-hoc stability and tracking analysis.
//!
//! The crate is organized bottom-up:
//!
//! * [`battery`]: equivalent-circuit plant and protective limits.
//! * [`decentralized`]: per-battery integrator controllers.
//! * [`centralized`]: SOC-proportional baseline dispatcher.
//! * [`grid_bus`]: measurement and delayed broadcast channels.
//! * [`sim`]: fixed-timestep engine producing a [`sim::SimTrace`].
//! * [`analysis`]: Lyapunov, tracking, and equalization metrics.
//! * [`scenario`] and [`io`]: configuration, presets, and file formats.

// Validation is written as `!(x > 0.0)` on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod battery;
pub mod centralized;
pub mod decentralized;
pub mod error;
pub mod grid_bus;
pub mod io;
pub mod scenario;
pub mod sim;

pub use error::{AnalysisError, BatteryError, ConfigError, IoError, SimError};
pub use scenario::{preset, Preset, Scenario};
pub use sim::{run, SimTrace};
