//! Simulation and verification workbench for steady-state diffusion
//! approximations of queues driven by general clocks.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bar;
pub mod bounds;
pub mod clock;
pub mod error;
pub mod identities;
pub mod model;
pub mod palm;
mod quad;
pub mod rbm;
pub mod report;
pub mod rng;
pub mod sim;
pub mod stein;
pub mod wasserstein;

pub use clock::ClockSpec;
pub use error::{Error, Result};
pub use model::{ModelConfig, ModelSpec};
pub use palm::{EstimateCI, PalmAccumulators, ProbeSet, Process, RunConfig, Slot, WindowKind};
pub use sim::{EventKind, EventRecord, SystemState};
