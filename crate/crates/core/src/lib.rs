//! Mixed stochastic / set-membership state estimation and min-max LQ control
//! for discrete-time linear systems.
//!
//! The crate is `no_std` (with `alloc`). File formats, the command line and
//! parallel execution live in `mixlqc-cli`.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod control;
pub mod ellipsoid;
pub mod error;
pub mod filter;
pub mod harness;
pub mod horizon;
pub mod linalg;
pub mod model;
pub mod sdp;
pub mod stats;

pub use control::{ControlDecision, ControlDiagnostics};
pub use ellipsoid::{Ellipsoid, MinkowskiWeights, SamplingScheme};
pub use error::{Error, Result};
pub use filter::{FilterOptions, GainReport, MixedBelief, QkFormula};
pub use harness::{EpisodeResult, ExperimentConfig, Method, MethodMetrics};
pub use horizon::{CostSpec, HorizonCost, HorizonMatrices};
pub use model::{LinearSystem, NoiseModel, SequenceModel, SystemModel};
pub use sdp::{SdpInstance, SdpSolution, SolverOptions};
