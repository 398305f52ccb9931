//! Max-min fair NOMA with an intelligent reflecting surface.

pub mod baselines;
pub mod channels;
pub mod error;
pub mod harness;
pub mod miso;
pub mod numerics;
pub mod ordering;
pub mod phase_step;
pub mod relax;
pub mod sdp;
pub mod siso;

pub use channels::{ChannelParams, ChannelSet, Geometry, PhaseConfig};
pub use error::{Error, Result};
pub use harness::{ExperimentConfig, ResultRow, Scheme};
pub use miso::BeamSet;
pub use numerics::{ComplexMatrix, ComplexVector, RealMatrix, RealVector};
pub use ordering::OrderingResult;
pub use phase_step::Bisection;
pub use siso::{Allocation, PhaseUpdate, PowerAllocation, SolveResult, SolverConfig};
