//! Data-driven Schrödinger bridge solver.
//!
//! Given finite sample sets from two marginal distributions and a prior
//! transition kernel, this crate estimates the most likely coupling
//! `π(x,y) = φ̂₀(x)·p(y|x)·φ₁(y)`, the entropic interpolation `ρ_t`, the
//! induced transport map, and downstream quantities (posterior conditional,
//! importance-sampling integral estimates). A grid-based Fortet/Sinkhorn
//! iteration over closed-form marginals serves as an independent oracle for
//! validating the sample-based solver on small instances.

pub mod bridge;
pub mod error;
pub mod flow;
pub mod fortet;
pub mod kernels;
pub mod models;
pub mod optimizer;
pub mod reference;
pub mod rng;
pub mod stats;
pub mod types;

pub use error::{BridgeError, Result};
pub use types::SampleSet;
