//! Generation, verification and scoring of long-context QA benchmarks built
//! from simulated agent trajectories in a closed-world guessing game.

pub mod corpus;
pub mod environment;
pub mod error;
pub mod harness;
pub mod masking;
pub mod postprocess;
mod pyjson;
pub mod qa;
pub mod query;
pub mod rng;
pub mod rollout;
pub mod universe;

pub use error::{Error, Result};

/// Engine version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
