//! Vertical split-learning simulator with embedding-space backdoor attacks
//! and a prototype-consistency conformal filtering defense.
//!
//! The crate is organized around the lifecycle of one experiment:
//!
//! - [`data`]: datasets and vertical feature partitioning across clients
//! - [`nn`] / [`tensor`]: dense networks with exact gradients and SGD
//! - [`attack`]: backdoor injection strategies run by a malicious client
//! - [`defense`]: the prototype-consistency conformal filter and baselines
//! - [`protocol`]: the client/server training loop tying it all together
//! - [`metrics`]: main accuracy, attack success rate, filter confusion
//! - [`config`]: experiment configuration with reproducible defaults

pub mod attack;
pub mod config;
pub mod data;
pub mod defense;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod protocol;
pub mod rng;
pub mod tensor;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use protocol::{run_experiment, ExperimentOutcome};
pub use tensor::Matrix;
