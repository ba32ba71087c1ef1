//! Deterministic simulator of U-shaped federated split learning with
//! Gaussian input noise, k-anonymous microaggregation of smashed data and an
//! inversion-network reconstruction attack.

pub mod attack;
pub mod config;
pub mod data;
pub mod error;
pub mod federation;
pub mod harness;
pub mod layers;
pub mod loss;
pub mod metrics;
pub mod models;
pub mod network;
pub mod privacy;
pub mod seed;
pub mod tensor;

pub use config::{ExperimentConfig, Method};
pub use error::{Error, Result};
pub use layers::{Layer, Mode};
pub use models::{SplitModel, SplitSpec};
pub use network::{Adam, Network, ParamSet};
pub use privacy::{ClientId, GroupAssignment, PrivacyConfig};
pub use tensor::Tensor;
