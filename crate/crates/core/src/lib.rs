//! Early ICU-mortality prediction with centralized, local and federated
//! training of a dual-branch GRU classifier.

pub mod data;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod partition;
pub mod trainers;

pub use error::{Error, Result};
