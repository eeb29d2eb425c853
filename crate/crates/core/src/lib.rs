//! Synthetic pre-training and in-context learning laboratory.

pub mod bounds;
pub mod corpus;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod oracle;
pub mod prob;
pub mod seed;

pub use error::{LabError, Result};
