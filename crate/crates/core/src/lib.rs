//! Joint entity linking and relation extraction trained from document-level tuple labels.

pub mod candidates;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod evaluator;
mod error;
pub mod ndtensor;
pub mod scorer;
pub mod streams;
pub mod trainer;

pub use config::Config;
pub use error::{Error, Result};
