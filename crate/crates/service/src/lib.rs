//! Command-line pipeline and streaming service for the foley VAE.

pub mod cli;
pub mod config;
pub mod engine;
pub mod error;
pub mod limiter;
pub mod model;
pub mod protocol;
pub mod server;

pub use error::{ErrorCode, ServiceError};
pub use model::LoadedModel;
