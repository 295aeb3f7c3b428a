//! Campaign orchestration: configuration, model registry, pipeline stages and artifact files.

pub mod artifacts;
pub mod campaign;
pub mod config;
pub mod pipeline;
