//! Batch driver for uncertainty propagation runs: configuration files, CSV
//! output, timing and the run pipelines behind the `dbfe-uq` command.

pub mod config;
pub mod io;
pub mod pipeline;
pub mod qmc;

pub use config::{ConfigError, IntSampling, Method, RunConfig};
