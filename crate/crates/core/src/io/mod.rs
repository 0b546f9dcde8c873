//! On-disk formats and the run configuration.

pub(crate) mod binary;
pub mod config;
pub mod msr;

pub use config::RunConfig;
pub use msr::{read_msr, write_msr};
