//! Config-driven batch runs of the `spinecho` simulator.
//!
//! A run reads a [`config::RunConfig`], builds or loads the bath, partitions
//! it, sweeps every requested sequence and writes one CSV per curve plus a
//! `manifest.json` holding the resolved configuration, the bath hash, the
//! partition and all fits.

pub mod config;
pub mod error;
pub mod presets;
pub mod run;

pub use config::RunConfig;
pub use error::{ConfigError, ExitStatus, RunError};
