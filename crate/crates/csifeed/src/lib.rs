//! File formats, configuration, run manifests and the command-line front
//! end around [`csifeed_core`].
//!
//! - [`config`]: flat `key = value` run configuration.
//! - [`dataset`]: `CSID` dataset files.
//! - [`checkpoint`]: `LORA` checkpoint files.
//! - [`manifest`]: JSON run manifests with SHA-256 digests, CSV sidecars.
//! - [`cli`]: the `csifeed` subcommands.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
mod error;
pub mod manifest;

pub use error::{CliError, CliResult};
