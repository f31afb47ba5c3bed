//! Batch front end for the `netstab` experiments: flat config files, CSV
//! outputs and replayable run manifests.

pub mod commands;
pub mod config;
pub mod error;
pub mod format;
pub mod manifest;
pub mod matrix;
pub mod settings;
pub mod spectrum_csv;

pub use commands::{execute, load_settings, replay, Completed};
pub use error::CliError;
pub use settings::{CommandKind, Settings};
