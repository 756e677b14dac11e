//! Command-line front end: image I/O, run configuration and subcommands.

pub mod commands;
pub mod config;
pub mod error;
pub mod image_io;

pub use commands::run;
pub use config::RunConfig;
pub use error::{CliError, CliResult};
pub use image_io::{load_image, save_image, ImageFile};
