//! Command-line front end for `hamnet-core`: experiment spec files, the
//! binary model format, CSV artifacts and a rayon batch executor.

pub mod commands;
pub mod csv_io;
pub mod error;
pub mod executor;
pub mod mnist;
pub mod model_file;
pub mod spec;

pub use error::{CliError, Result};
