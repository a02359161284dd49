//! Command-line pipeline over on-disk task bundles.

pub mod bench;
pub mod bundle;
pub mod cli;
pub mod commands;
pub mod error;
pub mod io;
pub mod report;

pub use cli::Cli;
pub use commands::run;
pub use error::CliError;
