//! Command-line front end: argument parsing, report emission and plotting.

pub mod config;
pub mod output;
pub mod run;
pub mod svg;

pub use config::{parse_config, ParseError, RunConfig};
pub use run::{run, Outcome, RunManifest};
