//! File formats, configuration, orchestration and reports for the DEWSP
//! research engine. The numerics live in `dewsp_core`; this crate adds
//! everything that needs `std`: disk IO, threads, clocks and the `dewsp`
//! command-line tool.

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod io;
pub mod pipeline;
pub mod plot;

pub use config::RunConfig;
pub use error::{Category, CliError, CliResult};
