//! Command implementations behind the `gessvi` binary.
//!
//! Every command returns a [`Status`]; the binary maps it to exit code 0
//! (converged, no arbitrage) or 2, and any error to 1.

mod commands;
pub mod config;

pub use commands::*;
pub use config::RunConfig;
