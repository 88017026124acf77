//! Service and command line for the diagnostics bench.

pub mod cli;
pub mod live;
pub mod server;
