//! Command line and HTTP front ends for `kgctx-core`.

pub mod cli;
pub mod config;
pub mod providers;
pub mod server;
pub mod workspace;
