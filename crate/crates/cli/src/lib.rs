//! Operator surface for the bandit model selector: CLI subcommands plus the
//! HTTP service mode. The heavy lifting lives in `armsel-core`; this crate
//! handles configuration, files, and the wire.

pub mod cli;
pub mod config;
pub mod service;
