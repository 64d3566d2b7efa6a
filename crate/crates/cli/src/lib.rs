//! Experiment runner behind the `polyglot` binary.
//!
//! Each subcommand is a plain function here so tests can drive the same code
//! paths the binary does.

pub mod bootstrap;
pub mod config;
pub mod evaluate;
pub mod infer;
pub mod report;
pub mod scripts;
pub mod train;

pub use bootstrap::{run_bootstrap, BootstrapSummary};
pub use config::RunConfig;
pub use evaluate::{run_eval, EvalOptions, EvalSummary};
