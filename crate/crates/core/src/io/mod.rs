//! Run configuration, artifact writers and the binary amplitude stream.

pub mod config;
pub mod output;
pub mod runner;
pub mod stream;

pub use config::{load_config, parse_config, Mode, ModelParams, RunConfig, SweepParameter, SweepSpec};
pub use runner::{replay, run, RunManifest};
pub use stream::{StreamReader, StreamWriter};
