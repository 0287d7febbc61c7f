//! Config-driven experiments over the `promptsel` library: candidate
//! generation, selection runs, surrogate comparisons and PSK refinement.

pub mod config;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod output;
pub mod report;
pub mod setup;

pub use config::{load_config, parse_config, validate, ExperimentConfig, LoadedConfig, Mode};
pub use error::{CliError, ConfigError, Result};
pub use experiment::{run_experiment, ExperimentOutcome, RunOptions};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/selection.md")]
    mod selection {}
    #[doc = include_str!("../../../book/src/surrogates.md")]
    mod surrogates {}
    #[doc = include_str!("../../../book/src/psk.md")]
    mod psk {}
    #[doc = include_str!("../../../book/src/reproducibility.md")]
    mod reproducibility {}
}
