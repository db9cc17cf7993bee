//! Experiments on top of `otcover-core`: TOML configuration, per-N runs on a
//! rayon pool, CSV/JSON artifacts, property suites, and plots.

pub mod config;
mod error;
pub mod experiment;
pub mod io;
pub mod plot;
pub mod validate;

use std::path::Path;

pub use config::ExperimentConfig;
pub use error::{ConfigError, HarnessError, Result};
pub use experiment::Summary;

/// Runs `cfg` on `threads` workers and writes its artifacts to `cfg.out`.
pub fn cli_run(cfg: &ExperimentConfig, threads: usize) -> Result<Summary> {
    let exp = experiment::run_with_threads(cfg, threads)?;
    experiment::write_artifacts(&exp, &cfg.out)
}

/// Runs the suites and writes `validate.json` into `out` when given.
pub fn cli_validate(suites: &[validate::Suite], seed: u64, out: Option<&Path>) -> Result<Vec<validate::SuiteReport>> {
    let reports = suites
        .iter()
        .map(|&s| validate::run_suite(s, seed))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        io::write_json(&dir.join("validate.json"), &reports)?;
    }
    Ok(reports)
}
