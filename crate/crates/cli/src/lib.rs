//! Command-line pipeline around the `wellplan` library: ingest, fit, size,
//! design and report stages over a run directory, plus a synthetic data
//! generator.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;
pub mod rundir;
pub mod svg;

use std::path::Path;

pub use config::RunConfig;
pub use error::{CliError, ExitStatus, Result};
pub use pipeline::{Pipeline, Stage, StageSummary};

/// Loads the configuration, or the defaults when no file is given, and
/// applies a seed override to the design and the generator.
pub fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.design.seed = seed;
        cfg.simulate.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs `stages` in order under the run-directory lock.
pub fn run_stages(cfg: RunConfig, run_dir: &Path, stages: &[Stage]) -> Result<Vec<StageSummary>> {
    let _lock = rundir::RunLock::acquire(run_dir)?;
    let pipeline = Pipeline::new(cfg, run_dir)?;
    stages.iter().map(|&s| pipeline.execute(s)).collect()
}
