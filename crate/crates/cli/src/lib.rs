//! Configuration-driven runner for the dsqm scenarios.
//!
//! A run reads a scenario file, executes it inside a fixed-size thread pool,
//! writes its artifacts to an output directory and finishes with a
//! checksummed `manifest.json`.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod manifest;
pub mod plotdata;
pub mod scenarios;

use std::fs;
use std::path::PathBuf;

use config::ScenarioConfig;
use manifest::{file_entry, now, RunManifest};
use scenarios::Artifacts;

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub threads: usize,
    /// Validate and record the configuration without running the numerics.
    pub dry_run: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum RunnerError {
    #[error("output directory {0}: {1}")]
    Output(PathBuf, std::io::Error),
    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

/// Runs a scenario and writes its manifest. Numerical failures are recorded
/// in the manifest rather than returned.
pub fn run_scenario(config: &ScenarioConfig, options: &RunOptions) -> Result<RunManifest, RunnerError> {
    let dir = &options.out_dir;
    let io = |e| RunnerError::Output(dir.clone(), e);
    fs::create_dir_all(dir).map_err(io)?;
    let threads = options.threads.max(1);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    let started = now();
    let mut artifacts = Artifacts::new(dir);
    let (checks, error) = if options.dry_run {
        (Vec::new(), None)
    } else {
        artifacts.text("config.canonical", &config.canonical()).map_err(io)?;
        match pool.install(|| scenarios::execute(config, &mut artifacts)) {
            Ok(checks) => (checks, None),
            Err(e) => (Vec::new(), Some(e.to_string())),
        }
    };
    let files = artifacts
        .files()
        .iter()
        .map(|name| file_entry(dir, name))
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(io)?;
    let manifest = RunManifest {
        scenario: config.kind.name().to_string(),
        schema_version: config.schema_version,
        config_hash: config.hash(),
        code_version: CODE_VERSION.to_string(),
        seed: config.seed(),
        threads,
        dry_run: options.dry_run,
        started,
        finished: now(),
        files,
        checks,
        error,
    };
    manifest.write_atomic(dir).map_err(io)?;
    Ok(manifest)
}
