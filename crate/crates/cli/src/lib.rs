//! `grauert-lab`: runs named numerical experiments from JSON configs and
//! writes `results.csv`, `summary.json` and `manifest.json`.

pub mod config;
pub mod experiments;
pub mod output;
pub mod report;

use std::path::Path;

pub use config::{Experiment, ExperimentConfig, Resolved};
pub use experiments::{Check, Outcome, Row};

/// Failure classes, each with its own exit code.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LabError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
    /// A numerical routine failed outright (as opposed to a check failing).
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl LabError {
    pub fn exit_code(&self) -> u8 {
        match self {
            LabError::Config(_) | LabError::Io(_) => 2,
            LabError::Numerical(_) => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

/// What a finished run reports back.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub resolved: Resolved,
    pub outcome: Outcome,
}

impl RunReport {
    pub fn exit_code(&self) -> u8 {
        if self.outcome.passed() {
            0
        } else {
            1
        }
    }
}

/// Loads, runs and writes one experiment. Nothing is written unless the
/// whole computation succeeds.
pub fn run_config(path: &Path, overrides: Overrides) -> Result<RunReport, LabError> {
    let mut cfg = ExperimentConfig::from_path(path)?;
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    let resolved = cfg.resolve()?;
    let outcome = match overrides.threads {
        Some(0) => return Err(LabError::Config("--threads must be positive".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| LabError::Config(format!("thread pool: {e}")))?
            .install(|| experiments::run(&resolved))?,
        None => experiments::run(&resolved)?,
    };
    output::write_all(&resolved, &outcome, overrides.threads)?;
    Ok(RunReport { resolved, outcome })
}
