//! Config-driven experiment runner for `trapsim`.

pub mod catalog;
pub mod config;
pub mod output;
pub mod runner;

use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

use config::{ConfigError, ExperimentConfig};
use output::{HostInfo, Manifest, OutputError};
use runner::{Outcome, RunError};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "TRAPSIM_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "trapsim-out";
const BUILTIN_PREFIX: &str = "builtin:";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Output(#[from] OutputError),
    #[error("unknown builtin `{0}` (see `trapsim list`)")]
    UnknownBuiltin(String),
    #[error("builtin `{0}` is only covered by the test suite")]
    TestSuiteOnly(String),
    #[error("cannot configure {0} workers: {1}")]
    Workers(usize, String),
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub strict: bool,
    pub workers: usize,
}

#[derive(Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub outcome: Outcome,
    /// Whether failed checks should fail the process.
    pub acceptance: bool,
}

impl RunSummary {
    pub fn exit_code(&self) -> u8 {
        if self.acceptance && !self.outcome.passed() {
            2
        } else {
            0
        }
    }
}

/// A config file path or `builtin:<id>`.
pub fn load_config(source: &str) -> Result<ExperimentConfig, CliError> {
    match source.strip_prefix(BUILTIN_PREFIX) {
        Some(id) => {
            let entry = catalog::find(id).ok_or_else(|| CliError::UnknownBuiltin(id.to_string()))?;
            entry.config.ok_or_else(|| CliError::TestSuiteOnly(id.to_string()))
        }
        None => Ok(ExperimentConfig::load(Path::new(source))?),
    }
}

/// Flag, then config, then environment, then the working-directory default.
pub fn resolve_out_dir(flag: Option<&Path>, cfg: &ExperimentConfig, env: Option<&str>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .or_else(|| env.filter(|s| !s.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

pub fn execute(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunSummary, CliError> {
    let started = Instant::now();
    let outcome = runner::run(cfg)?;
    let env = std::env::var(OUT_DIR_ENV).ok();
    let out_dir = resolve_out_dir(opts.out.as_deref(), cfg, env.as_deref());
    let host = (!opts.strict).then(|| HostInfo {
        workers: opts.workers,
        wall_time_s: started.elapsed().as_secs_f64(),
    });
    output::write_all(&out_dir, &Manifest::new(cfg, &outcome, host), &outcome)?;
    Ok(RunSummary {
        out_dir,
        outcome,
        acceptance: cfg.acceptance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_dir_priority() {
        let mut cfg = load_config("builtin:c08-immobile-exponent").unwrap();
        let flag = Path::new("/a");
        assert_eq!(resolve_out_dir(Some(flag), &cfg, Some("/c")), PathBuf::from("/a"));
        assert_eq!(resolve_out_dir(None, &cfg, Some("/c")), PathBuf::from("/c"));
        assert_eq!(resolve_out_dir(None, &cfg, Some("")), PathBuf::from(DEFAULT_OUT_DIR));
        cfg.output_dir = Some("/b".into());
        assert_eq!(resolve_out_dir(None, &cfg, Some("/c")), PathBuf::from("/b"));
    }

    #[test]
    fn builtin_errors() {
        assert!(matches!(load_config("builtin:zzz"), Err(CliError::UnknownBuiltin(_))));
        assert!(matches!(load_config("builtin:c01-torus-oracle"), Err(CliError::TestSuiteOnly(_))));
    }
}
