//! Result files of a run.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{ExperimentConfig, SCHEMA_VERSION};
use crate::runner::{Check, Outcome};

pub const RESULTS_FILE: &str = "results.csv";
pub const FITS_FILE: &str = "fits.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Host-dependent fields, left out of strict manifests.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HostInfo {
    pub workers: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest<'a> {
    pub schema_version: u32,
    pub tool: &'static str,
    pub version: &'static str,
    pub kind: &'static str,
    pub seed: u64,
    /// Work is always split into this many deterministic chunks.
    pub chunks: usize,
    pub strict: bool,
    pub passed: bool,
    pub checks: &'a [Check],
    pub files: [&'static str; 2],
    pub config: &'a ExperimentConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub host: Option<HostInfo>,
}

impl<'a> Manifest<'a> {
    pub fn new(cfg: &'a ExperimentConfig, outcome: &'a Outcome, host: Option<HostInfo>) -> Self {
        Manifest {
            schema_version: SCHEMA_VERSION,
            tool: "trapsim",
            version: env!("CARGO_PKG_VERSION"),
            kind: cfg.kind.as_str(),
            seed: cfg.seed,
            chunks: trapsim::parallel::DEFAULT_CHUNKS,
            strict: host.is_none(),
            passed: outcome.passed(),
            checks: &outcome.checks,
            files: [RESULTS_FILE, FITS_FILE],
            config: cfg,
            host,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum OutputError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> OutputError + '_ {
    move |source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), OutputError> {
    let mut text = serde_json::to_string_pretty(value).expect("outputs serialize");
    text.push('\n');
    std::fs::write(path, text).map_err(io(path))
}

pub fn write_all(dir: &Path, manifest: &Manifest<'_>, outcome: &Outcome) -> Result<(), OutputError> {
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let results = dir.join(RESULTS_FILE);
    let csv_err = |source| OutputError::Csv {
        path: results.clone(),
        source,
    };
    let mut w = csv::Writer::from_path(&results).map_err(csv_err)?;
    if outcome.rows.is_empty() {
        w.write_record(HEADER).map_err(csv_err)?;
    }
    for row in &outcome.rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(io(&results))?;
    write_json(&dir.join(FITS_FILE), &outcome.fits)?;
    write_json(&dir.join(MANIFEST_FILE), manifest)
}

const HEADER: [&str; 15] = [
    "kind",
    "estimator",
    "d",
    "gamma",
    "kappa",
    "rho",
    "nu",
    "t",
    "seed",
    "field_seed",
    "value",
    "se",
    "log_value",
    "log_se",
    "n",
];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runner::Row;

    #[test]
    fn header_matches_row_fields() {
        let row = Row {
            kind: "survival-grid",
            estimator: "direct".into(),
            d: 1,
            gamma: "inf".into(),
            kappa: 1.0,
            rho: 1.0,
            nu: 1.0,
            t: 1.0,
            seed: 0,
            field_seed: None,
            value: 0.5,
            se: 0.1,
            log_value: 0.5f64.ln(),
            log_se: 0.2,
            n: 10,
        };
        let mut w = csv::Writer::from_writer(Vec::new());
        w.serialize(&row).unwrap();
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        assert_eq!(text.lines().next().unwrap(), HEADER.join(","));
    }
}
