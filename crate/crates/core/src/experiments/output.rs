use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ExperimentConfig, ExperimentError, ExperimentKind, Failure, ResultRow, RunOutput};

pub const CODE_VERSION: &str = concat!("afford-core ", env!("CARGO_PKG_VERSION"));

pub const RESULTS_HEADER: &str = "experiment,seed,kappa,p,n,size,metric,value";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: ExperimentKind,
    pub code_version: String,
    /// Hex SHA-256 of the compact JSON of `config`.
    pub config_sha256: String,
    pub seeds: Vec<u64>,
    pub discount: f64,
    pub rows: usize,
    pub succeeded: bool,
    pub failures: Vec<Failure>,
    pub artifacts: Vec<String>,
    /// The resolved config; it can be passed back with `--config` to rerun.
    pub config: ExperimentConfig,
}

pub fn config_hash(config: &ExperimentConfig) -> String {
    let bytes = serde_json::to_vec(config).expect("config serialises");
    Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn check_unique(rows: &[ResultRow]) -> Result<(), ExperimentError> {
    let mut seen = HashSet::new();
    for r in rows {
        let key = (
            r.experiment,
            r.seed,
            r.kappa.map(f64::to_bits),
            r.p.map(f64::to_bits),
            r.n,
            r.size,
            r.metric.as_str(),
        );
        if !seen.insert(key) {
            return Err(ExperimentError::Config(format!(
                "duplicate result key {key:?}"
            )));
        }
    }
    Ok(())
}

/// Writes `results.csv`, every artifact and `manifest.json` under `dir`.
pub fn write_run(
    dir: &Path,
    config: &ExperimentConfig,
    output: &RunOutput,
) -> Result<Manifest, ExperimentError> {
    check_unique(&output.rows)?;
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("results.csv"))?;
    if output.rows.is_empty() {
        w.write_record(RESULTS_HEADER.split(','))?;
    }
    for r in &output.rows {
        w.serialize(r)?;
    }
    w.flush()?;
    for a in &output.artifacts {
        let path = dir.join(&a.path);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, &a.contents)?;
    }
    let manifest = Manifest {
        experiment: config.experiment,
        code_version: CODE_VERSION.into(),
        config_sha256: config_hash(config),
        seeds: config.seeds.clone(),
        discount: config.discount,
        rows: output.rows.len(),
        succeeded: output.succeeded(),
        failures: output.failures.clone(),
        artifacts: output
            .artifacts
            .iter()
            .map(|a| a.path.display().to_string())
            .collect(),
        config: config.clone(),
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_vec_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>, ExperimentError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}
