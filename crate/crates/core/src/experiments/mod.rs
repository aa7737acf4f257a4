//! Experiment sweeps over the planning and learning components, with
//! CSV/JSON output.

mod config;
mod learning;
mod output;
pub mod stats;
mod tabular;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{
    ConfigFile, ExperimentConfig, ExperimentKind, LearningConfig, LearningPart, SolverConfig,
    TieBreakRule,
};
pub use learning::run_learning;
pub use output::{read_results, write_run, Manifest, CODE_VERSION, RESULTS_HEADER};
pub use tabular::{run_ce_planning_loss, run_intent_planning, run_timing};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// One measured value at one sweep coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub kappa: Option<f64>,
    pub p: Option<f64>,
    pub n: Option<usize>,
    pub size: Option<usize>,
    pub metric: String,
    pub value: f64,
}

/// Sweep coordinate of a cell.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Coord {
    pub seed: u64,
    pub kappa: Option<f64>,
    pub p: Option<f64>,
    pub n: Option<usize>,
    pub size: Option<usize>,
}

/// A cell that could not be computed. It also appears in the results as a
/// `<scope>.failed` row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub coord: Coord,
    pub scope: String,
    pub message: String,
}

/// A file produced by a run, relative to the output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub path: PathBuf,
    pub contents: Vec<u8>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub rows: Vec<ResultRow>,
    pub failures: Vec<Failure>,
    pub artifacts: Vec<Artifact>,
}

impl RunOutput {
    pub fn succeeded(&self) -> bool {
        self.failures.is_empty()
    }

    /// Value of `metric` at the first row matching `coord`'s set fields.
    pub fn value(&self, metric: &str, coord: Coord) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| {
                r.metric == metric
                    && r.seed == coord.seed
                    && coord.kappa.is_none_or(|k| r.kappa == Some(k))
                    && coord.p.is_none_or(|p| r.p == Some(p))
                    && coord.n.is_none_or(|n| r.n == Some(n))
                    && coord.size.is_none_or(|s| r.size == Some(s))
            })
            .map(|r| r.value)
    }

    fn extend(&mut self, other: RunOutput) {
        self.rows.extend(other.rows);
        self.failures.extend(other.failures);
        self.artifacts.extend(other.artifacts);
    }
}

/// Collects the rows of one cell.
pub(crate) struct Cell {
    experiment: ExperimentKind,
    out: RunOutput,
}

impl Cell {
    pub(crate) fn new(experiment: ExperimentKind) -> Self {
        Self {
            experiment,
            out: RunOutput::default(),
        }
    }

    /// Records `value`, or a failure if it is not finite.
    pub(crate) fn push(&mut self, coord: Coord, metric: impl Into<String>, value: f64) {
        let metric = metric.into();
        if !value.is_finite() {
            self.fail(coord, &metric, format!("non-finite value {value}"));
            return;
        }
        self.out.rows.push(self.row(coord, metric, value));
    }

    pub(crate) fn fail(&mut self, coord: Coord, scope: &str, message: impl Into<String>) {
        self.out
            .rows
            .push(self.row(coord, format!("{scope}.failed"), 1.0));
        self.out.failures.push(Failure {
            coord,
            scope: scope.into(),
            message: message.into(),
        });
    }

    pub(crate) fn artifact(&mut self, path: impl Into<PathBuf>, contents: Vec<u8>) {
        self.out.artifacts.push(Artifact {
            path: path.into(),
            contents,
        });
    }

    pub(crate) fn json_artifact<T: Serialize>(&mut self, path: impl Into<PathBuf>, value: &T) {
        let contents = serde_json::to_vec_pretty(value).expect("experiment records serialise");
        self.artifact(path, contents);
    }

    fn row(&self, coord: Coord, metric: String, value: f64) -> ResultRow {
        ResultRow {
            experiment: self.experiment,
            seed: coord.seed,
            kappa: coord.kappa,
            p: coord.p,
            n: coord.n,
            size: coord.size,
            metric,
            value,
        }
    }

    pub(crate) fn finish(self) -> RunOutput {
        self.out
    }
}

/// Merges per-cell outputs in the order given, which is the sweep order.
pub(crate) fn collect(cells: impl IntoIterator<Item = RunOutput>) -> RunOutput {
    let mut out = RunOutput::default();
    for c in cells {
        out.extend(c);
    }
    out
}

/// Runs `config.experiment`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutput, ExperimentError> {
    config.validate()?;
    Ok(match config.experiment {
        ExperimentKind::IntentPlanning => run_intent_planning(config),
        ExperimentKind::Timing => run_timing(config),
        ExperimentKind::CePlanningLoss => run_ce_planning_loss(config),
        ExperimentKind::Learning => run_learning(config),
    })
}
