//! Environments: gridworlds, the continuous walled world, and datasets.

pub mod continuous;
pub mod dataset;
pub mod grid;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use continuous::{step_continuous, ContinuousWorld, DriftSchedule, Point, Segment};
pub use dataset::{
    random_force, rollout_continuous, sample_continuous_trajectories, sample_grid_trajectories,
    sample_start, ContinuousDataset, Dataset, Provenance, StartRule, TabularDataset, Transition,
};
pub use grid::{
    build_one_room, build_pachinko, Cell, Direction, GridSpec, GridWorld, Layout, SlipRule,
    SuccessProb,
};

use crate::mdp::MdpError;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid environment spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Environment description as loaded from a JSON config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvConfig {
    Grid(GridSpec),
    Continuous(ContinuousWorld),
}

impl EnvConfig {
    pub fn from_json(text: &str) -> Result<Self, EnvError> {
        Ok(serde_json::from_str(text)?)
    }
}
