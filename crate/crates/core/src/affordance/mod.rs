//! Intents, affordances, intent-induced MDPs and the associated loss bounds.

mod bounds;
mod intent;
mod set;

use thiserror::Error;

pub use bounds::{
    count_restricted_policies, enumerate_restricted_policies, estimate_policy_class_size,
    ln_restricted_policy_count, planning_loss_bound, planning_loss_bound_ln, value_loss_bound,
    POLICY_CLASS_MAX_ACTIONS_PER_STATE, POLICY_CLASS_MAX_STATES,
};
pub use intent::{
    directional_intents, move_intents, move_left_intents, Intent, IntentSet, IntentTarget,
};
pub use set::{
    affordance_stats, build_affordance, induce_mdp, satisfaction_degree, AffordanceRecord,
    AffordanceSet, AffordanceStats, InducedMdp, RowSource, ThresholdMode, THRESHOLD_SLACK,
};

use crate::mdp::MdpError;

/// Inputs to [`tv_distance`] may deviate from unit mass by at most this much.
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AffordanceError {
    #[error("not a probability vector: {0}")]
    NotADistribution(String),
    #[error("intent for action {action} at state {state} is not a distribution: {reason}")]
    InvalidIntent {
        action: usize,
        state: usize,
        reason: String,
    },
    #[error("intent set covers actions {covered:?}, expected each of 0..{num_actions} once")]
    IntentCoverage {
        covered: Vec<usize>,
        num_actions: usize,
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("argument out of domain: {0}")]
    Domain(String),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

fn check_distribution(p: &[f64]) -> Result<(), AffordanceError> {
    let total: f64 = p.iter().sum();
    if p.iter().any(|&x| !(x >= -DISTRIBUTION_TOLERANCE))
        || (total - 1.0).abs() > DISTRIBUTION_TOLERANCE
    {
        return Err(AffordanceError::NotADistribution(format!("sum {total}")));
    }
    Ok(())
}

/// Total variation distance `1/2 Σ |p - q|` between two dense distributions.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64, AffordanceError> {
    if p.len() != q.len() {
        return Err(AffordanceError::Shape(format!(
            "lengths {} and {}",
            p.len(),
            q.len()
        )));
    }
    check_distribution(p)?;
    check_distribution(q)?;
    let d = 0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>();
    Ok(d.min(1.0))
}

/// Total variation between two sparse rows sorted by index.
pub(crate) fn tv_distance_sparse(p: &[(usize, f64)], q: &[(usize, f64)]) -> f64 {
    let (mut i, mut j, mut acc) = (0, 0, 0.0);
    while i < p.len() || j < q.len() {
        match (p.get(i), q.get(j)) {
            (Some(&(a, x)), Some(&(b, y))) if a == b => {
                acc += (x - y).abs();
                i += 1;
                j += 1;
            }
            (Some(&(a, x)), Some(&(b, _))) if a < b => {
                acc += x;
                i += 1;
            }
            (Some(&(_, x)), None) => {
                acc += x;
                i += 1;
            }
            (_, Some(&(_, y))) => {
                acc += y;
                j += 1;
            }
            (None, None) => unreachable!(),
        }
    }
    (0.5 * acc).min(1.0)
}
