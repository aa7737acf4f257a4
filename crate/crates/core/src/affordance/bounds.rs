//! Value-loss and planning-loss bounds, and the policy-class helpers they need.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::set::AffordanceSet;
use super::AffordanceError;
use crate::mdp::{
    value_iteration, ActionRestriction, DeterministicPolicy, SparseRow, TabularMdp,
    DEFAULT_MAX_ITERATIONS,
};

fn check_common(epsilon: f64, gamma: f64, rmax: f64) -> Result<(), AffordanceError> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(AffordanceError::Domain(format!(
            "epsilon {epsilon} outside [0, 1]"
        )));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(AffordanceError::Domain(format!(
            "gamma {gamma} outside (0, 1)"
        )));
    }
    if !(rmax >= 0.0 && rmax.is_finite()) {
        return Err(AffordanceError::Domain(format!(
            "rmax {rmax} must be finite and non-negative"
        )));
    }
    Ok(())
}

/// Worst-case value loss of planning with intents satisfied to degree
/// `epsilon`: `2 ε γ Rmax / (1 - γ)^2`.
pub fn value_loss_bound(epsilon: f64, gamma: f64, rmax: f64) -> Result<f64, AffordanceError> {
    check_common(epsilon, gamma, rmax)?;
    Ok(2.0 * epsilon * gamma * rmax / (1.0 - gamma).powi(2))
}

/// High-probability planning-loss bound for certainty-equivalence planning
/// over an affordance:
///
/// `2 Rmax / (1-γ)^2 * (2 γ ε + sqrt(ln(2 |AF| |Π| / δ) / (2 n)))`.
pub fn planning_loss_bound(
    epsilon: f64,
    gamma: f64,
    rmax: f64,
    n: u64,
    af_size: u64,
    policy_class_size: f64,
    delta: f64,
) -> Result<f64, AffordanceError> {
    if !(policy_class_size >= 1.0 && policy_class_size.is_finite()) {
        return Err(AffordanceError::Domain(format!(
            "policy class size {policy_class_size} must be >= 1"
        )));
    }
    planning_loss_bound_ln(
        epsilon,
        gamma,
        rmax,
        n,
        af_size,
        policy_class_size.ln(),
        delta,
    )
}

/// [`planning_loss_bound`] taking `ln |Π|`, for policy classes too large to count in floating point.
pub fn planning_loss_bound_ln(
    epsilon: f64,
    gamma: f64,
    rmax: f64,
    n: u64,
    af_size: u64,
    ln_policy_class_size: f64,
    delta: f64,
) -> Result<f64, AffordanceError> {
    check_common(epsilon, gamma, rmax)?;
    if n == 0 {
        return Err(AffordanceError::Domain(
            "sample count must be at least 1".into(),
        ));
    }
    if af_size == 0 {
        return Err(AffordanceError::Domain(
            "affordance size must be at least 1".into(),
        ));
    }
    if !(ln_policy_class_size >= 0.0 && ln_policy_class_size.is_finite()) {
        return Err(AffordanceError::Domain(format!(
            "ln policy class size {ln_policy_class_size} must be >= 0"
        )));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(AffordanceError::Domain(format!(
            "delta {delta} outside (0, 1)"
        )));
    }
    let log_term = 2f64.ln() + (af_size as f64).ln() + ln_policy_class_size - delta.ln();
    let deviation = (log_term / (2.0 * n as f64)).sqrt();
    Ok(2.0 * rmax / (1.0 - gamma).powi(2) * (2.0 * gamma * epsilon + deviation))
}

/// `ln` of the number of deterministic policies that only use allowed actions.
pub fn ln_restricted_policy_count(restriction: &ActionRestriction) -> f64 {
    (0..restriction.num_states())
        .map(|s| (restriction.allowed(s).len() as f64).ln())
        .sum()
}

/// Number of deterministic policies that only use allowed actions.
pub fn count_restricted_policies(restriction: &ActionRestriction) -> u128 {
    (0..restriction.num_states())
        .map(|s| restriction.allowed(s).len() as u128)
        .try_fold(1u128, |acc, k| acc.checked_mul(k))
        .unwrap_or(u128::MAX)
}

/// Every deterministic policy that only uses allowed actions.
pub fn enumerate_restricted_policies(restriction: &ActionRestriction) -> Vec<DeterministicPolicy> {
    let n = restriction.num_states();
    let mut out = Vec::new();
    let mut idx = vec![0usize; n];
    loop {
        out.push(DeterministicPolicy {
            actions: (0..n).map(|s| restriction.allowed(s)[idx[s]]).collect(),
        });
        let mut s = 0;
        loop {
            if s == n {
                return out;
            }
            idx[s] += 1;
            if idx[s] < restriction.allowed(s).len() {
                break;
            }
            idx[s] = 0;
            s += 1;
        }
    }
}

pub const POLICY_CLASS_MAX_STATES: usize = 6;
pub const POLICY_CLASS_MAX_ACTIONS_PER_STATE: usize = 8;

/// Lower estimate of `|Π_I|`: the true optimal policy plus the distinct
/// optimal policies of `samples` random models over the afforded pairs
/// (rewards kept, transition rows drawn uniformly from the simplex).
///
/// Only supported for tiny MDPs (at most 6 states, 8 afforded actions per state).
pub fn estimate_policy_class_size(
    mdp: &TabularMdp,
    affordance: &AffordanceSet,
    samples: usize,
    seed: u64,
) -> Result<usize, AffordanceError> {
    let n = mdp.num_states();
    if n > POLICY_CLASS_MAX_STATES
        || (0..n).any(|s| affordance.actions(s).len() > POLICY_CLASS_MAX_ACTIONS_PER_STATE)
    {
        return Err(AffordanceError::Domain(format!(
            "policy class helper supports at most {POLICY_CLASS_MAX_STATES} states and \
             {POLICY_CLASS_MAX_ACTIONS_PER_STATE} afforded actions per state"
        )));
    }
    let tol = 1e-10;
    let mut policies = HashSet::new();
    let full = ActionRestriction::full(n, mdp.num_actions());
    policies.insert(value_iteration(mdp, &full, tol, DEFAULT_MAX_ITERATIONS)?.policy);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..samples {
        let rows: Vec<SparseRow> = (0..n * mdp.num_actions())
            .map(|_| {
                let weights: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
                let total: f64 = weights.iter().sum();
                weights
                    .into_iter()
                    .enumerate()
                    .map(|(j, w)| (j, w / total))
                    .collect()
            })
            .collect();
        let model = mdp.with_transitions(rows)?;
        policies.insert(
            value_iteration(
                &model,
                affordance.restriction(),
                tol,
                DEFAULT_MAX_ITERATIONS,
            )?
            .policy,
        );
    }
    Ok(policies.len())
}
