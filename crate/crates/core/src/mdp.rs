//! Finite MDPs, Bellman backups, value iteration and policy evaluation.
//!
//! Every solver accepts an [`ActionRestriction`] so that planning can be
//! limited to an affordance without building a separate model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used when validating that a row is a probability vector.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Default stopping threshold for value iteration.
pub const DEFAULT_VI_TOLERANCE: f64 = 1e-6;

/// Default iteration cap for value iteration and policy evaluation.
pub const DEFAULT_MAX_ITERATIONS: usize = 100_000;

/// Greedy action selection treats Q-values closer than this as tied.
const TIE_EPSILON: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MdpError {
    #[error("MDP must have at least one state and one action")]
    Empty,
    #[error("discount {0} must lie strictly inside (0, 1)")]
    InvalidDiscount(f64),
    #[error("reward {reward} at (s={state}, a={action}) lies outside [0, {rmax}]")]
    RewardOutOfRange {
        state: usize,
        action: usize,
        reward: f64,
        rmax: f64,
    },
    #[error("transition row (s={state}, a={action}) is not a probability vector: {reason}")]
    InvalidRow {
        state: usize,
        action: usize,
        reason: String,
    },
    #[error("expected {expected} entries for {what}, found {found}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("state {state} has no allowed actions")]
    EmptyRestriction { state: usize },
    #[error("action {action} out of range for state {state}")]
    ActionOutOfRange { state: usize, action: usize },
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("no convergence after {iterations} iterations (last residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
}

/// Sparse probability row: `(next_state, probability)` pairs with positive mass,
/// sorted by next state.
pub type SparseRow = Vec<(usize, f64)>;

/// A finite MDP with a known reward table and transition tensor.
///
/// Immutable after construction; all invariants are checked by the
/// constructors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    /// `reward[s * num_actions + a]`
    reward: Vec<f64>,
    /// `transitions[s * num_actions + a]`
    transitions: Vec<SparseRow>,
    discount: f64,
    rmax: f64,
}

impl TabularMdp {
    /// Builds an MDP from a flat reward table and sparse rows, both indexed by
    /// `s * num_actions + a`.
    pub fn from_sparse(
        num_states: usize,
        num_actions: usize,
        reward: Vec<f64>,
        transitions: Vec<SparseRow>,
        discount: f64,
        rmax: f64,
    ) -> Result<Self, MdpError> {
        if num_states == 0 || num_actions == 0 {
            return Err(MdpError::Empty);
        }
        if !(discount > 0.0 && discount < 1.0) {
            return Err(MdpError::InvalidDiscount(discount));
        }
        let pairs = num_states * num_actions;
        if reward.len() != pairs {
            return Err(MdpError::ShapeMismatch {
                what: "reward table",
                expected: pairs,
                found: reward.len(),
            });
        }
        if transitions.len() != pairs {
            return Err(MdpError::ShapeMismatch {
                what: "transition table",
                expected: pairs,
                found: transitions.len(),
            });
        }
        for (idx, &r) in reward.iter().enumerate() {
            if !(r.is_finite() && (0.0..=rmax).contains(&r)) {
                return Err(MdpError::RewardOutOfRange {
                    state: idx / num_actions,
                    action: idx % num_actions,
                    reward: r,
                    rmax,
                });
            }
        }
        let mut rows = Vec::with_capacity(pairs);
        for (idx, row) in transitions.into_iter().enumerate() {
            let row = normalize_sparse(row, num_states).map_err(|reason| MdpError::InvalidRow {
                state: idx / num_actions,
                action: idx % num_actions,
                reason,
            })?;
            rows.push(row);
        }
        Ok(Self {
            num_states,
            num_actions,
            reward,
            transitions: rows,
            discount,
            rmax,
        })
    }

    /// Builds an MDP from nested dense tables `reward[s][a]` and
    /// `transition[s][a][s']`.
    pub fn from_dense(
        reward: Vec<Vec<f64>>,
        transition: Vec<Vec<Vec<f64>>>,
        discount: f64,
        rmax: f64,
    ) -> Result<Self, MdpError> {
        let num_states = transition.len();
        let num_actions = transition.first().map_or(0, Vec::len);
        if reward.len() != num_states {
            return Err(MdpError::ShapeMismatch {
                what: "reward rows",
                expected: num_states,
                found: reward.len(),
            });
        }
        let mut flat_reward = Vec::with_capacity(num_states * num_actions);
        let mut rows = Vec::with_capacity(num_states * num_actions);
        for (s, (r_row, p_rows)) in reward.into_iter().zip(transition).enumerate() {
            if r_row.len() != num_actions || p_rows.len() != num_actions {
                return Err(MdpError::ShapeMismatch {
                    what: "actions per state",
                    expected: num_actions,
                    found: r_row.len().min(p_rows.len()),
                });
            }
            flat_reward.extend(r_row);
            for (a, dense) in p_rows.into_iter().enumerate() {
                if dense.len() != num_states {
                    return Err(MdpError::InvalidRow {
                        state: s,
                        action: a,
                        reason: format!("length {} != {num_states}", dense.len()),
                    });
                }
                rows.push(dense_to_sparse(&dense));
            }
        }
        Self::from_sparse(num_states, num_actions, flat_reward, rows, discount, rmax)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// Upper bound on rewards recorded at construction.
    pub fn rmax(&self) -> f64 {
        self.rmax
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.num_actions + a]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    pub fn row(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.transitions[s * self.num_actions + a]
    }

    pub fn prob(&self, s: usize, a: usize, next: usize) -> f64 {
        let row = self.row(s, a);
        row.binary_search_by_key(&next, |&(j, _)| j)
            .map_or(0.0, |i| row[i].1)
    }

    pub fn row_dense(&self, s: usize, a: usize) -> Vec<f64> {
        let mut dense = vec![0.0; self.num_states];
        for &(j, p) in self.row(s, a) {
            dense[j] = p;
        }
        dense
    }

    /// Returns a copy with the transition rows replaced. Rewards, discount and
    /// `rmax` are kept.
    pub fn with_transitions(&self, transitions: Vec<SparseRow>) -> Result<Self, MdpError> {
        Self::from_sparse(
            self.num_states,
            self.num_actions,
            self.reward.clone(),
            transitions,
            self.discount,
            self.rmax,
        )
    }

    /// One-step lookahead `r(s,a) + γ Σ P(s'|s,a) V(s')`.
    pub fn q_value(&self, values: &[f64], s: usize, a: usize) -> f64 {
        let expected: f64 = self.row(s, a).iter().map(|&(j, p)| p * values[j]).sum();
        self.reward(s, a) + self.discount * expected
    }
}

fn dense_to_sparse(dense: &[f64]) -> SparseRow {
    dense
        .iter()
        .enumerate()
        .filter(|(_, &p)| p != 0.0)
        .map(|(j, &p)| (j, p))
        .collect()
}

fn normalize_sparse(mut row: SparseRow, num_states: usize) -> Result<SparseRow, String> {
    row.sort_by_key(|&(j, _)| j);
    let mut total = 0.0;
    for w in row.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(format!("duplicate next state {}", w[0].0));
        }
    }
    for &(j, p) in &row {
        if j >= num_states {
            return Err(format!("next state {j} out of range"));
        }
        if !p.is_finite() || p < 0.0 {
            return Err(format!("entry {p} for next state {j}"));
        }
        total += p;
    }
    if (total - 1.0).abs() > ROW_SUM_TOLERANCE {
        return Err(format!("sums to {total}"));
    }
    row.retain(|&(_, p)| p > 0.0);
    Ok(row)
}

/// Per-state sets of actions that planning may consider.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionRestriction {
    allowed: Vec<Vec<usize>>,
}

impl ActionRestriction {
    /// Every action allowed in every state.
    pub fn full(num_states: usize, num_actions: usize) -> Self {
        Self {
            allowed: vec![(0..num_actions).collect(); num_states],
        }
    }

    pub fn new(mut allowed: Vec<Vec<usize>>, num_actions: usize) -> Result<Self, MdpError> {
        for (s, actions) in allowed.iter_mut().enumerate() {
            actions.sort_unstable();
            actions.dedup();
            if actions.is_empty() {
                return Err(MdpError::EmptyRestriction { state: s });
            }
            if let Some(&a) = actions.iter().find(|&&a| a >= num_actions) {
                return Err(MdpError::ActionOutOfRange {
                    state: s,
                    action: a,
                });
            }
        }
        Ok(Self { allowed })
    }

    pub fn num_states(&self) -> usize {
        self.allowed.len()
    }

    pub fn allowed(&self, s: usize) -> &[usize] {
        &self.allowed[s]
    }

    pub fn contains(&self, s: usize, a: usize) -> bool {
        self.allowed[s].binary_search(&a).is_ok()
    }

    /// Total number of allowed state-action pairs.
    pub fn num_pairs(&self) -> usize {
        self.allowed.iter().map(Vec::len).sum()
    }

    /// True when every allowed set of `self` is contained in the matching set of `other`.
    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.allowed.len() == other.allowed.len()
            && self
                .allowed
                .iter()
                .enumerate()
                .all(|(s, acts)| acts.iter().all(|&a| other.contains(s, a)))
    }

    fn check_against(&self, mdp: &TabularMdp) -> Result<(), MdpError> {
        if self.allowed.len() != mdp.num_states() {
            return Err(MdpError::ShapeMismatch {
                what: "restriction states",
                expected: mdp.num_states(),
                found: self.allowed.len(),
            });
        }
        for (s, acts) in self.allowed.iter().enumerate() {
            if let Some(&a) = acts.iter().find(|&&a| a >= mdp.num_actions()) {
                return Err(MdpError::ActionOutOfRange {
                    state: s,
                    action: a,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueFunction {
    pub values: Vec<f64>,
}

impl ValueFunction {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DeterministicPolicy {
    pub actions: Vec<usize>,
}

impl DeterministicPolicy {
    pub fn action(&self, s: usize) -> usize {
        self.actions[s]
    }
}

/// Result of [`value_iteration`].
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub values: ValueFunction,
    pub policy: DeterministicPolicy,
    pub iterations: usize,
    /// Number of state-action backups performed, summed over sweeps.
    pub backups: u64,
    /// Sup-norm change of the final sweep.
    pub residual: f64,
}

/// How the greedy step picks among actions whose Q-values tie.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TieBreak {
    #[default]
    LowestIndex,
    /// Uniform choice among the tied actions, reproducible from `seed`.
    Seeded { seed: u64 },
}

/// Greedy policy in `values` over the allowed actions, lowest index on ties.
pub fn greedy_policy(
    mdp: &TabularMdp,
    restriction: &ActionRestriction,
    values: &[f64],
) -> DeterministicPolicy {
    greedy_policy_with(mdp, restriction, values, TieBreak::LowestIndex)
}

pub fn greedy_policy_with(
    mdp: &TabularMdp,
    restriction: &ActionRestriction,
    values: &[f64],
    tie_break: TieBreak,
) -> DeterministicPolicy {
    let mut rng = match tie_break {
        TieBreak::LowestIndex => None,
        TieBreak::Seeded { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
    };
    let mut tied = Vec::with_capacity(mdp.num_actions());
    let actions = (0..mdp.num_states())
        .map(|s| {
            let allowed = restriction.allowed(s);
            let best_q = allowed
                .iter()
                .map(|&a| mdp.q_value(values, s, a))
                .fold(f64::NEG_INFINITY, f64::max);
            tied.clear();
            tied.extend(
                allowed
                    .iter()
                    .copied()
                    .filter(|&a| mdp.q_value(values, s, a) >= best_q - TIE_EPSILON),
            );
            match rng.as_mut() {
                Some(rng) if tied.len() > 1 => tied[rng.random_range(0..tied.len())],
                _ => tied[0],
            }
        })
        .collect();
    DeterministicPolicy { actions }
}

/// Synchronous value iteration over the allowed actions.
///
/// Stops once the sup-norm change between sweeps is at most `tol`.
pub fn value_iteration(
    mdp: &TabularMdp,
    restriction: &ActionRestriction,
    tol: f64,
    max_iter: usize,
) -> Result<Solution, MdpError> {
    value_iteration_with(mdp, restriction, tol, max_iter, TieBreak::LowestIndex)
}

/// [`value_iteration`] with an explicit tie-breaking rule for the final policy.
pub fn value_iteration_with(
    mdp: &TabularMdp,
    restriction: &ActionRestriction,
    tol: f64,
    max_iter: usize,
    tie_break: TieBreak,
) -> Result<Solution, MdpError> {
    if !(tol > 0.0) {
        return Err(MdpError::InvalidTolerance(tol));
    }
    restriction.check_against(mdp)?;
    let n = mdp.num_states();
    let mut values = vec![0.0; n];
    let mut next = vec![0.0; n];
    let pairs_per_sweep = restriction.num_pairs() as u64;
    let mut backups = 0u64;
    let mut residual = f64::INFINITY;
    for iteration in 1..=max_iter {
        residual = 0.0;
        for (s, slot) in next.iter_mut().enumerate() {
            let best = restriction
                .allowed(s)
                .iter()
                .map(|&a| mdp.q_value(&values, s, a))
                .fold(f64::NEG_INFINITY, f64::max);
            residual = f64::max(residual, (best - values[s]).abs());
            *slot = best;
        }
        backups += pairs_per_sweep;
        std::mem::swap(&mut values, &mut next);
        if residual <= tol {
            let policy = greedy_policy_with(mdp, restriction, &values, tie_break);
            return Ok(Solution {
                values: ValueFunction { values },
                policy,
                iterations: iteration,
                backups,
                residual,
            });
        }
    }
    Err(MdpError::NotConverged {
        iterations: max_iter,
        residual,
    })
}

/// Iterative evaluation of a deterministic policy; stops when the sup-norm
/// change between sweeps is at most `tol`.
pub fn policy_evaluation(
    mdp: &TabularMdp,
    policy: &DeterministicPolicy,
    tol: f64,
    max_iter: usize,
) -> Result<ValueFunction, MdpError> {
    if !(tol > 0.0) {
        return Err(MdpError::InvalidTolerance(tol));
    }
    if policy.actions.len() != mdp.num_states() {
        return Err(MdpError::ShapeMismatch {
            what: "policy",
            expected: mdp.num_states(),
            found: policy.actions.len(),
        });
    }
    if let Some((s, &a)) = policy
        .actions
        .iter()
        .enumerate()
        .find(|(_, &a)| a >= mdp.num_actions())
    {
        return Err(MdpError::ActionOutOfRange {
            state: s,
            action: a,
        });
    }
    let n = mdp.num_states();
    let mut values = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        residual = 0.0;
        for (s, slot) in next.iter_mut().enumerate() {
            let v = mdp.q_value(&values, s, policy.actions[s]);
            residual = f64::max(residual, (v - values[s]).abs());
            *slot = v;
        }
        std::mem::swap(&mut values, &mut next);
        if residual <= tol {
            return Ok(ValueFunction { values });
        }
    }
    Err(MdpError::NotConverged {
        iterations: max_iter,
        residual,
    })
}

/// Sup-norm Bellman optimality residual `||T V - V||_inf` over allowed actions.
pub fn bellman_residual(mdp: &TabularMdp, restriction: &ActionRestriction, values: &[f64]) -> f64 {
    (0..mdp.num_states())
        .map(|s| {
            let best = restriction
                .allowed(s)
                .iter()
                .map(|&a| mdp.q_value(values, s, a))
                .fold(f64::NEG_INFINITY, f64::max);
            (best - values[s]).abs()
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    Sup,
    L2,
}

/// Distance between two value functions under `norm`.
pub fn value_loss(v1: &ValueFunction, v2: &ValueFunction, norm: Norm) -> Result<f64, MdpError> {
    if v1.len() != v2.len() {
        return Err(MdpError::ShapeMismatch {
            what: "value function",
            expected: v1.len(),
            found: v2.len(),
        });
    }
    let diffs = v1.values.iter().zip(&v2.values).map(|(a, b)| (a - b).abs());
    Ok(match norm {
        Norm::Sup => diffs.fold(0.0, f64::max),
        Norm::L2 => diffs.map(|d| d * d).sum::<f64>().sqrt(),
    })
}
