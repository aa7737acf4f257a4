//! Certainty-equivalence model estimation from counts, and affordance masking.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affordance::AffordanceSet;
use crate::env::TabularDataset;
use crate::mdp::{ActionRestriction, MdpError, SparseRow, TabularMdp};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("transition ({state}, {action}, {next_state}) out of range")]
    IndexOutOfRange {
        state: usize,
        action: usize,
        next_state: usize,
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

/// Optional estimator behaviour; both flags default to off.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EstimatorOptions {
    /// Pseudo-count added to every next state of visited pairs.
    pub laplace: f64,
    /// Replace known rewards by the empirical mean reward of visited pairs.
    pub estimate_rewards: bool,
}

/// Visit counts and the maximum-likelihood transition model they imply.
/// Pairs that were never visited predict the uniform distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountModel {
    num_states: usize,
    num_actions: usize,
    /// Sparse counts per pair, sorted by next state.
    counts: Vec<Vec<(usize, u64)>>,
    reward_sums: Vec<f64>,
}

impl CountModel {
    pub fn new(num_states: usize, num_actions: usize) -> Self {
        Self {
            num_states,
            num_actions,
            counts: vec![Vec::new(); num_states * num_actions],
            reward_sums: vec![0.0; num_states * num_actions],
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn add(&mut self, s: usize, a: usize, next: usize, reward: f64) -> Result<(), ModelError> {
        if s >= self.num_states || a >= self.num_actions || next >= self.num_states {
            return Err(ModelError::IndexOutOfRange {
                state: s,
                action: a,
                next_state: next,
            });
        }
        let idx = s * self.num_actions + a;
        let row = &mut self.counts[idx];
        match row.binary_search_by_key(&next, |&(j, _)| j) {
            Ok(i) => row[i].1 += 1,
            Err(i) => row.insert(i, (next, 1)),
        }
        self.reward_sums[idx] += reward;
        Ok(())
    }

    pub fn count(&self, s: usize, a: usize, next: usize) -> u64 {
        let row = &self.counts[s * self.num_actions + a];
        row.binary_search_by_key(&next, |&(j, _)| j)
            .map_or(0, |i| row[i].1)
    }

    pub fn visits(&self, s: usize, a: usize) -> u64 {
        self.counts[s * self.num_actions + a]
            .iter()
            .map(|&(_, c)| c)
            .sum()
    }

    pub fn visited(&self, s: usize, a: usize) -> bool {
        !self.counts[s * self.num_actions + a].is_empty()
    }

    /// Maximum-likelihood row for `(s, a)`; uniform when unvisited.
    pub fn estimated(&self, s: usize, a: usize) -> SparseRow {
        self.estimated_with(s, a, 0.0)
    }

    fn estimated_with(&self, s: usize, a: usize, laplace: f64) -> SparseRow {
        let row = &self.counts[s * self.num_actions + a];
        let n = self.num_states as f64;
        if row.is_empty() {
            return (0..self.num_states).map(|j| (j, 1.0 / n)).collect();
        }
        let total = row.iter().map(|&(_, c)| c as f64).sum::<f64>() + laplace * n;
        if laplace > 0.0 {
            let mut dense = vec![laplace / total; self.num_states];
            for &(j, c) in row {
                dense[j] += c as f64 / total;
            }
            return dense.into_iter().enumerate().collect();
        }
        row.iter().map(|&(j, c)| (j, c as f64 / total)).collect()
    }

    /// Adds the counts of `other`; associative and commutative.
    pub fn merge(&mut self, other: &CountModel) -> Result<(), ModelError> {
        if other.num_states != self.num_states || other.num_actions != self.num_actions {
            return Err(ModelError::Shape(
                "cannot merge models of different shapes".into(),
            ));
        }
        for (idx, row) in other.counts.iter().enumerate() {
            for &(j, c) in row {
                let mine = &mut self.counts[idx];
                match mine.binary_search_by_key(&j, |&(k, _)| k) {
                    Ok(i) => mine[i].1 += c,
                    Err(i) => mine.insert(i, (j, c)),
                }
            }
            self.reward_sums[idx] += other.reward_sums[idx];
        }
        Ok(())
    }
}

pub fn estimate_model(
    dataset: &TabularDataset,
    num_states: usize,
    num_actions: usize,
) -> Result<CountModel, ModelError> {
    let mut model = CountModel::new(num_states, num_actions);
    for t in &dataset.transitions {
        model.add(t.state, t.action, t.next_state, t.reward)?;
    }
    Ok(model)
}

/// Approximate MDP planned over the afforded pairs only.
#[derive(Debug, Clone)]
pub struct MaskedModel {
    pub mdp: TabularMdp,
    pub restriction: ActionRestriction,
}

/// Builds the approximate MDP: estimated transitions with the true reward
/// table, restricted to the affordance. Unafforded rows keep the estimate
/// but are never backed up.
pub fn mask_model(
    model: &CountModel,
    affordance: &AffordanceSet,
    base: &TabularMdp,
) -> Result<MaskedModel, ModelError> {
    mask_model_with(model, affordance, base, EstimatorOptions::default())
}

pub fn mask_model_with(
    model: &CountModel,
    affordance: &AffordanceSet,
    base: &TabularMdp,
    options: EstimatorOptions,
) -> Result<MaskedModel, ModelError> {
    let (n, m) = (base.num_states(), base.num_actions());
    if model.num_states != n
        || model.num_actions != m
        || affordance.num_states() != n
        || affordance.num_actions() != m
    {
        return Err(ModelError::Shape(
            "model, affordance and base MDP disagree".into(),
        ));
    }
    for s in 0..n {
        assert!(
            !affordance.actions(s).is_empty(),
            "affordance left state {s} empty"
        );
    }
    let rows = (0..n)
        .flat_map(|s| (0..m).map(move |a| (s, a)))
        .map(|(s, a)| model.estimated_with(s, a, options.laplace))
        .collect();
    let reward = if options.estimate_rewards {
        (0..n * m)
            .map(|idx| {
                let visits = model.counts[idx].iter().map(|&(_, c)| c).sum::<u64>();
                if visits == 0 {
                    base.rewards()[idx]
                } else {
                    (model.reward_sums[idx] / visits as f64).clamp(0.0, base.rmax())
                }
            })
            .collect()
    } else {
        base.rewards().to_vec()
    };
    let mdp = TabularMdp::from_sparse(n, m, reward, rows, base.discount(), base.rmax())?;
    Ok(MaskedModel {
        mdp,
        restriction: affordance.restriction().clone(),
    })
}

/// Count model whose estimates equal the true dynamics exactly: each row's
/// probabilities become counts scaled by `resolution`. Exact for rows whose
/// probabilities are multiples of `1 / resolution`.
pub fn exact_counts(mdp: &TabularMdp, resolution: u64) -> CountModel {
    let mut model = CountModel::new(mdp.num_states(), mdp.num_actions());
    for s in 0..mdp.num_states() {
        for a in 0..mdp.num_actions() {
            model.counts[s * mdp.num_actions() + a] = mdp
                .row(s, a)
                .iter()
                .map(|&(j, p)| (j, (p * resolution as f64).round() as u64))
                .filter(|&(_, c)| c > 0)
                .collect();
        }
    }
    model
}
