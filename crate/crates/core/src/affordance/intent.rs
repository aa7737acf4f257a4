use serde::{Deserialize, Serialize};

use super::AffordanceError;
use crate::env::{Direction, GridWorld};
use crate::mdp::{SparseRow, TabularMdp, ROW_SUM_TOLERANCE};

/// Desired outcome of an action, per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntentTarget {
    /// Target next-state distribution per state. `None` marks states where
    /// the desired outcome lies outside the state space, so the intent can
    /// never be met there.
    Distribution(Vec<Option<SparseRow>>),
    /// Set of next states that complete the intent, per state.
    Predicate(Vec<Vec<usize>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intent {
    pub name: String,
    pub action: usize,
    pub target: IntentTarget,
}

impl Intent {
    pub fn distribution(
        name: impl Into<String>,
        action: usize,
        rows: Vec<Option<SparseRow>>,
    ) -> Result<Self, AffordanceError> {
        for (s, row) in rows.iter().enumerate() {
            if let Some(row) = row {
                let total: f64 = row.iter().map(|&(_, p)| p).sum();
                if row.iter().any(|&(_, p)| !(p >= 0.0)) || (total - 1.0).abs() > ROW_SUM_TOLERANCE
                {
                    return Err(AffordanceError::InvalidIntent {
                        action,
                        state: s,
                        reason: format!("row sums to {total}"),
                    });
                }
            }
        }
        Ok(Self {
            name: name.into(),
            action,
            target: IntentTarget::Distribution(rows),
        })
    }

    pub fn predicate(name: impl Into<String>, action: usize, supports: Vec<Vec<usize>>) -> Self {
        Self {
            name: name.into(),
            action,
            target: IntentTarget::Predicate(supports),
        }
    }

    pub fn num_states(&self) -> usize {
        match &self.target {
            IntentTarget::Distribution(rows) => rows.len(),
            IntentTarget::Predicate(sets) => sets.len(),
        }
    }

    /// Whether reaching `next` from `s` completes the intent.
    pub fn is_completed(&self, s: usize, next: usize) -> bool {
        match &self.target {
            IntentTarget::Distribution(rows) => rows[s]
                .as_ref()
                .is_some_and(|row| row.iter().any(|&(j, p)| j == next && p > 0.0)),
            IntentTarget::Predicate(sets) => sets[s].contains(&next),
        }
    }

    /// Next states that complete the intent at `s`.
    pub fn support(&self, s: usize) -> Vec<usize> {
        match &self.target {
            IntentTarget::Distribution(rows) => rows[s]
                .as_ref()
                .map(|row| {
                    row.iter()
                        .filter(|&&(_, p)| p > 0.0)
                        .map(|&(j, _)| j)
                        .collect()
                })
                .unwrap_or_default(),
            IntentTarget::Predicate(sets) => sets[s].clone(),
        }
    }

    /// Target distribution at `s`. Predicate intents are rendered as the true
    /// dynamics of `(s, action)` restricted to the support and renormalised;
    /// `None` if the support carries no mass.
    pub fn distribution_at(&self, mdp: &TabularMdp, s: usize) -> Option<SparseRow> {
        match &self.target {
            IntentTarget::Distribution(rows) => rows[s].clone(),
            IntentTarget::Predicate(sets) => {
                let kept: SparseRow = mdp
                    .row(s, self.action)
                    .iter()
                    .filter(|(j, _)| sets[s].contains(j))
                    .copied()
                    .collect();
                let mass: f64 = kept.iter().map(|&(_, p)| p).sum();
                (mass > 0.0).then(|| kept.into_iter().map(|(j, p)| (j, p / mass)).collect())
            }
        }
    }
}

/// One intent per action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentSet {
    intents: Vec<Intent>,
}

impl IntentSet {
    pub fn new(mut intents: Vec<Intent>, num_actions: usize) -> Result<Self, AffordanceError> {
        intents.sort_by_key(|i| i.action);
        let covered: Vec<usize> = intents.iter().map(|i| i.action).collect();
        if covered != (0..num_actions).collect::<Vec<_>>() {
            return Err(AffordanceError::IntentCoverage {
                covered,
                num_actions,
            });
        }
        Ok(Self { intents })
    }

    pub fn for_action(&self, a: usize) -> &Intent {
        &self.intents[a]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Intent> {
        self.intents.iter()
    }

    pub fn len(&self) -> usize {
        self.intents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intents.is_empty()
    }
}

/// Each action intends a point mass on the neighbour in its direction.
pub fn directional_intents(world: &GridWorld) -> IntentSet {
    let intents = Direction::ALL
        .iter()
        .map(|&dir| {
            let rows = (0..world.num_states())
                .map(|s| world.neighbor(s, dir).map(|j| vec![(j, 1.0)]))
                .collect();
            Intent::distribution(format!("move-{dir:?}").to_lowercase(), dir.index(), rows)
                .expect("point masses are distributions")
        })
        .collect();
    IntentSet::new(intents, 4).expect("one intent per direction")
}

/// Every action intends to reach the left neighbour.
pub fn move_left_intents(world: &GridWorld) -> IntentSet {
    let rows: Vec<Option<SparseRow>> = (0..world.num_states())
        .map(|s| world.neighbor(s, Direction::Left).map(|j| vec![(j, 1.0)]))
        .collect();
    let intents = (0..4)
        .map(|a| {
            Intent::distribution("move-left", a, rows.clone())
                .expect("point masses are distributions")
        })
        .collect();
    IntentSet::new(intents, 4).expect("one intent per action")
}

/// Every action intends any change of position.
pub fn move_intents(world: &GridWorld) -> IntentSet {
    let n = world.num_states();
    let supports: Vec<Vec<usize>> = (0..n)
        .map(|s| (0..n).filter(|&j| j != s).collect())
        .collect();
    let intents = (0..4)
        .map(|a| Intent::predicate("move", a, supports.clone()))
        .collect();
    IntentSet::new(intents, 4).expect("one intent per action")
}
