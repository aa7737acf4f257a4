//! The affordance classifier on gridworlds, where its thresholded output can
//! be compared against the exact tabular affordance.

use super::{AffordanceClassifier, LabeledSet, LearnError};
use crate::affordance::IntentSet;
use crate::env::{Dataset, GridWorld, Provenance, TabularDataset, Transition};

/// Scaled `(x, y)` followed by a one-hot action.
pub const GRID_INPUT_DIM: usize = 6;

pub fn grid_input(world: &GridWorld, s: usize, a: usize) -> Vec<f64> {
    let [x, y] = world.features(s);
    let mut input = vec![x, y, 0.0, 0.0, 0.0, 0.0];
    input[2 + a] = 1.0;
    input
}

/// Every `(s, a, s')` with positive probability, once each.
pub fn exhaustive_transitions(world: &GridWorld) -> TabularDataset {
    let mdp = world.mdp();
    let transitions = (0..mdp.num_states())
        .flat_map(|s| (0..mdp.num_actions()).map(move |a| (s, a)))
        .flat_map(|(s, a)| {
            mdp.row(s, a).iter().map(move |&(next, _)| Transition {
                state: s,
                action: a,
                next_state: next,
                reward: mdp.reward(s, a),
            })
        })
        .collect();
    Dataset {
        transitions,
        provenance: Provenance {
            seed: 0,
            environment: "gridworld".into(),
            policy: "exhaustive".into(),
        },
    }
}

/// Labels each transition with the completion of every intent in `intents`.
pub fn label_grid_dataset(
    world: &GridWorld,
    data: &TabularDataset,
    intents: &IntentSet,
) -> LabeledSet {
    let (inputs, labels) = data
        .transitions
        .iter()
        .map(|t| {
            let labels = intents
                .iter()
                .map(|i| {
                    if i.is_completed(t.state, t.next_state) {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect();
            (grid_input(world, t.state, t.action), labels)
        })
        .collect();
    LabeledSet { inputs, labels }
}

/// `allowed[s][a]`: whether the classifier gives action `a`'s own intent a
/// probability above `k` in state `s`.
pub fn classifier_affordance(
    classifier: &AffordanceClassifier,
    world: &GridWorld,
    k: f64,
) -> Result<Vec<Vec<bool>>, LearnError> {
    let m = world.mdp().num_actions();
    if classifier.intents.len() != m {
        return Err(LearnError::Shape(format!(
            "classifier has {} intents for {m} actions",
            classifier.intents.len()
        )));
    }
    (0..world.num_states())
        .map(|s| {
            (0..m)
                .map(|a| Ok(classifier.probabilities(&grid_input(world, s, a))?[a] > k))
                .collect()
        })
        .collect()
}
