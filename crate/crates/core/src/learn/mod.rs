//! Learned affordances: intent-completion labels, the affordance classifier,
//! affordance-gated Gaussian transition models and their joint training loop.

mod eval;
mod grid;
mod joint;
mod partial;

pub use eval::{evaluate_ood, heatmap, HeatmapRow, OodConfig, OodMetrics};
pub use grid::{
    classifier_affordance, exhaustive_transitions, grid_input, label_grid_dataset, GRID_INPUT_DIM,
};
pub use joint::{train_joint, JointConfig, JointOutput};
pub use partial::{
    query, train_partial_model, Gate, ModelVariant, PartialGaussianModel, Prediction, QueryResult,
};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{ContinuousDataset, ContinuousWorld, Point};
use crate::neural::{bce_with_logits, sigmoid, Adam, Mlp, MlpCheckpoint, NeuralError};

pub const DEFAULT_DELTA: f64 = 0.05;
pub const DEFAULT_MASK_THRESHOLD: f64 = 0.5;
pub const CLASSIFIER_LR: f64 = 0.1;
pub const MODEL_LR: f64 = 0.01;
pub const BATCH_SIZE: usize = 128;
pub const BUFFER_CAPACITY: usize = 50_000;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged {
        step: usize,
        loss: f64,
        trace: Vec<f64>,
    },
    #[error("every transition is masked out (mask rate {mask_rate:.3} over {total} transitions)")]
    AllMasked { mask_rate: f64, total: usize },
    #[error("{0}")]
    Shape(String),
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

/// Movement intents of the continuous world.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Displacement {
    PlusX,
    MinusX,
    PlusY,
    MinusY,
}

impl Displacement {
    pub const ALL: [Displacement; 4] = [Self::PlusX, Self::MinusX, Self::PlusY, Self::MinusY];

    pub fn name(self) -> &'static str {
        match self {
            Self::PlusX => "+dx",
            Self::MinusX => "-dx",
            Self::PlusY => "+dy",
            Self::MinusY => "-dy",
        }
    }

    pub fn names() -> Vec<String> {
        Self::ALL.iter().map(|d| d.name().to_string()).collect()
    }
}

/// `c(s, a, s', I)`: whether the observed move completes a displacement intent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntentCompletion {
    pub delta: f64,
}

impl Default for IntentCompletion {
    fn default() -> Self {
        Self {
            delta: DEFAULT_DELTA,
        }
    }
}

impl IntentCompletion {
    pub fn completes(&self, from: Point, to: Point, intent: Displacement) -> bool {
        let (dx, dy) = (to[0] - from[0], to[1] - from[1]);
        match intent {
            Displacement::PlusX => dx > self.delta,
            Displacement::MinusX => -dx > self.delta,
            Displacement::PlusY => dy > self.delta,
            Displacement::MinusY => -dy > self.delta,
        }
    }

    pub fn labels(&self, from: Point, to: Point) -> Vec<f64> {
        Displacement::ALL
            .iter()
            .map(|&i| {
                if self.completes(from, to, i) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Network inputs paired with `{0, 1}` completion labels, one per intent.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledSet {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<Vec<f64>>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

pub fn label_dataset(
    world: &ContinuousWorld,
    data: &ContinuousDataset,
    completion: IntentCompletion,
) -> LabeledSet {
    let (inputs, labels) = data
        .transitions
        .iter()
        .map(|t| {
            (
                world.features(t.state, t.action).to_vec(),
                completion.labels(t.state, t.next_state),
            )
        })
        .unzip();
    LabeledSet { inputs, labels }
}

/// `A_θ(s, a, I)`: probability that taking `a` in `s` completes each intent.
#[derive(Debug, Clone, PartialEq)]
pub struct AffordanceClassifier {
    pub net: Mlp,
    pub intents: Vec<String>,
}

impl AffordanceClassifier {
    pub fn new(in_dim: usize, intents: Vec<String>, seed: u64) -> Result<Self, LearnError> {
        let net = Mlp::standard(in_dim, intents.len(), seed)?;
        Ok(Self { net, intents })
    }

    pub fn probabilities(&self, input: &[f64]) -> Result<Vec<f64>, LearnError> {
        Ok(self.net.forward(input)?.into_iter().map(sigmoid).collect())
    }

    pub fn max_probability(&self, input: &[f64]) -> Result<f64, LearnError> {
        Ok(self.probabilities(input)?.into_iter().fold(0.0, f64::max))
    }

    /// Whether some intent is predicted to complete with probability above `k`.
    pub fn affords(&self, input: &[f64], k: f64) -> Result<bool, LearnError> {
        Ok(self.max_probability(input)? > k)
    }

    pub fn to_checkpoint(&self) -> MlpCheckpoint {
        let mut meta = serde_json::Map::new();
        meta.insert("role".into(), "affordance_classifier".into());
        meta.insert("intents".into(), self.intents.clone().into());
        self.net.to_checkpoint(meta)
    }

    /// One Adam step on the mean (over the batch) of the per-sample BCE summed over intents.
    fn update(
        &mut self,
        adam: &mut Adam,
        set: &LabeledSet,
        batch: &[usize],
    ) -> Result<f64, LearnError> {
        let mut grads = vec![0.0; self.net.num_params()];
        let mut loss = 0.0;
        let scale = 1.0 / batch.len() as f64;
        for &i in batch {
            let cache = self.net.forward_cached(&set.inputs[i])?;
            let (l, g) = bce_with_logits(cache.output(), &set.labels[i])?;
            loss += l * scale;
            let g: Vec<f64> = g.into_iter().map(|x| x * scale).collect();
            for (acc, x) in grads.iter_mut().zip(self.net.backward(&cache, &g)?.params) {
                *acc += x;
            }
        }
        if loss.is_finite() {
            adam.step(self.net.params_mut(), &grads)?;
        }
        Ok(loss)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn classifier(seed: u64) -> Self {
        Self {
            steps: 2000,
            batch_size: BATCH_SIZE,
            lr: CLASSIFIER_LR,
            seed,
        }
    }

    pub fn model(steps: usize, seed: u64) -> Self {
        Self {
            steps,
            batch_size: BATCH_SIZE,
            lr: MODEL_LR,
            seed,
        }
    }
}

/// Minibatches drawn from repeated seeded shuffles of `0..len`.
pub(crate) struct Batcher {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Batcher {
    pub(crate) fn new(len: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng);
        Self { order, pos: 0, rng }
    }

    pub(crate) fn next(&mut self, size: usize) -> Vec<usize> {
        let size = size.min(self.order.len());
        if self.pos + size > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let batch = self.order[self.pos..self.pos + size].to_vec();
        self.pos += size;
        batch
    }
}

/// Seed offsets so that data, classifier and model streams never coincide.
pub(crate) const CLASSIFIER_SEED_SALT: u64 = 0x5EED_C1A5;
pub(crate) const MODEL_SEED_SALT: u64 = 0x5EED_0DE1;
pub(crate) const BATCH_SEED_SALT: u64 = 0x5EED_BA7C;

/// Trained parameters with the per-step training loss.
#[derive(Debug, Clone)]
pub struct Trained<T> {
    pub model: T,
    pub trace: Vec<f64>,
}

pub fn train_classifier(
    set: &LabeledSet,
    intents: Vec<String>,
    config: TrainConfig,
) -> Result<Trained<AffordanceClassifier>, LearnError> {
    let first = set.inputs.first().ok_or(LearnError::EmptyDataset)?;
    if set.labels.len() != set.len() || set.labels.iter().any(|l| l.len() != intents.len()) {
        return Err(LearnError::Shape(format!(
            "labels must have {} entries per input",
            intents.len()
        )));
    }
    let mut classifier =
        AffordanceClassifier::new(first.len(), intents, config.seed ^ CLASSIFIER_SEED_SALT)?;
    let mut adam = Adam::new(classifier.net.num_params(), config.lr);
    let mut batcher = Batcher::new(set.len(), config.seed ^ BATCH_SEED_SALT);
    let mut trace = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let batch = batcher.next(config.batch_size);
        let loss = classifier.update(&mut adam, set, &batch)?;
        trace.push(loss);
        if !loss.is_finite() {
            return Err(LearnError::Diverged { step, loss, trace });
        }
    }
    Ok(Trained {
        model: classifier,
        trace,
    })
}
