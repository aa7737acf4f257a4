use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::partial::ModelTrace;
use super::{
    AffordanceClassifier, Displacement, Gate, IntentCompletion, LabeledSet, LearnError,
    ModelVariant, PartialGaussianModel, BATCH_SEED_SALT, BATCH_SIZE, BUFFER_CAPACITY,
    CLASSIFIER_LR, CLASSIFIER_SEED_SALT, DEFAULT_MASK_THRESHOLD, MODEL_LR, MODEL_SEED_SALT,
};
use crate::env::{random_force, sample_start, ContinuousWorld, Point, StartRule, Transition};
use crate::neural::Adam;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JointConfig {
    /// Outer iterations `N`.
    pub steps: usize,
    /// Fresh transitions collected per iteration.
    pub transitions_per_step: usize,
    pub episode_length: usize,
    pub completion: IntentCompletion,
    pub k: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub classifier_lr: f64,
    pub model_lr: f64,
    pub variant: ModelVariant,
    pub start: StartRule,
    pub seed: u64,
}

impl Default for JointConfig {
    fn default() -> Self {
        Self {
            steps: 7000,
            transitions_per_step: 32,
            episode_length: 50,
            completion: IntentCompletion::default(),
            k: DEFAULT_MASK_THRESHOLD,
            batch_size: BATCH_SIZE,
            buffer_capacity: BUFFER_CAPACITY,
            classifier_lr: CLASSIFIER_LR,
            model_lr: MODEL_LR,
            variant: ModelVariant::Full,
            start: StartRule::UniformBox,
            seed: 0,
        }
    }
}

/// Both arms of a joint run. They see the same transitions and minibatches
/// and start from the same parameters; only the mask differs.
#[derive(Debug, Clone)]
pub struct JointOutput {
    pub classifier: AffordanceClassifier,
    pub aware: PartialGaussianModel,
    pub baseline: PartialGaussianModel,
    pub classifier_trace: Vec<f64>,
    pub aware_trace: ModelTrace,
    pub baseline_trace: Vec<f64>,
}

/// A replay entry: the transition, its classifier input and its intent labels.
type Buffered = (Transition<Point, Point>, Vec<f64>, Vec<f64>);

/// Random-action data collection that keeps its place between iterations.
struct Collector {
    pos: Point,
    t: usize,
    episode: usize,
}

impl Collector {
    fn collect(
        &mut self,
        world: &ContinuousWorld,
        config: &JointConfig,
        rng: &mut ChaCha8Rng,
    ) -> Vec<Transition<Point, Point>> {
        (0..config.transitions_per_step)
            .map(|_| {
                if self.t == config.episode_length {
                    self.episode += 1;
                    self.t = 0;
                    self.pos = sample_start(world, config.start, self.episode, rng);
                }
                let force = random_force(rng);
                let next = world.step(self.pos, force, rng);
                let t = Transition {
                    state: self.pos,
                    action: force,
                    next_state: next,
                    reward: 0.0,
                };
                self.pos = next;
                self.t += 1;
                t
            })
            .collect()
    }
}

/// Affordance-aware model learning: every iteration collects fresh data,
/// labels intent completions, updates the classifier, then updates the
/// model on the minibatch entries the updated classifier affords. The
/// baseline arm takes the same step without the mask.
pub fn train_joint(
    world: &ContinuousWorld,
    config: &JointConfig,
) -> Result<JointOutput, LearnError> {
    if config.episode_length == 0 || config.batch_size == 0 || config.buffer_capacity == 0 {
        return Err(LearnError::Shape(
            "episode length, batch size and buffer capacity must be positive".into(),
        ));
    }
    world
        .validate()
        .map_err(|e| LearnError::Shape(e.to_string()))?;
    let mut classifier =
        AffordanceClassifier::new(4, Displacement::names(), config.seed ^ CLASSIFIER_SEED_SALT)?;
    let mut aware = PartialGaussianModel::new(config.variant, config.seed ^ MODEL_SEED_SALT)?;
    let mut baseline = aware.clone();
    let mut classifier_adam = Adam::new(classifier.net.num_params(), config.classifier_lr);
    let mut aware_adam = Adam::new(aware.net.num_params(), config.model_lr);
    let mut baseline_adam = aware_adam.clone();

    let mut data_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut batch_rng = ChaCha8Rng::seed_from_u64(config.seed ^ BATCH_SEED_SALT);
    let mut collector = Collector {
        pos: sample_start(world, config.start, 0, &mut data_rng),
        t: 0,
        episode: 0,
    };
    let mut buffer: VecDeque<Buffered> = VecDeque::new();

    let mut out_classifier = Vec::with_capacity(config.steps);
    let mut out_aware = ModelTrace {
        loss: Vec::with_capacity(config.steps),
        kept_fraction: Vec::with_capacity(config.steps),
    };
    let mut out_baseline = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        for t in collector.collect(world, config, &mut data_rng) {
            let input = world.features(t.state, t.action).to_vec();
            let labels = config.completion.labels(t.state, t.next_state);
            if buffer.len() == config.buffer_capacity {
                buffer.pop_front();
            }
            buffer.push_back((t, input, labels));
        }
        if buffer.is_empty() {
            continue;
        }
        let idx: Vec<usize> = (0..config.batch_size)
            .map(|_| batch_rng.random_range(0..buffer.len()))
            .collect();
        let set = LabeledSet {
            inputs: idx.iter().map(|&i| buffer[i].1.clone()).collect(),
            labels: idx.iter().map(|&i| buffer[i].2.clone()).collect(),
        };
        let all: Vec<usize> = (0..idx.len()).collect();
        let c_loss = classifier.update(&mut classifier_adam, &set, &all)?;
        if !c_loss.is_finite() {
            return Err(LearnError::Diverged {
                step,
                loss: c_loss,
                trace: out_classifier,
            });
        }
        out_classifier.push(c_loss);

        let gate = Gate::Affordance {
            classifier: &classifier,
            k: config.k,
        };
        let mut kept = Vec::with_capacity(idx.len());
        for &i in &idx {
            let t = &buffer[i].0;
            if gate.passes(world, t.state, t.action)? {
                kept.push(t);
            }
        }
        let full: Vec<_> = idx.iter().map(|&i| &buffer[i].0).collect();
        out_aware
            .kept_fraction
            .push(kept.len() as f64 / idx.len() as f64);
        let a_loss = aware.update(&mut aware_adam, world, &kept)?;
        let b_loss = baseline
            .update(&mut baseline_adam, world, &full)?
            .expect("batch is non-empty");
        for loss in a_loss.into_iter().chain([b_loss]) {
            if !loss.is_finite() {
                return Err(LearnError::Diverged {
                    step,
                    loss,
                    trace: out_baseline,
                });
            }
        }
        out_aware.loss.push(a_loss);
        out_baseline.push(b_loss);
    }
    Ok(JointOutput {
        classifier,
        aware,
        baseline,
        classifier_trace: out_classifier,
        aware_trace: out_aware,
        baseline_trace: out_baseline,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short(seed: u64) -> JointConfig {
        JointConfig {
            steps: 25,
            seed,
            ..JointConfig::default()
        }
    }

    #[test]
    fn zero_steps_returns_initial_parameters() {
        let world = ContinuousWorld::default();
        let out = train_joint(
            &world,
            &JointConfig {
                steps: 0,
                ..short(3)
            },
        )
        .unwrap();
        assert_eq!(
            out.aware,
            PartialGaussianModel::new(ModelVariant::Full, 3 ^ MODEL_SEED_SALT).unwrap()
        );
        assert_eq!(out.aware, out.baseline);
        assert_eq!(
            out.classifier,
            AffordanceClassifier::new(4, Displacement::names(), 3 ^ CLASSIFIER_SEED_SALT).unwrap()
        );
        assert!(out.classifier_trace.is_empty());
    }

    #[test]
    fn same_seed_same_checkpoints() {
        let world = ContinuousWorld::default();
        let a = train_joint(&world, &short(7)).unwrap();
        let b = train_joint(&world, &short(7)).unwrap();
        assert_eq!(a.classifier, b.classifier);
        assert_eq!(a.aware, b.aware);
        assert_eq!(a.baseline, b.baseline);
        assert_ne!(a.aware, train_joint(&world, &short(8)).unwrap().aware);
    }

    #[test]
    fn mask_always_on_reproduces_baseline() {
        let world = ContinuousWorld::default();
        let out = train_joint(
            &world,
            &JointConfig {
                k: -1.0,
                ..short(2)
            },
        )
        .unwrap();
        assert_eq!(out.aware, out.baseline);
        assert_eq!(
            out.aware_trace
                .loss
                .iter()
                .map(|l| l.unwrap())
                .collect::<Vec<_>>(),
            out.baseline_trace
        );
        assert!(out.aware_trace.kept_fraction.iter().all(|&f| f == 1.0));
    }

    #[test]
    fn small_buffer_and_batches_run() {
        let world = ContinuousWorld::default();
        let config = JointConfig {
            steps: 10,
            transitions_per_step: 7,
            buffer_capacity: 20,
            batch_size: 4,
            ..short(1)
        };
        let out = train_joint(&world, &config).unwrap();
        assert_eq!(out.baseline_trace.len(), 10);
    }
}
