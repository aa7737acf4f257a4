use serde::{Deserialize, Serialize};

use super::{
    AffordanceClassifier, Batcher, LearnError, TrainConfig, BATCH_SEED_SALT, MODEL_SEED_SALT,
};
use crate::env::continuous::MAX_DISPLACEMENT;
use crate::env::{ContinuousDataset, ContinuousWorld, Point, Transition};
use crate::neural::{gaussian_nll, sigma_from_pre, Adam, Mlp, MlpCheckpoint};

/// Which inputs the transition model sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    /// `N(s + μ(s, a), σ(s, a))` from an MLP over state and action features.
    #[default]
    Full,
    /// `N(s + μ(a), σ(a))` from a linear map of the action alone.
    Restricted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mean: Point,
    pub sigma: Point,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum QueryResult {
    NotAffordable,
    Prediction(Prediction),
}

/// Gaussian next-state model `P_φ(s' | s, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialGaussianModel {
    pub variant: ModelVariant,
    pub net: Mlp,
}

impl PartialGaussianModel {
    pub fn new(variant: ModelVariant, seed: u64) -> Result<Self, LearnError> {
        let net = match variant {
            ModelVariant::Full => Mlp::standard(4, 4, seed)?,
            ModelVariant::Restricted => Mlp::new(&[2, 4], seed)?,
        };
        Ok(Self { variant, net })
    }

    pub fn input(&self, world: &ContinuousWorld, pos: Point, force: Point) -> Vec<f64> {
        match self.variant {
            ModelVariant::Full => world.features(pos, force).to_vec(),
            ModelVariant::Restricted => {
                vec![force[0] / MAX_DISPLACEMENT, force[1] / MAX_DISPLACEMENT]
            }
        }
    }

    pub fn predict(
        &self,
        world: &ContinuousWorld,
        pos: Point,
        force: Point,
    ) -> Result<Prediction, LearnError> {
        let out = self.net.forward(&self.input(world, pos, force))?;
        Ok(Prediction {
            mean: [pos[0] + out[0], pos[1] + out[1]],
            sigma: [sigma_from_pre(out[2]), sigma_from_pre(out[3])],
        })
    }

    pub fn to_checkpoint(&self) -> MlpCheckpoint {
        let mut meta = serde_json::Map::new();
        meta.insert("role".into(), "partial_gaussian_model".into());
        meta.insert(
            "variant".into(),
            serde_json::to_value(self.variant).expect("unit enum"),
        );
        self.net.to_checkpoint(meta)
    }

    /// One Adam step on the mean NLL of `batch`; `None` (and no update) when it is empty.
    pub(crate) fn update(
        &mut self,
        adam: &mut Adam,
        world: &ContinuousWorld,
        batch: &[&Transition<Point, Point>],
    ) -> Result<Option<f64>, LearnError> {
        if batch.is_empty() {
            return Ok(None);
        }
        let scale = 1.0 / batch.len() as f64;
        let mut grads = vec![0.0; self.net.num_params()];
        let mut loss = 0.0;
        for t in batch {
            let cache = self
                .net
                .forward_cached(&self.input(world, t.state, t.action))?;
            let out = cache.output();
            let mu = [t.state[0] + out[0], t.state[1] + out[1]];
            let r = gaussian_nll(&mu, &out[2..], &t.next_state)?;
            loss += r.loss * scale;
            let g: Vec<f64> = r
                .grad_mu
                .iter()
                .chain(&r.grad_pre_sigma)
                .map(|x| x * scale)
                .collect();
            for (acc, x) in grads.iter_mut().zip(self.net.backward(&cache, &g)?.params) {
                *acc += x;
            }
        }
        if loss.is_finite() {
            adam.step(self.net.params_mut(), &grads)?;
        }
        Ok(Some(loss))
    }
}

/// Which transitions a model is trained on.
#[derive(Debug, Clone, Copy)]
pub enum Gate<'a> {
    /// Every transition.
    Baseline,
    /// Transitions whose most likely intent has probability above `k`.
    Affordance {
        classifier: &'a AffordanceClassifier,
        k: f64,
    },
}

impl Gate<'_> {
    pub fn passes(
        &self,
        world: &ContinuousWorld,
        pos: Point,
        force: Point,
    ) -> Result<bool, LearnError> {
        match self {
            Gate::Baseline => Ok(true),
            Gate::Affordance { classifier, k } => {
                classifier.affords(&world.features(pos, force), *k)
            }
        }
    }
}

/// Prediction for `(pos, force)`, or `NotAffordable` if the classifier says
/// no intent is likely to complete; the model is then never evaluated.
pub fn query(
    classifier: &AffordanceClassifier,
    model: &PartialGaussianModel,
    world: &ContinuousWorld,
    pos: Point,
    force: Point,
    k: f64,
) -> Result<QueryResult, LearnError> {
    if !classifier.affords(&world.features(pos, force), k)? {
        return Ok(QueryResult::NotAffordable);
    }
    Ok(QueryResult::Prediction(model.predict(world, pos, force)?))
}

/// Per-step loss of a gated model; `None` where the whole minibatch was masked.
#[derive(Debug, Clone)]
pub struct ModelTrace {
    pub loss: Vec<Option<f64>>,
    pub kept_fraction: Vec<f64>,
}

pub fn train_partial_model(
    world: &ContinuousWorld,
    data: &ContinuousDataset,
    gate: Gate<'_>,
    variant: ModelVariant,
    config: TrainConfig,
) -> Result<(PartialGaussianModel, ModelTrace), LearnError> {
    if data.is_empty() {
        return Err(LearnError::EmptyDataset);
    }
    let mask = data
        .transitions
        .iter()
        .map(|t| gate.passes(world, t.state, t.action))
        .collect::<Result<Vec<bool>, _>>()?;
    let kept = mask.iter().filter(|&&m| m).count();
    if kept == 0 {
        return Err(LearnError::AllMasked {
            mask_rate: 1.0,
            total: mask.len(),
        });
    }
    let mut model = PartialGaussianModel::new(variant, config.seed ^ MODEL_SEED_SALT)?;
    let mut adam = Adam::new(model.net.num_params(), config.lr);
    let mut batcher = Batcher::new(data.len(), config.seed ^ BATCH_SEED_SALT);
    let mut trace = ModelTrace {
        loss: Vec::with_capacity(config.steps),
        kept_fraction: Vec::with_capacity(config.steps),
    };
    for step in 0..config.steps {
        let idx = batcher.next(config.batch_size);
        let batch: Vec<_> = idx
            .iter()
            .filter(|&&i| mask[i])
            .map(|&i| &data.transitions[i])
            .collect();
        trace
            .kept_fraction
            .push(batch.len() as f64 / idx.len() as f64);
        let loss = model.update(&mut adam, world, &batch)?;
        if let Some(l) = loss.filter(|l| !l.is_finite()) {
            return Err(LearnError::Diverged {
                step,
                loss: l,
                trace: trace.loss.iter().flatten().copied().collect(),
            });
        }
        trace.loss.push(loss);
    }
    Ok((model, trace))
}
