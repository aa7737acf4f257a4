use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{
    query, AffordanceClassifier, LearnError, PartialGaussianModel, QueryResult,
    DEFAULT_MASK_THRESHOLD,
};
use crate::env::{ContinuousWorld, Point};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OodConfig {
    pub forces: Vec<Point>,
    /// Query positions per axis.
    pub grid: usize,
    pub k: f64,
    /// Model samples per position for the wall-violation estimate.
    pub samples: usize,
    /// Positions count as open for a force when the commanded target is at
    /// least this far from every obstacle and the move is not blocked.
    pub open_margin: f64,
    /// Positions count as wall-adjacent for a force when a step of this
    /// length in the force's direction is already blocked.
    pub adjacent_distance: f64,
    pub seed: u64,
}

impl Default for OodConfig {
    fn default() -> Self {
        Self {
            forces: vec![[-0.75, 0.0], [-0.2, 0.0], [0.2, 0.0], [0.75, 0.0]],
            grid: 21,
            k: DEFAULT_MASK_THRESHOLD,
            samples: 200,
            open_margin: 0.3,
            adjacent_distance: 0.15,
            seed: 0,
        }
    }
}

/// Evaluation grid over the box, skipping positions on the wall.
pub(crate) fn grid_positions(world: &ContinuousWorld, n: usize) -> Vec<Point> {
    let coord = |i: usize, lo: f64, hi: f64| {
        if n == 1 {
            0.5 * (lo + hi)
        } else {
            lo + (hi - lo) * i as f64 / (n - 1) as f64
        }
    };
    (0..n)
        .flat_map(|j| (0..n).map(move |i| (i, j)))
        .map(|(i, j)| {
            [
                coord(i, world.low[0], world.high[0]),
                coord(j, world.low[1], world.high[1]),
            ]
        })
        .filter(|&p| !world.crosses_wall(p, p))
        .collect()
}

/// Whether a short step from `p` in the direction of `force` hits the wall or leaves the box.
pub(crate) fn adjacent_to_obstacle(
    world: &ContinuousWorld,
    p: Point,
    force: Point,
    distance: f64,
) -> bool {
    let len = norm(force);
    len > 0.0
        && world.blocked(
            p,
            [
                p[0] + force[0] / len * distance,
                p[1] + force[1] / len * distance,
            ],
        )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodMetrics {
    /// `baseline` or `affordance`.
    pub arm: String,
    pub force: Point,
    /// Mean `||(μ - s) - F||` over all grid positions, evaluated without gating.
    pub displacement_error: f64,
    pub open_points: usize,
    /// Mean `||μ - (s + F)||` over open positions, without gating.
    pub open_error: Option<f64>,
    pub mean_sigma: f64,
    pub adjacent_points: usize,
    /// Fraction of wall-adjacent positions the pipeline refuses to predict.
    pub gated_fraction: Option<f64>,
    /// Fraction of sampled next positions, over wall-adjacent positions,
    /// that leave the box or cross the wall. Gated positions contribute none.
    pub wall_violation_rate: Option<f64>,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn norm(v: Point) -> f64 {
    (v[0] * v[0] + v[1] * v[1]).sqrt()
}

/// Compares the gated (affordance-aware) and ungated (baseline) pipelines on
/// every force of `config`, including forces outside the training range.
pub fn evaluate_ood(
    world: &ContinuousWorld,
    classifier: &AffordanceClassifier,
    aware: &PartialGaussianModel,
    baseline: &PartialGaussianModel,
    config: &OodConfig,
) -> Result<Vec<OodMetrics>, LearnError> {
    let positions = grid_positions(world, config.grid);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = Vec::new();
    for &force in &config.forces {
        for (arm, model, gated) in [("baseline", baseline, false), ("affordance", aware, true)] {
            let mut displacement = Vec::new();
            let mut open = Vec::new();
            let mut sigma = Vec::new();
            let (mut adjacent, mut refused, mut violations, mut drawn) =
                (0usize, 0usize, 0usize, 0usize);
            for &p in &positions {
                let target = [p[0] + force[0], p[1] + force[1]];
                let pred = model.predict(world, p, force)?;
                let moved = [pred.mean[0] - p[0], pred.mean[1] - p[1]];
                displacement.push(norm([moved[0] - force[0], moved[1] - force[1]]));
                sigma.push(0.5 * (pred.sigma[0] + pred.sigma[1]));
                if !world.blocked(p, target) && world.clearance(target) >= config.open_margin {
                    open.push(norm([pred.mean[0] - target[0], pred.mean[1] - target[1]]));
                }
                if !adjacent_to_obstacle(world, p, force, config.adjacent_distance) {
                    continue;
                }
                adjacent += 1;
                let served = if gated {
                    query(classifier, model, world, p, force, config.k)?
                } else {
                    QueryResult::Prediction(pred)
                };
                drawn += config.samples;
                let QueryResult::Prediction(pred) = served else {
                    refused += 1;
                    continue;
                };
                let nx = Normal::new(pred.mean[0], pred.sigma[0]).expect("sigma above floor");
                let ny = Normal::new(pred.mean[1], pred.sigma[1]).expect("sigma above floor");
                violations += (0..config.samples)
                    .filter(|_| world.blocked(p, [nx.sample(&mut rng), ny.sample(&mut rng)]))
                    .count();
            }
            out.push(OodMetrics {
                arm: arm.into(),
                force,
                displacement_error: mean(&displacement).unwrap_or(0.0),
                open_points: open.len(),
                open_error: mean(&open),
                mean_sigma: mean(&sigma).unwrap_or(0.0),
                adjacent_points: adjacent,
                gated_fraction: (adjacent > 0).then(|| refused as f64 / adjacent as f64),
                wall_violation_rate: (drawn > 0).then(|| violations as f64 / drawn as f64),
            });
        }
    }
    Ok(out)
}

/// One evaluation position of a classifier (and optionally a model) heatmap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapRow {
    pub x: f64,
    pub y: f64,
    pub fx: f64,
    pub fy: f64,
    pub p_plus_x: f64,
    pub p_minus_x: f64,
    pub p_plus_y: f64,
    pub p_minus_y: f64,
    pub affordable: bool,
    pub mu_x: Option<f64>,
    pub mu_y: Option<f64>,
    pub sigma_x: Option<f64>,
    pub sigma_y: Option<f64>,
}

pub fn heatmap(
    world: &ContinuousWorld,
    classifier: &AffordanceClassifier,
    model: Option<&PartialGaussianModel>,
    force: Point,
    grid: usize,
    k: f64,
) -> Result<Vec<HeatmapRow>, LearnError> {
    grid_positions(world, grid)
        .into_iter()
        .map(|p| {
            let probs = classifier.probabilities(&world.features(p, force))?;
            let pred = model.map(|m| m.predict(world, p, force)).transpose()?;
            Ok(HeatmapRow {
                x: p[0],
                y: p[1],
                fx: force[0],
                fy: force[1],
                p_plus_x: probs[0],
                p_minus_x: probs[1],
                p_plus_y: probs[2],
                p_minus_y: probs[3],
                affordable: probs.iter().any(|&q| q > k),
                mu_x: pred.map(|q| q.mean[0]),
                mu_y: pred.map(|q| q.mean[1]),
                sigma_x: pred.map(|q| q.sigma[0]),
                sigma_y: pred.map(|q| q.sigma[1]),
            })
        })
        .collect()
}
