//! Transition datasets and uniform-random trajectory sampling.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use super::continuous::{ContinuousWorld, Point, MAX_DISPLACEMENT};
use super::grid::GridWorld;
use super::EnvError;

pub const UNIFORM_RANDOM_POLICY: &str = "uniform-random";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition<S, A> {
    pub state: S,
    pub action: A,
    pub next_state: S,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub environment: String,
    pub policy: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset<S, A> {
    pub transitions: Vec<Transition<S, A>>,
    pub provenance: Provenance,
}

pub type TabularDataset = Dataset<usize, usize>;
pub type ContinuousDataset = Dataset<Point, Point>;

impl<S, A> Dataset<S, A> {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Line<S, A> {
    Header { provenance: Provenance },
    Transition(Transition<S, A>),
}

impl<S: Serialize + DeserializeOwned, A: Serialize + DeserializeOwned> Dataset<S, A> {
    /// Line-delimited JSON: a provenance header line, then one transition per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), EnvError> {
        let header: Line<S, A> = Line::Header {
            provenance: self.provenance.clone(),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for t in &self.transitions {
            serde_json::to_writer(&mut out, t)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self, EnvError> {
        let mut provenance = None;
        let mut transitions = Vec::new();
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<Line<S, A>>(&line)? {
                Line::Header { provenance: p } => provenance = Some(p),
                Line::Transition(t) => transitions.push(t),
            }
        }
        let provenance = provenance
            .ok_or_else(|| EnvError::InvalidSpec("dataset has no provenance line".into()))?;
        Ok(Self {
            transitions,
            provenance,
        })
    }
}

/// `n` trajectories of `horizon` uniformly random actions from uniformly
/// random free start cells.
pub fn sample_grid_trajectories(
    world: &GridWorld,
    n: usize,
    horizon: usize,
    seed: u64,
) -> TabularDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mdp = world.mdp();
    let mut transitions = Vec::with_capacity(n * horizon);
    for _ in 0..n {
        let mut s = rng.random_range(0..world.num_states());
        for _ in 0..horizon {
            let a = rng.random_range(0..mdp.num_actions());
            let next = sample_row(mdp.row(s, a), &mut rng);
            transitions.push(Transition {
                state: s,
                action: a,
                next_state: next,
                reward: mdp.reward(s, a),
            });
            s = next;
        }
    }
    Dataset {
        transitions,
        provenance: Provenance {
            seed,
            environment: format!(
                "{:?}-{}x{}",
                world.spec().layout,
                world.spec().width,
                world.spec().height
            ),
            policy: UNIFORM_RANDOM_POLICY.into(),
        },
    }
}

fn sample_row<R: Rng + ?Sized>(row: &[(usize, f64)], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(j, p) in row {
        acc += p;
        if u < acc {
            return j;
        }
    }
    row.last().expect("rows are non-empty").0
}

/// How continuous trajectories pick their first position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartRule {
    /// Uniform over the box, avoiding the wall line.
    #[default]
    UniformBox,
    /// The world's anchor/drift schedule, one episode per trajectory.
    Anchors,
}

/// First position of `episode` under `rule`.
pub fn sample_start<R: Rng + ?Sized>(
    world: &ContinuousWorld,
    rule: StartRule,
    episode: usize,
    rng: &mut R,
) -> Point {
    match rule {
        StartRule::UniformBox => loop {
            let p = [
                rng.random_range(world.low[0]..=world.high[0]),
                rng.random_range(world.low[1]..=world.high[1]),
            ];
            if !world.crosses_wall(p, p) {
                break p;
            }
        },
        StartRule::Anchors => world.start_for_episode(episode),
    }
}

/// Uniform per-axis random action in `[-MAX_DISPLACEMENT, MAX_DISPLACEMENT]`.
pub fn random_force<R: Rng + ?Sized>(rng: &mut R) -> Point {
    [
        rng.random_range(-MAX_DISPLACEMENT..=MAX_DISPLACEMENT),
        rng.random_range(-MAX_DISPLACEMENT..=MAX_DISPLACEMENT),
    ]
}

/// Rolls out uniformly random actions in the continuous world, continuing
/// from an existing generator.
pub fn rollout_continuous<R: Rng + ?Sized>(
    world: &ContinuousWorld,
    n: usize,
    horizon: usize,
    start: StartRule,
    first_episode: usize,
    rng: &mut R,
) -> Vec<Transition<Point, Point>> {
    let mut transitions = Vec::with_capacity(n * horizon);
    for episode in 0..n {
        let mut pos = sample_start(world, start, first_episode + episode, rng);
        for _ in 0..horizon {
            let force = random_force(rng);
            let next = world.step(pos, force, rng);
            transitions.push(Transition {
                state: pos,
                action: force,
                next_state: next,
                reward: 0.0,
            });
            pos = next;
        }
    }
    transitions
}

pub fn sample_continuous_trajectories(
    world: &ContinuousWorld,
    n: usize,
    horizon: usize,
    start: StartRule,
    seed: u64,
) -> ContinuousDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Dataset {
        transitions: rollout_continuous(world, n, horizon, start, 0, &mut rng),
        provenance: Provenance {
            seed,
            environment: "continuous-walled".into(),
            policy: UNIFORM_RANDOM_POLICY.into(),
        },
    }
}
