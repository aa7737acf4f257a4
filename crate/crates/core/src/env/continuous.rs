//! Continuous 2-D world with an impassable wall and Gaussian displacement.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::EnvError;

pub type Point = [f64; 2];

/// Maximum per-axis magnitude of the random data-collection actions.
pub const MAX_DISPLACEMENT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: Point,
    pub b: Point,
}

impl Segment {
    /// Euclidean distance from `p` to the closest point of the segment.
    pub fn distance_to(&self, p: Point) -> f64 {
        let d = [self.b[0] - self.a[0], self.b[1] - self.a[1]];
        let len2 = d[0] * d[0] + d[1] * d[1];
        let t = if len2 == 0.0 {
            0.0
        } else {
            (((p[0] - self.a[0]) * d[0] + (p[1] - self.a[1]) * d[1]) / len2).clamp(0.0, 1.0)
        };
        let q = [self.a[0] + t * d[0], self.a[1] + t * d[1]];
        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
    }

    /// Whether the closed segments `self` and `other` share a point.
    pub fn intersects(&self, other: &Segment) -> bool {
        let d1 = orientation(other.a, other.b, self.a);
        let d2 = orientation(other.a, other.b, self.b);
        let d3 = orientation(self.a, self.b, other.a);
        let d4 = orientation(self.a, self.b, other.b);
        if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
            && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
        {
            return true;
        }
        (d1 == 0.0 && on_segment(other.a, other.b, self.a))
            || (d2 == 0.0 && on_segment(other.a, other.b, self.b))
            || (d3 == 0.0 && on_segment(self.a, self.b, other.a))
            || (d4 == 0.0 && on_segment(self.a, self.b, other.b))
    }
}

fn orientation(p: Point, q: Point, r: Point) -> f64 {
    (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
}

fn on_segment(p: Point, q: Point, r: Point) -> bool {
    r[0] >= p[0].min(q[0])
        && r[0] <= p[0].max(q[0])
        && r[1] >= p[1].min(q[1])
        && r[1] <= p[1].max(q[1])
}

/// Start-position drift between the two anchors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftSchedule {
    pub enabled: bool,
    /// Episodes spent at each interpolation step.
    pub episodes_per_step: usize,
    /// Fraction of the inter-anchor distance covered per step.
    pub step_fraction: f64,
}

impl Default for DriftSchedule {
    fn default() -> Self {
        Self {
            enabled: false,
            episodes_per_step: 1,
            step_fraction: 1.0 / 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousWorld {
    pub low: Point,
    pub high: Point,
    pub wall: Segment,
    pub noise_sigma: f64,
    pub start_anchors: [Point; 2],
    pub drift: DriftSchedule,
}

impl Default for ContinuousWorld {
    /// The `[-1, 1]^2` box split by a vertical wall at `x = 0`.
    fn default() -> Self {
        Self {
            low: [-1.0, -1.0],
            high: [1.0, 1.0],
            wall: Segment {
                a: [0.0, -1.0],
                b: [0.0, 1.0],
            },
            noise_sigma: 0.1,
            start_anchors: [[-0.5, 0.0], [0.5, 0.0]],
            drift: DriftSchedule::default(),
        }
    }
}

impl ContinuousWorld {
    pub fn validate(&self) -> Result<(), EnvError> {
        if !(self.low[0] < self.high[0] && self.low[1] < self.high[1]) {
            return Err(EnvError::InvalidSpec(
                "box must have positive extent".into(),
            ));
        }
        if !(self.noise_sigma > 0.0) {
            return Err(EnvError::InvalidSpec(format!(
                "noise sigma {} must be positive",
                self.noise_sigma
            )));
        }
        for p in [self.wall.a, self.wall.b].iter().chain(&self.start_anchors) {
            if !self.contains(*p) {
                return Err(EnvError::InvalidSpec(format!(
                    "point {p:?} outside the box"
                )));
            }
        }
        if self.drift.enabled
            && !(self.drift.step_fraction > 0.0 && self.drift.episodes_per_step > 0)
        {
            return Err(EnvError::InvalidSpec("drift needs a positive step".into()));
        }
        Ok(())
    }

    pub fn contains(&self, p: Point) -> bool {
        (self.low[0]..=self.high[0]).contains(&p[0]) && (self.low[1]..=self.high[1]).contains(&p[1])
    }

    /// Whether moving in a straight line from `from` to `to` touches the wall.
    pub fn crosses_wall(&self, from: Point, to: Point) -> bool {
        Segment { a: from, b: to }.intersects(&self.wall)
    }

    /// Whether a straight move from `from` to `to` would be rejected.
    pub fn blocked(&self, from: Point, to: Point) -> bool {
        !self.contains(to) || self.crosses_wall(from, to)
    }

    /// Distance from `p` to the nearest obstacle: the wall or a box edge.
    pub fn clearance(&self, p: Point) -> f64 {
        let box_gap = (p[0] - self.low[0])
            .min(self.high[0] - p[0])
            .min(p[1] - self.low[1])
            .min(self.high[1] - p[1]);
        box_gap.min(self.wall.distance_to(p))
    }

    /// Where a move from `from` to the sampled `candidate` ends up: the
    /// candidate, or `from` if the move leaves the box or hits the wall.
    pub fn resolve(&self, from: Point, candidate: Point) -> Point {
        if self.blocked(from, candidate) {
            from
        } else {
            candidate
        }
    }

    /// Samples the next position for displacement `force` from `pos`.
    pub fn step<R: Rng + ?Sized>(&self, pos: Point, force: Point, rng: &mut R) -> Point {
        let noise = Normal::new(0.0, self.noise_sigma).expect("sigma validated positive");
        let candidate = [
            pos[0] + force[0] + noise.sample(rng),
            pos[1] + force[1] + noise.sample(rng),
        ];
        self.resolve(pos, candidate)
    }

    /// Start position for `episode` under the drift schedule: moves from one
    /// anchor to the other and back. Positions that land on the wall are
    /// pushed back towards the anchor being left.
    pub fn start_for_episode(&self, episode: usize) -> Point {
        let [a, b] = self.start_anchors;
        if !self.drift.enabled {
            return a;
        }
        let steps = (1.0 / self.drift.step_fraction).round().max(1.0) as usize;
        let k = (episode / self.drift.episodes_per_step) % (2 * steps);
        let (from, to, t) = if k <= steps {
            (a, b, k as f64 / steps as f64)
        } else {
            (b, a, (k - steps) as f64 / steps as f64)
        };
        let mut p = lerp(from, to, t);
        let mut back = t;
        while self.on_wall(p) && back > 0.0 {
            back = (back - 0.5 / steps as f64).max(0.0);
            p = lerp(from, to, back);
        }
        p
    }

    fn on_wall(&self, p: Point) -> bool {
        self.crosses_wall(p, p)
    }

    /// Network features `(x, y, F_x, F_y)` scaled to `[-1, 1]` on the training range.
    pub fn features(&self, pos: Point, force: Point) -> [f64; 4] {
        let scale = |v: f64, lo: f64, hi: f64| 2.0 * (v - lo) / (hi - lo) - 1.0;
        [
            scale(pos[0], self.low[0], self.high[0]),
            scale(pos[1], self.low[1], self.high[1]),
            force[0] / MAX_DISPLACEMENT,
            force[1] / MAX_DISPLACEMENT,
        ]
    }
}

fn lerp(a: Point, b: Point, t: f64) -> Point {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t]
}

/// Free-function form of [`ContinuousWorld::step`].
pub fn step_continuous<R: Rng + ?Sized>(
    world: &ContinuousWorld,
    pos: Point,
    force: Point,
    rng: &mut R,
) -> Point {
    world.step(pos, force, rng)
}
