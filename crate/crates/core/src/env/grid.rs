//! One-room and Pachinko gridworlds.
//!
//! Cells are addressed by `(x, y)` with `y = 0` the bottom row. Only free
//! cells become MDP states; wall cells have no state index and therefore can
//! never receive transition mass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EnvError;
use crate::mdp::{SparseRow, TabularMdp};

/// Default discount for the tabular experiments.
pub const DEFAULT_DISCOUNT: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }
}

/// Grid actions, in action-index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::Up,
        Direction::Down,
        Direction::Left,
        Direction::Right,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(a: usize) -> Option<Self> {
        Self::ALL.get(a).copied()
    }

    fn offset(self) -> (isize, isize) {
        match self {
            Direction::Up => (0, 1),
            Direction::Down => (0, -1),
            Direction::Left => (-1, 0),
            Direction::Right => (1, 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    OneRoom,
    /// Wall pegs at every (odd x, odd y) cell.
    Pachinko,
}

/// Where a failed action sends the agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlipRule {
    /// Uniformly random free 4-neighbour (the intended one included).
    #[default]
    UniformNeighbor,
    /// The agent stays where it is.
    Stay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuccessProb {
    Constant(f64),
    /// One value per free cell, in state order.
    PerState(Vec<f64>),
    /// Per-state values drawn uniformly from `[low, high]` with `seed`.
    UniformRandom {
        low: f64,
        high: f64,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub layout: Layout,
    pub width: usize,
    pub height: usize,
    pub success: SuccessProb,
    #[serde(default)]
    pub slip: SlipRule,
    /// Defaults to the top-right cell.
    #[serde(default)]
    pub goal: Option<Cell>,
    /// Defaults to the bottom-left cell.
    #[serde(default)]
    pub start: Option<Cell>,
    #[serde(default = "default_discount")]
    pub discount: f64,
}

fn default_discount() -> f64 {
    DEFAULT_DISCOUNT
}

impl GridSpec {
    pub fn one_room(size: usize, p: f64) -> Self {
        Self::square(Layout::OneRoom, size, SuccessProb::Constant(p))
    }

    pub fn pachinko(size: usize, p: f64) -> Self {
        Self::square(Layout::Pachinko, size, SuccessProb::Constant(p))
    }

    pub fn square(layout: Layout, size: usize, success: SuccessProb) -> Self {
        Self {
            layout,
            width: size,
            height: size,
            success,
            slip: SlipRule::default(),
            goal: None,
            start: None,
            discount: DEFAULT_DISCOUNT,
        }
    }

    pub fn with_slip(mut self, slip: SlipRule) -> Self {
        self.slip = slip;
        self
    }

    pub fn with_discount(mut self, discount: f64) -> Self {
        self.discount = discount;
        self
    }

    pub fn goal_cell(&self) -> Cell {
        self.goal.unwrap_or(Cell::new(
            self.width.saturating_sub(1),
            self.height.saturating_sub(1),
        ))
    }

    pub fn start_cell(&self) -> Cell {
        self.start.unwrap_or(Cell::new(0, 0))
    }

    pub fn is_wall(&self, cell: Cell) -> bool {
        match self.layout {
            Layout::OneRoom => false,
            Layout::Pachinko => cell.x % 2 == 1 && cell.y % 2 == 1,
        }
    }
}

/// A built gridworld: geometry plus its tabular MDP.
#[derive(Debug, Clone)]
pub struct GridWorld {
    spec: GridSpec,
    state_of_cell: Vec<Option<usize>>,
    cells: Vec<Cell>,
    success: Vec<f64>,
    mdp: TabularMdp,
}

impl GridWorld {
    pub fn new(spec: &GridSpec) -> Result<Self, EnvError> {
        if spec.width == 0 || spec.height == 0 {
            return Err(EnvError::InvalidSpec("grid must be at least 1x1".into()));
        }
        let mut state_of_cell = vec![None; spec.width * spec.height];
        let mut cells = Vec::new();
        for y in 0..spec.height {
            for x in 0..spec.width {
                let cell = Cell::new(x, y);
                if !spec.is_wall(cell) {
                    state_of_cell[y * spec.width + x] = Some(cells.len());
                    cells.push(cell);
                }
            }
        }
        let goal = spec.goal_cell();
        let start = spec.start_cell();
        for (name, cell) in [("goal", goal), ("start", start)] {
            if cell.x >= spec.width || cell.y >= spec.height || spec.is_wall(cell) {
                return Err(EnvError::InvalidSpec(format!(
                    "{name} {cell:?} is not a free cell"
                )));
            }
        }
        let success = match &spec.success {
            SuccessProb::Constant(p) => vec![*p; cells.len()],
            SuccessProb::PerState(values) => {
                if values.len() != cells.len() {
                    return Err(EnvError::InvalidSpec(format!(
                        "{} success probabilities for {} free cells",
                        values.len(),
                        cells.len()
                    )));
                }
                values.clone()
            }
            SuccessProb::UniformRandom { low, high, seed } => {
                if !(low <= high) {
                    return Err(EnvError::InvalidSpec(format!(
                        "empty range [{low}, {high}]"
                    )));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                (0..cells.len())
                    .map(|_| rng.random_range(*low..=*high))
                    .collect()
            }
        };
        if let Some(p) = success.iter().find(|&&p| !(p > 0.0 && p <= 1.0)) {
            return Err(EnvError::InvalidSpec(format!(
                "success probability {p} outside (0, 1]"
            )));
        }

        let mut world = Self {
            spec: spec.clone(),
            state_of_cell,
            cells,
            success,
            mdp: placeholder_mdp(),
        };
        world.mdp = world.build_mdp()?;
        Ok(world)
    }

    fn build_mdp(&self) -> Result<TabularMdp, EnvError> {
        let n = self.cells.len();
        let goal = self.state(self.spec.goal_cell()).expect("goal validated");
        let mut reward = Vec::with_capacity(n * 4);
        let mut rows = Vec::with_capacity(n * 4);
        for s in 0..n {
            for dir in Direction::ALL {
                if s == goal {
                    reward.push(1.0);
                    rows.push(vec![(s, 1.0)]);
                    continue;
                }
                reward.push(0.0);
                let p = self.success[s];
                let mut dense: Vec<(usize, f64)> = vec![(self.move_target(s, dir), p)];
                if p < 1.0 {
                    let fail = 1.0 - p;
                    match self.spec.slip {
                        SlipRule::Stay => dense.push((s, fail)),
                        SlipRule::UniformNeighbor => {
                            let nbrs = self.free_neighbors(s);
                            if nbrs.is_empty() {
                                dense.push((s, fail));
                            } else {
                                let share = fail / nbrs.len() as f64;
                                dense.extend(nbrs.into_iter().map(|j| (j, share)));
                            }
                        }
                    }
                }
                rows.push(merge_row(dense));
            }
        }
        Ok(TabularMdp::from_sparse(
            n,
            4,
            reward,
            rows,
            self.spec.discount,
            1.0,
        )?)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn mdp(&self) -> &TabularMdp {
        &self.mdp
    }

    pub fn num_states(&self) -> usize {
        self.cells.len()
    }

    pub fn cell(&self, s: usize) -> Cell {
        self.cells[s]
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn state(&self, cell: Cell) -> Option<usize> {
        if cell.x >= self.spec.width || cell.y >= self.spec.height {
            return None;
        }
        self.state_of_cell[cell.y * self.spec.width + cell.x]
    }

    pub fn goal_state(&self) -> usize {
        self.state(self.spec.goal_cell()).expect("goal validated")
    }

    pub fn start_state(&self) -> usize {
        self.state(self.spec.start_cell()).expect("start validated")
    }

    pub fn success_prob(&self, s: usize) -> f64 {
        self.success[s]
    }

    /// Free cell one step from `s` in `dir`, if any.
    pub fn neighbor(&self, s: usize, dir: Direction) -> Option<usize> {
        let cell = self.cells[s];
        let (dx, dy) = dir.offset();
        let x = cell.x.checked_add_signed(dx)?;
        let y = cell.y.checked_add_signed(dy)?;
        self.state(Cell::new(x, y))
    }

    /// Where a successful move lands: the neighbour, or `s` itself when blocked.
    pub fn move_target(&self, s: usize, dir: Direction) -> usize {
        self.neighbor(s, dir).unwrap_or(s)
    }

    pub fn free_neighbors(&self, s: usize) -> Vec<usize> {
        Direction::ALL
            .iter()
            .filter_map(|&d| self.neighbor(s, d))
            .collect()
    }

    /// Cell coordinates scaled to `[-1, 1]`.
    pub fn features(&self, s: usize) -> [f64; 2] {
        let cell = self.cells[s];
        let scale = |v: usize, extent: usize| {
            if extent <= 1 {
                0.0
            } else {
                2.0 * v as f64 / (extent - 1) as f64 - 1.0
            }
        };
        [
            scale(cell.x, self.spec.width),
            scale(cell.y, self.spec.height),
        ]
    }
}

fn placeholder_mdp() -> TabularMdp {
    TabularMdp::from_sparse(1, 1, vec![0.0], vec![vec![(0, 1.0)]], 0.5, 0.0)
        .expect("trivial MDP is valid")
}

fn merge_row(mut entries: Vec<(usize, f64)>) -> SparseRow {
    entries.sort_by_key(|&(j, _)| j);
    let mut out: SparseRow = Vec::with_capacity(entries.len());
    for (j, p) in entries {
        match out.last_mut() {
            Some((k, q)) if *k == j => *q += p,
            _ => out.push((j, p)),
        }
    }
    out
}

pub fn build_one_room(spec: &GridSpec) -> Result<GridWorld, EnvError> {
    if spec.layout != Layout::OneRoom {
        return Err(EnvError::InvalidSpec(format!(
            "expected one_room layout, got {:?}",
            spec.layout
        )));
    }
    GridWorld::new(spec)
}

pub fn build_pachinko(spec: &GridSpec) -> Result<GridWorld, EnvError> {
    if spec.layout != Layout::Pachinko {
        return Err(EnvError::InvalidSpec(format!(
            "expected pachinko layout, got {:?}",
            spec.layout
        )));
    }
    GridWorld::new(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;

    fn assert_rows_stochastic(mdp: &TabularMdp) {
        for s in 0..mdp.num_states() {
            for a in 0..mdp.num_actions() {
                let row = mdp.row(s, a);
                let total: f64 = row.iter().map(|&(_, p)| p).sum();
                assert!((total - 1.0).abs() < 1e-9);
                assert!(row.iter().all(|&(_, p)| p >= 0.0));
            }
        }
    }

    #[test]
    fn deterministic_move_right() {
        let world = build_one_room(&GridSpec::one_room(2, 1.0)).unwrap();
        let bl = world.state(Cell::new(0, 0)).unwrap();
        let br = world.state(Cell::new(1, 0)).unwrap();
        assert_eq!(world.mdp().row(bl, Direction::Right.index()), &[(br, 1.0)]);
    }

    #[test]
    fn left_border_moves_stay_put() {
        let world = build_one_room(&GridSpec::one_room(5, 1.0)).unwrap();
        for y in 0..4 {
            let s = world.state(Cell::new(0, y)).unwrap();
            assert_eq!(world.mdp().row(s, Direction::Left.index()), &[(s, 1.0)]);
        }
    }

    #[test]
    fn uniform_slip_on_interior_cell() {
        // 3x3, p = 0.5, interior cell has 4 free neighbours:
        // intended neighbour gets 0.5 + 0.5/4, the other three 0.5/4 each.
        let world = build_one_room(&GridSpec::one_room(3, 0.5)).unwrap();
        assert_rows_stochastic(world.mdp());
        let c = world.state(Cell::new(1, 1)).unwrap();
        let up = world.state(Cell::new(1, 2)).unwrap();
        let row = world.mdp().row_dense(c, Direction::Up.index());
        assert!((row[up] - 0.625).abs() < 1e-12);
        for nb in world.free_neighbors(c).into_iter().filter(|&j| j != up) {
            assert!((row[nb] - 0.125).abs() < 1e-12);
        }
        assert_eq!(row[c], 0.0);
    }

    #[test]
    fn stay_slip_keeps_failure_mass_on_self() {
        let world = build_one_room(&GridSpec::one_room(3, 0.7).with_slip(SlipRule::Stay)).unwrap();
        let c = world.state(Cell::new(1, 1)).unwrap();
        let row = world.mdp().row_dense(c, Direction::Left.index());
        assert!((row[c] - 0.3).abs() < 1e-12);
        assert!((row[world.state(Cell::new(0, 1)).unwrap()] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn goal_is_absorbing_and_rewarding() {
        let world = build_one_room(&GridSpec::one_room(4, 0.5)).unwrap();
        let g = world.goal_state();
        assert_eq!(world.cell(g), Cell::new(3, 3));
        for a in 0..4 {
            assert_eq!(world.mdp().row(g, a), &[(g, 1.0)]);
            assert_eq!(world.mdp().reward(g, a), 1.0);
        }
        assert_eq!(world.mdp().reward(world.start_state(), 0), 0.0);
    }

    #[test]
    fn pachinko_free_cells_and_walls() {
        // 7x7 with pegs at odd/odd: 3 x 3 = 9 pegs, 40 free cells.
        let world = build_pachinko(&GridSpec::pachinko(7, 0.5)).unwrap();
        assert_eq!(world.num_states(), 40);
        assert_rows_stochastic(world.mdp());
        assert!(world.state(Cell::new(1, 1)).is_none());
        assert!(world.state(Cell::new(5, 3)).is_none());
        // every successor is a free cell by construction; check through the geometry
        for s in 0..world.num_states() {
            for a in 0..4 {
                for &(j, _) in world.mdp().row(s, a) {
                    assert!(!world.spec().is_wall(world.cell(j)));
                }
            }
        }
    }

    #[test]
    fn layout_mismatch_and_bad_probability_rejected() {
        assert!(build_pachinko(&GridSpec::one_room(5, 1.0)).is_err());
        assert!(GridWorld::new(&GridSpec::one_room(5, 0.0)).is_err());
        assert!(GridWorld::new(&GridSpec::one_room(5, 1.2)).is_err());
        let mut spec = GridSpec::pachinko(5, 1.0);
        spec.goal = Some(Cell::new(1, 1));
        assert!(GridWorld::new(&spec).is_err());
    }

    #[test]
    fn random_success_probabilities_are_seeded() {
        let spec = GridSpec::square(
            Layout::Pachinko,
            9,
            SuccessProb::UniformRandom {
                low: 0.1,
                high: 1.0,
                seed: 3,
            },
        );
        let a = GridWorld::new(&spec).unwrap();
        let b = GridWorld::new(&spec).unwrap();
        assert_eq!(a.mdp(), b.mdp());
        assert!((0..a.num_states()).all(|s| (0.1..=1.0).contains(&a.success_prob(s))));
    }

    fn bfs(world: &GridWorld, from: usize, to: usize) -> usize {
        let mut dist = vec![usize::MAX; world.num_states()];
        let mut queue = VecDeque::from([from]);
        dist[from] = 0;
        while let Some(s) = queue.pop_front() {
            for j in world.free_neighbors(s) {
                if dist[j] == usize::MAX {
                    dist[j] = dist[s] + 1;
                    queue.push_back(j);
                }
            }
        }
        dist[to]
    }

    #[test]
    fn greedy_path_length_matches_bfs() {
        use crate::mdp::{value_iteration, ActionRestriction};
        for size in [5, 7, 9] {
            let world = build_pachinko(&GridSpec::pachinko(size, 1.0)).unwrap();
            let mdp = world.mdp();
            let sol = value_iteration(
                mdp,
                &ActionRestriction::full(mdp.num_states(), 4),
                1e-9,
                100_000,
            )
            .unwrap();
            let (mut s, mut steps) = (world.start_state(), 0);
            while s != world.goal_state() {
                s = world.move_target(s, Direction::from_index(sol.policy.action(s)).unwrap());
                steps += 1;
                assert!(steps <= world.num_states());
            }
            assert_eq!(steps, bfs(&world, world.start_state(), world.goal_state()));
        }
    }
}
