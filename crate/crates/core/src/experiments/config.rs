use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::affordance::ThresholdMode;
use crate::env::grid::DEFAULT_DISCOUNT;
use crate::env::{ContinuousWorld, Layout, Point, SlipRule};
use crate::learn::{JointConfig, OodConfig, DEFAULT_MASK_THRESHOLD};
use crate::mdp::{DEFAULT_MAX_ITERATIONS, DEFAULT_VI_TOLERANCE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Planning with intent models over a (κ, p) grid.
    IntentPlanning,
    /// Value-iteration cost with and without the affordance restriction.
    Timing,
    /// Certainty-equivalence planning loss over (κ, n).
    CePlanningLoss,
    /// Affordance classifier and masked partial models in the continuous world.
    Learning,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 4] = [
        Self::IntentPlanning,
        Self::Timing,
        Self::CePlanningLoss,
        Self::Learning,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::IntentPlanning => "intent-planning",
            Self::Timing => "timing",
            Self::CePlanningLoss => "ce-planning-loss",
            Self::Learning => "learning",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| ExperimentError::Config(format!("unknown experiment `{s}`")))
    }
}

/// Tie-breaking rule for the planner's greedy step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreakRule {
    LowestIndex,
    /// Seeded uniform choice; the seed is derived from the cell's seed and n.
    Seeded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub vi_tolerance: f64,
    pub eval_tolerance: f64,
    pub max_iterations: usize,
    pub tie_break: TieBreakRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningConfig {
    pub world: ContinuousWorld,
    pub full_steps: usize,
    pub restricted_steps: usize,
    /// Template for the joint loop; `steps`, `variant` and `seed` are set per run.
    pub joint: JointConfig,
    /// `seed` is set per run.
    pub ood: OodConfig,
    pub classifier_trajectories: usize,
    pub classifier_horizon: usize,
    pub classifier_steps: usize,
    pub heatmap_force: Point,
    pub heatmap_grid: usize,
    /// Forces whose model predictions are dumped for plotting.
    pub prediction_forces: Vec<Point>,
    pub k: f64,
}

impl Default for LearningConfig {
    fn default() -> Self {
        Self {
            world: ContinuousWorld::default(),
            full_steps: 7000,
            restricted_steps: 5000,
            joint: JointConfig::default(),
            ood: OodConfig::default(),
            classifier_trajectories: 100,
            classifier_horizon: 100,
            classifier_steps: 2000,
            heatmap_force: [0.1, 0.1],
            heatmap_grid: 21,
            prediction_forces: vec![[0.75, 0.0], [-0.2, 0.0]],
            k: DEFAULT_MASK_THRESHOLD,
        }
    }
}

/// Which arms of the learning experiment to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearningPart {
    /// Classifier trained offline on random trajectories, with its heatmap.
    Classifier,
    /// Joint loop with the full (state and action) model.
    Full,
    /// Joint loop with the action-only linear model.
    Restricted,
}

/// A fully resolved experiment: every sweep and setting explicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seeds: Vec<u64>,
    pub kappas: Vec<f64>,
    pub ps: Vec<f64>,
    pub ns: Vec<usize>,
    pub sizes: Vec<usize>,
    pub layouts: Vec<Layout>,
    pub slip: SlipRule,
    pub threshold_mode: ThresholdMode,
    pub discount: f64,
    /// Range of the per-state success probabilities (CE experiment).
    pub success_range: [f64; 2],
    /// Trajectory length for model estimation.
    pub horizon: usize,
    /// Confidence parameter of the reported planning-loss bound.
    pub delta: f64,
    pub solver: SolverConfig,
    pub parts: Vec<LearningPart>,
    pub learning: LearningConfig,
    pub out_dir: Option<PathBuf>,
}

/// On-disk config: any subset of [`ExperimentConfig`]'s fields.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub experiment: Option<ExperimentKind>,
    pub seeds: Option<Vec<u64>>,
    pub kappas: Option<Vec<f64>>,
    pub ps: Option<Vec<f64>>,
    pub ns: Option<Vec<usize>>,
    pub sizes: Option<Vec<usize>>,
    pub layouts: Option<Vec<Layout>>,
    pub slip: Option<SlipRule>,
    pub threshold_mode: Option<ThresholdMode>,
    pub discount: Option<f64>,
    pub success_range: Option<[f64; 2]>,
    pub horizon: Option<usize>,
    pub delta: Option<f64>,
    pub solver: Option<SolverConfig>,
    pub parts: Option<Vec<LearningPart>>,
    pub learning: Option<LearningConfig>,
    pub out_dir: Option<PathBuf>,
}

impl ConfigFile {
    /// Parses a config file, or the `config` recorded in a run's manifest.
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        let mut value: serde_json::Value = serde_json::from_str(text)?;
        if value.get("config_sha256").is_some() {
            if let Some(config) = value.get_mut("config") {
                value = config.take();
            }
        }
        Ok(serde_json::from_value(value)?)
    }
}

fn kappa_grid() -> Vec<f64> {
    (0..10).map(|k| k as f64 / 10.0).collect()
}

impl ExperimentConfig {
    /// Defaults of `kind`, matching the published experiment settings.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let mut c = Self {
            experiment: kind,
            seeds: (0..10).collect(),
            kappas: kappa_grid(),
            ps: vec![0.5],
            ns: vec![],
            sizes: vec![],
            layouts: vec![Layout::Pachinko],
            slip: SlipRule::UniformNeighbor,
            threshold_mode: ThresholdMode::Tv,
            discount: DEFAULT_DISCOUNT,
            success_range: [0.1, 1.0],
            horizon: 10,
            delta: 0.05,
            solver: SolverConfig {
                vi_tolerance: DEFAULT_VI_TOLERANCE,
                eval_tolerance: 1e-10,
                max_iterations: DEFAULT_MAX_ITERATIONS,
                tie_break: TieBreakRule::LowestIndex,
            },
            parts: vec![],
            learning: LearningConfig::default(),
            out_dir: None,
        };
        match kind {
            ExperimentKind::IntentPlanning => {
                c.seeds = vec![0];
                c.ps = vec![0.5, 0.7, 0.9, 1.0];
                c.sizes = vec![10];
                c.layouts = vec![Layout::OneRoom];
                c.slip = SlipRule::Stay;
            }
            ExperimentKind::Timing => {
                c.kappas = vec![0.5];
                c.sizes = vec![7, 11, 15, 19, 25];
                c.layouts = vec![Layout::OneRoom, Layout::Pachinko];
            }
            ExperimentKind::CePlanningLoss => {
                c.ns = vec![25, 50, 100, 200, 400, 800];
                c.sizes = vec![19];
                c.solver.tie_break = TieBreakRule::Seeded;
            }
            ExperimentKind::Learning => {
                c.seeds = (0..5).collect();
                c.parts = vec![
                    LearningPart::Classifier,
                    LearningPart::Full,
                    LearningPart::Restricted,
                ];
            }
        }
        c
    }

    /// Defaults of `kind` overlaid with the fields set in `file`.
    pub fn resolve(kind: ExperimentKind, file: ConfigFile) -> Result<Self, ExperimentError> {
        if let Some(other) = file.experiment.filter(|&k| k != kind) {
            return Err(ExperimentError::Config(format!(
                "config is for `{other}`, not `{kind}`"
            )));
        }
        let d = Self::defaults(kind);
        let c = Self {
            experiment: kind,
            seeds: file.seeds.unwrap_or(d.seeds),
            kappas: file.kappas.unwrap_or(d.kappas),
            ps: file.ps.unwrap_or(d.ps),
            ns: file.ns.unwrap_or(d.ns),
            sizes: file.sizes.unwrap_or(d.sizes),
            layouts: file.layouts.unwrap_or(d.layouts),
            slip: file.slip.unwrap_or(d.slip),
            threshold_mode: file.threshold_mode.unwrap_or(d.threshold_mode),
            discount: file.discount.unwrap_or(d.discount),
            success_range: file.success_range.unwrap_or(d.success_range),
            horizon: file.horizon.unwrap_or(d.horizon),
            delta: file.delta.unwrap_or(d.delta),
            solver: file.solver.unwrap_or(d.solver),
            parts: file.parts.unwrap_or(d.parts),
            learning: file.learning.unwrap_or(d.learning),
            out_dir: file.out_dir.or(d.out_dir),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |msg: String| Err(ExperimentError::Config(msg));
        if self.seeds.is_empty() {
            return bad("seed list is empty".into());
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return bad("seeds must be distinct".into());
        }
        let tabular = self.experiment != ExperimentKind::Learning;
        if tabular {
            for (name, empty) in [
                ("kappas", self.kappas.is_empty()),
                ("sizes", self.sizes.is_empty()),
                ("layouts", self.layouts.is_empty()),
            ] {
                if empty {
                    return bad(format!("{name} sweep is empty"));
                }
            }
            if self.experiment == ExperimentKind::CePlanningLoss && self.ns.is_empty() {
                return bad("ns sweep is empty".into());
            }
            if self.experiment != ExperimentKind::CePlanningLoss && self.ps.is_empty() {
                return bad("ps sweep is empty".into());
            }
        } else if self.parts.is_empty() {
            return bad("no learning parts selected".into());
        }
        if let Some(k) = self.kappas.iter().find(|k| !(0.0..=1.0).contains(*k)) {
            return bad(format!("kappa {k} outside [0, 1]"));
        }
        if let Some(p) = self.ps.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
            return bad(format!("success probability {p} outside (0, 1]"));
        }
        if let Some(n) = self.ns.iter().find(|&&n| n == 0) {
            return bad(format!("n = {n} gives no data"));
        }
        if let Some(s) = self.sizes.iter().find(|&&s| s < 2) {
            return bad(format!("grid size {s} too small"));
        }
        let [lo, hi] = self.success_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return bad(format!("success range [{lo}, {hi}] must lie in (0, 1]"));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return bad(format!("discount {} outside (0, 1)", self.discount));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta {} outside (0, 1)", self.delta));
        }
        if self.horizon == 0 {
            return bad("horizon must be positive".into());
        }
        let s = &self.solver;
        if !(s.vi_tolerance > 0.0 && s.eval_tolerance > 0.0) || s.max_iterations == 0 {
            return bad("solver tolerances and iteration cap must be positive".into());
        }
        Ok(())
    }

    /// Uses the ones given and keeps the rest.
    pub fn with_overrides(
        mut self,
        seeds: Option<Vec<u64>>,
        kappas: Option<Vec<f64>>,
        ps: Option<Vec<f64>>,
        ns: Option<Vec<usize>>,
    ) -> Result<Self, ExperimentError> {
        let learning = self.experiment == ExperimentKind::Learning;
        if learning && (kappas.is_some() || ps.is_some() || ns.is_some()) {
            return Err(ExperimentError::Config(
                "the learning experiment has no kappa, p or n sweep".into(),
            ));
        }
        if self.experiment != ExperimentKind::CePlanningLoss && ns.is_some() {
            return Err(ExperimentError::Config(format!(
                "`{}` has no n sweep",
                self.experiment
            )));
        }
        if self.experiment == ExperimentKind::CePlanningLoss && ps.is_some() {
            return Err(ExperimentError::Config(
                "success probabilities of the CE experiment are drawn per state".into(),
            ));
        }
        self.seeds = seeds.unwrap_or(self.seeds);
        self.kappas = kappas.unwrap_or(self.kappas);
        self.ps = ps.unwrap_or(self.ps);
        self.ns = ns.unwrap_or(self.ns);
        self.validate()?;
        Ok(self)
    }
}
