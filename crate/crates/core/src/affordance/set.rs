use serde::{Deserialize, Serialize};

use super::intent::{Intent, IntentSet};
use super::{tv_distance_sparse, AffordanceError};
use crate::mdp::{ActionRestriction, SparseRow, TabularMdp};

/// Slack when comparing a satisfaction degree against `1 - kappa`, so that
/// e.g. a degree of 0.1 is admitted at kappa = 0.9 despite rounding.
pub const THRESHOLD_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Keep `(s, a)` when its satisfaction degree is at most `1 - kappa`.
    #[default]
    Tv,
    /// Keep `(s, a)` when the true dynamics put at least `kappa` mass on the
    /// intent's support.
    SupportThreshold,
}

/// Minimal degree to which `intent` is satisfied at `s`: the total
/// variation between its target and the true dynamics. Intents that cannot
/// be met at `s` have degree 1.
pub fn satisfaction_degree(mdp: &TabularMdp, intent: &Intent, s: usize) -> f64 {
    match intent.distribution_at(mdp, s) {
        Some(target) => tv_distance_sparse(&target, mdp.row(s, intent.action)),
        None => 1.0,
    }
}

/// Affordance relation over state-action pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffordanceSet {
    num_states: usize,
    num_actions: usize,
    kappa: f64,
    mode: ThresholdMode,
    /// Satisfaction degree per pair, `s * num_actions + a`.
    degrees: Vec<f64>,
    /// Membership from thresholding alone.
    thresholded: Vec<bool>,
    /// States whose thresholded set was empty and got a single repaired action.
    repaired: Vec<usize>,
    restriction: ActionRestriction,
}

impl AffordanceSet {
    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn mode(&self) -> ThresholdMode {
        self.mode
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn degree(&self, s: usize, a: usize) -> f64 {
        self.degrees[s * self.num_actions + a]
    }

    pub fn contains(&self, s: usize, a: usize) -> bool {
        self.restriction.contains(s, a)
    }

    /// Membership before empty states were repaired.
    pub fn contains_thresholded(&self, s: usize, a: usize) -> bool {
        self.thresholded[s * self.num_actions + a]
    }

    pub fn repaired_states(&self) -> &[usize] {
        &self.repaired
    }

    pub fn actions(&self, s: usize) -> &[usize] {
        self.restriction.allowed(s)
    }

    pub fn restriction(&self) -> &ActionRestriction {
        &self.restriction
    }

    /// Number of afforded pairs, `|AF|`.
    pub fn size(&self) -> usize {
        self.restriction.num_pairs()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_states).flat_map(move |s| self.actions(s).iter().map(move |&a| (s, a)))
    }

    /// Largest satisfaction degree over afforded pairs.
    pub fn max_degree(&self) -> f64 {
        self.pairs()
            .map(|(s, a)| self.degree(s, a))
            .fold(0.0, f64::max)
    }

    pub fn to_record(&self) -> AffordanceRecord {
        AffordanceRecord {
            kappa: self.kappa,
            mode: self.mode,
            num_states: self.num_states,
            num_actions: self.num_actions,
            pairs: self.pairs().map(|(s, a)| [s, a]).collect(),
            degrees: (0..self.num_states)
                .map(|s| (0..self.num_actions).map(|a| self.degree(s, a)).collect())
                .collect(),
            repaired_states: self.repaired.clone(),
        }
    }
}

/// Serialised form of an [`AffordanceSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffordanceRecord {
    pub kappa: f64,
    pub mode: ThresholdMode,
    pub num_states: usize,
    pub num_actions: usize,
    pub pairs: Vec<[usize; 2]>,
    /// `degrees[s][a]`
    pub degrees: Vec<Vec<f64>>,
    pub repaired_states: Vec<usize>,
}

pub fn build_affordance(
    mdp: &TabularMdp,
    intents: &IntentSet,
    kappa: f64,
    mode: ThresholdMode,
) -> Result<AffordanceSet, AffordanceError> {
    if !(0.0..=1.0).contains(&kappa) {
        return Err(AffordanceError::Domain(format!(
            "kappa {kappa} outside [0, 1]"
        )));
    }
    check_intents(mdp, intents)?;
    let (n, m) = (mdp.num_states(), mdp.num_actions());
    let mut degrees = Vec::with_capacity(n * m);
    let mut thresholded = Vec::with_capacity(n * m);
    for s in 0..n {
        for a in 0..m {
            let intent = intents.for_action(a);
            let degree = satisfaction_degree(mdp, intent, s);
            let keep = match mode {
                ThresholdMode::Tv => degree <= 1.0 - kappa + THRESHOLD_SLACK,
                ThresholdMode::SupportThreshold => {
                    let mass: f64 = intent.support(s).iter().map(|&j| mdp.prob(s, a, j)).sum();
                    mass + THRESHOLD_SLACK >= kappa
                }
            };
            degrees.push(degree);
            thresholded.push(keep);
        }
    }
    let mut repaired = Vec::new();
    let allowed = (0..n)
        .map(|s| {
            let acts: Vec<usize> = (0..m).filter(|&a| thresholded[s * m + a]).collect();
            if !acts.is_empty() {
                return acts;
            }
            repaired.push(s);
            let best = (0..m)
                .min_by(|&a, &b| {
                    degrees[s * m + a]
                        .total_cmp(&degrees[s * m + b])
                        .then(a.cmp(&b))
                })
                .expect("at least one action");
            vec![best]
        })
        .collect();
    let restriction = ActionRestriction::new(allowed, m)?;
    Ok(AffordanceSet {
        num_states: n,
        num_actions: m,
        kappa,
        mode,
        degrees,
        thresholded,
        repaired,
        restriction,
    })
}

fn check_intents(mdp: &TabularMdp, intents: &IntentSet) -> Result<(), AffordanceError> {
    if intents.len() != mdp.num_actions() {
        return Err(AffordanceError::Shape(format!(
            "{} intents for {} actions",
            intents.len(),
            mdp.num_actions()
        )));
    }
    if let Some(bad) = intents.iter().find(|i| i.num_states() != mdp.num_states()) {
        return Err(AffordanceError::Shape(format!(
            "intent {} covers {} states, MDP has {}",
            bad.name,
            bad.num_states(),
            mdp.num_states()
        )));
    }
    Ok(())
}

/// How an afforded pair's transition row was obtained in an [`InducedMdp`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowSource {
    Intent,
    /// The intent cannot be met at this state; the true dynamics are kept.
    TrueDynamics,
}

/// MDP whose transitions are the intents, defined on afforded pairs only.
#[derive(Debug, Clone)]
pub struct InducedMdp {
    /// Rows for unafforded pairs are never read; they hold the true dynamics
    /// so that the carrier stays a valid [`TabularMdp`].
    model: TabularMdp,
    restriction: ActionRestriction,
    sources: Vec<Option<RowSource>>,
    model_error: Vec<f64>,
}

impl InducedMdp {
    pub fn model(&self) -> &TabularMdp {
        &self.model
    }

    pub fn restriction(&self) -> &ActionRestriction {
        &self.restriction
    }

    /// Transition row for an afforded pair; `None` if `(s, a)` is not afforded.
    pub fn transition(&self, s: usize, a: usize) -> Option<&[(usize, f64)]> {
        self.restriction
            .contains(s, a)
            .then(|| self.model.row(s, a))
    }

    pub fn row_source(&self, s: usize, a: usize) -> Option<RowSource> {
        self.sources[s * self.model.num_actions() + a]
    }

    /// Total variation between the induced and true rows of an afforded pair.
    pub fn model_error(&self, s: usize, a: usize) -> Option<f64> {
        self.restriction
            .contains(s, a)
            .then(|| self.model_error[s * self.model.num_actions() + a])
    }

    /// Largest induced-vs-true total variation over afforded pairs.
    pub fn max_model_error(&self) -> f64 {
        (0..self.model.num_states())
            .flat_map(|s| self.restriction.allowed(s).iter().map(move |&a| (s, a)))
            .map(|(s, a)| self.model_error[s * self.model.num_actions() + a])
            .fold(0.0, f64::max)
    }
}

pub fn induce_mdp(
    mdp: &TabularMdp,
    intents: &IntentSet,
    affordance: &AffordanceSet,
) -> Result<InducedMdp, AffordanceError> {
    check_intents(mdp, intents)?;
    if affordance.num_states() != mdp.num_states() || affordance.num_actions() != mdp.num_actions()
    {
        return Err(AffordanceError::Shape(
            "affordance built for a different MDP".into(),
        ));
    }
    let (n, m) = (mdp.num_states(), mdp.num_actions());
    let mut rows: Vec<SparseRow> = Vec::with_capacity(n * m);
    let mut sources = vec![None; n * m];
    let mut model_error = vec![0.0; n * m];
    for s in 0..n {
        for a in 0..m {
            let truth = mdp.row(s, a);
            if !affordance.contains(s, a) {
                rows.push(truth.to_vec());
                continue;
            }
            match intents.for_action(a).distribution_at(mdp, s) {
                Some(target) => {
                    model_error[s * m + a] = tv_distance_sparse(&target, truth);
                    sources[s * m + a] = Some(RowSource::Intent);
                    rows.push(target);
                }
                None => {
                    sources[s * m + a] = Some(RowSource::TrueDynamics);
                    rows.push(truth.to_vec());
                }
            }
        }
    }
    let model = mdp.with_transitions(rows).map_err(|e| match e {
        crate::mdp::MdpError::InvalidRow {
            state,
            action,
            reason,
        } => AffordanceError::InvalidIntent {
            action,
            state,
            reason,
        },
        other => other.into(),
    })?;
    Ok(InducedMdp {
        model,
        restriction: affordance.restriction().clone(),
        sources,
        model_error,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AffordanceStats {
    pub size: usize,
    pub per_state_min: usize,
    pub single_action_everywhere: bool,
}

pub fn affordance_stats(affordance: &AffordanceSet) -> AffordanceStats {
    let counts = (0..affordance.num_states()).map(|s| affordance.actions(s).len());
    let per_state_min = counts.clone().min().unwrap_or(0);
    AffordanceStats {
        size: affordance.size(),
        per_state_min,
        single_action_everywhere: counts.clone().all(|c| c == 1),
    }
}
