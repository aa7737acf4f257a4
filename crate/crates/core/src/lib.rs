//! Affordances for finite MDPs: intent-induced partial models,
//! affordance-restricted planning, certainty-equivalence experiments and
//! learned affordance classifiers with masked transition models.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod affordance;
pub mod env;
pub mod experiments;
pub mod learn;
pub mod mdp;
pub mod model;
pub mod neural;

pub use affordance::{
    build_affordance, induce_mdp, AffordanceSet, Intent, IntentSet, ThresholdMode,
};
pub use env::{ContinuousWorld, GridSpec, GridWorld, Layout, SlipRule, SuccessProb};
pub use experiments::{
    run_experiment, write_run, ExperimentConfig, ExperimentKind, ResultRow, RunOutput,
};
pub use mdp::{
    policy_evaluation, value_iteration, ActionRestriction, DeterministicPolicy, TabularMdp,
    TieBreak, ValueFunction,
};
