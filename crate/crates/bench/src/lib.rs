//! Fixtures shared by the planning benchmarks.

use afford_core::affordance::{
    build_affordance, directional_intents, AffordanceSet, ThresholdMode,
};
use afford_core::env::{GridSpec, GridWorld, Layout, SuccessProb};

/// A Pachinko world with success probability 0.5 and its κ = 0.5 affordance.
pub fn pachinko_with_affordance(size: usize) -> (GridWorld, AffordanceSet) {
    let world = GridWorld::new(&GridSpec::square(
        Layout::Pachinko,
        size,
        SuccessProb::Constant(0.5),
    ))
    .expect("odd sizes give a valid layout");
    let af = build_affordance(
        world.mdp(),
        &directional_intents(&world),
        0.5,
        ThresholdMode::Tv,
    )
    .expect("directional intents cover every action");
    (world, af)
}
