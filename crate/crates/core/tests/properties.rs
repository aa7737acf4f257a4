mod common;

use afford_core::affordance::{
    build_affordance, directional_intents, induce_mdp, planning_loss_bound, planning_loss_bound_ln,
    tv_distance, value_loss_bound, ThresholdMode,
};
use afford_core::env::{
    sample_continuous_trajectories, sample_grid_trajectories, ContinuousWorld, GridSpec, GridWorld,
    Layout, SlipRule, StartRule, SuccessProb,
};
use afford_core::learn::{AffordanceClassifier, Displacement};
use afford_core::mdp::{
    policy_evaluation, value_iteration, value_loss, ActionRestriction, MdpError, Norm, TabularMdp,
    DEFAULT_MAX_ITERATIONS,
};
use afford_core::neural::{sigma_from_pre, sigmoid, SIGMA_FLOOR};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-6;

fn mdp_from_seed(seed: u64) -> TabularMdp {
    common::random_mdp(&mut ChaCha8Rng::seed_from_u64(seed), 5, 3)
}

/// Sup-norm change of sweep `k`, read from a solve capped at `k` sweeps.
fn residual_after(mdp: &TabularMdp, k: usize) -> f64 {
    let full = ActionRestriction::full(mdp.num_states(), mdp.num_actions());
    match value_iteration(mdp, &full, 1e-300, k) {
        Ok(sol) => sol.residual,
        Err(MdpError::NotConverged { residual, .. }) => residual,
        Err(e) => panic!("{e}"),
    }
}

fn random_restriction(mdp: &TabularMdp, rng: &mut ChaCha8Rng) -> ActionRestriction {
    let allowed = (0..mdp.num_states())
        .map(|_| {
            let mut acts: Vec<usize> = (0..mdp.num_actions())
                .filter(|_| rng.random_bool(0.6))
                .collect();
            if acts.is_empty() {
                acts.push(rng.random_range(0..mdp.num_actions()));
            }
            acts
        })
        .collect();
    ActionRestriction::new(allowed, mdp.num_actions()).unwrap()
}

/// Pachinko needs an odd side so the goal corner is not a peg.
fn grid(layout: Layout, size: usize, p: f64, slip: SlipRule) -> GridWorld {
    let size = if layout == Layout::Pachinko {
        size | 1
    } else {
        size
    };
    GridWorld::new(&GridSpec::square(layout, size, SuccessProb::Constant(p)).with_slip(slip))
        .unwrap()
}

fn layout_strategy() -> impl Strategy<Value = Layout> {
    prop_oneof![Just(Layout::OneRoom), Just(Layout::Pachinko)]
}

fn slip_strategy() -> impl Strategy<Value = SlipRule> {
    prop_oneof![Just(SlipRule::UniformNeighbor), Just(SlipRule::Stay)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bellman_residual_never_grows(seed in any::<u64>()) {
        let mdp = mdp_from_seed(seed);
        let residuals: Vec<f64> = (1..25).map(|k| residual_after(&mdp, k)).collect();
        for w in residuals.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12, "{residuals:?}");
        }
    }

    #[test]
    fn restricting_actions_never_raises_values(seed in any::<u64>()) {
        let mdp = mdp_from_seed(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA11);
        let small = random_restriction(&mdp, &mut rng);
        let full = ActionRestriction::full(mdp.num_states(), mdp.num_actions());
        prop_assert!(small.is_subset_of(&full));
        let v_small = value_iteration(&mdp, &small, TOL, DEFAULT_MAX_ITERATIONS).unwrap().values;
        let v_full = value_iteration(&mdp, &full, TOL, DEFAULT_MAX_ITERATIONS).unwrap().values;
        let slack = 2.0 * TOL / (1.0 - mdp.discount());
        for (a, b) in v_small.values.iter().zip(&v_full.values) {
            prop_assert!(*a <= b + slack);
        }
    }

    #[test]
    fn value_iteration_finds_the_enumerated_optimum(seed in any::<u64>()) {
        let mdp = mdp_from_seed(seed);
        let full = ActionRestriction::full(mdp.num_states(), mdp.num_actions());
        let sol = value_iteration(&mdp, &full, TOL, DEFAULT_MAX_ITERATIONS).unwrap();
        let v = common::exact_policy_value(&mdp, &sol.policy.actions);
        for (a, b) in v.iter().zip(common::brute_force_optimum(&mdp)) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn evaluating_the_greedy_policy_recovers_the_vi_values(seed in any::<u64>()) {
        let mdp = mdp_from_seed(seed);
        let full = ActionRestriction::full(mdp.num_states(), mdp.num_actions());
        let sol = value_iteration(&mdp, &full, TOL, DEFAULT_MAX_ITERATIONS).unwrap();
        let v = policy_evaluation(&mdp, &sol.policy, 1e-10, DEFAULT_MAX_ITERATIONS).unwrap();
        let gap = value_loss(&v, &sol.values, Norm::Sup).unwrap();
        prop_assert!(gap <= 2.0 * TOL / (1.0 - mdp.discount()), "gap {gap}");
    }

    #[test]
    fn iterative_evaluation_matches_the_linear_solve(seed in any::<u64>()) {
        let mdp = mdp_from_seed(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actions: Vec<usize> = (0..mdp.num_states()).map(|_| rng.random_range(0..mdp.num_actions())).collect();
        let policy = afford_core::mdp::DeterministicPolicy { actions: actions.clone() };
        let v = policy_evaluation(&mdp, &policy, 1e-12, DEFAULT_MAX_ITERATIONS).unwrap();
        for (a, b) in v.values.iter().zip(common::exact_policy_value(&mdp, &actions)) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn gridworld_rows_are_distributions(layout in layout_strategy(), size in 2usize..9, p in 0.05f64..=1.0, slip in slip_strategy()) {
        let world = grid(layout, size, p, slip);
        let mdp = world.mdp();
        for s in 0..mdp.num_states() {
            for a in 0..mdp.num_actions() {
                let row = mdp.row(s, a);
                prop_assert!(row.iter().all(|&(_, q)| q >= 0.0));
                prop_assert!((row.iter().map(|&(_, q)| q).sum::<f64>() - 1.0).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn afforded_pairs_meet_the_threshold(layout in layout_strategy(), size in 3usize..8, p in 0.05f64..=1.0,
                                         slip in slip_strategy(), kappa in 0.0f64..=1.0) {
        let world = grid(layout, size, p, slip);
        let mdp = world.mdp();
        let intents = directional_intents(&world);
        let af = build_affordance(mdp, &intents, kappa, ThresholdMode::Tv).unwrap();
        for s in 0..mdp.num_states() {
            prop_assert!(!af.actions(s).is_empty());
            if af.repaired_states().contains(&s) {
                continue;
            }
            for &a in af.actions(s) {
                let Some(target) = intents.for_action(a).distribution_at(mdp, s) else {
                    // impossible intents are only afforded when nothing is filtered
                    prop_assert!(kappa <= 1e-9);
                    continue;
                };
                let mut dense = vec![0.0; mdp.num_states()];
                for (j, q) in target {
                    dense[j] += q;
                }
                let tv = tv_distance(&dense, &mdp.row_dense(s, a)).unwrap();
                prop_assert!(tv <= 1.0 - kappa + 1e-9, "tv {tv} kappa {kappa}");
            }
        }
    }

    #[test]
    fn intent_planning_loss_respects_the_bound(layout in layout_strategy(), size in 3usize..8, p in 0.05f64..=1.0,
                                                 slip in slip_strategy(), kappa in 0.0f64..=1.0) {
        let world = grid(layout, size, p, slip);
        let mdp = world.mdp();
        let intents = directional_intents(&world);
        let af = build_affordance(mdp, &intents, kappa, ThresholdMode::Tv).unwrap();
        let induced = induce_mdp(mdp, &intents, &af).unwrap();
        let full = ActionRestriction::full(mdp.num_states(), mdp.num_actions());
        let opt = value_iteration(mdp, &full, TOL, DEFAULT_MAX_ITERATIONS).unwrap();
        let v_opt = common::exact_policy_value(mdp, &opt.policy.actions);
        let plan = value_iteration(induced.model(), induced.restriction(), TOL, DEFAULT_MAX_ITERATIONS).unwrap();
        let v = common::exact_policy_value(mdp, &plan.policy.actions);
        let loss = v.iter().zip(&v_opt).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let bound = value_loss_bound(induced.max_model_error(), mdp.discount(), mdp.rmax()).unwrap();
        prop_assert!(loss <= bound + 10.0 * TOL, "loss {loss} bound {bound}");
    }

    #[test]
    fn affordance_size_is_monotone_in_kappa(size in 3usize..7, p in 0.05f64..=1.0, a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let world = grid(Layout::Pachinko, size, p, SlipRule::UniformNeighbor);
        let intents = directional_intents(&world);
        let small = build_affordance(world.mdp(), &intents, hi, ThresholdMode::Tv).unwrap();
        let large = build_affordance(world.mdp(), &intents, lo, ThresholdMode::Tv).unwrap();
        let thresholded = |af: &afford_core::affordance::AffordanceSet| {
            (0..world.num_states()).flat_map(|s| (0..4).map(move |a| (s, a))).filter(|&(s, a)| af.contains_thresholded(s, a)).collect::<Vec<_>>()
        };
        let (ts, tl) = (thresholded(&small), thresholded(&large));
        prop_assert!(ts.iter().all(|x| tl.contains(x)));
        prop_assert!(ts.len() <= tl.len());
    }

    #[test]
    fn trajectory_sampling_is_a_function_of_the_seed(seed in any::<u64>(), n in 1usize..5, horizon in 1usize..8) {
        let world = grid(Layout::Pachinko, 5, 0.7, SlipRule::UniformNeighbor);
        prop_assert_eq!(sample_grid_trajectories(&world, n, horizon, seed), sample_grid_trajectories(&world, n, horizon, seed));
        let cont = ContinuousWorld::default();
        let a = sample_continuous_trajectories(&cont, n, horizon, StartRule::UniformBox, seed);
        prop_assert_eq!(a, sample_continuous_trajectories(&cont, n, horizon, StartRule::UniformBox, seed));
    }

    #[test]
    fn scale_transform_respects_the_floor(pre in -1e6f64..1e6) {
        let s = sigma_from_pre(pre);
        prop_assert!(s >= SIGMA_FLOOR && s.is_finite());
        let q = sigmoid(pre);
        prop_assert!((0.0..=1.0).contains(&q));
    }

    #[test]
    fn classifier_outputs_are_probabilities(seed in any::<u64>(), x in proptest::array::uniform4(-3.0f64..3.0)) {
        let c = AffordanceClassifier::new(4, Displacement::names(), seed).unwrap();
        let probs = c.probabilities(&x).unwrap();
        prop_assert_eq!(probs.len(), 4);
        prop_assert!(probs.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn planning_bound_matches_the_closed_form(eps in 0.0f64..=1.0, gamma in 0.1f64..0.99, n in 1u64..10_000,
                                              af in 1u64..5000, policies in 1.0f64..1e12, delta in 0.001f64..0.5) {
        let product = 2.0 * af as f64 * policies / delta;
        let expected = 2.0 / (1.0 - gamma).powi(2) * (2.0 * gamma * eps + (product.ln() / (2.0 * n as f64)).sqrt());
        let got = planning_loss_bound(eps, gamma, 1.0, n, af, policies, delta).unwrap();
        prop_assert!((got - expected).abs() <= 1e-10 * expected.max(1.0));
        let ln = planning_loss_bound_ln(eps, gamma, 1.0, n, af, policies.ln(), delta).unwrap();
        prop_assert!((got - ln).abs() <= 1e-12 * got.max(1.0));
    }
}
