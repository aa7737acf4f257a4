use std::time::Instant;

use rayon::prelude::*;

use super::{collect, Cell, Coord, ExperimentConfig, ExperimentKind, RunOutput, TieBreakRule};
use crate::affordance::{
    build_affordance, directional_intents, induce_mdp, ln_restricted_policy_count,
    planning_loss_bound_ln, value_loss_bound,
};
use crate::env::{sample_grid_trajectories, GridSpec, GridWorld, Layout, SuccessProb};
use crate::mdp::{
    policy_evaluation, value_iteration_with, value_loss, ActionRestriction, Norm, TabularMdp,
    TieBreak, ValueFunction,
};
use crate::model::{estimate_model, mask_model};

pub(crate) fn layout_name(layout: Layout) -> &'static str {
    match layout {
        Layout::OneRoom => "one_room",
        Layout::Pachinko => "pachinko",
    }
}

fn build_world(
    config: &ExperimentConfig,
    layout: Layout,
    size: usize,
    success: SuccessProb,
) -> Result<GridWorld, String> {
    let spec = GridSpec::square(layout, size, success)
        .with_slip(config.slip)
        .with_discount(config.discount);
    GridWorld::new(&spec).map_err(|e| e.to_string())
}

fn tie_break(config: &ExperimentConfig, seed: u64, n: usize) -> TieBreak {
    match config.solver.tie_break {
        TieBreakRule::LowestIndex => TieBreak::LowestIndex,
        TieBreakRule::Seeded => TieBreak::Seeded {
            seed: seed.wrapping_mul(1000).wrapping_add(n as u64),
        },
    }
}

/// `V*` of `mdp`, from the optimal policy evaluated at the tight tolerance.
fn optimal_values(config: &ExperimentConfig, mdp: &TabularMdp) -> Result<ValueFunction, String> {
    let s = &config.solver;
    let full = ActionRestriction::full(mdp.num_states(), mdp.num_actions());
    let sol = value_iteration_with(
        mdp,
        &full,
        s.vi_tolerance,
        s.max_iterations,
        TieBreak::LowestIndex,
    )
    .map_err(|e| e.to_string())?;
    policy_evaluation(mdp, &sol.policy, s.eval_tolerance, s.max_iterations)
        .map_err(|e| e.to_string())
}

fn fmt_coord(x: f64) -> String {
    format!("{x}").replace('.', "_")
}

/// Planning in the intent-induced MDP, evaluated in the true one, over (p, κ).
pub fn run_intent_planning(config: &ExperimentConfig) -> RunOutput {
    let jobs: Vec<(u64, Layout, usize, f64)> = config
        .seeds
        .iter()
        .flat_map(|&seed| {
            config.layouts.iter().flat_map(move |&layout| {
                config
                    .sizes
                    .iter()
                    .flat_map(move |&size| config.ps.iter().map(move |&p| (seed, layout, size, p)))
            })
        })
        .collect();
    let cells: Vec<RunOutput> = jobs
        .par_iter()
        .map(|&(seed, layout, size, p)| intent_planning_cell(config, seed, layout, size, p))
        .collect();
    collect(cells)
}

fn intent_planning_cell(
    config: &ExperimentConfig,
    seed: u64,
    layout: Layout,
    size: usize,
    p: f64,
) -> RunOutput {
    let mut cell = Cell::new(ExperimentKind::IntentPlanning);
    let name = layout_name(layout);
    let base = Coord {
        seed,
        p: Some(p),
        size: Some(size),
        ..Coord::default()
    };
    let prepared = build_world(config, layout, size, SuccessProb::Constant(p))
        .and_then(|world| optimal_values(config, world.mdp()).map(|v| (world, v)));
    let (world, v_opt) = match prepared {
        Ok(x) => x,
        Err(e) => {
            for &kappa in &config.kappas {
                cell.fail(
                    Coord {
                        kappa: Some(kappa),
                        ..base
                    },
                    name,
                    e.clone(),
                );
            }
            return cell.finish();
        }
    };
    let mdp = world.mdp();
    let intents = directional_intents(&world);
    let s = &config.solver;
    for &kappa in &config.kappas {
        let coord = Coord {
            kappa: Some(kappa),
            ..base
        };
        let result = (|| {
            let af = build_affordance(mdp, &intents, kappa, config.threshold_mode)
                .map_err(|e| e.to_string())?;
            let induced = induce_mdp(mdp, &intents, &af).map_err(|e| e.to_string())?;
            let sol = value_iteration_with(
                induced.model(),
                induced.restriction(),
                s.vi_tolerance,
                s.max_iterations,
                tie_break(config, seed, 0),
            )
            .map_err(|e| e.to_string())?;
            let v = policy_evaluation(mdp, &sol.policy, s.eval_tolerance, s.max_iterations)
                .map_err(|e| e.to_string())?;
            let eps = induced.max_model_error();
            let bound =
                value_loss_bound(eps, mdp.discount(), mdp.rmax()).map_err(|e| e.to_string())?;
            Ok::<_, String>((af, v, eps, bound))
        })();
        match result {
            Ok((af, v, eps, bound)) => {
                cell.push(
                    coord,
                    format!("{name}.l2_loss"),
                    value_loss(&v_opt, &v, Norm::L2).expect("same length"),
                );
                cell.push(
                    coord,
                    format!("{name}.sup_loss"),
                    value_loss(&v_opt, &v, Norm::Sup).expect("same length"),
                );
                cell.push(coord, format!("{name}.eps_max"), eps);
                cell.push(coord, format!("{name}.value_loss_bound"), bound);
                cell.push(coord, format!("{name}.af_size"), af.size() as f64);
                if seed == config.seeds[0] {
                    let path = format!(
                        "affordances/{name}_size{size}_p{}_kappa{}.json",
                        fmt_coord(p),
                        fmt_coord(kappa)
                    );
                    cell.json_artifact(path, &af.to_record());
                }
            }
            Err(e) => cell.fail(coord, name, e),
        }
    }
    cell.finish()
}

/// Value-iteration cost on the full MDP against the κ-restricted intent MDP.
///
/// Cells run one after another so the wall-clock times are comparable.
pub fn run_timing(config: &ExperimentConfig) -> RunOutput {
    let mut cells = Vec::new();
    for &layout in &config.layouts {
        for &size in &config.sizes {
            for &p in &config.ps {
                for &seed in &config.seeds {
                    cells.push(timing_cell(config, seed, layout, size, p));
                }
            }
        }
    }
    collect(cells)
}

fn timing_cell(
    config: &ExperimentConfig,
    seed: u64,
    layout: Layout,
    size: usize,
    p: f64,
) -> RunOutput {
    let mut cell = Cell::new(ExperimentKind::Timing);
    let name = layout_name(layout);
    let s = &config.solver;
    for &kappa in &config.kappas {
        let coord = Coord {
            seed,
            kappa: Some(kappa),
            p: Some(p),
            n: None,
            size: Some(size),
        };
        let result = (|| {
            let world = build_world(config, layout, size, SuccessProb::Constant(p))?;
            let mdp = world.mdp();
            let intents = directional_intents(&world);
            let full = ActionRestriction::full(mdp.num_states(), mdp.num_actions());
            let t0 = Instant::now();
            let plain = value_iteration_with(
                mdp,
                &full,
                s.vi_tolerance,
                s.max_iterations,
                tie_break(config, seed, 0),
            )
            .map_err(|e| e.to_string())?;
            let plain_ms = t0.elapsed().as_secs_f64() * 1e3;
            let t0 = Instant::now();
            let af = build_affordance(mdp, &intents, kappa, config.threshold_mode)
                .map_err(|e| e.to_string())?;
            let induced = induce_mdp(mdp, &intents, &af).map_err(|e| e.to_string())?;
            let build_ms = t0.elapsed().as_secs_f64() * 1e3;
            let t0 = Instant::now();
            let restricted = value_iteration_with(
                induced.model(),
                induced.restriction(),
                s.vi_tolerance,
                s.max_iterations,
                tie_break(config, seed, 0),
            )
            .map_err(|e| e.to_string())?;
            let restricted_ms = t0.elapsed().as_secs_f64() * 1e3;
            Ok::<_, String>((
                plain,
                plain_ms,
                restricted,
                restricted_ms,
                build_ms,
                af.size(),
            ))
        })();
        match result {
            Ok((plain, plain_ms, restricted, restricted_ms, build_ms, af_size)) => {
                cell.push(coord, format!("{name}.backups_full"), plain.backups as f64);
                cell.push(
                    coord,
                    format!("{name}.iterations_full"),
                    plain.iterations as f64,
                );
                cell.push(coord, format!("{name}.time_ms_full"), plain_ms);
                cell.push(
                    coord,
                    format!("{name}.backups_affordance"),
                    restricted.backups as f64,
                );
                cell.push(
                    coord,
                    format!("{name}.iterations_affordance"),
                    restricted.iterations as f64,
                );
                cell.push(coord, format!("{name}.time_ms_affordance"), restricted_ms);
                cell.push(coord, format!("{name}.time_ms_build_affordance"), build_ms);
                cell.push(
                    coord,
                    format!("{name}.backup_ratio"),
                    restricted.backups as f64 / plain.backups as f64,
                );
                cell.push(coord, format!("{name}.af_size"), af_size as f64);
            }
            Err(e) => cell.fail(coord, name, e),
        }
    }
    cell.finish()
}

/// Certainty-equivalence planning from `n` random trajectories, with the
/// estimated model masked by the κ-affordance.
pub fn run_ce_planning_loss(config: &ExperimentConfig) -> RunOutput {
    let jobs: Vec<(u64, Layout, usize, usize)> = config
        .seeds
        .iter()
        .flat_map(|&seed| {
            config.layouts.iter().flat_map(move |&layout| {
                config
                    .sizes
                    .iter()
                    .flat_map(move |&size| config.ns.iter().map(move |&n| (seed, layout, size, n)))
            })
        })
        .collect();
    let cells: Vec<RunOutput> = jobs
        .par_iter()
        .map(|&(seed, layout, size, n)| ce_cell(config, seed, layout, size, n))
        .collect();
    collect(cells)
}

fn ce_cell(
    config: &ExperimentConfig,
    seed: u64,
    layout: Layout,
    size: usize,
    n: usize,
) -> RunOutput {
    let mut cell = Cell::new(ExperimentKind::CePlanningLoss);
    let name = layout_name(layout);
    let base = Coord {
        seed,
        n: Some(n),
        size: Some(size),
        ..Coord::default()
    };
    let [low, high] = config.success_range;
    let prepared = (|| {
        let world = build_world(
            config,
            layout,
            size,
            SuccessProb::UniformRandom { low, high, seed },
        )?;
        let v_opt = optimal_values(config, world.mdp())?;
        let data = sample_grid_trajectories(
            &world,
            n,
            config.horizon,
            seed.wrapping_mul(1000).wrapping_add(n as u64),
        );
        let model = estimate_model(&data, world.num_states(), world.mdp().num_actions())
            .map_err(|e| e.to_string())?;
        Ok::<_, String>((world, v_opt, model))
    })();
    let (world, v_opt, model) = match prepared {
        Ok(x) => x,
        Err(e) => {
            for &kappa in &config.kappas {
                cell.fail(
                    Coord {
                        kappa: Some(kappa),
                        ..base
                    },
                    name,
                    e.clone(),
                );
            }
            return cell.finish();
        }
    };
    cell.json_artifact(
        format!("checkpoints/ce_counts_{name}_size{size}_seed{seed}_n{n}.json"),
        &model,
    );
    let mdp = world.mdp();
    let intents = directional_intents(&world);
    let s = &config.solver;
    for &kappa in &config.kappas {
        let coord = Coord {
            kappa: Some(kappa),
            ..base
        };
        let result = (|| {
            let af = build_affordance(mdp, &intents, kappa, config.threshold_mode)
                .map_err(|e| e.to_string())?;
            let masked = mask_model(&model, &af, mdp).map_err(|e| e.to_string())?;
            let sol = value_iteration_with(
                &masked.mdp,
                &masked.restriction,
                s.vi_tolerance,
                s.max_iterations,
                tie_break(config, seed, n),
            )
            .map_err(|e| e.to_string())?;
            let v = policy_evaluation(mdp, &sol.policy, s.eval_tolerance, s.max_iterations)
                .map_err(|e| e.to_string())?;
            let eps = af.max_degree();
            let bound = planning_loss_bound_ln(
                eps,
                mdp.discount(),
                mdp.rmax(),
                n as u64,
                af.size() as u64,
                ln_restricted_policy_count(af.restriction()),
                config.delta,
            )
            .map_err(|e| e.to_string())?;
            Ok::<_, String>((af.size(), v, eps, bound))
        })();
        match result {
            Ok((af_size, v, eps, bound)) => {
                cell.push(
                    coord,
                    format!("{name}.l2_loss"),
                    value_loss(&v_opt, &v, Norm::L2).expect("same length"),
                );
                cell.push(
                    coord,
                    format!("{name}.sup_loss"),
                    value_loss(&v_opt, &v, Norm::Sup).expect("same length"),
                );
                cell.push(coord, format!("{name}.af_size"), af_size as f64);
                cell.push(coord, format!("{name}.eps_max"), eps);
                cell.push(coord, format!("{name}.planning_loss_bound"), bound);
            }
            Err(e) => cell.fail(coord, name, e),
        }
    }
    cell.finish()
}
