use rayon::prelude::*;
use serde::Serialize;

use super::{collect, Cell, Coord, ExperimentConfig, ExperimentKind, LearningPart, RunOutput};
use crate::env::{sample_continuous_trajectories, Point, StartRule};
use crate::learn::{
    evaluate_ood, heatmap, label_dataset, train_classifier, train_joint, Displacement, HeatmapRow,
    JointConfig, JointOutput, LearnError, ModelVariant, OodConfig, PartialGaussianModel,
    TrainConfig,
};

/// Steps averaged for the reported final losses.
const FINAL_WINDOW: usize = 200;

/// Distance from the right edge of the box that counts as "at the wall"
/// for the classifier heatmap summary.
const RIGHT_WALL_BAND: f64 = 0.05;

fn tail_mean(xs: &[f64]) -> Option<f64> {
    let tail = &xs[xs.len().saturating_sub(FINAL_WINDOW)..];
    (!tail.is_empty()).then(|| tail.iter().sum::<f64>() / tail.len() as f64)
}

fn mean_of(rows: &[&HeatmapRow], f: impl Fn(&HeatmapRow) -> f64) -> f64 {
    rows.iter().map(|r| f(r)).sum::<f64>() / rows.len() as f64
}

/// `fx=+0.75` for horizontal forces, `fx=+0.10_fy=+0.10` otherwise.
pub(crate) fn force_label(f: Point) -> String {
    if f[1] == 0.0 {
        format!("fx={:+.2}", f[0])
    } else {
        format!("fx={:+.2}_fy={:+.2}", f[0], f[1])
    }
}

fn heatmap_csv(rows: &[HeatmapRow]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("heatmap rows serialise");
    }
    w.into_inner().expect("in-memory writer")
}

fn part_name(part: LearningPart) -> &'static str {
    match part {
        LearningPart::Classifier => "classifier",
        LearningPart::Full => "full",
        LearningPart::Restricted => "restricted",
    }
}

/// Classifier heatmaps and the joint affordance-aware model loop, per seed.
pub fn run_learning(config: &ExperimentConfig) -> RunOutput {
    let jobs: Vec<(u64, LearningPart)> = config
        .seeds
        .iter()
        .flat_map(|&seed| config.parts.iter().map(move |&part| (seed, part)))
        .collect();
    let cells: Vec<RunOutput> = jobs
        .par_iter()
        .map(|&(seed, part)| {
            let mut cell = Cell::new(ExperimentKind::Learning);
            let coord = Coord {
                seed,
                ..Coord::default()
            };
            let result = match part {
                LearningPart::Classifier => classifier_part(config, seed, &mut cell),
                LearningPart::Full => joint_part(config, seed, ModelVariant::Full, &mut cell),
                LearningPart::Restricted => {
                    joint_part(config, seed, ModelVariant::Restricted, &mut cell)
                }
            };
            if let Err(e) = result {
                cell.fail(coord, part_name(part), e.to_string());
            }
            cell.finish()
        })
        .collect();
    collect(cells)
}

fn classifier_part(
    config: &ExperimentConfig,
    seed: u64,
    cell: &mut Cell,
) -> Result<(), LearnError> {
    let lc = &config.learning;
    let world = &lc.world;
    let coord = Coord {
        seed,
        ..Coord::default()
    };
    let data = sample_continuous_trajectories(
        world,
        lc.classifier_trajectories,
        lc.classifier_horizon,
        StartRule::UniformBox,
        seed,
    );
    let set = label_dataset(world, &data, lc.joint.completion);
    let train = TrainConfig {
        steps: lc.classifier_steps,
        ..TrainConfig::classifier(seed)
    };
    let trained = train_classifier(&set, Displacement::names(), train)?;
    let rows = heatmap(
        world,
        &trained.model,
        None,
        lc.heatmap_force,
        lc.heatmap_grid,
        lc.k,
    )?;

    let all: Vec<&HeatmapRow> = rows.iter().collect();
    let near: Vec<&HeatmapRow> = rows
        .iter()
        .filter(|r| r.x >= world.high[0] - RIGHT_WALL_BAND - 1e-9)
        .collect();
    let interior: Vec<&HeatmapRow> = rows
        .iter()
        .filter(|r| r.x.abs() > 0.3 && r.x.abs() < 0.7 && r.y.abs() < 0.7)
        .collect();
    let label = force_label(lc.heatmap_force);
    if !near.is_empty() {
        cell.push(
            coord,
            format!("classifier.{label}.plus_x_near_right_wall"),
            mean_of(&near, |r| r.p_plus_x),
        );
    }
    if !interior.is_empty() {
        cell.push(
            coord,
            format!("classifier.{label}.plus_x_interior"),
            mean_of(&interior, |r| r.p_plus_x),
        );
    }
    cell.push(
        coord,
        format!("classifier.{label}.plus_x_mean"),
        mean_of(&all, |r| r.p_plus_x),
    );
    cell.push(
        coord,
        format!("classifier.{label}.minus_x_mean"),
        mean_of(&all, |r| r.p_minus_x),
    );
    cell.push(
        coord,
        format!("classifier.{label}.plus_y_mean"),
        mean_of(&all, |r| r.p_plus_y),
    );
    cell.push(
        coord,
        format!("classifier.{label}.minus_y_mean"),
        mean_of(&all, |r| r.p_minus_y),
    );
    if let Some(l) = tail_mean(&trained.trace) {
        cell.push(coord, "classifier.final_loss", l);
    }
    cell.json_artifact(
        format!("checkpoints/classifier_seed{seed}.json"),
        &trained.model.to_checkpoint(),
    );
    cell.json_artifact(format!("traces/classifier_seed{seed}.json"), &trained.trace);
    cell.artifact(
        format!("heatmaps/classifier_seed{seed}.csv"),
        heatmap_csv(&rows),
    );
    Ok(())
}

#[derive(Serialize)]
struct JointTraces<'a> {
    classifier: &'a [f64],
    affordance: &'a [Option<f64>],
    kept_fraction: &'a [f64],
    baseline: &'a [f64],
}

fn joint_part(
    config: &ExperimentConfig,
    seed: u64,
    variant: ModelVariant,
    cell: &mut Cell,
) -> Result<(), LearnError> {
    let lc = &config.learning;
    let world = &lc.world;
    let coord = Coord {
        seed,
        ..Coord::default()
    };
    let name = match variant {
        ModelVariant::Full => "full",
        ModelVariant::Restricted => "restricted",
    };
    let steps = match variant {
        ModelVariant::Full => lc.full_steps,
        ModelVariant::Restricted => lc.restricted_steps,
    };
    let joint = JointConfig {
        steps,
        variant,
        seed,
        ..lc.joint
    };
    let out = train_joint(world, &joint)?;
    let ood = OodConfig {
        seed,
        ..lc.ood.clone()
    };
    for m in evaluate_ood(world, &out.classifier, &out.aware, &out.baseline, &ood)? {
        let prefix = format!("{name}.{}.{}", m.arm, force_label(m.force));
        cell.push(
            coord,
            format!("{prefix}.displacement_error"),
            m.displacement_error,
        );
        cell.push(coord, format!("{prefix}.mean_sigma"), m.mean_sigma);
        cell.push(coord, format!("{prefix}.open_points"), m.open_points as f64);
        cell.push(
            coord,
            format!("{prefix}.adjacent_points"),
            m.adjacent_points as f64,
        );
        let optional = [
            ("open_error", m.open_error),
            ("gated_fraction", m.gated_fraction),
            ("wall_violation_rate", m.wall_violation_rate),
        ];
        for (metric, value) in optional {
            if let Some(v) = value {
                cell.push(coord, format!("{prefix}.{metric}"), v);
            }
        }
    }
    let aware_losses: Vec<f64> = out.aware_trace.loss.iter().flatten().copied().collect();
    for (arm, trace) in [
        ("classifier", &out.classifier_trace),
        ("affordance", &aware_losses),
        ("baseline", &out.baseline_trace),
    ] {
        if let Some(l) = tail_mean(trace) {
            cell.push(coord, format!("{name}.{arm}.final_loss"), l);
        }
    }
    if let Some(f) = tail_mean(&out.aware_trace.kept_fraction) {
        cell.push(coord, format!("{name}.affordance.kept_fraction"), f);
    }
    write_joint_artifacts(config, seed, name, &out, cell)
}

fn write_joint_artifacts(
    config: &ExperimentConfig,
    seed: u64,
    name: &str,
    out: &JointOutput,
    cell: &mut Cell,
) -> Result<(), LearnError> {
    let lc = &config.learning;
    cell.json_artifact(
        format!("checkpoints/{name}_classifier_seed{seed}.json"),
        &out.classifier.to_checkpoint(),
    );
    cell.json_artifact(
        format!("checkpoints/{name}_affordance_seed{seed}.json"),
        &out.aware.to_checkpoint(),
    );
    cell.json_artifact(
        format!("checkpoints/{name}_baseline_seed{seed}.json"),
        &out.baseline.to_checkpoint(),
    );
    cell.json_artifact(
        format!("traces/{name}_seed{seed}.json"),
        &JointTraces {
            classifier: &out.classifier_trace,
            affordance: &out.aware_trace.loss,
            kept_fraction: &out.aware_trace.kept_fraction,
            baseline: &out.baseline_trace,
        },
    );
    let arms: [(&str, &PartialGaussianModel); 2] =
        [("affordance", &out.aware), ("baseline", &out.baseline)];
    for &force in &lc.prediction_forces {
        for (arm, model) in arms {
            let rows = heatmap(
                &lc.world,
                &out.classifier,
                Some(model),
                force,
                lc.heatmap_grid,
                lc.k,
            )?;
            let label = force_label(force).replace('=', "");
            cell.artifact(
                format!("heatmaps/{name}_{arm}_seed{seed}_{label}.csv"),
                heatmap_csv(&rows),
            );
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        let mut c = ExperimentConfig::defaults(ExperimentKind::Learning);
        c.seeds = vec![1, 2];
        c.learning.full_steps = 20;
        c.learning.restricted_steps = 20;
        c.learning.classifier_steps = 20;
        c.learning.classifier_trajectories = 5;
        c.learning.classifier_horizon = 20;
        c.learning.heatmap_grid = 5;
        c.learning.ood.grid = 5;
        c.learning.ood.samples = 10;
        c
    }

    #[test]
    fn force_labels() {
        assert_eq!(force_label([0.75, 0.0]), "fx=+0.75");
        assert_eq!(force_label([-0.2, 0.0]), "fx=-0.20");
        assert_eq!(force_label([0.1, 0.1]), "fx=+0.10_fy=+0.10");
    }

    #[test]
    fn short_run_emits_every_part_and_is_reproducible() {
        let c = tiny();
        let a = run_learning(&c);
        assert!(a.succeeded(), "{:?}", a.failures);
        for metric in [
            "classifier.fx=+0.10_fy=+0.10.minus_x_mean",
            "full.affordance.fx=+0.75.displacement_error",
            "restricted.baseline.fx=-0.20.mean_sigma",
            "full.baseline.final_loss",
        ] {
            assert!(
                a.value(
                    metric,
                    Coord {
                        seed: 2,
                        ..Coord::default()
                    }
                )
                .is_some(),
                "{metric}"
            );
        }
        let b = run_learning(&c);
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.artifacts, b.artifacts);
        // classifier: checkpoint, trace, heatmap; each joint variant: 3 checkpoints, trace, 2 forces x 2 arms
        assert_eq!(a.artifacts.len(), 2 * (3 + 2 * (4 + 4)));
    }

    #[test]
    fn tail_mean_uses_the_last_window() {
        let xs: Vec<f64> = (0..300)
            .map(|i| if i < 100 { 100.0 } else { 1.0 })
            .collect();
        assert_eq!(tail_mean(&xs), Some(1.0));
        assert_eq!(tail_mean(&[]), None);
        assert_eq!(tail_mean(&[2.0, 4.0]), Some(3.0));
    }
}
