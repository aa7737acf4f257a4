//! Test-side oracles shared by the integration and acceptance suites. They
//! only use the public types of the crate and re-derive everything else.

#![allow(dead_code)]

use afford_core::mdp::TabularMdp;
use afford_core::neural::Mlp;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random MDP with up to `max_states` states and `max_actions` actions.
/// About a third of the transition entries are zero.
pub fn random_mdp(rng: &mut ChaCha8Rng, max_states: usize, max_actions: usize) -> TabularMdp {
    let n = rng.random_range(1..=max_states);
    let m = rng.random_range(1..=max_actions);
    let gamma = rng.random_range(0.5..0.95);
    let reward: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..m).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect();
    let transition = (0..n)
        .map(|_| {
            (0..m)
                .map(|_| {
                    let mut w: Vec<f64> = (0..n)
                        .map(|_| {
                            if rng.random_bool(0.33) {
                                0.0
                            } else {
                                rng.random_range(0.0..1.0)
                            }
                        })
                        .collect();
                    if w.iter().sum::<f64>() == 0.0 {
                        let j = rng.random_range(0..n);
                        w[j] = 1.0;
                    }
                    let total: f64 = w.iter().sum();
                    w.iter().map(|x| x / total).collect()
                })
                .collect()
        })
        .collect();
    TabularMdp::from_dense(reward, transition, gamma, 1.0).unwrap()
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
pub fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            let pivot_row = a[col].clone();
            for (x, p) in a[row][col..].iter_mut().zip(&pivot_row[col..]) {
                *x -= f * p;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// `V^π` exactly, from `(I - γ P_π) V = R_π`.
pub fn exact_policy_value(mdp: &TabularMdp, actions: &[usize]) -> Vec<f64> {
    let n = mdp.num_states();
    let a = (0..n)
        .map(|s| {
            (0..n)
                .map(|j| f64::from(u8::from(s == j)) - mdp.discount() * mdp.prob(s, actions[s], j))
                .collect()
        })
        .collect();
    let b = (0..n).map(|s| mdp.reward(s, actions[s])).collect();
    solve_linear(a, b)
}

/// Every deterministic policy of an `n`-state, `m`-action MDP.
pub fn all_policies(n: usize, m: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|p: Vec<usize>| {
                (0..m).map(move |a| {
                    let mut q = p.clone();
                    q.push(a);
                    q
                })
            })
            .collect();
    }
    out
}

/// Statewise maximum of `V^π` over all deterministic policies.
pub fn brute_force_optimum(mdp: &TabularMdp) -> Vec<f64> {
    let n = mdp.num_states();
    let mut best = vec![f64::NEG_INFINITY; n];
    for p in all_policies(n, mdp.num_actions()) {
        for (b, v) in best.iter_mut().zip(exact_policy_value(mdp, &p)) {
            *b = b.max(v);
        }
    }
    best
}

/// Rectifier pattern of `x` through `mlp`.
fn relu_pattern(mlp: &Mlp, x: &[f64]) -> Vec<bool> {
    let cache = mlp.forward_cached(x).unwrap();
    cache
        .hidden_pre_activations()
        .iter()
        .flatten()
        .map(|&z| z > 0.0)
        .collect()
}

/// Outcome of comparing analytic parameter gradients of `loss(mlp(x))`
/// with central differences.
pub struct FdReport {
    pub checked: usize,
    pub skipped: usize,
    /// Largest relative error seen, including coordinates under the floor.
    pub worst_relative: f64,
    pub failures: usize,
}

/// Central differences with step `h`; a coordinate passes when its error is
/// within `rel_tol` of the larger magnitude or below `abs_floor`.
/// Coordinates whose perturbation flips a rectifier are skipped.
pub fn finite_difference_report<L, G>(
    mlp: &Mlp,
    x: &[f64],
    loss: L,
    grad_out: G,
    h: f64,
    rel_tol: f64,
    abs_floor: f64,
) -> FdReport
where
    L: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    let cache = mlp.forward_cached(x).unwrap();
    let grads = mlp.backward(&cache, &grad_out(cache.output())).unwrap();
    let base = relu_pattern(mlp, x);
    let mut report = FdReport {
        checked: 0,
        skipped: 0,
        worst_relative: 0.0,
        failures: 0,
    };
    for i in 0..mlp.num_params() {
        let mut plus = mlp.clone();
        plus.params_mut()[i] += h;
        let mut minus = mlp.clone();
        minus.params_mut()[i] -= h;
        if relu_pattern(&plus, x) != base || relu_pattern(&minus, x) != base {
            report.skipped += 1;
            continue;
        }
        let numeric =
            (loss(&plus.forward(x).unwrap()) - loss(&minus.forward(x).unwrap())) / (2.0 * h);
        let analytic = grads.params[i];
        let diff = (analytic - numeric).abs();
        let scale = analytic.abs().max(numeric.abs());
        if scale > 0.0 {
            report.worst_relative = report.worst_relative.max(diff / scale);
        }
        if diff > abs_floor && diff > rel_tol * scale {
            report.failures += 1;
        }
        report.checked += 1;
    }
    report
}
