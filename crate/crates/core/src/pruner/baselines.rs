//! Width-scaling baselines.
//!
//! *Uniform* keeps `max(1, round(s · n))` lowest-index filters in every gated
//! layer, with `s` the largest scale (found by bisection) that fits the
//! budget. *Random* perturbs those counts per layer by a factor drawn from
//! `U(0.75, 1.25)`, rescales them globally by bisection to fit the budget, and
//! keeps random filter subsets.

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::flops::{self, FlopsBudget, GateTable};
use crate::graph::NetworkGraph;
use crate::rng;

#[derive(Debug, Clone)]
pub struct BaselinePruned {
    /// Source network with retained / pruned statuses.
    pub gated: NetworkGraph,
    pub pruned: NetworkGraph,
    pub flops: u64,
    /// `(layer, kept filters)` per gated layer.
    pub counts: Vec<(usize, usize)>,
    /// Width scale (Uniform) or global rescale factor (Random).
    pub scale: f64,
}

fn check_budget(graph: &NetworkGraph, budget: &FlopsBudget) -> Result<()> {
    let minimum = flops::min_flops(graph);
    if budget.target < minimum {
        return Err(Error::UnsatisfiableBudget {
            budget: budget.target,
            minimum,
        });
    }
    Ok(())
}

/// Bracket width at which scale bisection stops.
fn tolerance(graph: &NetworkGraph) -> f64 {
    let widest = graph.gated_layers().iter().map(|&l| graph.layers[l].n_out).max().unwrap_or(1);
    1.0 / (2.0 * widest as f64)
}

/// Largest `s` in `[lo, hi]` with `fits(s)`, given `fits(lo)` and
/// monotonicity, to within `tol`.
fn bisect(mut lo: f64, mut hi: f64, tol: f64, fits: impl Fn(f64) -> bool) -> f64 {
    if fits(hi) {
        return hi;
    }
    while hi - lo >= tol {
        let mid = 0.5 * (lo + hi);
        if fits(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Gate table keeping `order[l][..count]` of each gated layer.
fn table_for(graph: &NetworkGraph, order: &[Option<Vec<usize>>], counts: &[(usize, usize)]) -> GateTable {
    let mut t: GateTable = graph.gates.iter().map(|g| g.as_ref().map(|g| vec![0.0; g.len()])).collect();
    for &(l, c) in counts {
        let v = t[l].as_mut().expect("gated");
        for &f in &order[l].as_ref().expect("order for gated layer")[..c] {
            v[f] = 1.0;
        }
    }
    t
}

fn finish(graph: &NetworkGraph, order: &[Option<Vec<usize>>], counts: Vec<(usize, usize)>, scale: f64) -> Result<BaselinePruned> {
    let table = table_for(graph, order, &counts);
    let mut gated = graph.clone();
    for (l, v) in table.iter().enumerate() {
        let Some(v) = v else { continue };
        let g = gated.gate_mut(l).expect("gated");
        for (f, &keep) in v.iter().enumerate() {
            if keep == 1.0 {
                g.retain(f);
            } else {
                g.prune(f);
            }
        }
    }
    let pruned = gated.materialize_pruned()?;
    Ok(BaselinePruned {
        flops: flops::exact_from_table(graph, &table),
        gated,
        pruned,
        counts,
        scale,
    })
}

fn uniform_counts(graph: &NetworkGraph, s: f64) -> Vec<(usize, usize)> {
    graph
        .gated_layers()
        .into_iter()
        .map(|l| {
            let n = graph.layers[l].n_out;
            (l, ((s * n as f64).round() as usize).clamp(1, n))
        })
        .collect()
}

fn identity_order(graph: &NetworkGraph) -> Vec<Option<Vec<usize>>> {
    graph.gates.iter().map(|g| g.as_ref().map(|g| (0..g.len()).collect())).collect()
}

/// Largest uniform width scale that fits, and the resulting network.
pub fn uniform_baseline(graph: &NetworkGraph, budget: &FlopsBudget) -> Result<BaselinePruned> {
    check_budget(graph, budget)?;
    let order = identity_order(graph);
    let cost = |s: f64| flops::exact_from_table(graph, &table_for(graph, &order, &uniform_counts(graph, s)));
    let s = bisect(0.0, 1.0, tolerance(graph), |s| cost(s) <= budget.target);
    finish(graph, &order, uniform_counts(graph, s), s)
}

#[derive(Debug, Clone)]
pub struct RandomTrial {
    pub result: BaselinePruned,
    /// Uniform counts times the per-layer factor, before rescaling.
    pub perturbed: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct RandomBaseline {
    pub uniform_counts: Vec<(usize, usize)>,
    pub trials: Vec<RandomTrial>,
    /// Filled by the caller once trial accuracies are known.
    pub mean_accuracy: Option<f64>,
}

/// `trials` randomized structures around the Uniform solution.
pub fn random_baseline(graph: &NetworkGraph, budget: &FlopsBudget, trials: usize, seed: u64) -> Result<RandomBaseline> {
    let uniform = uniform_baseline(graph, budget)?;
    let spaces = graph.spaces();
    let mut out = Vec::with_capacity(trials);
    for t in 0..trials {
        let mut r = rng::stream(seed, rng::tag("random-baseline") ^ t as u64);
        let perturbed: Vec<(usize, f64)> = uniform
            .counts
            .iter()
            .map(|&(l, c)| (l, c as f64 * r.random_range(0.75..=1.25)))
            .collect();
        // one permutation per channel space, so tied layers keep nested subsets
        let perms: Vec<Vec<usize>> = spaces
            .spaces
            .iter()
            .map(|s| {
                let mut p: Vec<usize> = (0..s.width).collect();
                p.shuffle(&mut r);
                p
            })
            .collect();
        let order: Vec<Option<Vec<usize>>> = graph
            .gates
            .iter()
            .enumerate()
            .map(|(l, g)| g.as_ref().map(|_| perms[spaces.of_layer[l]].clone()))
            .collect();
        let counts_at = |beta: f64| -> Vec<(usize, usize)> {
            perturbed
                .iter()
                .map(|&(l, p)| (l, ((beta * p).round() as usize).clamp(1, graph.layers[l].n_out)))
                .collect()
        };
        let cost = |beta: f64| flops::exact_from_table(graph, &table_for(graph, &order, &counts_at(beta)));
        let min_p = perturbed.iter().map(|&(_, p)| p).fold(f64::INFINITY, f64::min);
        let widest = perturbed.iter().map(|&(l, _)| graph.layers[l].n_out).max().unwrap_or(1);
        let hi = (widest as f64 / min_p.max(1e-9)).max(1.0);
        let beta = bisect(0.0, hi, tolerance(graph), |b| cost(b) <= budget.target);
        out.push(RandomTrial {
            result: finish(graph, &order, counts_at(beta), beta)?,
            perturbed,
        });
    }
    Ok(RandomBaseline {
        uniform_counts: uniform.counts,
        trials: out,
        mean_accuracy: None,
    })
}
