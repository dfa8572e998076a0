//! Sweeps over the regularizer weight and the per-round pruning ratio.

use serde::Serialize;

use super::{evaluate, final_finetune, prune_loop, PruneConfig};
use crate::dagger::DaggerBank;
use crate::data::Dataset;
use crate::error::Result;
use crate::flops;
use crate::graph::NetworkGraph;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    /// `lambda` or `prune_ratio`.
    pub parameter: &'static str,
    pub value: f64,
    pub rounds: usize,
    pub final_flops: u64,
    pub params: usize,
    pub top1: Option<f64>,
    /// `|A|` at termination.
    pub retained_total: usize,
    pub retained: Vec<(String, usize)>,
}

/// One prune (and final finetune) run per swept value, all other settings
/// taken from `base`.
pub fn run_ablation(
    pretrained: &NetworkGraph,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    base: &PruneConfig,
    lambdas: &[f64],
    ratios: &[f64],
) -> Result<Vec<AblationRow>> {
    let runs = lambdas
        .iter()
        .map(|&v| ("lambda", v, PruneConfig { lambda: v, ..base.clone() }))
        .chain(ratios.iter().map(|&v| ("prune_ratio", v, PruneConfig { prune_ratio: v, ..base.clone() })));
    let mut rows = Vec::new();
    for (parameter, value, cfg) in runs {
        let mut bank = DaggerBank::init(pretrained, cfg.hidden_rule(), cfg.seed);
        let mut out = prune_loop(pretrained.clone(), &mut bank, train_set, &cfg)?;
        final_finetune(&mut out.pruned, train_set, None, &cfg)?;
        let top1 = test_set.map(|t| evaluate(&out.pruned, t, 256)).transpose()?.map(|a| a.top1);
        rows.push(AblationRow {
            parameter,
            value,
            rounds: out.state.round,
            final_flops: flops::total_flops_exact(&out.pruned),
            params: out.pruned.param_count(),
            top1,
            retained_total: out.state.one_gates.len(),
            retained: out.state.retained_per_layer(&out.gated),
        });
    }
    Ok(rows)
}
