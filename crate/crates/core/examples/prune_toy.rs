//! Trains a small VGG-style net on synthetic data, prunes it to half its
//! MACs and finetunes the result.
//!
//! `cargo run --release --example prune_toy`

use dagger_core::dagger::DaggerBank;
use dagger_core::data::synthetic::SyntheticSpec;
use dagger_core::data::Split;
use dagger_core::flops::{self, FlopsBudget};
use dagger_core::graph::config::presets;
use dagger_core::graph::NetworkGraph;
use dagger_core::pruner::{self, PruneConfig, TrainConfig};
use dagger_core::Result;

fn main() -> Result<()> {
    let mut spec = SyntheticSpec::new(4, 60, [3, 8, 8], 0);
    spec.test_per_class = Some(50);
    let train = spec.generate(Split::Train)?;
    let test = spec.generate(Split::Test)?;

    let mut g = NetworkGraph::build(&presets::vgg6(4, 8, [8, 8, 12, 12, 16, 16]), 0)?;
    pruner::train(&mut g, &train, None, &TrainConfig::new(6, 0.05, 0), |_, _| Ok(()))?;
    let c0 = flops::architecture_flops(&g);
    println!("pretrained: {c0} MACs, top-1 {:.3}", pruner::evaluate(&g, &test, 256)?.top1);

    let mut cfg = PruneConfig::new(FlopsBudget::from_acceleration(c0, 2.0)?);
    cfg.lambda = 0.1;
    cfg.prune_ratio = 0.05;
    cfg.gate_iters = 30;
    cfg.finetune_iters = 20;
    cfg.gate_lr = 0.2;
    cfg.weight_lr = 0.01;
    cfg.final_finetune_epochs = 3;
    cfg.final_lr = 0.01;

    let mut bank = DaggerBank::init(&g, cfg.hidden_rule(), cfg.seed);
    let mut out = pruner::prune_loop(g, &mut bank, &train, &cfg)?;
    for e in &out.state.events {
        println!(
            "round {:>2}: pruned {:>2}, {} -> {} MACs, task loss {:.4}",
            e.round,
            e.pruned.len(),
            e.flops_before,
            e.flops_after,
            e.task_loss
        );
    }
    pruner::final_finetune(&mut out.pruned, &train, None, &cfg)?;
    println!(
        "pruned: {} MACs (budget {}), top-1 {:.3}",
        flops::total_flops_exact(&out.pruned),
        cfg.budget.target,
        pruner::evaluate(&out.pruned, &test, 256)?.top1
    );
    for (id, kept) in out.state.retained_per_layer(&out.gated) {
        println!("  {id:<6} keeps {kept}");
    }
    Ok(())
}
