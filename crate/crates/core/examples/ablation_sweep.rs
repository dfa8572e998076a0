//! Sweeps the regularizer weight and the per-round pruning ratio and prints
//! the resulting CSV.

use dagger_core::data::report::ablation_csv;
use dagger_core::data::synthetic::SyntheticSpec;
use dagger_core::data::Split;
use dagger_core::flops::{self, FlopsBudget};
use dagger_core::graph::config::presets;
use dagger_core::graph::NetworkGraph;
use dagger_core::pruner::ablation::run_ablation;
use dagger_core::pruner::{self, PruneConfig, TrainConfig};
use dagger_core::Result;

fn main() -> Result<()> {
    let spec = SyntheticSpec::new(3, 40, [3, 8, 8], 2);
    let train = spec.generate(Split::Train)?;
    let test = spec.generate(Split::Test)?;
    let mut g = NetworkGraph::build(&presets::vgg6(3, 8, [4, 4, 6, 6, 8, 8]), 0)?;
    pruner::train(&mut g, &train, None, &TrainConfig::new(3, 0.05, 0), |_, _| Ok(()))?;

    let mut base = PruneConfig::new(FlopsBudget::from_acceleration(flops::architecture_flops(&g), 2.0)?);
    base.gate_iters = 10;
    base.finetune_iters = 10;
    base.batch_size = 32;
    base.gate_lr = 0.1;
    base.weight_lr = 0.01;
    base.final_finetune_epochs = 1;

    let rows = run_ablation(&g, &train, Some(&test), &base, &[0.5, 8.0, 32.0], &[0.002, 0.006, 0.01])?;
    print!("{}", ablation_csv(&rows));
    for row in &rows {
        println!("{}={}: {:?}", row.parameter, row.value, row.retained);
    }
    Ok(())
}
