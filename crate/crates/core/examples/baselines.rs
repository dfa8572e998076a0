//! Uniform width scaling and randomly perturbed widths at the same budget.

use dagger_core::flops::{self, FlopsBudget};
use dagger_core::graph::config::presets;
use dagger_core::graph::NetworkGraph;
use dagger_core::pruner;
use dagger_core::Result;

fn main() -> Result<()> {
    let g = NetworkGraph::build(&presets::vgg6(10, 16, [16, 16, 32, 32, 64, 64]), 0)?;
    let c0 = flops::architecture_flops(&g);
    let budget = FlopsBudget::from_acceleration(c0, 2.0)?;
    println!("C0 {c0}, budget {}", budget.target);

    let u = pruner::uniform_baseline(&g, &budget)?;
    let widths: Vec<usize> = u.counts.iter().map(|&(_, c)| c).collect();
    println!("uniform: scale {:.4}, widths {widths:?}, {} MACs", u.scale, u.flops);

    let r = pruner::random_baseline(&g, &budget, 5, 1)?;
    for (i, t) in r.trials.iter().enumerate() {
        let widths: Vec<usize> = t.result.counts.iter().map(|&(_, c)| c).collect();
        println!("random {i}: widths {widths:?}, {} MACs", t.result.flops);
    }
    Ok(())
}
