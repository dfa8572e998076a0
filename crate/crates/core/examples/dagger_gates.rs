//! Generates gates from a network's kernels, perturbs the generators, then
//! realigns them so every live gate is back at exactly one.

use dagger_core::dagger::{DaggerBank, HiddenRule};
use dagger_core::flops;
use dagger_core::graph::config::presets;
use dagger_core::graph::NetworkGraph;
use dagger_core::Result;

fn show(g: &NetworkGraph, bank: &DaggerBank, label: &str) -> Result<()> {
    let values = bank.gate_values(g)?;
    println!("{label}");
    for l in g.gated_layers() {
        let v = values[l].as_ref().expect("gated");
        let shown: Vec<String> = v.iter().map(|x| format!("{x:.3}")).collect();
        println!("  {:<6} {}", g.layers[l].id, shown.join(" "));
    }
    println!(
        "  surrogate {:.1} MACs, exact {} MACs",
        flops::surrogate_from_table(g, &values),
        flops::total_flops_exact(g)
    );
    Ok(())
}

fn main() -> Result<()> {
    let mut g = NetworkGraph::build(&presets::two_conv(3), 0)?;
    let mut bank = DaggerBank::init(&g, HiddenRule::Quarter, 0);
    show(&g, &bank, "freshly initialized")?;

    for (i, p) in bank.parameters_mut().enumerate() {
        for (j, v) in p.tensor.data_mut().iter_mut().enumerate() {
            *v += 0.3 * (((i * 31 + j * 7) % 11) as f64 / 5.0 - 1.0);
        }
    }
    show(&g, &bank, "after a perturbation")?;

    g.gate_mut(g.gated_layers()[0]).expect("gated").prune(2);
    bank.sync_masks(&g);
    bank.align();
    show(&g, &bank, "aligned, with conv1 filter 2 pruned")?;
    Ok(())
}
