//! Prints the per-layer MAC table of a residual preset, then prunes half of
//! the stem (whose channels the skip connection shares with `block_b`, so the
//! cost holds) and half of `block_a` (which is free to shrink).

use dagger_core::flops;
use dagger_core::graph::config::presets;
use dagger_core::graph::NetworkGraph;
use dagger_core::Result;

fn print_table(g: &NetworkGraph) {
    println!("{:<10} {:<10} {:>4} {:>4} {:>10}", "layer", "kind", "in", "out", "MACs");
    for row in flops::flops_table(g) {
        println!(
            "{:<10} {:<10} {:>4} {:>4} {:>10}",
            row.layer_id, row.kind, row.active_in, row.active_out, row.exact_macs
        );
    }
    println!("total {}\n", flops::total_flops_exact(g));
}

fn main() -> Result<()> {
    let mut g = NetworkGraph::build(&presets::residual(10), 0)?;
    print_table(&g);

    for id in ["stem", "block_a"] {
        let l = g.layer_index(id).expect("preset layer");
        let n = g.layers[l].n_out;
        for f in 0..n / 2 {
            g.gate_mut(l).expect("gated").prune(f);
        }
        println!("after pruning {} of {n} filters in `{id}`:", n / 2);
        print_table(&g);
    }
    println!("smallest reachable cost {}", flops::min_flops(&g));
    Ok(())
}
