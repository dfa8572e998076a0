//! Writes one PGM image per filter of `conv1`; pruned filters come out black.

use dagger_core::data::featmap::dump_feature_maps;
use dagger_core::data::synthetic::SyntheticSpec;
use dagger_core::data::Split;
use dagger_core::graph::config::presets;
use dagger_core::graph::NetworkGraph;
use dagger_core::tensor::Tensor;
use dagger_core::Result;

fn main() -> Result<()> {
    let data = SyntheticSpec::new(3, 1, [3, 8, 8], 0).generate(Split::Train)?;
    let x = Tensor::new(vec![1, 3, 8, 8], data.image(0).to_vec())?;

    let mut g = NetworkGraph::build(&presets::two_conv(3), 0)?;
    let conv1 = g.layer_index("conv1").expect("conv1");
    for f in [1, 4] {
        g.gate_mut(conv1).expect("gated").prune(f);
    }
    let dir = std::env::temp_dir().join("dagger-feature-maps");
    for p in dump_feature_maps(&g, &x, "conv1", &dir)? {
        println!("{}", p.display());
    }
    Ok(())
}
