//! Saves a partly pruned network with its gate generators and reads it back.

use dagger_core::dagger::{DaggerBank, HiddenRule};
use dagger_core::data::checkpoint::{self, Checkpoint, CheckpointMeta};
use dagger_core::graph::config::presets;
use dagger_core::graph::NetworkGraph;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut graph = NetworkGraph::build(&presets::inverted_residual(10), 3)?;
    let l = graph.gated_layers()[1];
    graph.gate_mut(l).expect("gated").prune(0);
    let bank = DaggerBank::init(&graph, HiddenRule::Quarter, 3);
    let ck = Checkpoint {
        graph,
        bank: Some(bank),
        meta: CheckpointMeta {
            seed: 3,
            step: 1200,
            epoch: 4,
            ..Default::default()
        },
    };

    let dir = std::env::temp_dir().join("dagger-checkpoint-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.ckpt");
    checkpoint::save_checkpoint(&ck, &path)?;
    let bytes = std::fs::read(&path)?;
    println!("wrote {} bytes to {}", bytes.len(), path.display());

    let back = checkpoint::load_checkpoint(&path)?;
    println!("meta {:?}", back.meta);
    println!("identical after f32 rounding: {}", back == checkpoint::quantize(&ck)?);
    println!("generators restored: {}", back.bank.is_some());
    Ok(())
}
