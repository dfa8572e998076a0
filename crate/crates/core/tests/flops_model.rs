mod common;

use common::{mac_oracle, prune_randomly, random_binary_gates, retain_active, rng, toy_configs};
use dagger_core::autodiff::{Tape, Var};
use dagger_core::flops::{self, GateTable};
use dagger_core::graph::config::presets;
use dagger_core::graph::NetworkGraph;
use dagger_core::tensor::Tensor;
use rand::Rng;

fn graphs() -> Vec<NetworkGraph> {
    toy_configs().iter().map(|c| NetworkGraph::build(c, 0).unwrap()).collect()
}

fn filled(graph: &NetworkGraph, v: f64) -> GateTable {
    graph.gates.iter().map(|g| g.as_ref().map(|g| vec![v; g.len()])).collect()
}

#[test]
fn unpruned_cost_matches_oracle_and_surrogate() {
    for g in graphs() {
        let ones = filled(&g, 1.0);
        let c0 = flops::architecture_flops(&g);
        assert_eq!(c0, mac_oracle(&g, &ones), "{}", g.name);
        assert_eq!(flops::total_flops_exact(&g), c0);
        let s = flops::surrogate_from_table(&g, &ones);
        assert!((s - c0 as f64).abs() / (c0 as f64) < 1e-12, "{}: {s} vs {c0}", g.name);
        assert_eq!(s, c0 as f64);
    }
}

#[test]
fn two_conv_hand_count() {
    // conv1: 3·8·9·64, conv2: 8·8·9·64, fc: 8·3
    let g = NetworkGraph::build(&presets::two_conv(3), 0).unwrap();
    assert_eq!(flops::architecture_flops(&g), 13824 + 36864 + 24);
}

#[test]
fn random_binary_tables_match_oracle() {
    for (k, g) in graphs().iter().enumerate() {
        let mut r = rng(k as u64);
        for _ in 0..200 {
            let t = random_binary_gates(g, &mut r);
            let exact = flops::exact_from_table(g, &t);
            assert_eq!(exact, mac_oracle(g, &t), "{}", g.name);
            assert_eq!(flops::surrogate_from_table(g, &t), exact as f64, "{}", g.name);
        }
    }
}

#[test]
fn zeroing_one_layer_matches_oracle() {
    for g in graphs() {
        for l in g.gated_layers() {
            let mut t = filled(&g, 1.0);
            t[l] = Some(vec![0.0; g.layers[l].n_out]);
            assert_eq!(flops::exact_from_table(&g, &t), mac_oracle(&g, &t), "{} layer {}", g.name, g.layers[l].id);
        }
    }
}

#[test]
fn halving_a_pointwise_chain() {
    // widths 3 (input) -> 4 -> 6 -> 5 -> fc 2 on 3x3 maps: 108 + 216 + 270 + 10
    let g = NetworkGraph::build(&presets::pointwise_chain(3, &[4, 6, 5], 3), 0).unwrap();
    assert_eq!(flops::architecture_flops(&g), 604);
    let half = flops::surrogate_from_table(&g, &filled(&g, 0.5));
    // one gated side halves a term, two gated sides quarter it
    let expect = 0.5 * 108.0 + 0.25 * 216.0 + 0.25 * 270.0 + 0.5 * 10.0;
    assert!((half - expect).abs() < 1e-12, "{half}");
    assert_eq!(flops::surrogate_from_table(&g, &filled(&g, 0.0)), 0.0);
}

#[test]
fn minimum_cost_keeps_one_channel_per_space() {
    for g in graphs() {
        let t: GateTable = g
            .gates
            .iter()
            .map(|gv| {
                gv.as_ref().map(|gv| {
                    let mut v = vec![0.0; gv.len()];
                    v[0] = 1.0;
                    v
                })
            })
            .collect();
        assert_eq!(flops::min_flops(&g), mac_oracle(&g, &t), "{}", g.name);
    }
}

#[test]
fn surrogate_gradient_matches_finite_differences() {
    let h = 1e-5;
    for (k, g) in graphs().iter().enumerate() {
        let mut r = rng(40 + k as u64);
        let t: GateTable = g
            .gates
            .iter()
            .map(|gv| gv.as_ref().map(|gv| (0..gv.len()).map(|_| r.random_range(0.05..1.0)).collect()))
            .collect();
        let mut tape = Tape::new();
        let live: Vec<Option<Var>> = t.iter().map(|v| v.as_ref().map(|v| tape.leaf(Tensor::from_vec(v.clone()), true))).collect();
        let s = flops::total_flops_surrogate(g, &mut tape, &live).unwrap();
        assert!((tape.value(s).item() - flops::surrogate_from_table(g, &t)).abs() < 1e-9);
        let grads = tape.backward(s).unwrap();
        for (l, v) in live.iter().enumerate() {
            let Some(v) = v else { continue };
            let analytic = grads.get(*v).unwrap();
            for i in 0..analytic.len() {
                let mut plus = t.clone();
                plus[l].as_mut().unwrap()[i] += h;
                let mut minus = t.clone();
                minus[l].as_mut().unwrap()[i] -= h;
                let fd = (flops::surrogate_from_table(g, &plus) - flops::surrogate_from_table(g, &minus)) / (2.0 * h);
                let rel = (analytic[i] - fd).abs() / analytic[i].abs().max(fd.abs()).max(1.0);
                assert!(rel < 1e-6, "{} layer {} gate {i}: {} vs {fd}", g.name, g.layers[l].id, analytic[i]);
            }
        }
    }
}

#[test]
fn table_of_a_pruned_graph_matches_oracle() {
    for (k, cfg) in toy_configs().iter().enumerate() {
        let mut g = NetworkGraph::build(cfg, 0).unwrap();
        prune_randomly(&mut g, &mut rng(70 + k as u64), 0.4);
        retain_active(&mut g);
        let rows = flops::flops_table(&g);
        let total: u64 = rows.iter().map(|r| r.exact_macs).sum();
        assert_eq!(total, mac_oracle(&g, &flops::stored_gates(&g)), "{}", cfg.name);
        for r in &rows {
            assert_eq!(r.surrogate, r.exact_macs as f64, "{} {}", cfg.name, r.layer_id);
        }
        // the materialized network costs the same with every gate at one
        let m = g.materialize_pruned().unwrap();
        assert_eq!(flops::total_flops_exact(&m), total, "{}", cfg.name);
    }
}
