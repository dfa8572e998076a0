//! Reference implementations the library is checked against. Everything here
//! is written the slow, obvious way and shares no code with the crate's
//! kernels or FLOPs model.

#![allow(dead_code)]

use std::collections::HashSet;

use dagger_core::autodiff::{Tape, Var};
use dagger_core::graph::config::presets;
use dagger_core::graph::{LayerKind, NetworkConfig, NetworkGraph, Source};
use dagger_core::tensor::Tensor;
use dagger_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn fixture(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Direct-loop convolution, NCHW, zero padding.
pub fn naive_conv(x: &Tensor, w: &Tensor, stride: usize, pad: usize, groups: usize) -> Vec<f64> {
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (o, cg, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let og = o / groups;
    let mut out = vec![0.0; n * o * oh * ow];
    for b in 0..n {
        for f in 0..o {
            let g = f / og;
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..cg {
                        let ch = g * cg + ci;
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xo * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.data()[((b * c + ch) * h + iy as usize) * wd + ix as usize]
                                    * w.data()[((f * cg + ci) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[((b * o + f) * oh + y) * ow + xo] = acc;
                }
            }
        }
    }
    out
}

/// Central finite-difference check of `f` (a scalar-valued tape program)
/// against reverse mode. Returns the worst relative error over every input
/// element, with magnitudes below `floor` treated as `floor`.
pub fn grad_check(inputs: &[Tensor], h: f64, floor: f64, f: impl Fn(&mut Tape, &[Var]) -> Result<Var>) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars).unwrap();
    let grads = tape.backward(out).unwrap();
    let eval = |ins: &[Tensor]| -> f64 {
        let mut t = Tape::new();
        let v: Vec<Var> = ins.iter().map(|x| t.leaf(x.clone(), false)).collect();
        let o = f(&mut t, &v).unwrap();
        t.value(o).item()
    };
    let mut worst = 0.0f64;
    for (k, x) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; x.numel()]);
        for i in 0..x.numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let scale = analytic[i].abs().max(numeric.abs()).max(floor);
            worst = worst.max((analytic[i] - numeric).abs() / scale);
        }
    }
    worst
}

/// Contracts an arbitrary tensor output to a scalar with fixed random
/// weights, so every output element carries a distinct sensitivity.
pub fn project(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(y).shape().to_vec();
    let w = random_tensor(&mut rng(seed ^ 0x9e37), &shape);
    let w = tape.constant(w);
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

/// Channels that survive in each layer's output, found by naive fixpoint
/// iteration: residual adds and depthwise layers force every producer feeding
/// them to keep the union of their channels, and the input and ungated
/// producers keep everything.
pub fn live_channels(graph: &NetworkGraph, gates: &[Option<Vec<f64>>]) -> Vec<Vec<bool>> {
    let n = graph.layers.len();
    // producers(l): weighted layers (or the input, as None) whose channels reach l's output unchanged
    fn producers(graph: &NetworkGraph, src: Source, out: &mut Vec<Option<usize>>) {
        match src {
            Source::Input => out.push(None),
            Source::Layer(i) => {
                let l = &graph.layers[i];
                match l.kind {
                    LayerKind::Conv | LayerKind::Linear => out.push(Some(i)),
                    LayerKind::DepthwiseConv => {
                        out.push(Some(i));
                        producers(graph, l.inputs[0], out);
                    }
                    _ => {
                        for &s in &l.inputs {
                            producers(graph, s, out);
                        }
                    }
                }
            }
        }
    }
    let mut own: Vec<Vec<bool>> = (0..n)
        .map(|i| {
            let l = &graph.layers[i];
            match &gates[i] {
                Some(g) if l.gated => g.iter().map(|&v| v != 0.0).collect(),
                _ => vec![true; l.n_out],
            }
        })
        .collect();
    let groups: Vec<Vec<Option<usize>>> = (0..n)
        .map(|i| {
            let mut p = Vec::new();
            producers(graph, Source::Layer(i), &mut p);
            p
        })
        .collect();
    let mut changed = true;
    while changed {
        changed = false;
        for g in &groups {
            if g.len() < 2 {
                continue;
            }
            let width = graph.layers[g.iter().flatten().next().copied().unwrap_or(0)].n_out;
            let pinned = g.iter().any(|p| p.is_none_or(|i| !graph.layers[i].gated));
            let mut union = vec![pinned; width];
            for &i in g.iter().flatten() {
                for (u, &b) in union.iter_mut().zip(&own[i]) {
                    *u |= b;
                }
            }
            for &i in g.iter().flatten() {
                if own[i] != union {
                    own[i] = union.clone();
                    changed = true;
                }
            }
        }
    }
    (0..n)
        .map(|i| {
            let mut p = Vec::new();
            producers(graph, Source::Layer(i), &mut p);
            match p[0] {
                Some(j) => own[j].clone(),
                None => vec![true; graph.layers[i].n_out],
            }
        })
        .collect()
}

fn live_of(graph: &NetworkGraph, live: &[Vec<bool>], src: Source) -> Vec<bool> {
    match src {
        Source::Input => vec![true; graph.input_shape[0]],
        Source::Layer(i) => live[i].clone(),
    }
}

/// Counts multiply-accumulates by walking every loop of every counted layer
/// and tallying the iterations whose input and output channels both survive.
pub fn mac_oracle(graph: &NetworkGraph, gates: &[Option<Vec<f64>>]) -> u64 {
    let live = live_channels(graph, gates);
    let mut macs = 0u64;
    for (i, l) in graph.layers.iter().enumerate() {
        let inp = live_of(graph, &live, l.inputs[0]);
        let out = &live[i];
        let [_, oh, ow] = l.out_shape;
        let [_, ih, iw] = l.in_shape;
        let (kh, kw) = l.kernel;
        match l.kind {
            LayerKind::Conv => {
                for _o in (0..l.n_out).filter(|&o| out[o]) {
                    for _c in (0..inp.len()).filter(|&c| inp[c]) {
                        for _y in 0..oh {
                            for _x in 0..ow {
                                for _ky in 0..kh {
                                    for _kx in 0..kw {
                                        macs += 1;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            LayerKind::DepthwiseConv => {
                for _c in (0..l.n_out).filter(|&c| out[c]) {
                    for _ in 0..oh * ow * kh * kw {
                        macs += 1;
                    }
                }
            }
            LayerKind::Linear => {
                for _o in (0..l.n_out).filter(|&o| out[o]) {
                    for _c in (0..inp.len()).filter(|&c| inp[c]) {
                        for _ in 0..ih * iw {
                            macs += 1;
                        }
                    }
                }
            }
            _ => {}
        }
    }
    macs
}

/// Toy graphs covering chains, a residual block and a depthwise block.
pub fn toy_configs() -> Vec<NetworkConfig> {
    vec![
        presets::two_conv(3),
        presets::pointwise_chain(3, &[4, 6, 5], 3),
        presets::residual(4),
        presets::inverted_residual(5),
        presets::vgg6(4, 8, [4, 4, 6, 6, 8, 8]),
        NetworkConfig::new("strided", [2, 9, 9])
            .conv("c1", 5, 3, 2, 1)
            .relu("r1")
            .conv("c2", 4, 3, 2, 0)
            .relu("r2")
            .global_pool("gap")
            .linear("fc", 3),
    ]
}

/// Random binary table over the gated layers.
pub fn random_binary_gates(graph: &NetworkGraph, r: &mut ChaCha8Rng) -> Vec<Option<Vec<f64>>> {
    graph
        .gates
        .iter()
        .map(|g| g.as_ref().map(|g| (0..g.len()).map(|_| f64::from(u8::from(r.random_bool(0.5)))).collect()))
        .collect()
}

/// Prunes a random subset of each gated layer, always keeping at least one
/// filter per layer.
pub fn prune_randomly(graph: &mut NetworkGraph, r: &mut ChaCha8Rng, p: f64) {
    for l in graph.gated_layers() {
        let n = graph.gate(l).unwrap().len();
        let keep = r.random_range(0..n);
        for i in 0..n {
            if i != keep && r.random_bool(p) {
                graph.gate_mut(l).unwrap().prune(i);
            }
        }
    }
}

/// Randomizes batch-norm running statistics so eval-mode forwards are not
/// the identity normalization.
pub fn randomize_running_stats(graph: &mut NetworkGraph, r: &mut ChaCha8Rng) {
    for w in &mut graph.weights {
        for m in &mut w.running_mean {
            *m = r.random_range(-0.5..0.5);
        }
        for v in &mut w.running_var {
            *v = r.random_range(0.5..2.0);
        }
    }
}

pub fn ids(graph: &NetworkGraph) -> HashSet<String> {
    graph.layers.iter().map(|l| l.id.clone()).collect()
}

/// Marks every still-active gate as retained, as the end of a prune run does.
pub fn retain_active(graph: &mut NetworkGraph) {
    for l in graph.gated_layers() {
        let g = graph.gate_mut(l).unwrap();
        for i in 0..g.len() {
            if !g.is_pruned(i) {
                g.retain(i);
            }
        }
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
pub mod gradients;

/// Small separable task matching the toy presets' `[3, 8, 8]` input.
pub fn toy_data(seed: u64) -> (dagger_core::data::Dataset, dagger_core::data::Dataset) {
    use dagger_core::data::{synthetic::SyntheticSpec, Split};
    let mut spec = SyntheticSpec::new(3, 40, [3, 8, 8], seed);
    spec.separation = 1.0;
    spec.test_per_class = Some(40);
    (spec.generate(Split::Train).unwrap(), spec.generate(Split::Test).unwrap())
}

/// `cfg` trained on `data` for a few epochs.
pub fn pretrained(cfg: &NetworkConfig, data: &dagger_core::data::Dataset, epochs: usize, seed: u64) -> NetworkGraph {
    use dagger_core::pruner::{train, TrainConfig};
    let mut g = NetworkGraph::build(cfg, seed).unwrap();
    train(&mut g, data, None, &TrainConfig::new(epochs, 0.05, seed), |_, _| Ok(())).unwrap();
    g
}
