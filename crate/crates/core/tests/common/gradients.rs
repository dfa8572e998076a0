//! Finite-difference cases for every differentiable op, the gate generator
//! and the FLOPs surrogate.

use dagger_core::autodiff::{Activation, BatchNormArgs, NormMode, Tape, Var};
use dagger_core::dagger::DaggerParams;
use dagger_core::flops;
use dagger_core::graph::NetworkGraph;
use dagger_core::rng as streams;
use dagger_core::tensor::Tensor;
use dagger_core::Result;
use rand::Rng;

use super::{grad_check, project, random_tensor, rng, toy_configs};

pub const STEP: f64 = 1e-5;
/// Gradient magnitudes below this are compared absolutely.
pub const FLOOR: f64 = 1e-6;

type Program = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

pub struct Case {
    pub name: &'static str,
    pub shapes: Vec<Vec<usize>>,
    pub f: Program,
}

fn case(name: &'static str, shapes: &[&[usize]], f: impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'static) -> Case {
    Case {
        name,
        shapes: shapes.iter().map(|s| s.to_vec()).collect(),
        f: Box::new(f),
    }
}

fn batchnorm(t: &mut Tape, v: &[Var], mode: NormMode) -> Result<Var> {
    let c = t.value(v[0]).shape()[1];
    let mean: Vec<f64> = (0..c).map(|i| 0.1 * i as f64).collect();
    let var: Vec<f64> = (0..c).map(|i| 0.5 + 0.25 * i as f64).collect();
    let args = BatchNormArgs {
        running_mean: &mean,
        running_var: &var,
        mode,
        eps: 1e-5,
        momentum: 0.1,
    };
    Ok(t.batchnorm(v[0], v[1], v[2], args)?.0)
}

/// One program per op, each contracted to a scalar with fixed random weights.
pub fn op_cases(seed: u64) -> Vec<Case> {
    let p = move |t: &mut Tape, y: Var| project(t, y, seed);
    vec![
        case("conv2d", &[&[2, 3, 5, 5], &[4, 3, 3, 3]], move |t, v| {
            let y = t.conv2d(v[0], v[1], 1, 1, 1)?;
            p(t, y)
        }),
        case("conv2d strided", &[&[1, 2, 6, 6], &[3, 2, 3, 3]], move |t, v| {
            let y = t.conv2d(v[0], v[1], 2, 0, 1)?;
            p(t, y)
        }),
        case("depthwise conv2d", &[&[2, 3, 4, 4], &[3, 1, 3, 3]], move |t, v| {
            let y = t.conv2d(v[0], v[1], 1, 1, 3)?;
            p(t, y)
        }),
        case("linear", &[&[3, 4], &[5, 4], &[5]], move |t, v| {
            let y = t.linear(v[0], v[1], Some(v[2]))?;
            p(t, y)
        }),
        case("relu", &[&[2, 7]], move |t, v| {
            let y = t.activation(v[0], Activation::Relu);
            p(t, y)
        }),
        case("sigmoid", &[&[2, 7]], move |t, v| {
            let y = t.sigmoid(v[0]);
            p(t, y)
        }),
        case("avgpool", &[&[2, 2, 4, 4]], move |t, v| {
            let y = t.avgpool(v[0], 2, 2)?;
            p(t, y)
        }),
        case("global avgpool", &[&[2, 3, 3, 3]], move |t, v| {
            let y = t.global_avgpool(v[0])?;
            p(t, y)
        }),
        case("batchnorm train", &[&[4, 3, 2, 2], &[3], &[3]], move |t, v| {
            let y = batchnorm(t, v, NormMode::Train)?;
            p(t, y)
        }),
        case("batchnorm eval", &[&[4, 3, 2, 2], &[3], &[3]], move |t, v| {
            let y = batchnorm(t, v, NormMode::Eval)?;
            p(t, y)
        }),
        case("channel scale", &[&[2, 3, 2, 2], &[3]], move |t, v| {
            let y = t.channel_scale(v[0], v[1])?;
            p(t, y)
        }),
        case("add", &[&[2, 5], &[2, 5]], move |t, v| {
            let y = t.add(v[0], v[1])?;
            p(t, y)
        }),
        case("mul", &[&[2, 5], &[2, 5]], move |t, v| {
            let y = t.mul(v[0], v[1])?;
            p(t, y)
        }),
        case("scale", &[&[6]], move |t, v| {
            let y = t.scale(v[0], -2.5);
            p(t, y)
        }),
        case("add scalar", &[&[6]], move |t, v| {
            let y = t.add_scalar(v[0], 0.75);
            p(t, y)
        }),
        case("one minus", &[&[6]], move |t, v| {
            let y = t.one_minus(v[0]);
            p(t, y)
        }),
        case("sum", &[&[2, 3]], move |t, v| {
            let s = t.sum(v[0]);
            Ok(t.scale(s, 1.5))
        }),
        case("reshape", &[&[2, 6]], move |t, v| {
            let y = t.reshape(v[0], &[3, 4])?;
            p(t, y)
        }),
        case("softmax cross-entropy", &[&[4, 5]], move |t, v| t.softmax_cross_entropy(v[0], &[0, 4, 2, 2])),
        case("small network", &[&[2, 2, 4, 4], &[3, 2, 3, 3], &[3], &[3], &[4, 3], &[4]], move |t, v| {
            let y = t.conv2d(v[0], v[1], 1, 1, 1)?;
            let y = batchnorm(t, &[y, v[2], v[3]], NormMode::Train)?;
            let y = t.relu(y);
            let y = t.global_avgpool(y)?;
            let y = t.reshape(y, &[2, 3])?;
            let y = t.linear(y, v[4], Some(v[5]))?;
            t.softmax_cross_entropy(y, &[1, 3])
        }),
    ]
}

/// Worst relative error of one op case at `seed`.
pub fn op_error(c: &Case, seed: u64) -> f64 {
    let mut r = rng(seed.wrapping_mul(31).wrapping_add(c.name.len() as u64));
    let inputs: Vec<Tensor> = c.shapes.iter().map(|s| random_tensor(&mut r, s)).collect();
    grad_check(&inputs, STEP, FLOOR, &c.f)
}

/// Worst relative error of the gate generator's parameter gradients.
pub fn dagger_error(seed: u64) -> f64 {
    let n = 3 + (seed as usize % 4);
    let mut m = DaggerParams::new(0, n, 5, &mut streams::stream(seed, 0));
    let mut r = rng(seed + 500);
    for p in m.parameters_mut() {
        for v in p.tensor.data_mut() {
            *v += r.random_range(-0.8..0.8);
        }
    }
    if seed.is_multiple_of(3) {
        m.live[1] = false;
    }
    let kernel = random_tensor(&mut r, &[n, 2, 3, 3]);
    let weights = random_tensor(&mut rng(seed ^ 0x9e37), &[n]);
    let objective = |m: &DaggerParams| -> f64 {
        m.generate_gates(&kernel).unwrap().iter().zip(weights.data()).map(|(g, w)| g * w).sum()
    };
    let mut tape = Tape::new();
    let (g, vars) = m.gates_on_tape(&mut tape, &kernel, true).unwrap();
    let y = project(&mut tape, g, seed).unwrap();
    let grads = tape.backward(y).unwrap();
    let handles = [vars.fc1_weight, vars.fc1_bias, vars.fc2_weight, vars.fc2_bias];
    let mut worst = 0.0f64;
    for (slot, v) in handles.into_iter().enumerate() {
        let len = m.parameters()[slot].tensor.numel();
        let analytic = grads.get(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; len]);
        for i in 0..len {
            let mut plus = m.clone();
            plus.parameters_mut()[slot].tensor.data_mut()[i] += STEP;
            let mut minus = m.clone();
            minus.parameters_mut()[slot].tensor.data_mut()[i] -= STEP;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * STEP);
            worst = worst.max((analytic[i] - fd).abs() / analytic[i].abs().max(fd.abs()).max(FLOOR));
        }
    }
    worst
}

/// Worst relative error of the surrogate's gate gradients on one toy graph,
/// scaled by the unpruned cost so the check is unit-free.
pub fn surrogate_error(seed: u64) -> f64 {
    let configs = toy_configs();
    let g = NetworkGraph::build(&configs[seed as usize % configs.len()], seed).unwrap();
    let c0 = flops::architecture_flops(&g) as f64;
    let mut r = rng(seed + 900);
    let inputs: Vec<Tensor> = g
        .gated_layers()
        .iter()
        .map(|&l| Tensor::from_vec((0..g.layers[l].n_out).map(|_| r.random_range(0.05..1.0)).collect()))
        .collect();
    let layers = g.gated_layers();
    grad_check(&inputs, STEP, FLOOR, |t, v| {
        let mut live = vec![None; g.layers.len()];
        for (&l, &x) in layers.iter().zip(v) {
            live[l] = Some(x);
        }
        let s = flops::total_flops_surrogate(&g, t, &live)?;
        Ok(t.scale(s, 1.0 / c0))
    })
}
