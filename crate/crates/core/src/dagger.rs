//! Weight-driven gate generation.
//!
//! Each gated layer owns a small module that reads only the layer's kernel:
//!
//! ```text
//! g = sigmoid(fc2(relu(fc1(center(avgpool(W)))))) + offset
//! ```
//!
//! Because the input is the kernel and never an activation, the gates are a
//! pure function of `(params, kernel)`.

use std::hash::{Hash, Hasher};

use rand_distr::{Distribution, Uniform};

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{GateStatus, NetworkGraph};
use crate::rng;
use crate::tensor::{Parameter, Tensor};

/// Hidden width of the first fully-connected stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HiddenRule {
    /// `max(8, n / 4)`.
    #[default]
    Quarter,
    Fixed(usize),
}

impl HiddenRule {
    pub fn width(self, n: usize) -> usize {
        match self {
            HiddenRule::Quarter => (n / 4).max(8),
            HiddenRule::Fixed(h) => h.max(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DaggerParams {
    pub layer: usize,
    /// `[hidden, n]`
    pub fc1_weight: Parameter,
    pub fc1_bias: Parameter,
    /// `[n, hidden]`
    pub fc2_weight: Parameter,
    pub fc2_bias: Parameter,
    pub offset: f64,
    /// `false` for pruned filters: their pooled input is zeroed and their gate
    /// is forced to exactly 0.
    pub live: Vec<bool>,
}

/// Per-filter mean of `kernel` over every non-filter axis, centered so the
/// result sums to zero.
pub fn pool_and_normalize(kernel: &Tensor) -> Result<Vec<f64>> {
    pool_masked(kernel, None)
}

fn pool_masked(kernel: &Tensor, live: Option<&[bool]>) -> Result<Vec<f64>> {
    if kernel.rank() != 4 && kernel.rank() != 2 {
        return Err(Error::shape("dagger kernel rank", "2 or 4", kernel.rank()));
    }
    let mut pooled = kernel.mean_trailing();
    let keep = |i: usize| live.is_none_or(|l| l[i]);
    let n_live = (0..pooled.len()).filter(|&i| keep(i)).count();
    if n_live == 0 {
        return Ok(vec![0.0; pooled.len()]);
    }
    let mean = (0..pooled.len()).filter(|&i| keep(i)).map(|i| pooled[i]).sum::<f64>() / n_live as f64;
    for (i, v) in pooled.iter_mut().enumerate() {
        *v = if keep(i) { *v - mean } else { 0.0 };
    }
    Ok(pooled)
}

/// Tape handles of one module's parameters.
#[derive(Debug, Clone, Copy)]
pub struct DaggerVars {
    pub fc1_weight: Var,
    pub fc1_bias: Var,
    pub fc2_weight: Var,
    pub fc2_bias: Var,
}

impl DaggerParams {
    pub fn new(layer: usize, n: usize, hidden: usize, rng: &mut rng::Rng) -> Self {
        // fan-in uniform like a default fully-connected init; fc2 starts at zero
        let bound = 1.0 / (n as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let mut draw = |len: usize| -> Vec<f64> { (0..len).map(|_| dist.sample(rng)).collect() };
        let fc1_w = draw(hidden * n);
        let fc1_b = draw(hidden);
        DaggerParams {
            layer,
            fc1_weight: Parameter::new(Tensor::new(vec![hidden, n], fc1_w).expect("sized")),
            fc1_bias: Parameter::new(Tensor::from_vec(fc1_b)),
            fc2_weight: Parameter::new(Tensor::zeros(&[n, hidden])),
            fc2_bias: Parameter::new(Tensor::zeros(&[n])),
            offset: 0.5,
            live: vec![true; n],
        }
    }

    pub fn n(&self) -> usize {
        self.fc2_bias.tensor.numel()
    }

    pub fn hidden(&self) -> usize {
        self.fc1_bias.tensor.numel()
    }

    /// Zeroes the second stage and sets the offset to 0.5, so every live gate
    /// is exactly `sigmoid(0) + 0.5 = 1`.
    pub fn align(&mut self) {
        for p in [&mut self.fc2_weight, &mut self.fc2_bias] {
            p.tensor.data_mut().iter_mut().for_each(|v| *v = 0.0);
            p.momentum.iter_mut().for_each(|v| *v = 0.0);
            p.grad = None;
        }
        self.offset = 0.5;
    }

    /// Records gate generation on `tape`, returning the `[n]` gate variable.
    pub fn gates_on_tape(&self, tape: &mut Tape, kernel: &Tensor, track: bool) -> Result<(Var, DaggerVars)> {
        let n = self.n();
        if kernel.shape().first() != Some(&n) {
            return Err(Error::shape(format!("dagger input for layer {}", self.layer), n, kernel.shape()));
        }
        let pooled = pool_masked(kernel, Some(&self.live))?;
        let x = tape.constant(Tensor::new(vec![1, n], pooled)?);
        let vars = DaggerVars {
            fc1_weight: tape.leaf(self.fc1_weight.tensor.clone(), track),
            fc1_bias: tape.leaf(self.fc1_bias.tensor.clone(), track),
            fc2_weight: tape.leaf(self.fc2_weight.tensor.clone(), track),
            fc2_bias: tape.leaf(self.fc2_bias.tensor.clone(), track),
        };
        let h = tape.linear(x, vars.fc1_weight, Some(vars.fc1_bias))?;
        let h = tape.relu(h);
        let z = tape.linear(h, vars.fc2_weight, Some(vars.fc2_bias))?;
        let s = tape.sigmoid(z);
        let g = tape.add_scalar(s, self.offset);
        let g = tape.reshape(g, &[n])?;
        let g = if self.live.iter().all(|&l| l) {
            g
        } else {
            let mask = tape.constant(Tensor::from_vec(self.live.iter().map(|&l| f64::from(u8::from(l))).collect()));
            tape.mul(g, mask)?
        };
        Ok((g, vars))
    }

    /// Gate values as plain numbers.
    pub fn generate_gates(&self, kernel: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let (g, _) = self.gates_on_tape(&mut tape, kernel, false)?;
        Ok(tape.value(g).data().to_vec())
    }

    pub fn parameters_mut(&mut self) -> [&mut Parameter; 4] {
        [&mut self.fc1_weight, &mut self.fc1_bias, &mut self.fc2_weight, &mut self.fc2_bias]
    }

    pub fn parameters(&self) -> [&Parameter; 4] {
        [&self.fc1_weight, &self.fc1_bias, &self.fc2_weight, &self.fc2_bias]
    }

    pub fn accumulate_grads(&mut self, vars: &DaggerVars, grads: &Gradients) {
        let handles = [vars.fc1_weight, vars.fc1_bias, vars.fc2_weight, vars.fc2_bias];
        for (p, v) in self.parameters_mut().into_iter().zip(handles) {
            match grads.get(v) {
                Some(g) => p.accumulate_grad(g),
                None => p.accumulate_grad(&vec![0.0; p.tensor.numel()]),
            }
        }
    }
}

/// One module per gated layer, in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct DaggerBank {
    pub modules: Vec<DaggerParams>,
}

/// Live gates of every gated layer on a tape, with the module handles needed
/// to route gradients back.
#[derive(Debug)]
pub struct LiveGates {
    /// Indexed like `graph.layers`.
    pub gates: Vec<Option<Var>>,
    pub vars: Vec<DaggerVars>,
}

impl DaggerBank {
    /// A born-aligned bank: random first stage, zero second stage, offset 0.5.
    pub fn init(graph: &NetworkGraph, rule: HiddenRule, seed: u64) -> Self {
        let modules = graph
            .gated_layers()
            .into_iter()
            .map(|i| {
                let n = graph.layers[i].n_out;
                let mut r = rng::stream(seed, rng::tag(&format!("dagger:{}", graph.layers[i].id)));
                let mut m = DaggerParams::new(i, n, rule.width(n), &mut r);
                if let Some(g) = graph.gate(i) {
                    m.live = g.status.iter().map(|&s| s != GateStatus::Pruned).collect();
                }
                m
            })
            .collect();
        DaggerBank { modules }
    }

    pub fn len(&self) -> usize {
        self.modules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modules.is_empty()
    }

    pub fn get(&self, layer: usize) -> Option<&DaggerParams> {
        self.modules.iter().find(|m| m.layer == layer)
    }

    pub fn get_mut(&mut self, layer: usize) -> Option<&mut DaggerParams> {
        self.modules.iter_mut().find(|m| m.layer == layer)
    }

    pub fn align(&mut self) {
        self.modules.iter_mut().for_each(DaggerParams::align);
    }

    /// Copies pruned statuses from the graph into the module masks.
    pub fn sync_masks(&mut self, graph: &NetworkGraph) {
        for m in &mut self.modules {
            if let Some(g) = graph.gate(m.layer) {
                m.live = g.status.iter().map(|&s| s != GateStatus::Pruned).collect();
            }
        }
    }

    fn kernel(graph: &NetworkGraph, layer: usize) -> Result<&Tensor> {
        graph.weights[layer]
            .weight
            .as_ref()
            .map(|p| &p.tensor)
            .ok_or_else(|| Error::Invalid(format!("layer `{}` has no kernel", graph.layers[layer].id)))
    }

    pub fn live_gates(&self, graph: &NetworkGraph, tape: &mut Tape, track: bool) -> Result<LiveGates> {
        let mut gates = vec![None; graph.layers.len()];
        let mut vars = Vec::with_capacity(self.modules.len());
        for m in &self.modules {
            let (g, v) = m.gates_on_tape(tape, Self::kernel(graph, m.layer)?, track)?;
            gates[m.layer] = Some(g);
            vars.push(v);
        }
        Ok(LiveGates { gates, vars })
    }

    /// Current gate values of every module, indexed like `graph.layers`.
    pub fn gate_values(&self, graph: &NetworkGraph) -> Result<Vec<Option<Vec<f64>>>> {
        let mut out = vec![None; graph.layers.len()];
        for m in &self.modules {
            out[m.layer] = Some(m.generate_gates(Self::kernel(graph, m.layer)?)?);
        }
        Ok(out)
    }

    pub fn accumulate_grads(&mut self, live: &LiveGates, grads: &Gradients) {
        for (m, v) in self.modules.iter_mut().zip(&live.vars) {
            m.accumulate_grads(v, grads);
        }
    }

    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.modules.iter_mut().flat_map(|m| m.parameters_mut())
    }

    pub fn zero_grad(&mut self) {
        self.parameters_mut().for_each(Parameter::zero_grad);
    }

    /// Order-sensitive hash of every parameter, offset and mask.
    pub fn checksum(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for m in &self.modules {
            m.layer.hash(&mut h);
            for p in m.parameters() {
                p.data().iter().for_each(|v| v.to_bits().hash(&mut h));
            }
            m.offset.to_bits().hash(&mut h);
            m.live.hash(&mut h);
        }
        h.finish()
    }
}
