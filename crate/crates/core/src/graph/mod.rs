//! Gated network graphs.
//!
//! A [`NetworkGraph`] is a topologically ordered list of [`LayerSpec`]s with
//! their weights and, for every gated conv/linear layer, a [`GateVector`] that
//! scales the layer's output channels during the forward pass.

pub mod config;
mod forward;
mod materialize;
pub mod spaces;

use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Parameter, Tensor};

pub use config::{ActivationKind, KernelSize, LayerConfig, LayerKind, NetworkConfig};
pub use forward::{ForwardPass, GateSource, ParamSlot};
pub use spaces::{ChannelSpaces, Space};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Source {
    Input,
    Layer(usize),
}

/// One resolved layer with its inferred shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub id: String,
    pub kind: LayerKind,
    /// Output channels (filters for conv/linear).
    pub n_out: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    pub inputs: Vec<Source>,
    pub gated: bool,
    pub bias: bool,
    pub activation: Option<ActivationKind>,
    /// Avgpool window; `None` is a global pool.
    pub window: Option<usize>,
    /// `[C, H, W]` of the (first) input.
    pub in_shape: [usize; 3],
    /// `[C, H, W]` of the output.
    pub out_shape: [usize; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateStatus {
    Active,
    Pruned,
    Retained,
}

impl GateStatus {
    pub fn code(self) -> char {
        match self {
            GateStatus::Active => 'a',
            GateStatus::Pruned => 'p',
            GateStatus::Retained => 'r',
        }
    }

    pub fn from_code(c: char) -> Option<Self> {
        match c {
            'a' => Some(GateStatus::Active),
            'p' => Some(GateStatus::Pruned),
            'r' => Some(GateStatus::Retained),
            _ => None,
        }
    }
}

/// Per-filter gates of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GateVector {
    pub layer: usize,
    pub values: Vec<f64>,
    pub status: Vec<GateStatus>,
}

impl GateVector {
    pub fn ones(layer: usize, n: usize) -> Self {
        GateVector {
            layer,
            values: vec![1.0; n],
            status: vec![GateStatus::Active; n],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `||g||_0`.
    pub fn count_nonzero(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0.0).count()
    }

    pub fn prune(&mut self, i: usize) {
        self.values[i] = 0.0;
        self.status[i] = GateStatus::Pruned;
    }

    pub fn retain(&mut self, i: usize) {
        self.values[i] = 1.0;
        self.status[i] = GateStatus::Retained;
    }

    pub fn is_pruned(&self, i: usize) -> bool {
        self.status[i] == GateStatus::Pruned
    }
}

/// Trainable tensors and buffers of one layer. Batch-norm stores gamma in
/// `weight` and beta in `bias`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerWeights {
    pub weight: Option<Parameter>,
    pub bias: Option<Parameter>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGraph {
    pub name: String,
    pub input_shape: [usize; 3],
    pub gate_classifier: bool,
    pub layers: Vec<LayerSpec>,
    pub weights: Vec<LayerWeights>,
    pub gates: Vec<Option<GateVector>>,
    spaces: ChannelSpaces,
    /// For each layer, the gated layers whose gates are applied to its output.
    gate_points: Vec<Vec<usize>>,
}

impl NetworkGraph {
    /// Resolves, shape-checks and initializes a network. Weights use
    /// fan-in-scaled normal draws from the `(seed, layer id)` stream; gates
    /// start at 1 with status active.
    pub fn build(config: &NetworkConfig, seed: u64) -> Result<Self> {
        let layers = resolve(config)?;
        let weights = layers.iter().map(|l| init_weights(l, seed)).collect::<Result<Vec<_>>>()?;
        let gates = layers
            .iter()
            .enumerate()
            .map(|(i, l)| l.gated.then(|| GateVector::ones(i, l.n_out)))
            .collect();
        Self::assemble(config.name.clone(), config.input, config.gate_classifier, layers, weights, gates)
    }

    pub(crate) fn assemble(
        name: String,
        input_shape: [usize; 3],
        gate_classifier: bool,
        layers: Vec<LayerSpec>,
        weights: Vec<LayerWeights>,
        gates: Vec<Option<GateVector>>,
    ) -> Result<Self> {
        let spaces = spaces::build(&layers, input_shape[0]);
        for s in &spaces.spaces {
            if s.members.iter().any(|&m| layers[m].n_out != s.width) {
                return Err(Error::Graph("channel space with inconsistent widths".into()));
            }
        }
        let gate_points = gate_points(&layers);
        Ok(NetworkGraph {
            name,
            input_shape,
            gate_classifier,
            layers,
            weights,
            gates,
            spaces,
            gate_points,
        })
    }

    pub fn spaces(&self) -> &ChannelSpaces {
        &self.spaces
    }

    pub fn layer_index(&self, id: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.id == id)
    }

    pub fn output_layer(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn classes(&self) -> usize {
        self.layers[self.output_layer()].n_out
    }

    /// Indices of layers carrying gates, in layer order.
    pub fn gated_layers(&self) -> Vec<usize> {
        (0..self.layers.len()).filter(|&i| self.gates[i].is_some()).collect()
    }

    pub fn gate(&self, layer: usize) -> Option<&GateVector> {
        self.gates[layer].as_ref()
    }

    pub fn gate_mut(&mut self, layer: usize) -> Option<&mut GateVector> {
        self.gates[layer].as_mut()
    }

    /// Total number of individual gates.
    pub fn gate_count(&self) -> usize {
        self.gates.iter().flatten().map(GateVector::len).sum()
    }

    /// Layers whose output is scaled by `layer`'s gates: the layer itself, or
    /// its sole batch-norm consumer.
    pub fn gate_point(&self, layer: usize) -> Option<usize> {
        self.gate_points.iter().position(|g| g.contains(&layer))
    }

    pub(crate) fn gates_applied_at(&self, layer: usize) -> &[usize] {
        &self.gate_points[layer]
    }

    pub fn parameters(&self) -> impl Iterator<Item = &Parameter> {
        self.weights.iter().flat_map(|w| w.weight.iter().chain(w.bias.iter()))
    }

    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.weights.iter_mut().flat_map(|w| w.weight.iter_mut().chain(w.bias.iter_mut()))
    }

    pub fn param_count(&self) -> usize {
        self.parameters().map(|p| p.tensor.numel()).sum()
    }

    /// Parameters a physically pruned network would keep: only weights
    /// connecting surviving channels are counted.
    pub fn effective_param_count(&self) -> usize {
        let kept = self.kept_channels();
        let live = |s: Source| kept[self.spaces.space_of(s)].len();
        self.layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let out = kept[self.spaces.of_layer[i]].len();
                match l.kind {
                    LayerKind::Conv => live(l.inputs[0]) * out * l.kernel.0 * l.kernel.1 + if l.bias { out } else { 0 },
                    LayerKind::DepthwiseConv => out * l.kernel.0 * l.kernel.1 + if l.bias { out } else { 0 },
                    LayerKind::Linear => {
                        live(l.inputs[0]) * l.in_shape[1] * l.in_shape[2] * out + if l.bias { out } else { 0 }
                    }
                    LayerKind::Batchnorm => 2 * out,
                    _ => 0,
                }
            })
            .sum()
    }

    /// Channel indices surviving in each space: the union of member supports,
    /// or every channel for pinned spaces.
    pub fn kept_channels(&self) -> Vec<Vec<usize>> {
        self.spaces
            .spaces
            .iter()
            .map(|s| {
                (0..s.width)
                    .filter(|&c| {
                        s.pinned
                            || s.members.is_empty()
                            || s.members.iter().any(|&m| self.gates[m].as_ref().is_some_and(|g| g.values[c] != 0.0))
                    })
                    .collect()
            })
            .collect()
    }

    /// Order-sensitive hash of every weight, bias and running statistic.
    pub fn weights_checksum(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for w in &self.weights {
            for p in w.weight.iter().chain(w.bias.iter()) {
                p.tensor.shape().hash(&mut h);
                p.data().iter().for_each(|v| v.to_bits().hash(&mut h));
            }
            w.running_mean.iter().chain(&w.running_var).for_each(|v| v.to_bits().hash(&mut h));
        }
        h.finish()
    }

    pub fn zero_grad(&mut self) {
        self.parameters_mut().for_each(Parameter::zero_grad);
    }

    /// Config describing exactly this graph (current widths, explicit fields).
    pub fn to_config(&self) -> NetworkConfig {
        let name_of = |s: &Source| match s {
            Source::Input => "input".to_string(),
            Source::Layer(i) => self.layers[*i].id.clone(),
        };
        let output = self.output_layer();
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let mut c = LayerConfig::new(l.kind);
                c.id = Some(l.id.clone());
                c.inputs = Some(l.inputs.iter().map(name_of).collect());
                match l.kind {
                    LayerKind::Conv | LayerKind::DepthwiseConv => {
                        if l.kind == LayerKind::Conv {
                            c.filters = Some(l.n_out);
                        }
                        c.kernel = Some(if l.kernel.0 == l.kernel.1 {
                            KernelSize::Square(l.kernel.0)
                        } else {
                            KernelSize::Rect([l.kernel.0, l.kernel.1])
                        });
                        c.stride = Some(l.stride);
                        c.padding = Some(l.padding);
                    }
                    LayerKind::Linear => c.filters = Some(l.n_out),
                    LayerKind::Activation => c.function = l.activation,
                    LayerKind::Avgpool => {
                        c.window = l.window;
                        c.stride = l.window.map(|_| l.stride);
                    }
                    _ => {}
                }
                if l.kind.is_weighted() {
                    c.bias = Some(l.bias);
                    if l.gated != default_gated(l.kind, i == output, self.gate_classifier) {
                        c.gated = Some(l.gated);
                    }
                }
                c
            })
            .collect();
        NetworkConfig {
            name: self.name.clone(),
            input: self.input_shape,
            gate_classifier: self.gate_classifier,
            layers,
        }
    }

    /// Lists every broken type invariant; empty when the graph is consistent.
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            match (&self.gates[i], l.gated) {
                (None, true) => out.push(format!("layer {}: gated layer without gate vector", l.id)),
                (Some(_), false) => out.push(format!("layer {}: gate vector on ungated layer", l.id)),
                _ => {}
            }
            if let Some(g) = &self.gates[i] {
                if g.values.len() != l.n_out || g.status.len() != l.n_out {
                    out.push(format!(
                        "layer {}: gate length {} (status {}) != {} filters",
                        l.id,
                        g.values.len(),
                        g.status.len(),
                        l.n_out
                    ));
                }
                for (j, (&v, &s)) in g.values.iter().zip(&g.status).enumerate() {
                    if !v.is_finite() || v < 0.0 {
                        out.push(format!("layer {}: gate {j} has invalid value {v}", l.id));
                    }
                    match s {
                        GateStatus::Pruned if v != 0.0 => {
                            out.push(format!("layer {}: pruned gate {j} has nonzero value {v}", l.id))
                        }
                        GateStatus::Retained if v != 1.0 => {
                            out.push(format!("layer {}: retained gate {j} has value {v} != 1", l.id))
                        }
                        _ => {}
                    }
                }
            }
            let want = expected_param_shapes(l);
            let w = &self.weights[i];
            for (what, param, shape) in [("weight", &w.weight, &want.0), ("bias", &w.bias, &want.1)] {
                let actual = param.as_ref().map(|p| p.shape().to_vec());
                if actual.as_ref() != shape.as_ref() {
                    out.push(format!("layer {}: {what} shape {actual:?}, expected {shape:?}", l.id));
                }
                if let Some(p) = param {
                    if p.momentum.len() != p.tensor.numel() {
                        out.push(format!("layer {}: {what} momentum buffer length mismatch", l.id));
                    }
                }
            }
            if l.kind == LayerKind::Batchnorm && (w.running_mean.len() != l.n_out || w.running_var.len() != l.n_out) {
                out.push(format!("layer {}: running statistics length mismatch", l.id));
            }
            if l.kind == LayerKind::Add {
                let widths: Vec<usize> = l.inputs.iter().map(|&s| self.source_shape(s)[0]).collect();
                if widths.len() != 2 || widths[0] != widths[1] {
                    out.push(format!("layer {}: add inputs have widths {widths:?}", l.id));
                }
            }
        }
        out
    }

    pub fn source_shape(&self, s: Source) -> [usize; 3] {
        match s {
            Source::Input => self.input_shape,
            Source::Layer(i) => self.layers[i].out_shape,
        }
    }
}

fn default_gated(kind: LayerKind, is_output: bool, gate_classifier: bool) -> bool {
    kind.is_weighted() && (!is_output || gate_classifier)
}

fn expected_param_shapes(l: &LayerSpec) -> (Option<Vec<usize>>, Option<Vec<usize>>) {
    let bias = |b: bool| b.then(|| vec![l.n_out]);
    match l.kind {
        LayerKind::Conv => (Some(vec![l.n_out, l.in_shape[0], l.kernel.0, l.kernel.1]), bias(l.bias)),
        LayerKind::DepthwiseConv => (Some(vec![l.n_out, 1, l.kernel.0, l.kernel.1]), bias(l.bias)),
        LayerKind::Linear => (Some(vec![l.n_out, l.in_shape.iter().product()]), bias(l.bias)),
        LayerKind::Batchnorm => (Some(vec![l.n_out]), Some(vec![l.n_out])),
        _ => (None, None),
    }
}

fn init_weights(l: &LayerSpec, seed: u64) -> Result<LayerWeights> {
    let (w_shape, b_shape) = expected_param_shapes(l);
    let mut rng = rng::stream(seed, rng::tag(&format!("init:{}", l.id)));
    let mut out = LayerWeights::default();
    if l.kind == LayerKind::Batchnorm {
        out.weight = Some(Parameter::new(Tensor::ones(&[l.n_out])));
        out.bias = Some(Parameter::new(Tensor::zeros(&[l.n_out])));
        out.running_mean = vec![0.0; l.n_out];
        out.running_var = vec![1.0; l.n_out];
        return Ok(out);
    }
    if let Some(shape) = w_shape {
        let fan_in: usize = shape[1..].iter().product();
        let std = (2.0 / fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std).map_err(|e| Error::Invalid(e.to_string()))?;
        let data = (0..shape.iter().product::<usize>()).map(|_| normal.sample(&mut rng)).collect();
        out.weight = Some(Parameter::new(Tensor::new(shape, data)?));
    }
    if let Some(shape) = b_shape {
        out.bias = Some(Parameter::new(Tensor::zeros(&shape)));
    }
    Ok(out)
}

fn gate_points(layers: &[LayerSpec]) -> Vec<Vec<usize>> {
    let mut consumers: Vec<Vec<usize>> = vec![Vec::new(); layers.len()];
    for (i, l) in layers.iter().enumerate() {
        for s in &l.inputs {
            if let Source::Layer(p) = s {
                consumers[*p].push(i);
            }
        }
    }
    let mut points = vec![Vec::new(); layers.len()];
    for (i, l) in layers.iter().enumerate() {
        if !l.gated {
            continue;
        }
        let at = match consumers[i].as_slice() {
            [c] if layers[*c].kind == LayerKind::Batchnorm => *c,
            _ => i,
        };
        points[at].push(i);
    }
    points
}

/// Resolves ids, defaults and shapes, and orders layers topologically.
fn resolve(config: &NetworkConfig) -> Result<Vec<LayerSpec>> {
    if config.layers.is_empty() {
        return Err(Error::Config("network has no layers".into()));
    }
    if config.input.contains(&0) {
        return Err(Error::Config(format!("input shape {:?} has a zero extent", config.input)));
    }
    let ids: Vec<String> = config
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| l.id.clone().unwrap_or_else(|| format!("l{i}")))
        .collect();
    let mut by_id = HashMap::new();
    for (i, id) in ids.iter().enumerate() {
        if id == "input" || by_id.insert(id.clone(), i).is_some() {
            return Err(Error::Config(format!("duplicate or reserved layer id `{id}`")));
        }
    }
    // raw input references (config order)
    let mut raw_inputs: Vec<Vec<Source>> = Vec::new();
    for (i, l) in config.layers.iter().enumerate() {
        let names = match &l.inputs {
            Some(v) => v.clone(),
            None if i == 0 => vec!["input".into()],
            None => vec![ids[i - 1].clone()],
        };
        let want = if l.kind == LayerKind::Add { 2 } else { 1 };
        if names.len() != want {
            return Err(Error::Config(format!("layer `{}` needs {want} input(s), got {}", ids[i], names.len())));
        }
        let srcs = names
            .iter()
            .map(|n| {
                if n == "input" {
                    Ok(Source::Input)
                } else {
                    by_id
                        .get(n)
                        .map(|&j| Source::Layer(j))
                        .ok_or_else(|| Error::Config(format!("layer `{}` references unknown input `{n}`", ids[i])))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        raw_inputs.push(srcs);
    }
    // Kahn's algorithm, stable in config order
    let n = config.layers.len();
    let mut indeg = vec![0usize; n];
    let mut consumers = vec![Vec::new(); n];
    for (i, srcs) in raw_inputs.iter().enumerate() {
        for s in srcs {
            if let Source::Layer(j) = s {
                indeg[i] += 1;
                consumers[*j].push(i);
            }
        }
    }
    let mut order = Vec::with_capacity(n);
    let mut ready: std::collections::BTreeSet<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    while let Some(i) = ready.pop_first() {
        order.push(i);
        for &c in &consumers[i] {
            indeg[c] -= 1;
            if indeg[c] == 0 {
                ready.insert(c);
            }
        }
    }
    if order.len() != n {
        let stuck: Vec<&str> = (0..n).filter(|i| !order.contains(i)).map(|i| ids[i].as_str()).collect();
        return Err(Error::Config(format!("layer graph has a cycle through {stuck:?}")));
    }
    let sinks: Vec<usize> = (0..n).filter(|&i| consumers[i].is_empty()).collect();
    if sinks.len() != 1 {
        let names: Vec<&str> = sinks.iter().map(|&i| ids[i].as_str()).collect();
        return Err(Error::Config(format!("network must have exactly one output, found {names:?}")));
    }
    let position: HashMap<usize, usize> = order.iter().enumerate().map(|(p, &i)| (i, p)).collect();
    let output = position[&sinks[0]];

    let mut specs: Vec<LayerSpec> = Vec::with_capacity(n);
    for (p, &i) in order.iter().enumerate() {
        let l = &config.layers[i];
        let id = &ids[i];
        let inputs: Vec<Source> = raw_inputs[i]
            .iter()
            .map(|s| match s {
                Source::Input => Source::Input,
                Source::Layer(j) => Source::Layer(position[j]),
            })
            .collect();
        let shape_of = |s: &Source| match s {
            Source::Input => config.input,
            Source::Layer(j) => specs[*j].out_shape,
        };
        let in_shape = shape_of(&inputs[0]);
        let [c, h, w] = in_shape;
        let cfg_err = |m: String| Error::Config(format!("layer `{id}`: {m}"));
        let mut spec = LayerSpec {
            id: id.clone(),
            kind: l.kind,
            n_out: c,
            kernel: (1, 1),
            stride: l.stride.unwrap_or(1),
            padding: l.padding.unwrap_or(0),
            inputs: inputs.clone(),
            gated: false,
            bias: l.bias.unwrap_or(l.kind == LayerKind::Linear),
            activation: None,
            window: None,
            in_shape,
            out_shape: in_shape,
        };
        if spec.stride == 0 {
            return Err(cfg_err("stride must be positive".into()));
        }
        let spatial = |k: (usize, usize), s: usize, pad: usize| -> Result<(usize, usize)> {
            if h + 2 * pad < k.0 || w + 2 * pad < k.1 {
                return Err(cfg_err(format!("kernel {k:?} larger than padded input {h}x{w}")));
            }
            Ok(((h + 2 * pad - k.0) / s + 1, (w + 2 * pad - k.1) / s + 1))
        };
        match l.kind {
            LayerKind::Conv => {
                let f = l.filters.ok_or_else(|| cfg_err("conv needs `filters`".into()))?;
                spec.kernel = l.kernel.map(KernelSize::dims).unwrap_or((1, 1));
                let (oh, ow) = spatial(spec.kernel, spec.stride, spec.padding)?;
                spec.n_out = f;
                spec.out_shape = [f, oh, ow];
            }
            LayerKind::DepthwiseConv => {
                if let Some(f) = l.filters {
                    if f != c {
                        return Err(cfg_err(format!("depthwise filters {f} must equal input channels {c}")));
                    }
                }
                spec.kernel = l.kernel.map(KernelSize::dims).unwrap_or((3, 3));
                let (oh, ow) = spatial(spec.kernel, spec.stride, spec.padding)?;
                spec.out_shape = [c, oh, ow];
            }
            LayerKind::Linear => {
                let f = l.filters.ok_or_else(|| cfg_err("linear needs `filters`".into()))?;
                spec.n_out = f;
                spec.out_shape = [f, 1, 1];
                spec.stride = 1;
                spec.padding = 0;
            }
            LayerKind::Batchnorm => {
                if let Some(f) = l.filters {
                    if f != c {
                        return Err(cfg_err(format!("batchnorm width {f} != input channels {c}")));
                    }
                }
                spec.bias = false;
            }
            LayerKind::Activation => {
                spec.activation = Some(l.function.unwrap_or(ActivationKind::Relu));
                spec.bias = false;
            }
            LayerKind::Avgpool => {
                spec.bias = false;
                spec.padding = 0;
                match l.window {
                    Some(win) => {
                        let s = l.stride.unwrap_or(win);
                        if win == 0 || win > h || win > w || (h - win) % s != 0 || (w - win) % s != 0 {
                            return Err(cfg_err(format!("avgpool window {win} stride {s} does not tile {h}x{w}")));
                        }
                        spec.window = Some(win);
                        spec.stride = s;
                        spec.kernel = (win, win);
                        spec.out_shape = [c, (h - win) / s + 1, (w - win) / s + 1];
                    }
                    None => {
                        spec.stride = 1;
                        spec.kernel = (h, w);
                        spec.out_shape = [c, 1, 1];
                    }
                }
            }
            LayerKind::Add => {
                let other = shape_of(&inputs[1]);
                if other != in_shape {
                    return Err(Error::Config(format!(
                        "add `{id}` joins mismatched branches: {in_shape:?} vs {other:?}"
                    )));
                }
                spec.bias = false;
            }
        }
        if let Some(f) = l.filters {
            if f == 0 {
                return Err(cfg_err("filters must be >= 1".into()));
            }
        }
        let is_output = p == output;
        spec.gated = l
            .gated
            .unwrap_or_else(|| default_gated(l.kind, is_output, config.gate_classifier))
            && l.kind.is_weighted();
        if is_output && spec.out_shape[1..] != [1, 1] {
            return Err(Error::Config(format!("output layer `{id}` must produce [classes, 1, 1], got {:?}", spec.out_shape)));
        }
        specs.push(spec);
    }
    Ok(specs)
}
