use super::{GateStatus, GateVector, LayerKind, LayerWeights, NetworkGraph};
use crate::error::{Error, Result};
use crate::tensor::{Parameter, Tensor};

impl NetworkGraph {
    /// Physically removes pruned filters.
    ///
    /// Every channel space keeps the union of its members' surviving channels,
    /// so layers joined by a residual add (or a depthwise tie) keep identical
    /// channel sets. A member whose own gate is zero on a kept channel keeps
    /// that zero gate, which leaves the function unchanged.
    pub fn materialize_pruned(&self) -> Result<NetworkGraph> {
        for (i, g) in self.gates.iter().enumerate() {
            let Some(g) = g else { continue };
            let id = &self.layers[i].id;
            if g.status.contains(&GateStatus::Active) {
                return Err(Error::Invalid(format!("layer `{id}` still has active gates; decide every gate first")));
            }
            if !g.status.contains(&GateStatus::Retained) {
                return Err(Error::Invalid(format!("layer `{id}` would lose every filter")));
            }
        }
        let kept = self.kept_channels();
        let spaces = self.spaces();
        let mut layers = self.layers.clone();
        let mut weights = Vec::with_capacity(layers.len());
        let mut gates = Vec::with_capacity(layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let out_keep = &kept[spaces.of_layer[i]];
            let in_keep = &kept[spaces.space_of(l.inputs[0])];
            let spec = &mut layers[i];
            spec.n_out = out_keep.len();
            spec.out_shape[0] = out_keep.len();
            spec.in_shape[0] = in_keep.len();

            let w = &self.weights[i];
            let rows_only = |p: &Option<Parameter>| p.as_ref().map(|p| select(p, out_keep, &[0], 1, 1));
            let new_w = match l.kind {
                LayerKind::Conv => LayerWeights {
                    weight: w
                        .weight
                        .as_ref()
                        .map(|p| select(p, out_keep, in_keep, l.in_shape[0], l.kernel.0 * l.kernel.1)),
                    bias: rows_only(&w.bias),
                    ..LayerWeights::default()
                },
                LayerKind::DepthwiseConv => LayerWeights {
                    weight: w.weight.as_ref().map(|p| select(p, out_keep, &[0], 1, l.kernel.0 * l.kernel.1)),
                    bias: rows_only(&w.bias),
                    ..LayerWeights::default()
                },
                LayerKind::Linear => LayerWeights {
                    weight: w
                        .weight
                        .as_ref()
                        .map(|p| select(p, out_keep, in_keep, l.in_shape[0], l.in_shape[1] * l.in_shape[2])),
                    bias: rows_only(&w.bias),
                    ..LayerWeights::default()
                },
                LayerKind::Batchnorm => LayerWeights {
                    weight: rows_only(&w.weight),
                    bias: rows_only(&w.bias),
                    running_mean: out_keep.iter().map(|&c| w.running_mean[c]).collect(),
                    running_var: out_keep.iter().map(|&c| w.running_var[c]).collect(),
                },
                _ => LayerWeights::default(),
            };
            weights.push(new_w);
            gates.push(self.gates[i].as_ref().map(|g| GateVector {
                layer: i,
                values: out_keep.iter().map(|&c| g.values[c]).collect(),
                status: out_keep.iter().map(|&c| g.status[c]).collect(),
            }));
        }
        NetworkGraph::assemble(
            self.name.clone(),
            self.input_shape,
            self.gate_classifier,
            layers,
            weights,
            gates,
        )
    }
}

/// Selects `rows` of the leading axis and `cols` of the second axis from a
/// parameter laid out as `[out, in_total, inner]`.
fn select(p: &Parameter, rows: &[usize], cols: &[usize], in_total: usize, inner: usize) -> Parameter {
    let pick = |data: &[f64]| -> Vec<f64> {
        let mut out = Vec::with_capacity(rows.len() * cols.len() * inner);
        for &r in rows {
            for &c in cols {
                let start = (r * in_total + c) * inner;
                out.extend_from_slice(&data[start..start + inner]);
            }
        }
        out
    };
    let mut shape = p.shape().to_vec();
    shape[0] = rows.len();
    if shape.len() > 1 {
        let spatial: usize = shape[2..].iter().product();
        shape[1] = cols.len() * inner / spatial.max(1);
    }
    let tensor = Tensor::new(shape, pick(p.data())).expect("selection preserves layout");
    Parameter {
        momentum: pick(&p.momentum),
        tensor,
        grad: None,
    }
}
