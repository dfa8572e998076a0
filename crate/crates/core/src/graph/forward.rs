use super::{LayerKind, NetworkGraph, Source, BN_EPS, BN_MOMENTUM};
use crate::autodiff::{BatchNormArgs, Gradients, NormMode, RunningStats, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Where the gate multipliers of a forward pass come from.
#[derive(Debug, Clone, Copy)]
pub enum GateSource<'a> {
    /// The graph's own gate vectors, as constants.
    Stored,
    /// No gating at all.
    Disabled,
    /// Live tape values indexed by layer (e.g. produced by Dagger modules).
    External(&'a [Option<Var>]),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamSlot {
    Weight,
    Bias,
}

#[derive(Debug)]
pub struct ForwardPass {
    pub logits: Var,
    /// Output of each layer after any gates applied at it.
    pub layer_outputs: Vec<Var>,
    /// Tape leaves for the weights, present when weights were tracked.
    pub params: Vec<(usize, ParamSlot, Var)>,
    /// Updated batch-norm statistics from train-mode passes.
    pub running_stats: Vec<(usize, RunningStats)>,
}

impl NetworkGraph {
    /// Records the gated forward pass on `tape`. Each gated layer's output
    /// channel `i` (taken after its batch-norm, if one directly follows) is
    /// multiplied by gate `i`. With `track_weights` the weights become
    /// gradient-carrying leaves.
    pub fn forward(
        &self,
        tape: &mut Tape,
        input: Var,
        gates: GateSource<'_>,
        mode: NormMode,
        track_weights: bool,
    ) -> Result<ForwardPass> {
        let xs = tape.value(input).shape().to_vec();
        if xs.len() != 4 || xs[1..] != self.input_shape {
            return Err(Error::shape(
                format!("{} input batch", self.name),
                format!("[N, {}, {}, {}]", self.input_shape[0], self.input_shape[1], self.input_shape[2]),
                &xs,
            ));
        }
        let batch = xs[0];
        if let GateSource::External(ext) = gates {
            if ext.len() != self.layers.len() {
                return Err(Error::shape("external gate table", self.layers.len(), ext.len()));
            }
        }
        let mut outputs: Vec<Var> = Vec::with_capacity(self.layers.len());
        let mut params = Vec::new();
        let mut running_stats = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            let src = |s: Source| match s {
                Source::Input => input,
                Source::Layer(j) => outputs[j],
            };
            let x = src(l.inputs[0]);
            let w = &self.weights[i];
            let mut leaf = |tape: &mut Tape, slot: ParamSlot| -> Option<Var> {
                let p = match slot {
                    ParamSlot::Weight => w.weight.as_ref(),
                    ParamSlot::Bias => w.bias.as_ref(),
                }?;
                let v = tape.leaf(p.tensor.clone(), track_weights);
                if track_weights {
                    params.push((i, slot, v));
                }
                Some(v)
            };
            let ctx = |e: Error| match e {
                Error::Shape { context, expected, actual } => Error::Shape {
                    context: format!("layer `{}` {context}", l.id),
                    expected,
                    actual,
                },
                other => other,
            };
            let mut y = match l.kind {
                LayerKind::Conv | LayerKind::DepthwiseConv => {
                    let wv = leaf(tape, ParamSlot::Weight).expect("conv weight");
                    let groups = if l.kind == LayerKind::DepthwiseConv { l.n_out } else { 1 };
                    let mut y = tape.conv2d(x, wv, l.stride, l.padding, groups).map_err(ctx)?;
                    if let Some(b) = leaf(tape, ParamSlot::Bias) {
                        y = add_channel_bias(tape, y, b)?;
                    }
                    y
                }
                LayerKind::Linear => {
                    let flat = tape.reshape(x, &[batch, l.in_shape.iter().product()])?;
                    let wv = leaf(tape, ParamSlot::Weight).expect("linear weight");
                    let b = leaf(tape, ParamSlot::Bias);
                    let y = tape.linear(flat, wv, b).map_err(ctx)?;
                    tape.reshape(y, &[batch, l.n_out, 1, 1])?
                }
                LayerKind::Batchnorm => {
                    let gamma = leaf(tape, ParamSlot::Weight).expect("bn gamma");
                    let beta = leaf(tape, ParamSlot::Bias).expect("bn beta");
                    let args = BatchNormArgs {
                        running_mean: &w.running_mean,
                        running_var: &w.running_var,
                        mode,
                        eps: BN_EPS,
                        momentum: BN_MOMENTUM,
                    };
                    let (y, stats) = tape.batchnorm(x, gamma, beta, args).map_err(ctx)?;
                    if let Some(s) = stats {
                        running_stats.push((i, s));
                    }
                    y
                }
                LayerKind::Activation => tape.activation(x, l.activation.expect("resolved").into()),
                LayerKind::Avgpool => match l.window {
                    Some(win) => tape.avgpool(x, win, l.stride).map_err(ctx)?,
                    None => tape.global_avgpool(x).map_err(ctx)?,
                },
                LayerKind::Add => tape.add(x, src(l.inputs[1])).map_err(ctx)?,
            };
            for &g in self.gates_applied_at(i) {
                let scale = match gates {
                    GateSource::Disabled => None,
                    GateSource::Stored => {
                        let gv = self.gates[g].as_ref().expect("gated layer has gates");
                        if gv.len() != self.layers[g].n_out {
                            return Err(Error::shape(
                                format!("layer `{}` gate length", self.layers[g].id),
                                self.layers[g].n_out,
                                gv.len(),
                            ));
                        }
                        Some(tape.constant(Tensor::from_vec(gv.values.clone())))
                    }
                    GateSource::External(ext) => {
                        let v = ext[g].ok_or_else(|| {
                            Error::Invalid(format!("no external gates for layer `{}`", self.layers[g].id))
                        })?;
                        if tape.value(v).numel() != self.layers[g].n_out {
                            return Err(Error::shape(
                                format!("layer `{}` gate length", self.layers[g].id),
                                self.layers[g].n_out,
                                tape.value(v).numel(),
                            ));
                        }
                        Some(v)
                    }
                };
                if let Some(s) = scale {
                    y = tape.channel_scale(y, s)?;
                }
            }
            outputs.push(y);
        }
        let last = *outputs.last().expect("non-empty graph");
        let logits = tape.reshape(last, &[batch, self.classes()])?;
        Ok(ForwardPass {
            logits,
            layer_outputs: outputs,
            params,
            running_stats,
        })
    }

    /// Eval-mode logits as a plain tensor.
    pub fn logits(&self, batch: &Tensor, gates: GateSource<'_>) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(batch.clone());
        let pass = self.forward(&mut tape, x, gates, NormMode::Eval, false)?;
        Ok(tape.value(pass.logits).clone())
    }

    pub fn apply_running_stats(&mut self, stats: Vec<(usize, RunningStats)>) {
        for (i, s) in stats {
            self.weights[i].running_mean = s.mean;
            self.weights[i].running_var = s.var;
        }
    }

    /// Adds the gradients of tracked weight leaves into the parameters.
    pub fn accumulate_grads(&mut self, pass: &ForwardPass, grads: &Gradients) {
        for &(i, slot, v) in &pass.params {
            let p = match slot {
                ParamSlot::Weight => self.weights[i].weight.as_mut(),
                ParamSlot::Bias => self.weights[i].bias.as_mut(),
            }
            .expect("tracked parameter exists");
            match grads.get(v) {
                Some(g) => p.accumulate_grad(g),
                None => p.accumulate_grad(&vec![0.0; p.tensor.numel()]),
            }
        }
    }
}

fn add_channel_bias(tape: &mut Tape, y: Var, b: Var) -> Result<Var> {
    // broadcast bias [C] over [N, C, H, W] through a ones tensor scaled per channel
    let shape = tape.value(y).shape().to_vec();
    let ones = tape.constant(Tensor::ones(&shape));
    let spread = tape.channel_scale(ones, b)?;
    tape.add(y, spread)
}
