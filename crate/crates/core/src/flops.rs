//! Multiply-accumulate accounting over gate supports.
//!
//! Only conv, depthwise conv and linear layers are counted:
//!
//! | layer     | MACs                                               |
//! |-----------|----------------------------------------------------|
//! | conv      | `‖g_in‖ · kh · kw · h_out · w_out · ‖g_out‖`         |
//! | depthwise | `‖g‖ · kh · kw · h_out · w_out`                      |
//! | linear    | `‖g_in‖ · h_in · w_in · ‖g_out‖`                     |
//!
//! The exact count uses `‖·‖₀` of the hard union of every gate vector sharing
//! a channel space; the surrogate uses `‖·‖₁` of the soft union
//! `1 - Π(1 - g)`, which is differentiable and coincides with the exact count
//! whenever gates are binary. Totals are in MACs, not 2×MACs.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{LayerKind, NetworkGraph};
use crate::tensor::Tensor;

/// Hard FLOPs constraint `C` relative to the unpruned cost `C0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlopsBudget {
    pub target: u64,
    pub pretrained: u64,
    pub acceleration: Option<f64>,
}

impl FlopsBudget {
    pub fn new(target: u64, pretrained: u64) -> Result<Self> {
        if target == 0 || target > pretrained {
            return Err(Error::Invalid(format!(
                "budget must satisfy 0 < C <= C0, got C = {target}, C0 = {pretrained}"
            )));
        }
        Ok(FlopsBudget {
            target,
            pretrained,
            acceleration: None,
        })
    }

    /// `C = C0 / r`, rounded down to whole MACs.
    pub fn from_acceleration(pretrained: u64, r: f64) -> Result<Self> {
        if !(r >= 1.0) || !r.is_finite() {
            return Err(Error::Invalid(format!("acceleration rate must be >= 1, got {r}")));
        }
        let target = (pretrained as f64 / r).floor() as u64;
        let mut b = Self::new(target, pretrained)?;
        b.acceleration = Some(r);
        Ok(b)
    }

    pub fn ratio(&self) -> f64 {
        self.target as f64 / self.pretrained as f64
    }
}

pub fn budget_from_acceleration(pretrained: u64, r: f64) -> Result<FlopsBudget> {
    FlopsBudget::from_acceleration(pretrained, r)
}

/// Cost structure of one counted layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerFlopsRule {
    pub layer: usize,
    pub kind: LayerKind,
    pub out_hw: (usize, usize),
    pub kernel: (usize, usize),
    /// `h_in · w_in` folded into each input channel of a linear layer.
    pub in_spatial: usize,
    pub in_space: usize,
    pub out_space: usize,
}

impl LayerFlopsRule {
    /// MACs per (input channel, output channel) pair, or per channel for depthwise.
    fn unit(&self) -> u64 {
        match self.kind {
            LayerKind::Linear => self.in_spatial as u64,
            _ => (self.kernel.0 * self.kernel.1 * self.out_hw.0 * self.out_hw.1) as u64,
        }
    }

    fn two_sided(&self) -> bool {
        self.kind != LayerKind::DepthwiseConv
    }
}

pub fn rules(graph: &NetworkGraph) -> Vec<LayerFlopsRule> {
    let spaces = graph.spaces();
    graph
        .layers
        .iter()
        .enumerate()
        .filter(|(_, l)| l.kind.is_weighted())
        .map(|(i, l)| LayerFlopsRule {
            layer: i,
            kind: l.kind,
            out_hw: (l.out_shape[1], l.out_shape[2]),
            kernel: l.kernel,
            in_spatial: l.in_shape[1] * l.in_shape[2],
            in_space: spaces.space_of(l.inputs[0]),
            out_space: spaces.of_layer[i],
        })
        .collect()
}

/// Soft union `1 - Π(1 - g)` of equally long gate vectors; logical OR on
/// binary input.
pub fn effective_skip_gates(gates: &[&[f64]]) -> Result<Vec<f64>> {
    let Some(first) = gates.first() else {
        return Err(Error::Invalid("union of zero gate vectors".into()));
    };
    let n = first.len();
    if let Some(bad) = gates.iter().find(|g| g.len() != n) {
        return Err(Error::shape("skip gate union", n, bad.len()));
    }
    Ok((0..n)
        .map(|c| 1.0 - gates.iter().map(|g| 1.0 - g[c]).product::<f64>())
        .collect())
}

fn l0(g: &[f64]) -> u64 {
    g.iter().filter(|&&v| v != 0.0).count() as u64
}

fn l1(g: &[f64]) -> f64 {
    g.iter().sum()
}

pub fn layer_flops_exact(rule: &LayerFlopsRule, gates_in: &[f64], gates_out: &[f64]) -> u64 {
    if rule.two_sided() {
        l0(gates_in) * rule.unit() * l0(gates_out)
    } else {
        l0(gates_out) * rule.unit()
    }
}

pub fn layer_flops_surrogate(rule: &LayerFlopsRule, gates_in: &[f64], gates_out: &[f64]) -> f64 {
    if rule.two_sided() {
        l1(gates_in) * rule.unit() as f64 * l1(gates_out)
    } else {
        l1(gates_out) * rule.unit() as f64
    }
}

/// Per-layer gate values, indexed like `graph.layers` (`None` for ungated).
pub type GateTable = Vec<Option<Vec<f64>>>;

pub fn stored_gates(graph: &NetworkGraph) -> GateTable {
    graph.gates.iter().map(|g| g.as_ref().map(|g| g.values.clone())).collect()
}

/// Effective gate of every channel space; `hard` selects OR instead of the
/// soft union.
pub fn space_gates(graph: &NetworkGraph, table: &GateTable, hard: bool) -> Vec<Vec<f64>> {
    graph
        .spaces()
        .spaces
        .iter()
        .map(|s| {
            if s.pinned || s.members.is_empty() {
                return vec![1.0; s.width];
            }
            let members: Vec<&[f64]> = s
                .members
                .iter()
                .map(|&m| table[m].as_deref().expect("member has gates"))
                .collect();
            if hard {
                (0..s.width)
                    .map(|c| if members.iter().any(|g| g[c] != 0.0) { 1.0 } else { 0.0 })
                    .collect()
            } else if members.len() == 1 {
                members[0].to_vec()
            } else {
                effective_skip_gates(&members).expect("space members share width")
            }
        })
        .collect()
}

pub fn exact_from_table(graph: &NetworkGraph, table: &GateTable) -> u64 {
    let eff = space_gates(graph, table, true);
    rules(graph)
        .iter()
        .map(|r| layer_flops_exact(r, &eff[r.in_space], &eff[r.out_space]))
        .sum()
}

pub fn surrogate_from_table(graph: &NetworkGraph, table: &GateTable) -> f64 {
    let eff = space_gates(graph, table, false);
    rules(graph)
        .iter()
        .map(|r| layer_flops_surrogate(r, &eff[r.in_space], &eff[r.out_space]))
        .sum()
}

/// Exact MACs of the graph under its stored gates.
pub fn total_flops_exact(graph: &NetworkGraph) -> u64 {
    exact_from_table(graph, &stored_gates(graph))
}

/// MACs of the unpruned architecture (all gates one).
pub fn architecture_flops(graph: &NetworkGraph) -> u64 {
    let table = graph.gates.iter().map(|g| g.as_ref().map(|g| vec![1.0; g.len()])).collect();
    exact_from_table(graph, &table)
}

/// Cheapest reachable cost: every gated layer keeps only channel 0, so shared
/// spaces also collapse to one channel.
pub fn min_flops(graph: &NetworkGraph) -> u64 {
    let table = graph
        .gates
        .iter()
        .map(|g| {
            g.as_ref().map(|g| {
                let mut v = vec![0.0; g.len()];
                v[0] = 1.0;
                v
            })
        })
        .collect();
    exact_from_table(graph, &table)
}

/// Differentiable surrogate on `tape`; `live` holds one gate variable per
/// gated layer.
pub fn total_flops_surrogate(graph: &NetworkGraph, tape: &mut Tape, live: &[Option<Var>]) -> Result<Var> {
    if live.len() != graph.layers.len() {
        return Err(Error::shape("surrogate gate table", graph.layers.len(), live.len()));
    }
    let mut space_sums: Vec<Var> = Vec::with_capacity(graph.spaces().spaces.len());
    for s in &graph.spaces().spaces {
        if s.pinned || s.members.is_empty() {
            space_sums.push(tape.constant(Tensor::scalar(s.width as f64)));
            continue;
        }
        let mut vars = Vec::with_capacity(s.members.len());
        for &m in &s.members {
            let v = live[m].ok_or_else(|| Error::Invalid(format!("no live gates for layer `{}`", graph.layers[m].id)))?;
            if tape.value(v).numel() != s.width {
                return Err(Error::shape(format!("layer `{}` live gates", graph.layers[m].id), s.width, tape.value(v).numel()));
            }
            vars.push(v);
        }
        let eff = if vars.len() == 1 {
            vars[0]
        } else {
            let mut miss = tape.one_minus(vars[0]);
            for &v in &vars[1..] {
                let om = tape.one_minus(v);
                miss = tape.mul(miss, om)?;
            }
            tape.one_minus(miss)
        };
        space_sums.push(tape.sum(eff));
    }
    let mut total: Option<Var> = None;
    for r in rules(graph) {
        let term = if r.two_sided() {
            let p = tape.mul(space_sums[r.in_space], space_sums[r.out_space])?;
            tape.scale(p, r.unit() as f64)
        } else {
            tape.scale(space_sums[r.out_space], r.unit() as f64)
        };
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    total.ok_or_else(|| Error::Invalid("graph has no counted layers".into()))
}

/// One row of the per-layer FLOPs report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerFlopsRow {
    pub layer_id: String,
    pub kind: &'static str,
    pub active_in: usize,
    pub active_out: usize,
    pub exact_macs: u64,
    pub surrogate: f64,
}

pub fn flops_table(graph: &NetworkGraph) -> Vec<LayerFlopsRow> {
    let table = stored_gates(graph);
    let hard = space_gates(graph, &table, true);
    let soft = space_gates(graph, &table, false);
    rules(graph)
        .iter()
        .map(|r| {
            let active_in = if r.two_sided() { l0(&hard[r.in_space]) } else { l0(&hard[r.out_space]) };
            LayerFlopsRow {
                layer_id: graph.layers[r.layer].id.clone(),
                kind: graph.layers[r.layer].kind.as_str(),
                active_in: active_in as usize,
                active_out: l0(&hard[r.out_space]) as usize,
                exact_macs: layer_flops_exact(r, &hard[r.in_space], &hard[r.out_space]),
                surrogate: layer_flops_surrogate(r, &soft[r.in_space], &soft[r.out_space]),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::config::presets;

    fn rule(kind: LayerKind, kernel: usize, hw: usize) -> LayerFlopsRule {
        LayerFlopsRule {
            layer: 0,
            kind,
            out_hw: (hw, hw),
            kernel: (kernel, kernel),
            in_spatial: 1,
            in_space: 0,
            out_space: 1,
        }
    }

    #[test]
    fn pointwise_layer_substitution() {
        let r = rule(LayerKind::Conv, 1, 2);
        assert_eq!(layer_flops_exact(&r, &[1.0; 4], &[1.0; 8]), 128);
        assert_eq!(layer_flops_exact(&r, &[0.0; 4], &[1.0; 8]), 0);
    }

    #[test]
    fn three_by_three_matches_enumeration() {
        let r = rule(LayerKind::Conv, 3, 4);
        // count multiply-accumulates of the naive loop directly
        let mut macs = 0u64;
        for _oc in 0..2 {
            for _oh in 0..4 {
                for _ow in 0..4 {
                    for _ic in 0..3 {
                        for _kh in 0..3 {
                            for _kw in 0..3 {
                                macs += 1;
                            }
                        }
                    }
                }
            }
        }
        assert_eq!(macs, 864);
        assert_eq!(layer_flops_exact(&r, &[1.0; 3], &[1.0; 2]), macs);
    }

    #[test]
    fn surrogate_l1_arithmetic() {
        let r = rule(LayerKind::Conv, 1, 1);
        assert_eq!(layer_flops_surrogate(&r, &[0.5, 0.5], &[1.0]), 1.0);
        assert_eq!(layer_flops_surrogate(&r, &[1.0, 0.0, 1.0], &[1.0, 1.0]), layer_flops_exact(&r, &[1.0, 0.0, 1.0], &[1.0, 1.0]) as f64);
    }

    #[test]
    fn skip_union_values() {
        assert_eq!(effective_skip_gates(&[&[1.0, 0.0], &[0.0, 0.0]]).unwrap(), vec![1.0, 0.0]);
        let soft = effective_skip_gates(&[&[0.5, 0.2], &[0.5, 0.0]]).unwrap();
        assert!((soft[0] - 0.75).abs() < 1e-15 && (soft[1] - 0.2).abs() < 1e-15);
        assert!(effective_skip_gates(&[&[1.0], &[1.0, 0.0]]).is_err());
    }

    #[test]
    fn budgets() {
        let b = budget_from_acceleration(4_100_000_000, 2.0).unwrap();
        assert_eq!(b.target, 2_050_000_000);
        assert_eq!(budget_from_acceleration(400, 1.0).unwrap().target, 400);
        assert_eq!(budget_from_acceleration(400, 4.0).unwrap().target, 100);
        assert!(budget_from_acceleration(400, 0.5).is_err());
        assert!(FlopsBudget::new(500, 400).is_err());
    }

    #[test]
    fn two_conv_hand_count() {
        let g = NetworkGraph::build(&presets::two_conv(10), 0).unwrap();
        // conv1: 3*9*64*8, conv2: 8*9*64*8, fc: 8*1*10
        let c0 = 3 * 9 * 64 * 8 + 8 * 9 * 64 * 8 + 8 * 10;
        assert_eq!(total_flops_exact(&g), c0);
        assert_eq!(architecture_flops(&g), c0);
        assert_eq!(surrogate_from_table(&g, &stored_gates(&g)), c0 as f64);
    }

    #[test]
    fn zeroing_a_layer_removes_its_terms() {
        let mut g = NetworkGraph::build(&presets::two_conv(10), 0).unwrap();
        let c1 = g.layer_index("conv1").unwrap();
        let before = total_flops_exact(&g);
        g.gate_mut(c1).unwrap().values.iter_mut().for_each(|v| *v = 0.0);
        // conv1 output and conv2 input both vanish
        assert_eq!(before - total_flops_exact(&g), 3 * 9 * 64 * 8 + 8 * 9 * 64 * 8);
        let zero: GateTable = g.gates.iter().map(|gv| gv.as_ref().map(|gv| vec![0.0; gv.len()])).collect();
        // only the classifier's ungated output side remains, fed by zero inputs
        assert_eq!(surrogate_from_table(&g, &zero), 0.0);
    }

    #[test]
    fn table_rows_sum_to_total() {
        let g = NetworkGraph::build(&presets::inverted_residual(10), 0).unwrap();
        let rows = flops_table(&g);
        assert_eq!(rows.iter().map(|r| r.exact_macs).sum::<u64>(), total_flops_exact(&g));
        let dw = rows.iter().find(|r| r.kind == "depthwise_conv").unwrap();
        assert_eq!(dw.exact_macs, 16 * 9 * 64);
    }
}
