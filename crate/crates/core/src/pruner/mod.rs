//! The budgeted prune loop and its baselines.
//!
//! Each round of [`prune_loop`]:
//!
//! 1. aligns every Dagger module so all active gates are exactly 1,
//! 2. trains the Dagger modules (weights fixed) on task loss plus
//!    `λ · surrogate / C0`,
//! 3. prunes the `k` smallest active gates (never emptying a layer),
//! 4. recounts exact FLOPs over the remaining one-gates,
//! 5. finetunes the weights with the remaining gates reset to 1.
//!
//! Rounds repeat until the exact FLOPs fit the budget; the surviving filters
//! are then physically extracted.

pub mod ablation;
pub mod baselines;
pub mod train;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::autodiff::{NormMode, Tape};
use crate::dagger::DaggerBank;
use crate::data::{BatchStream, Dataset};
use crate::error::{Error, Result};
use crate::flops::{self, FlopsBudget, GateTable};
use crate::graph::{GateSource, GateStatus, NetworkGraph};
use crate::optim::{cosine_lr, sgd_momentum_step, Sgd};
use crate::rng;

pub use baselines::{random_baseline, uniform_baseline, BaselinePruned, RandomBaseline};
pub use train::{evaluate, train, Accuracy, EpochStats, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    pub budget: FlopsBudget,
    /// Weight of the FLOPs surrogate, in units of `C0` (the surrogate is divided
    /// by the unpruned cost before scaling).
    pub lambda: f64,
    /// Fraction of the initial gate count pruned per round.
    pub prune_ratio: f64,
    pub gate_iters: usize,
    pub finetune_iters: usize,
    pub batch_size: usize,
    pub gate_lr: f64,
    pub weight_lr: f64,
    pub momentum: f64,
    pub nesterov: bool,
    pub weight_decay: f64,
    pub final_finetune_epochs: usize,
    pub final_lr: f64,
    /// Fixed Dagger hidden width; `None` uses `max(8, n / 4)`.
    pub hidden: Option<usize>,
    pub seed: u64,
}

impl PruneConfig {
    pub fn new(budget: FlopsBudget) -> Self {
        PruneConfig {
            budget,
            lambda: 8.0,
            prune_ratio: 0.006,
            gate_iters: 100,
            finetune_iters: 100,
            batch_size: 64,
            gate_lr: 0.001,
            weight_lr: 0.001,
            momentum: 0.9,
            nesterov: true,
            weight_decay: 1e-4,
            final_finetune_epochs: 0,
            final_lr: 0.01,
            hidden: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::Invalid(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.prune_ratio > 0.0 && self.prune_ratio < 1.0) {
            return Err(Error::Invalid(format!("prune ratio must lie in (0, 1), got {}", self.prune_ratio)));
        }
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch size must be positive".into()));
        }
        if self.budget.target == 0 || self.budget.target > self.budget.pretrained {
            return Err(Error::Invalid(format!(
                "budget {} outside (0, {}]",
                self.budget.target, self.budget.pretrained
            )));
        }
        Ok(())
    }

    fn sgd(&self, lr: f64) -> Sgd {
        Sgd {
            lr,
            momentum: self.momentum,
            nesterov: self.nesterov,
            weight_decay: self.weight_decay,
        }
    }

    pub fn hidden_rule(&self) -> crate::dagger::HiddenRule {
        match self.hidden {
            Some(h) => crate::dagger::HiddenRule::Fixed(h),
            None => crate::dagger::HiddenRule::Quarter,
        }
    }

    /// Upper bound on the number of rounds: `ceil(1 / prune_ratio)`.
    pub fn max_rounds(&self) -> usize {
        (1.0 / self.prune_ratio).ceil() as usize
    }
}

/// A single filter's gate. Ordering is `(layer, filter)`, the selection tie-break.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GateId {
    pub layer: usize,
    pub filter: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneEvent {
    pub round: usize,
    pub pruned: Vec<GateId>,
    pub flops_before: u64,
    pub flops_after: u64,
    /// Mean cross-entropy over the gate phase.
    pub task_loss: f64,
    /// Mean `λ · surrogate / C0` over the gate phase.
    pub gate_loss: f64,
    /// Largest `|g - 1|` over active gates right after alignment.
    pub alignment_max_deviation: f64,
    pub surrogate_at_alignment: f64,
    pub exact_at_alignment: u64,
    pub weights_fixed_in_gate_phase: bool,
    pub dagger_fixed_in_finetune: bool,
    pub finetune_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneState {
    /// One-gate set: gates not yet pruned.
    pub one_gates: BTreeSet<GateId>,
    /// Zero-gate set: pruned gates.
    pub zero_gates: BTreeSet<GateId>,
    pub round: usize,
    pub current_flops: u64,
    pub total_gates: usize,
    pub events: Vec<PruneEvent>,
}

impl PruneState {
    pub fn from_graph(graph: &NetworkGraph) -> Self {
        let mut one_gates = BTreeSet::new();
        let mut zero_gates = BTreeSet::new();
        for l in graph.gated_layers() {
            let g = graph.gate(l).expect("gated");
            for (filter, &s) in g.status.iter().enumerate() {
                let id = GateId { layer: l, filter };
                if s == GateStatus::Pruned {
                    zero_gates.insert(id);
                } else {
                    one_gates.insert(id);
                }
            }
        }
        let mut s = PruneState {
            total_gates: one_gates.len() + zero_gates.len(),
            one_gates,
            zero_gates,
            round: 0,
            current_flops: 0,
            events: Vec::new(),
        };
        s.current_flops = support_flops(&s, graph);
        s
    }

    /// Binary gate table with `A` at 1 and `B` at 0.
    pub fn gate_table(&self, graph: &NetworkGraph) -> GateTable {
        let mut t: GateTable = graph.gates.iter().map(|g| g.as_ref().map(|g| vec![0.0; g.len()])).collect();
        for id in &self.one_gates {
            if let Some(v) = t[id.layer].as_mut() {
                v[id.filter] = 1.0;
            }
        }
        t
    }

    /// Active-gate count per gated layer.
    pub fn retained_per_layer(&self, graph: &NetworkGraph) -> Vec<(String, usize)> {
        graph
            .gated_layers()
            .into_iter()
            .map(|l| (graph.layers[l].id.clone(), self.one_gates.iter().filter(|g| g.layer == l).count()))
            .collect()
    }
}

/// Exact FLOPs with one-gates at 1 and zero-gates at 0.
pub fn support_flops(state: &PruneState, graph: &NetworkGraph) -> u64 {
    flops::exact_from_table(graph, &state.gate_table(graph))
}

/// Exact FLOPs of the one-gate support and whether they fit the budget.
pub fn flops_examination(state: &PruneState, graph: &NetworkGraph, budget: &FlopsBudget) -> (u64, bool) {
    let f = support_flops(state, graph);
    (f, f <= budget.target)
}

/// Gate values at the end of a gate phase.
#[derive(Debug, Clone, PartialEq)]
pub struct GateSnapshot {
    pub values: GateTable,
    pub task_loss: f64,
    pub gate_loss: f64,
    /// Mean active gate at each step, plus the final value.
    pub mean_gate: Vec<f64>,
}

fn mean_active(graph: &NetworkGraph, values: &GateTable) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for l in graph.gated_layers() {
        let g = graph.gate(l).expect("gated");
        let v = values[l].as_ref().expect("gate values for gated layer");
        for (i, &st) in g.status.iter().enumerate() {
            if st != GateStatus::Pruned {
                s += v[i];
                n += 1;
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Trains the Dagger modules for `cfg.gate_iters` steps with the network
/// weights held fixed and batch norm in eval mode.
pub fn gate_learning_phase(
    graph: &NetworkGraph,
    bank: &mut DaggerBank,
    data: &Dataset,
    cfg: &PruneConfig,
    stream: &mut BatchStream,
) -> Result<GateSnapshot> {
    if data.is_empty() {
        return Err(Error::Data("gate learning needs a non-empty dataset".into()));
    }
    let c0 = cfg.budget.pretrained as f64;
    let (mut task_sum, mut gate_sum) = (0.0, 0.0);
    let mut mean_gate = Vec::with_capacity(cfg.gate_iters + 1);
    for step in 0..cfg.gate_iters {
        let (x, y) = stream.next_batch(data);
        let mut tape = Tape::new();
        let live = bank.live_gates(graph, &mut tape, true)?;
        let xv = tape.constant(x);
        let pass = graph.forward(&mut tape, xv, GateSource::External(&live.gates), NormMode::Eval, false)?;
        let ce = tape.softmax_cross_entropy(pass.logits, &y)?;
        let r = flops::total_flops_surrogate(graph, &mut tape, &live.gates)?;
        let reg = tape.scale(r, cfg.lambda / c0);
        let loss = tape.add(ce, reg)?;
        let (ce_v, reg_v) = (tape.value(ce).item(), tape.value(reg).item());
        if !(ce_v + reg_v).is_finite() {
            return Err(Error::NonFinite {
                phase: "gate learning",
                value: ce_v + reg_v,
            });
        }
        let values: GateTable = live.gates.iter().map(|g| g.map(|v| tape.value(v).data().to_vec())).collect();
        mean_gate.push(mean_active(graph, &values));
        task_sum += ce_v;
        gate_sum += reg_v;
        let grads = tape.backward(loss)?;
        bank.zero_grad();
        bank.accumulate_grads(&live, &grads);
        let lr = cosine_lr(step, cfg.gate_iters, cfg.gate_lr)?;
        sgd_momentum_step(bank.parameters_mut(), &cfg.sgd(lr))?;
    }
    let values = bank.gate_values(graph)?;
    mean_gate.push(mean_active(graph, &values));
    let n = cfg.gate_iters.max(1) as f64;
    Ok(GateSnapshot {
        values,
        task_loss: task_sum / n,
        gate_loss: gate_sum / n,
        mean_gate,
    })
}

/// The `k` smallest active gates, skipping any gate whose removal would leave
/// its layer without an active gate. Ties resolve by `(layer, filter)`.
pub fn select_prune_candidates(snapshot: &GateTable, graph: &NetworkGraph, k: usize) -> Result<Vec<GateId>> {
    let mut ranked: Vec<(f64, GateId)> = Vec::new();
    let mut active = vec![0usize; graph.layers.len()];
    for l in graph.gated_layers() {
        let g = graph.gate(l).expect("gated");
        let v = snapshot[l]
            .as_ref()
            .ok_or_else(|| Error::Invalid(format!("snapshot lacks gates for layer `{}`", graph.layers[l].id)))?;
        for (filter, &s) in g.status.iter().enumerate() {
            if s == GateStatus::Active {
                ranked.push((v[filter], GateId { layer: l, filter }));
                active[l] += 1;
            }
        }
    }
    if k >= ranked.len() {
        return Err(Error::Invalid(format!("cannot prune {k} of {} active gates", ranked.len())));
    }
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut out = Vec::with_capacity(k);
    for (_, id) in ranked {
        if out.len() == k {
            break;
        }
        if active[id.layer] > 1 {
            active[id.layer] -= 1;
            out.push(id);
        }
    }
    Ok(out)
}

/// Finetunes the weights for `cfg.finetune_iters` steps with cross-entropy
/// only; one-gates are set to exactly 1 first. Returns the mean loss.
pub fn weight_finetune_phase(
    graph: &mut NetworkGraph,
    state: &PruneState,
    data: &Dataset,
    cfg: &PruneConfig,
    stream: &mut BatchStream,
) -> Result<f64> {
    for id in &state.one_gates {
        if let Some(g) = graph.gate_mut(id.layer) {
            g.values[id.filter] = 1.0;
        }
    }
    let mut sum = 0.0;
    for step in 0..cfg.finetune_iters {
        let (x, y) = stream.next_batch(data);
        let lr = cosine_lr(step, cfg.finetune_iters, cfg.weight_lr)?;
        sum += train::weight_step(graph, &x, &y, &cfg.sgd(lr), "weight finetuning")?;
    }
    Ok(sum / cfg.finetune_iters.max(1) as f64)
}

fn apply_pruning(graph: &mut NetworkGraph, bank: &mut DaggerBank, state: &mut PruneState, z: &[GateId]) {
    for id in z {
        graph.gate_mut(id.layer).expect("gated").prune(id.filter);
        state.one_gates.remove(id);
        state.zero_gates.insert(*id);
        if let Some(m) = bank.get_mut(id.layer) {
            m.live[id.filter] = false;
        }
    }
}

#[derive(Debug, Clone)]
pub struct PruneOutcome {
    /// Physically smaller network.
    pub pruned: NetworkGraph,
    /// The source network with final gate statuses (retained / pruned).
    pub gated: NetworkGraph,
    pub state: PruneState,
}

/// Runs the prune loop until the exact FLOPs fit `cfg.budget`.
pub fn prune_loop(mut graph: NetworkGraph, bank: &mut DaggerBank, data: &Dataset, cfg: &PruneConfig) -> Result<PruneOutcome> {
    cfg.validate()?;
    let minimum = flops::min_flops(&graph);
    if cfg.budget.target < minimum {
        return Err(Error::UnsatisfiableBudget {
            budget: cfg.budget.target,
            minimum,
        });
    }
    let mut state = PruneState::from_graph(&graph);
    bank.sync_masks(&graph);
    let k = ((cfg.prune_ratio * state.total_gates as f64).round() as usize).max(1);
    let mut stream = if data.is_empty() {
        None
    } else {
        Some(BatchStream::new(data.len(), cfg.batch_size, cfg.seed ^ rng::tag("prune"))?)
    };
    loop {
        let (flops_before, fits) = flops_examination(&state, &graph, &cfg.budget);
        state.current_flops = flops_before;
        if fits {
            break;
        }
        let stream = stream
            .as_mut()
            .ok_or_else(|| Error::Data("pruning needs a non-empty dataset".into()))?;
        state.round += 1;

        bank.align();
        let aligned = bank.gate_values(&graph)?;
        let alignment_max_deviation = state
            .one_gates
            .iter()
            .map(|id| (aligned[id.layer].as_ref().expect("gated")[id.filter] - 1.0).abs())
            .fold(0.0, f64::max);
        let surrogate_at_alignment = flops::surrogate_from_table(&graph, &aligned);
        if alignment_max_deviation != 0.0 || surrogate_at_alignment != flops_before as f64 {
            return Err(Error::Invalid(format!(
                "alignment failed in round {}: max gate deviation {alignment_max_deviation}, surrogate {surrogate_at_alignment} vs exact {flops_before}",
                state.round
            )));
        }

        let omega = graph.weights_checksum();
        let snapshot = gate_learning_phase(&graph, bank, data, cfg, stream)?;
        let weights_fixed_in_gate_phase = graph.weights_checksum() == omega;

        // extend past k only when every chosen gate sits in a channel another
        // layer still keeps, so the round would not lower the cost
        let mut take = k.min(state.one_gates.len().saturating_sub(1)).max(1);
        let (z, flops_after) = loop {
            let z = select_prune_candidates(&snapshot.values, &graph, take)?;
            if z.len() < take {
                return Err(Error::Invalid(format!(
                    "round {}: every layer is down to one filter but {flops_before} MACs exceed the budget {}",
                    state.round, cfg.budget.target
                )));
            }
            let mut trial = state.clone();
            for id in &z {
                trial.one_gates.remove(id);
                trial.zero_gates.insert(*id);
            }
            let after = support_flops(&trial, &graph);
            if after < flops_before {
                break (z, after);
            }
            take += 1;
        };
        apply_pruning(&mut graph, bank, &mut state, &z);
        state.current_flops = flops_after;

        let theta = bank.checksum();
        let finetune_loss = weight_finetune_phase(&mut graph, &state, data, cfg, stream)?;
        let dagger_fixed_in_finetune = bank.checksum() == theta;

        state.events.push(PruneEvent {
            round: state.round,
            pruned: z,
            flops_before,
            flops_after,
            task_loss: snapshot.task_loss,
            gate_loss: snapshot.gate_loss,
            alignment_max_deviation,
            surrogate_at_alignment,
            exact_at_alignment: flops_before,
            weights_fixed_in_gate_phase,
            dagger_fixed_in_finetune,
            finetune_loss,
        });
    }
    for id in &state.one_gates {
        graph.gate_mut(id.layer).expect("gated").retain(id.filter);
    }
    let pruned = graph.materialize_pruned()?;
    Ok(PruneOutcome {
        pruned,
        gated: graph,
        state,
    })
}

/// Epoch training of a pruned network from `cfg.final_lr` with a cosine schedule.
pub fn final_finetune(
    graph: &mut NetworkGraph,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    cfg: &PruneConfig,
) -> Result<Vec<EpochStats>> {
    let tc = TrainConfig {
        epochs: cfg.final_finetune_epochs,
        batch_size: cfg.batch_size,
        lr: cfg.final_lr,
        momentum: cfg.momentum,
        nesterov: cfg.nesterov,
        weight_decay: cfg.weight_decay,
        augment: Default::default(),
        seed: cfg.seed ^ rng::tag("final-finetune"),
    };
    train::train(graph, train_set, test_set, &tc, |_, _| Ok(()))
}
