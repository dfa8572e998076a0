//! Plain supervised training and evaluation of a (gated) network.

use serde::{Deserialize, Serialize};

use crate::autodiff::{NormMode, Tape};
use crate::data::{Augment, BatchStream, Dataset};
use crate::error::{Error, Result};
use crate::graph::{GateSource, NetworkGraph};
use crate::optim::{cosine_lr, sgd_momentum_step, Sgd};
use crate::tensor::Tensor;

/// One SGD step on the weights with stored gates and train-mode batch norm.
/// Returns the batch loss.
pub fn weight_step(graph: &mut NetworkGraph, x: &Tensor, labels: &[usize], opt: &Sgd, phase: &'static str) -> Result<f64> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let pass = graph.forward(&mut tape, xv, GateSource::Stored, NormMode::Train, true)?;
    let loss = tape.softmax_cross_entropy(pass.logits, labels)?;
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(Error::NonFinite { phase, value });
    }
    let grads = tape.backward(loss)?;
    graph.zero_grad();
    graph.accumulate_grads(&pass, &grads);
    sgd_momentum_step(graph.parameters_mut(), opt)?;
    graph.apply_running_stats(pass.running_stats);
    Ok(value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub top1: f64,
    /// Present when the task has at least five classes.
    pub top5: Option<f64>,
    pub loss: f64,
    pub samples: usize,
}

/// Eval-mode accuracy of the stored-gate network over all of `data`.
pub fn evaluate(graph: &NetworkGraph, data: &Dataset, batch_size: usize) -> Result<Accuracy> {
    if data.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty dataset".into()));
    }
    let k = graph.classes();
    let (mut hit1, mut hit5, mut loss) = (0usize, 0usize, 0.0);
    for (x, y) in data.sequential(batch_size) {
        let logits = graph.logits(&x, GateSource::Stored)?;
        for (row, &label) in logits.data().chunks(k).zip(&y) {
            let target = row[label];
            // rank = classes scoring strictly higher, ties broken toward the label's index
            let rank = row
                .iter()
                .enumerate()
                .filter(|&(j, &v)| v > target || (v == target && j < label))
                .count();
            hit1 += usize::from(rank == 0);
            hit5 += usize::from(rank < 5);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            loss += lse - target;
        }
    }
    let n = data.len() as f64;
    Ok(Accuracy {
        top1: hit1 as f64 / n,
        top5: (k >= 5).then(|| hit5 as f64 / n),
        loss: loss / n,
        samples: data.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_true")]
    pub nesterov: bool,
    #[serde(default = "default_wd")]
    pub weight_decay: f64,
    #[serde(default)]
    pub augment: Augment,
    #[serde(default)]
    pub seed: u64,
}

fn default_batch() -> usize {
    64
}
fn default_lr() -> f64 {
    0.01
}
fn default_momentum() -> f64 {
    0.9
}
fn default_true() -> bool {
    true
}
fn default_wd() -> f64 {
    1e-4
}

impl TrainConfig {
    pub fn new(epochs: usize, lr: f64, seed: u64) -> Self {
        TrainConfig {
            epochs,
            batch_size: default_batch(),
            lr,
            momentum: default_momentum(),
            nesterov: true,
            weight_decay: default_wd(),
            augment: Augment::default(),
            seed,
        }
    }

    pub fn sgd(&self, lr: f64) -> Sgd {
        Sgd {
            lr,
            momentum: self.momentum,
            nesterov: self.nesterov,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Learning rate at the epoch's first step.
    pub lr: f64,
    pub train_loss: f64,
    pub test: Option<Accuracy>,
}

/// Epoch-based training with a per-step cosine schedule from `cfg.lr` to 0.
/// `after_epoch` sees the graph after every epoch (e.g. to checkpoint it).
pub fn train(
    graph: &mut NetworkGraph,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    cfg: &TrainConfig,
    mut after_epoch: impl FnMut(&NetworkGraph, &EpochStats) -> Result<()>,
) -> Result<Vec<EpochStats>> {
    if cfg.epochs == 0 {
        return Ok(Vec::new());
    }
    let mut stream = BatchStream::new(train_set.len(), cfg.batch_size, cfg.seed)?.with_augment(cfg.augment);
    let per_epoch = stream.batches_per_epoch();
    let total = per_epoch * cfg.epochs;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let first_lr = cosine_lr(epoch * per_epoch, total, cfg.lr)?;
        let mut sum = 0.0;
        for b in 0..per_epoch {
            let lr = cosine_lr(epoch * per_epoch + b, total, cfg.lr)?;
            let (x, y) = stream.next_batch(train_set);
            sum += weight_step(graph, &x, &y, &cfg.sgd(lr), "training")?;
        }
        let test = test_set.map(|t| evaluate(graph, t, 256)).transpose()?;
        let stats = EpochStats {
            epoch,
            lr: first_lr,
            train_loss: sum / per_epoch as f64,
            test,
        };
        after_epoch(graph, &stats)?;
        history.push(stats);
    }
    Ok(history)
}
