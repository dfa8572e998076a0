//! CSV and JSON reports.
//!
//! | file            | columns                                                               |
//! |-----------------|-----------------------------------------------------------------------|
//! | `events.csv`    | round, pruned_count, flops_before, flops_after, task_loss, gate_loss   |
//! | `flops.csv`     | layer_id, kind, active_in, active_out, exact_macs, surrogate          |
//! | `results.csv`   | method, seed, flops, params, top1                                     |
//! | `ablation.csv`  | parameter, value, rounds, final_flops, params, top1, retained_total   |
//! | `summary.json`  | final FLOPs, parameter count, per-layer retained filter counts        |

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::flops::LayerFlopsRow;
use crate::pruner::ablation::AblationRow;
use crate::pruner::{Accuracy, PruneEvent, PruneState};

pub const EVENTS_HEADER: &str = "round,pruned_count,flops_before,flops_after,task_loss,gate_loss";
pub const FLOPS_HEADER: &str = "layer_id,kind,active_in,active_out,exact_macs,surrogate";
pub const RESULTS_HEADER: &str = "method,seed,flops,params,top1";
pub const ABLATION_HEADER: &str = "parameter,value,rounds,final_flops,params,top1,retained_total";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn events_csv(events: &[PruneEvent]) -> String {
    let mut s = format!("{EVENTS_HEADER}\n");
    for e in events {
        writeln!(
            s,
            "{},{},{},{},{},{}",
            e.round,
            e.pruned.len(),
            e.flops_before,
            e.flops_after,
            e.task_loss,
            e.gate_loss
        )
        .expect("string write");
    }
    s
}

pub fn flops_csv(rows: &[LayerFlopsRow]) -> String {
    let mut s = format!("{FLOPS_HEADER}\n");
    for r in rows {
        writeln!(s, "{},{},{},{},{},{}", r.layer_id, r.kind, r.active_in, r.active_out, r.exact_macs, r.surrogate)
            .expect("string write");
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub method: String,
    pub seed: u64,
    pub flops: u64,
    pub params: usize,
    pub top1: Option<f64>,
}

pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut s = format!("{RESULTS_HEADER}\n");
    for r in rows {
        writeln!(s, "{},{},{},{},{}", r.method, r.seed, r.flops, r.params, opt(r.top1)).expect("string write");
    }
    s
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = format!("{ABLATION_HEADER}\n");
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.parameter,
            r.value,
            r.rounds,
            r.final_flops,
            r.params,
            opt(r.top1),
            r.retained_total
        )
        .expect("string write");
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub network: String,
    pub method: String,
    pub pretrained_flops: u64,
    pub budget_flops: u64,
    pub final_flops: u64,
    pub params: usize,
    pub rounds: usize,
    pub retained_total: usize,
    /// `(layer id, retained filters)` in layer order.
    pub retained_per_layer: Vec<(String, usize)>,
    pub accuracy: Option<Accuracy>,
}

impl Summary {
    /// Consistency check: per-layer counts add up to the total.
    pub fn is_consistent(&self) -> bool {
        self.retained_per_layer.iter().map(|(_, c)| c).sum::<usize>() == self.retained_total
    }
}

pub fn summary_json(summary: &Summary) -> Result<String> {
    serde_json::to_string_pretty(summary).map_err(|e| Error::Invalid(format!("summary: {e}")))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `events.csv` and `summary.json` into `dir`.
pub fn write_report(state: &PruneState, summary: &Summary, dir: &Path) -> Result<()> {
    write(&dir.join("events.csv"), &events_csv(&state.events))?;
    write(&dir.join("summary.json"), &summary_json(summary)?)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write(path, text)
}
