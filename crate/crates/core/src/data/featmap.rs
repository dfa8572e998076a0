//! Per-filter feature-map dumps as 8-bit binary PGM (P5) images.
//!
//! Each map is min-max scaled to 0..=255. A constant map has no range: an
//! all-zero map (e.g. a pruned filter) is written black, any other constant
//! mid-gray (128).

use std::fs;
use std::path::{Path, PathBuf};

use crate::autodiff::{NormMode, Tape};
use crate::error::{Error, Result};
use crate::graph::{GateSource, GateStatus, NetworkGraph};
use crate::tensor::Tensor;

pub fn normalize_map(map: &[f64]) -> Vec<u8> {
    let lo = map.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        let fill = if lo == 0.0 || map.is_empty() { 0 } else { 128 };
        return vec![fill; map.len()];
    }
    map.iter().map(|&v| ((v - lo) / (hi - lo) * 255.0).round() as u8).collect()
}

pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

fn status_name(s: Option<GateStatus>) -> &'static str {
    match s {
        Some(GateStatus::Active) => "active",
        Some(GateStatus::Pruned) => "pruned",
        Some(GateStatus::Retained) => "retained",
        None => "ungated",
    }
}

/// Writes one image per output channel of `layer_id` for the first sample of
/// `batch`, named `{layer}_f{index:03}_{status}.pgm`. Gated layers are
/// captured where their gates apply, so pruned filters come out black.
pub fn dump_feature_maps(graph: &NetworkGraph, batch: &Tensor, layer_id: &str, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let layer = graph
        .layer_index(layer_id)
        .ok_or_else(|| Error::Invalid(format!("no layer named `{layer_id}`")))?;
    let mut tape = Tape::new();
    let x = tape.constant(batch.clone());
    let pass = graph.forward(&mut tape, x, GateSource::Stored, NormMode::Eval, false)?;
    let at = graph.gate_point(layer).unwrap_or(layer);
    let out = tape.value(pass.layer_outputs[at]);
    let [c, h, w] = graph.layers[at].out_shape;
    let maps = &out.data()[..c * h * w];
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let gate = graph.gate(layer);
    let mut paths = Vec::with_capacity(c);
    for f in 0..c {
        let status = gate.map(|g| g.status[f]);
        let path = out_dir.join(format!("{layer_id}_f{f:03}_{}.pgm", status_name(status)));
        let pixels = normalize_map(&maps[f * h * w..(f + 1) * h * w]);
        fs::write(&path, encode_pgm(w, h, &pixels)).map_err(|e| Error::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}
