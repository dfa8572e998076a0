//! Binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! | offset     | size | content                                  |
//! |------------|------|------------------------------------------|
//! | 0          | 4    | magic `DGPR`                             |
//! | 4          | 4    | format version (u32)                     |
//! | 8          | 8    | header length `H` (u64)                  |
//! | 16         | H    | UTF-8 JSON header                        |
//! | 16 + H     | ...  | arrays as f32, in header directory order |
//!
//! The header holds the network config, the array directory (name and
//! shape), gate statuses, Dagger offsets/masks and free-form metadata.
//! Values are computed in f64 and stored as f32; loading widens them back.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dagger::{DaggerBank, DaggerParams};
use crate::error::{Error, Result};
use crate::graph::{GateStatus, NetworkConfig, NetworkGraph};
use crate::tensor::{Parameter, Tensor};

pub const MAGIC: &[u8; 4] = b"DGPR";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    /// Optimizer steps taken so far.
    pub step: u64,
    pub epoch: u64,
    #[serde(default)]
    pub notes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub graph: NetworkGraph,
    pub bank: Option<DaggerBank>,
    pub meta: CheckpointMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DaggerEntry {
    layer: String,
    offset: f64,
    /// `1` live, `0` masked, one character per filter.
    live: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    network: NetworkConfig,
    /// Layer id to status codes (`a` active, `p` pruned, `r` retained).
    gate_status: BTreeMap<String, String>,
    dagger: Option<Vec<DaggerEntry>>,
    meta: CheckpointMeta,
    arrays: Vec<ArrayEntry>,
}

/// Every stored array in directory order.
fn collect_arrays(ck: &Checkpoint) -> Vec<(String, Vec<usize>, Vec<f64>)> {
    let g = &ck.graph;
    let mut out = Vec::new();
    let param = |out: &mut Vec<(String, Vec<usize>, Vec<f64>)>, name: String, p: &Parameter| {
        out.push((name.clone(), p.shape().to_vec(), p.data().to_vec()));
        out.push((format!("{name}.momentum"), p.shape().to_vec(), p.momentum.clone()));
    };
    for (l, w) in g.layers.iter().zip(&g.weights) {
        if let Some(p) = &w.weight {
            param(&mut out, format!("{}.weight", l.id), p);
        }
        if let Some(p) = &w.bias {
            param(&mut out, format!("{}.bias", l.id), p);
        }
        if !w.running_mean.is_empty() {
            out.push((format!("{}.running_mean", l.id), vec![w.running_mean.len()], w.running_mean.clone()));
            out.push((format!("{}.running_var", l.id), vec![w.running_var.len()], w.running_var.clone()));
        }
    }
    for (l, gv) in g.layers.iter().zip(&g.gates) {
        if let Some(gv) = gv {
            out.push((format!("{}.gate", l.id), vec![gv.len()], gv.values.clone()));
        }
    }
    if let Some(bank) = &ck.bank {
        for m in &bank.modules {
            let id = &g.layers[m.layer].id;
            for (slot, p) in ["fc1_weight", "fc1_bias", "fc2_weight", "fc2_bias"].iter().zip(m.parameters()) {
                param(&mut out, format!("dagger.{id}.{slot}"), p);
            }
        }
    }
    out
}

pub fn encode(ck: &Checkpoint) -> Result<Vec<u8>> {
    let arrays = collect_arrays(ck);
    let g = &ck.graph;
    let header = Header {
        network: g.to_config(),
        gate_status: g
            .layers
            .iter()
            .zip(&g.gates)
            .filter_map(|(l, gv)| gv.as_ref().map(|gv| (l.id.clone(), gv.status.iter().map(|s| s.code()).collect())))
            .collect(),
        dagger: ck.bank.as_ref().map(|b| {
            b.modules
                .iter()
                .map(|m| DaggerEntry {
                    layer: g.layers[m.layer].id.clone(),
                    offset: m.offset,
                    live: m.live.iter().map(|&l| if l { '1' } else { '0' }).collect(),
                })
                .collect()
        }),
        meta: ck.meta.clone(),
        arrays: arrays
            .iter()
            .map(|(name, shape, _)| ArrayEntry {
                name: name.clone(),
                shape: shape.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Invalid(format!("checkpoint header: {e}")))?;
    let body: usize = arrays.iter().map(|a| a.2.len() * 4).sum();
    let mut out = Vec::with_capacity(16 + json.len() + body);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, _, data) in &arrays {
        for &v in data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode(ck)?).map_err(|e| Error::io(path, e))
}

fn corrupt(offset: usize, message: impl Into<String>) -> Error {
    Error::Checkpoint {
        offset: offset as u64,
        message: message.into(),
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 16 {
        return Err(corrupt(bytes.len(), format!("file is {} bytes, shorter than the 16-byte preamble", bytes.len())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(corrupt(0, format!("bad magic {:?}, expected \"DGPR\"", String::from_utf8_lossy(&bytes[0..4]))));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: VERSION,
        });
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let hend = usize::try_from(hlen)
        .ok()
        .and_then(|h| h.checked_add(16))
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| corrupt(8, format!("header length {hlen} runs past the end of the file")))?;
    let header: Header = serde_json::from_slice(&bytes[16..hend]).map_err(|e| corrupt(16, format!("bad header: {e}")))?;

    let mut graph = NetworkGraph::build(&header.network, 0).map_err(|e| corrupt(16, format!("header network: {e}")))?;
    let mut pos = hend;
    let mut arrays: BTreeMap<String, (Vec<usize>, Vec<f64>, usize)> = BTreeMap::new();
    for a in &header.arrays {
        let n: usize = a.shape.iter().product();
        let end = pos
            .checked_add(n * 4)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| corrupt(pos, format!("array `{}` of {n} values is truncated", a.name)))?;
        let data = bytes[pos..end]
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect();
        arrays.insert(a.name.clone(), (a.shape.clone(), data, pos));
        pos = end;
    }
    if pos != bytes.len() {
        return Err(corrupt(pos, format!("{} unexpected trailing bytes", bytes.len() - pos)));
    }
    let mut take = |name: &str, shape: &[usize]| -> Result<Vec<f64>> {
        let (s, d, off) = arrays.remove(name).ok_or_else(|| corrupt(16, format!("missing array `{name}`")))?;
        if s != shape {
            return Err(corrupt(off, format!("array `{name}` has shape {s:?}, network expects {shape:?}")));
        }
        Ok(d)
    };
    let load_param = |take: &mut dyn FnMut(&str, &[usize]) -> Result<Vec<f64>>, name: String, p: &mut Parameter| -> Result<()> {
        let shape = p.shape().to_vec();
        let data = take(&name, &shape)?;
        p.tensor = Tensor::new(shape.clone(), data)?;
        p.momentum = take(&format!("{name}.momentum"), &shape)?;
        p.grad = None;
        Ok(())
    };
    for i in 0..graph.layers.len() {
        let id = graph.layers[i].id.clone();
        let w = &mut graph.weights[i];
        if let Some(p) = w.weight.as_mut() {
            load_param(&mut take, format!("{id}.weight"), p)?;
        }
        if let Some(p) = w.bias.as_mut() {
            load_param(&mut take, format!("{id}.bias"), p)?;
        }
        if !w.running_mean.is_empty() {
            let n = w.running_mean.len();
            w.running_mean = take(&format!("{id}.running_mean"), &[n])?;
            w.running_var = take(&format!("{id}.running_var"), &[n])?;
        }
        if let Some(gv) = graph.gates[i].as_mut() {
            gv.values = take(&format!("{id}.gate"), &[gv.len()])?;
            let codes = header
                .gate_status
                .get(&id)
                .ok_or_else(|| corrupt(16, format!("missing gate statuses for `{id}`")))?;
            let status: Option<Vec<GateStatus>> = codes.chars().map(GateStatus::from_code).collect();
            match status {
                Some(s) if s.len() == gv.len() => gv.status = s,
                _ => return Err(corrupt(16, format!("bad gate statuses for `{id}`: {codes:?}"))),
            }
        }
    }
    let bank = match &header.dagger {
        None => None,
        Some(entries) => {
            let mut modules = Vec::with_capacity(entries.len());
            for e in entries {
                let layer = graph
                    .layer_index(&e.layer)
                    .ok_or_else(|| corrupt(16, format!("dagger entry for unknown layer `{}`", e.layer)))?;
                let n = graph.layers[layer].n_out;
                let fc1_shape = header
                    .arrays
                    .iter()
                    .find(|a| a.name == format!("dagger.{}.fc1_weight", e.layer))
                    .map(|a| a.shape.clone())
                    .ok_or_else(|| corrupt(16, format!("missing dagger arrays for `{}`", e.layer)))?;
                let hidden = fc1_shape.first().copied().unwrap_or(0);
                let mut p = |slot: &str, shape: Vec<usize>| -> Result<Parameter> {
                    let mut param = Parameter::new(Tensor::zeros(&shape));
                    load_param(&mut take, format!("dagger.{}.{slot}", e.layer), &mut param)?;
                    Ok(param)
                };
                let live: Vec<bool> = e.live.chars().map(|c| c == '1').collect();
                if live.len() != n {
                    return Err(corrupt(16, format!("dagger mask for `{}` has {} entries, expected {n}", e.layer, live.len())));
                }
                modules.push(DaggerParams {
                    layer,
                    fc1_weight: p("fc1_weight", vec![hidden, n])?,
                    fc1_bias: p("fc1_bias", vec![hidden])?,
                    fc2_weight: p("fc2_weight", vec![n, hidden])?,
                    fc2_bias: p("fc2_bias", vec![n])?,
                    offset: e.offset,
                    live,
                });
            }
            Some(DaggerBank { modules })
        }
    };
    if let Some(extra) = arrays.keys().next() {
        return Err(corrupt(16, format!("array `{extra}` does not belong to the network")));
    }
    Ok(Checkpoint {
        graph,
        bank,
        meta: header.meta,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Rounds every stored array to f32 precision, i.e. what a save/load cycle
/// yields.
pub fn quantize(ck: &Checkpoint) -> Result<Checkpoint> {
    decode(&encode(ck)?)
}
