//! CIFAR-10 binary batches: 3073-byte records of one label byte followed by
//! 1024 red, 1024 green and 1024 blue pixel bytes.

use std::fs;
use std::path::{Path, PathBuf};

use super::{Dataset, Split};
use crate::error::{Error, Result};

pub const RECORD_LEN: usize = 3073;
pub const PIXELS: usize = 3072;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CifarRecord {
    pub label: u8,
    pub pixels: Vec<u8>,
}

pub fn parse_records(bytes: &[u8]) -> Result<Vec<CifarRecord>> {
    if !bytes.len().is_multiple_of(RECORD_LEN) {
        return Err(Error::Data(format!(
            "CIFAR-10 batch of {} bytes is not a whole number of {RECORD_LEN}-byte records",
            bytes.len()
        )));
    }
    bytes
        .chunks_exact(RECORD_LEN)
        .enumerate()
        .map(|(i, r)| {
            if r[0] > 9 {
                return Err(Error::Data(format!("record {i} has label {} (expected 0..=9)", r[0])));
            }
            Ok(CifarRecord {
                label: r[0],
                pixels: r[1..].to_vec(),
            })
        })
        .collect()
}

pub fn read_records(path: &Path) -> Result<Vec<CifarRecord>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_records(&bytes).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn encode_records(records: &[CifarRecord]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(records.len() * RECORD_LEN);
    for r in records {
        if r.pixels.len() != PIXELS || r.label > 9 {
            return Err(Error::Data(format!("bad record: label {}, {} pixels", r.label, r.pixels.len())));
        }
        out.push(r.label);
        out.extend_from_slice(&r.pixels);
    }
    Ok(out)
}

pub fn write_records(path: &Path, records: &[CifarRecord]) -> Result<()> {
    fs::write(path, encode_records(records)?).map_err(|e| Error::io(path, e))
}

/// Pixels scaled to `[0, 1]`; normalization is applied by the caller.
pub fn records_to_dataset(records: &[CifarRecord]) -> Result<Dataset> {
    let mut images = Vec::with_capacity(records.len() * PIXELS);
    for r in records {
        images.extend(r.pixels.iter().map(|&p| f64::from(p) / 255.0));
    }
    Dataset::new([3, 32, 32], 10, images, records.iter().map(|r| usize::from(r.label)).collect())
}

/// Reads `path` directly when it is a file; for a directory, reads the five
/// training batches or the test batch.
pub fn load_cifar10(path: &Path, split: Split) -> Result<Dataset> {
    let files: Vec<PathBuf> = if path.is_dir() {
        match split {
            Split::Train => (1..=5).map(|i| path.join(format!("data_batch_{i}.bin"))).collect(),
            Split::Test => vec![path.join("test_batch.bin")],
        }
    } else {
        vec![path.to_path_buf()]
    };
    let mut records = Vec::new();
    for f in &files {
        records.extend(read_records(f)?);
    }
    records_to_dataset(&records)
}
