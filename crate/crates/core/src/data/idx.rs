//! IDX files: a big-endian magic `0x0000_08DD` (unsigned bytes, `DD`
//! dimensions), `DD` big-endian u32 extents, then the raw bytes.

use std::fs;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const IMAGES_MAGIC: u32 = 0x0000_0803;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxArray {
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.dims.clone(), self.data.iter().map(|&b| f64::from(b)).collect()).expect("validated extents")
    }
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    let word = |off: usize| -> Result<u32> {
        bytes
            .get(off..off + 4)
            .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or_else(|| Error::Data(format!("IDX header truncated at byte {off}")))
    };
    let magic = word(0)?;
    if magic != LABELS_MAGIC && magic != IMAGES_MAGIC {
        return Err(Error::Data(format!(
            "bad IDX magic {magic:#010x} (expected {LABELS_MAGIC:#010x} or {IMAGES_MAGIC:#010x})"
        )));
    }
    let rank = (magic & 0xff) as usize;
    let mut dims = Vec::with_capacity(rank);
    let mut total: usize = 1;
    for d in 0..rank {
        let e = word(4 + 4 * d)? as usize;
        total = total
            .checked_mul(e)
            .ok_or_else(|| Error::Data(format!("IDX extents {dims:?} x {e} overflow")))?;
        dims.push(e);
    }
    let start = 4 + 4 * rank;
    let body = &bytes[start..];
    if body.len() != total {
        return Err(Error::Data(format!("IDX body has {} bytes, header declares {total}", body.len())));
    }
    Ok(IdxArray { dims, data: body.to_vec() })
}

pub fn read_idx(path: &Path) -> Result<IdxArray> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx(&bytes).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Tensor of the declared shape with raw byte values.
pub fn load_idx(path: &Path) -> Result<Tensor> {
    Ok(read_idx(path)?.to_tensor())
}

pub fn encode_idx(a: &IdxArray) -> Result<Vec<u8>> {
    let magic = match a.dims.len() {
        1 => LABELS_MAGIC,
        3 => IMAGES_MAGIC,
        r => return Err(Error::Data(format!("IDX writer supports rank 1 or 3, got {r}"))),
    };
    if a.dims.iter().product::<usize>() != a.data.len() {
        return Err(Error::Data("IDX extents do not match data length".into()));
    }
    let mut out = magic.to_be_bytes().to_vec();
    for &d in &a.dims {
        let d = u32::try_from(d).map_err(|_| Error::Data(format!("IDX extent {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(&a.data);
    Ok(out)
}

pub fn write_idx(path: &Path, a: &IdxArray) -> Result<()> {
    fs::write(path, encode_idx(a)?).map_err(|e| Error::io(path, e))
}

/// Single-channel images scaled to `[0, 1]` with labels from a companion file.
pub fn load_idx_dataset(images: &Path, labels: &Path, classes: usize) -> Result<Dataset> {
    let im = read_idx(images)?;
    let lb = read_idx(labels)?;
    if im.dims.len() != 3 || lb.dims.len() != 1 || im.dims[0] != lb.dims[0] {
        return Err(Error::Data(format!("IDX images {:?} do not pair with labels {:?}", im.dims, lb.dims)));
    }
    Dataset::new(
        [1, im.dims[1], im.dims[2]],
        classes,
        im.data.iter().map(|&b| f64::from(b) / 255.0).collect(),
        lb.data.iter().map(|&b| usize::from(b)).collect(),
    )
}
