//! Binary parameter checkpoints.
//!
//! ```text
//! "GRCP"  u32 version  u8 arch tag  u8 layer count
//! per tensor: u64 rows, u64 cols, rows·cols binary64 (little-endian, row-major)
//! ```
//!
//! Tensors appear as layer weights, skip projections, PReLU slopes (if any),
//! then the projection head's `w1, b1, w2, b2`.

use std::fs;
use std::path::Path;

use super::{Activation, Arch, EncoderParams, Model, ProjectionParams};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::Real;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GRCP";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn checkpoint_bytes(model: &Model) -> Vec<u8> {
    let tensors = model.tensors();
    let total: usize = tensors.iter().map(|t| 16 + 8 * t.len()).sum();
    let mut out = Vec::with_capacity(10 + total);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.push(model.encoder.arch.tag());
    out.push(model.encoder.weights.len() as u8);
    for t in tensors {
        out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
        for &v in t.data() {
            out.extend_from_slice(&(v as f64).to_le_bytes());
        }
    }
    out
}

pub fn write_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, checkpoint_bytes(model)).map_err(|e| Error::io(path, e))
}

struct Cursor<'b> {
    bytes: &'b [u8],
    pos: usize,
}

impl<'b> Cursor<'b> {
    fn take(&mut self, n: usize) -> Result<&'b [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

/// Parses a checkpoint. PReLU slopes are recognised from the tensor count;
/// when they are absent `activation` names the encoder's activation.
pub fn parse_checkpoint(bytes: &[u8], activation: Activation) -> Result<Model> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(c.take(4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let tag = c.take(1)?[0];
    let arch = Arch::from_tag(tag).ok_or_else(|| Error::Format(format!("unknown arch tag {tag}")))?;
    let layers = c.take(1)?[0] as usize;
    if layers != arch.n_layers() {
        return Err(Error::Format(format!("{arch} checkpoint declares {layers} layers")));
    }
    let mut tensors = Vec::new();
    while !c.done() {
        let rows = c.u64()? as usize;
        let cols = c.u64()? as usize;
        let len = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Format("tensor size overflows".into()))?;
        let data = c
            .take(len)?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()) as Real)
            .collect();
        tensors.push(Matrix::from_vec(rows, cols, data)?);
    }

    let plain = arch.n_layers() + arch.n_skips() + 4;
    let activation = if tensors.len() == plain + arch.n_layers() {
        Activation::Prelu
    } else if tensors.len() == plain && activation != Activation::Prelu {
        activation
    } else {
        return Err(Error::Format(format!(
            "{arch} checkpoint with activation {activation} cannot hold {} tensors",
            tensors.len()
        )));
    };
    let mut it = tensors.into_iter();
    let mut next = |k: usize| (&mut it).take(k).collect::<Vec<_>>();
    let weights = next(arch.n_layers());
    let skips = next(arch.n_skips());
    let slopes = if activation == Activation::Prelu { next(arch.n_layers()) } else { vec![] };
    let mut head = next(4).into_iter();
    let mut h = || head.next().unwrap();
    let model = Model {
        encoder: EncoderParams {
            arch,
            activation,
            weights,
            skips,
            slopes,
        },
        projection: ProjectionParams {
            w1: h(),
            b1: h(),
            w2: h(),
            b2: h(),
        },
    };
    model.validate()?;
    Ok(model)
}

pub fn read_checkpoint(path: impl AsRef<Path>, activation: Activation) -> Result<Model> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes, activation)
}
