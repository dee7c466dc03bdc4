//! Files written by the commands.
//!
//! Embedding dumps are little-endian binary:
//!
//! | bytes | content |
//! |---|---|
//! | 4 | magic `GREM` |
//! | 4 | format version, `u32` (1) |
//! | 4 | digest length `d`, `u32` |
//! | d | config digest, UTF-8 |
//! | 8 | rows `N`, `u64` |
//! | 8 | columns `F`, `u64` |
//! | 8·N·F | row-major `f64` values |

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use grace_core::{EpochRecord, Matrix};
use serde::{Deserialize, Serialize};

use crate::failure::{CliResult, Failure};

const MAGIC: &[u8; 4] = b"GREM";
const VERSION: u32 = 1;

pub fn embedding_bytes(e: &Matrix, digest: &str) -> Vec<u8> {
    let mut out = Vec::with_capacity(28 + digest.len() + 8 * e.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(digest.len() as u32).to_le_bytes());
    out.extend_from_slice(digest.as_bytes());
    out.extend_from_slice(&(e.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(e.cols() as u64).to_le_bytes());
    for &v in e.data() {
        out.extend_from_slice(&(v as f64).to_le_bytes());
    }
    out
}

/// Returns the matrix and the digest it was written with.
pub fn parse_embeddings(bytes: &[u8]) -> Result<(Matrix, String), String> {
    let mut pos = 0;
    let mut take = |n: usize| -> Result<&[u8], String> {
        let s = bytes.get(pos..pos + n).ok_or("truncated embedding file")?;
        pos += n;
        Ok(s)
    };
    if take(4)? != MAGIC {
        return Err("not an embedding file (bad magic)".into());
    }
    let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes"));
    let version = u32_at(take(4)?);
    if version != VERSION {
        return Err(format!("unsupported embedding format version {version}"));
    }
    let d = u32_at(take(4)?) as usize;
    let digest = String::from_utf8(take(d)?.to_vec()).map_err(|_| "digest is not UTF-8")?;
    let u64_at = |b: &[u8]| u64::from_le_bytes(b.try_into().expect("8 bytes")) as usize;
    let rows = u64_at(take(8)?);
    let cols = u64_at(take(8)?);
    let len = rows.checked_mul(cols).and_then(|l| l.checked_mul(8)).ok_or("dimensions overflow")?;
    let data = take(len)?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")) as grace_core::Real)
        .collect();
    if pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - pos));
    }
    let m = Matrix::from_vec(rows, cols, data).map_err(|e| e.to_string())?;
    Ok((m, digest))
}

pub fn write_embeddings(path: &Path, e: &Matrix, digest: &str) -> CliResult<()> {
    std::fs::write(path, embedding_bytes(e, digest)).map_err(|err| Failure::output(path, err))
}

pub fn read_embeddings(path: &Path) -> CliResult<(Matrix, String)> {
    let bytes = std::fs::read(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    parse_embeddings(&bytes).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

/// One JSON object per epoch.
pub fn write_log(path: &Path, log: &[EpochRecord]) -> CliResult<()> {
    let file = File::create(path).map_err(|e| Failure::output(path, e))?;
    let mut w = BufWriter::new(file);
    for rec in log {
        serde_json::to_writer(&mut w, rec).map_err(|e| Failure::output(path, e))?;
        w.write_all(b"\n").map_err(|e| Failure::output(path, e))?;
    }
    w.flush().map_err(|e| Failure::output(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::output(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Failure::output(path, e))
}

pub fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::output(dir, e))
}

/// Index of a command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_digest: String,
    /// Canonical `key=value` form of the training config.
    pub config: String,
    pub dataset: Option<PathBuf>,
    pub seed: u64,
    pub files: Vec<String>,
    pub version: String,
}

impl Manifest {
    pub fn new(command: &str, cfg: &crate::config::ExperimentConfig) -> Self {
        Manifest {
            command: command.into(),
            config_digest: cfg.digest(),
            config: cfg.train.canonical(),
            dataset: cfg.data.clone(),
            seed: cfg.train.seed,
            files: Vec::new(),
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        write_json(&dir.join("manifest.json"), self)
    }
}
