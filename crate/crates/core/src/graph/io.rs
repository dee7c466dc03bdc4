//! Dataset directory I/O.
//!
//! ```text
//! edges.txt     "<i> <j>" per line, '#' starts a comment
//! features.bin  "GRFX", u32 version = 1, u64 N, u64 F, N·F binary64 (all little-endian, row-major)
//! labels.txt    one integer per line, -1 = unlabeled
//! splits.json   optional {"train": [...], "val": [...], "test": [...]}
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{Adjacency, Graph, SplitSpec};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::Real;

pub const FEATURE_MAGIC: &[u8; 4] = b"GRFX";
pub const FEATURE_VERSION: u32 = 1;

/// Edge bookkeeping gathered while loading.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    /// Non-comment edge lines, counted as written.
    pub raw_edge_lines: usize,
    /// Distinct undirected edges kept.
    pub undirected_edges: usize,
    /// Lines repeating an edge already seen in either orientation.
    pub duplicate_lines: usize,
    pub self_loops_dropped: usize,
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Graph> {
    load_dataset_with_report(dir).map(|(g, _)| g)
}

pub fn load_dataset_with_report(dir: impl AsRef<Path>) -> Result<(Graph, LoadReport)> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
        ));
    }
    let features = read_features(&dir.join("features.bin"))?;
    let labels = read_labels(&dir.join("labels.txt"))?;
    if labels.len() != features.rows() {
        return Err(Error::Dimension(format!(
            "features.bin declares N = {} but labels.txt has {} lines",
            features.rows(),
            labels.len()
        )));
    }
    let n = features.rows();
    let edges_path = dir.join("edges.txt");
    let pairs = read_edges(&edges_path, n)?;
    let raw_edge_lines = pairs.len();
    let (adjacency, duplicate_lines, self_loops_dropped) = Adjacency::from_pairs(n, pairs)?;
    if self_loops_dropped > 0 {
        log::warn!(
            "{}: dropped {self_loops_dropped} self-loop line(s)",
            edges_path.display()
        );
    }
    let report = LoadReport {
        raw_edge_lines,
        undirected_edges: adjacency.n_edges(),
        duplicate_lines,
        self_loops_dropped,
    };
    Ok((Graph::new(adjacency, features, labels)?, report))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: PathBuf::from(path),
        line,
        message: message.into(),
    }
}

fn read_edges(path: &Path, n: usize) -> Result<Vec<(usize, usize)>> {
    let text = read_text(path)?;
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut fields = body.split_whitespace();
        let (Some(a), Some(b), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(parse_err(path, lineno, "expected two node ids"));
        };
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| parse_err(path, lineno, format!("invalid node id {s:?}")))
        };
        let (a, b) = (parse(a)?, parse(b)?);
        if a >= n || b >= n {
            return Err(parse_err(
                path,
                lineno,
                format!("node id out of range for N = {n}"),
            ));
        }
        pairs.push((a, b));
    }
    Ok(pairs)
}

fn read_labels(path: &Path) -> Result<Vec<i64>> {
    let text = read_text(path)?;
    let mut labels = Vec::new();
    let lines: Vec<&str> = text.lines().collect();
    let last_nonblank = lines.iter().rposition(|l| !l.trim().is_empty()).map_or(0, |p| p + 1);
    for (lineno, line) in lines[..last_nonblank].iter().enumerate() {
        let v: i64 = line
            .trim()
            .parse()
            .map_err(|_| parse_err(path, lineno + 1, format!("invalid label {line:?}")))?;
        if v < -1 {
            return Err(parse_err(path, lineno + 1, format!("label {v} below -1")));
        }
        labels.push(v);
    }
    Ok(labels)
}

fn read_features(path: &Path) -> Result<Matrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 24 || &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::Format(format!("{}: missing GRFX header", path.display())));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FEATURE_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported feature file version {version}",
            path.display()
        )));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let f = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let body = &bytes[24..];
    let expected = n.checked_mul(f).and_then(|c| c.checked_mul(8));
    if expected != Some(body.len()) {
        return Err(Error::Format(format!(
            "{}: header declares {n}x{f} values but payload has {} bytes",
            path.display(),
            body.len()
        )));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()) as Real)
        .collect();
    Matrix::from_vec(n, f, data)
}

/// Writes a graph in the directory layout read by [`load_dataset`].
pub fn save_dataset(g: &Graph, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let path = dir.join("edges.txt");
    let mut w = BufWriter::new(fs::File::create(&path).map_err(|e| Error::io(&path, e))?);
    for (a, b) in g.adjacency().undirected_edges() {
        writeln!(w, "{a} {b}").map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("features.bin");
    let mut w = BufWriter::new(fs::File::create(&path).map_err(|e| Error::io(&path, e))?);
    let x = g.features();
    let mut header = Vec::with_capacity(24);
    header.extend_from_slice(FEATURE_MAGIC);
    header.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    header.extend_from_slice(&(x.rows() as u64).to_le_bytes());
    header.extend_from_slice(&(x.cols() as u64).to_le_bytes());
    w.write_all(&header).map_err(|e| Error::io(&path, e))?;
    for &v in x.data() {
        w.write_all(&(v as f64).to_le_bytes())
            .map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("labels.txt");
    let mut text = String::with_capacity(g.n_nodes() * 3);
    for y in g.labels() {
        text.push_str(&y.to_string());
        text.push('\n');
    }
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Reads `splits.json` if the directory has one.
pub fn load_splits(dir: impl AsRef<Path>) -> Result<Option<SplitSpec>> {
    let path = dir.as_ref().join("splits.json");
    if !path.exists() {
        return Ok(None);
    }
    let text = read_text(&path)?;
    let spec: SplitSpec = serde_json::from_str(&text)
        .map_err(|e| parse_err(&path, e.line(), e.to_string()))?;
    Ok(Some(spec))
}

pub fn save_splits(split: &SplitSpec, dir: impl AsRef<Path>) -> Result<()> {
    let path = dir.as_ref().join("splits.json");
    let text = serde_json::to_string(split).expect("split serialisation");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}
