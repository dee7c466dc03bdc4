use serde::{Deserialize, Serialize};

use super::{Adjacency, Graph};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    /// `D̂^{-1/2} (A + I) D̂^{-1/2}`
    Symmetric,
    /// `D̂^{-1} (A + I)`
    Row,
}

/// Normalised adjacency with self-loops, stored as CSR with values.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    kind: NormKind,
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<Real>,
}

pub fn sym_normalize(g: &Graph) -> NormalizedAdjacency {
    NormalizedAdjacency::new(g.adjacency(), NormKind::Symmetric)
}

pub fn row_normalize(g: &Graph) -> NormalizedAdjacency {
    NormalizedAdjacency::new(g.adjacency(), NormKind::Row)
}

impl NormalizedAdjacency {
    /// Adds self-loops to `adj` and normalises with degrees of `A + I`.
    pub fn new(adj: &Adjacency, kind: NormKind) -> Self {
        let n = adj.n_nodes();
        let deg: Vec<Real> = (0..n).map(|i| (adj.degree(i) + 1) as Real).collect();
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::with_capacity(adj.indices().len() + n);
        let mut values = Vec::with_capacity(adj.indices().len() + n);
        indptr.push(0);
        for i in 0..n {
            let row = adj.neighbors(i);
            let split = row.partition_point(|&j| (j as usize) < i);
            let cols = row[..split]
                .iter()
                .copied()
                .chain(std::iter::once(i as u32))
                .chain(row[split..].iter().copied());
            for j in cols {
                let v = match kind {
                    NormKind::Symmetric => 1.0 / (deg[i] * deg[j as usize]).sqrt(),
                    NormKind::Row => 1.0 / deg[i],
                };
                indices.push(j);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        NormalizedAdjacency {
            kind,
            n,
            indptr,
            indices,
            values,
        }
    }

    pub fn kind(&self) -> NormKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Entry `(i, j)`, zero outside the stored pattern.
    pub fn get(&self, i: usize, j: usize) -> Real {
        let row = &self.indices[self.indptr[i]..self.indptr[i + 1]];
        match row.binary_search(&(j as u32)) {
            Ok(k) => self.values[self.indptr[i] + k],
            Err(_) => 0.0,
        }
    }

    pub fn row_entries(&self, i: usize) -> impl Iterator<Item = (usize, Real)> + '_ {
        (self.indptr[i]..self.indptr[i + 1]).map(move |k| (self.indices[k] as usize, self.values[k]))
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row_entries(i) {
                m.set(i, j, v);
            }
        }
        m
    }

    /// `self · x`.
    pub fn spmm(&self, x: &Matrix) -> Result<Matrix> {
        if x.rows() != self.n {
            return Err(Error::Shape {
                op: "spmm",
                left: (self.n, self.n),
                right: x.shape(),
            });
        }
        let f = x.cols();
        let mut out = Matrix::zeros(self.n, f);
        for i in 0..self.n {
            let dst = out.row_mut(i);
            for k in self.indptr[i]..self.indptr[i + 1] {
                let v = self.values[k];
                let src = x.row(self.indices[k] as usize);
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += v * s;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · x`. For the symmetric kind this is the same product as [`spmm`](Self::spmm).
    pub fn spmm_transpose(&self, x: &Matrix) -> Result<Matrix> {
        if self.kind == NormKind::Symmetric {
            return self.spmm(x);
        }
        if x.rows() != self.n {
            return Err(Error::Shape {
                op: "spmm_transpose",
                left: (self.n, self.n),
                right: x.shape(),
            });
        }
        let mut out = Matrix::zeros(self.n, x.cols());
        for i in 0..self.n {
            for k in self.indptr[i]..self.indptr[i + 1] {
                let v = self.values[k];
                let j = self.indices[k] as usize;
                for (d, s) in out.row_mut(j).iter_mut().zip(x.row(i)) {
                    *d += v * s;
                }
            }
        }
        Ok(out)
    }
}
