//! Graph data model: symmetric CSR adjacency, dense features, integer labels.

mod io;
mod normalize;
mod split;
pub mod synthetic;

pub use io::{load_dataset, load_dataset_with_report, load_splits, save_dataset, save_splits, LoadReport};
pub use normalize::{row_normalize, sym_normalize, NormKind, NormalizedAdjacency};
pub use split::{make_splits, SplitSpec};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Symmetric sparsity pattern of an undirected simple graph.
///
/// Each undirected edge `{i, j}` is materialised as both `(i, j)` and `(j, i)`;
/// column indices are sorted within each row and there are no self-loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
}

impl Adjacency {
    /// Builds the pattern from undirected pairs. Duplicates (in either
    /// orientation) collapse into one edge; self-loops are dropped.
    /// Returns the pattern plus `(duplicates, self_loops)` counts.
    pub fn from_pairs(
        n: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<(Self, usize, usize)> {
        let mut directed: Vec<(u32, u32)> = Vec::new();
        let mut self_loops = 0;
        let mut seen = 0;
        for (a, b) in pairs {
            if a >= n || b >= n {
                return Err(Error::InvalidArgument(format!(
                    "edge ({a}, {b}) references a node outside 0..{n}"
                )));
            }
            seen += 1;
            if a == b {
                self_loops += 1;
                continue;
            }
            directed.push((a as u32, b as u32));
            directed.push((b as u32, a as u32));
        }
        directed.sort_unstable();
        directed.dedup();
        let unique = directed.len() / 2;
        let duplicates = seen - self_loops - unique;
        Ok((Self::from_sorted_directed(n, &directed), duplicates, self_loops))
    }

    /// Pattern from undirected pairs already known to be unique with `i < j`.
    pub(crate) fn from_unique_undirected(n: usize, edges: &[(u32, u32)]) -> Self {
        let mut counts = vec![0usize; n + 1];
        for &(a, b) in edges {
            counts[a as usize + 1] += 1;
            counts[b as usize + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let indptr = counts;
        let mut fill = indptr.clone();
        let mut indices = vec![0u32; indptr[n]];
        for &(a, b) in edges {
            indices[fill[a as usize]] = b;
            fill[a as usize] += 1;
            indices[fill[b as usize]] = a;
            fill[b as usize] += 1;
        }
        for i in 0..n {
            indices[indptr[i]..indptr[i + 1]].sort_unstable();
        }
        Adjacency { n, indptr, indices }
    }

    fn from_sorted_directed(n: usize, directed: &[(u32, u32)]) -> Self {
        let mut indptr = vec![0usize; n + 1];
        for &(a, _) in directed {
            indptr[a as usize + 1] += 1;
        }
        for i in 0..n {
            indptr[i + 1] += indptr[i];
        }
        let indices = directed.iter().map(|&(_, b)| b).collect();
        Adjacency { n, indptr, indices }
    }

    pub fn empty(n: usize) -> Self {
        Adjacency {
            n,
            indptr: vec![0; n + 1],
            indices: Vec::new(),
        }
    }

    #[inline]
    pub fn n_nodes(&self) -> usize {
        self.n
    }

    /// Number of undirected edges.
    #[inline]
    pub fn n_edges(&self) -> usize {
        self.indices.len() / 2
    }

    #[inline]
    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.indices[self.indptr[i]..self.indptr[i + 1]]
    }

    #[inline]
    pub fn degree(&self, i: usize) -> usize {
        self.indptr[i + 1] - self.indptr[i]
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors(i).binary_search(&(j as u32)).is_ok()
    }

    /// Each undirected edge once, as `(i, j)` with `i < j`, in CSR order.
    pub fn undirected_edges(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        (0..self.n).flat_map(move |i| {
            self.neighbors(i)
                .iter()
                .filter(move |&&j| j as usize > i)
                .map(move |&j| (i as u32, j))
        })
    }

    /// Checks the structural invariants; used by tests and after loading.
    pub fn validate(&self) -> Result<()> {
        if self.indptr.len() != self.n + 1 || self.indptr[self.n] != self.indices.len() {
            return Err(Error::Format("row pointer length or tail mismatch".into()));
        }
        for i in 0..self.n {
            if self.indptr[i] > self.indptr[i + 1] {
                return Err(Error::Format(format!("row pointer decreases at row {i}")));
            }
            let row = self.neighbors(i);
            for w in row.windows(2) {
                if w[0] >= w[1] {
                    return Err(Error::Format(format!("row {i} not strictly sorted")));
                }
            }
            for &j in row {
                let j = j as usize;
                if j == i {
                    return Err(Error::Format(format!("self-loop stored at node {i}")));
                }
                if j >= self.n || !self.has_edge(j, i) {
                    return Err(Error::Format(format!("edge ({i}, {j}) has no mirror")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    adjacency: Adjacency,
    features: Matrix,
    labels: Vec<i64>,
}

impl Graph {
    pub fn new(adjacency: Adjacency, features: Matrix, labels: Vec<i64>) -> Result<Self> {
        let n = adjacency.n_nodes();
        if features.rows() != n {
            return Err(Error::Dimension(format!(
                "feature matrix has {} rows for {n} nodes",
                features.rows()
            )));
        }
        if labels.len() != n {
            return Err(Error::Dimension(format!(
                "{} labels for {n} nodes",
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y < -1) {
            return Err(Error::InvalidArgument(format!("label {bad} below -1")));
        }
        Ok(Graph {
            adjacency,
            features,
            labels,
        })
    }

    /// Convenience constructor from an undirected edge list.
    pub fn from_edges(
        n: usize,
        edges: &[(usize, usize)],
        features: Matrix,
        labels: Vec<i64>,
    ) -> Result<Self> {
        let (adj, _, _) = Adjacency::from_pairs(n, edges.iter().copied())?;
        Graph::new(adj, features, labels)
    }

    #[inline]
    pub fn n_nodes(&self) -> usize {
        self.adjacency.n_nodes()
    }

    #[inline]
    pub fn n_edges(&self) -> usize {
        self.adjacency.n_edges()
    }

    #[inline]
    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn adjacency(&self) -> &Adjacency {
        &self.adjacency
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    /// `max(label) + 1`, ignoring unlabeled nodes.
    pub fn n_classes(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize)
    }

    pub fn labeled_nodes(&self) -> Vec<usize> {
        (0..self.n_nodes()).filter(|&i| self.labels[i] >= 0).collect()
    }

    /// Same graph with a different feature matrix of the same row count.
    pub fn with_features(&self, features: Matrix) -> Result<Graph> {
        Graph::new(self.adjacency.clone(), features, self.labels.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_edge_materialised_both_ways() {
        let g = Graph::from_edges(2, &[(0, 1)], Matrix::zeros(2, 1), vec![0, 0]).unwrap();
        assert_eq!(g.adjacency().neighbors(0), &[1]);
        assert_eq!(g.adjacency().neighbors(1), &[0]);
        assert_eq!(g.n_edges(), 1);
    }

    #[test]
    fn reversed_duplicates_and_self_loops_collapse() {
        let (adj, dups, loops) =
            Adjacency::from_pairs(3, [(0, 1), (1, 0), (0, 1), (2, 2), (1, 2)]).unwrap();
        assert_eq!((adj.n_edges(), dups, loops), (2, 2, 1));
        adj.validate().unwrap();
        let edges: Vec<_> = adj.undirected_edges().collect();
        assert_eq!(edges, vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn out_of_range_edge_is_rejected() {
        assert!(Adjacency::from_pairs(2, [(0, 2)]).is_err());
    }

    #[test]
    fn feature_rows_must_match() {
        let adj = Adjacency::empty(3);
        assert!(matches!(
            Graph::new(adj, Matrix::zeros(2, 1), vec![0; 3]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn unique_undirected_builder_matches_pairs_builder() {
        let edges = [(0u32, 3u32), (1, 2), (0, 1), (2, 3)];
        let a = Adjacency::from_unique_undirected(4, &edges);
        let (b, _, _) =
            Adjacency::from_pairs(4, edges.iter().map(|&(x, y)| (x as usize, y as usize))).unwrap();
        assert_eq!(a, b);
    }
}
