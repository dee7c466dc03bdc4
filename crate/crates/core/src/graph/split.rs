use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};
use crate::Real;

/// Disjoint train / validation / test node sets over the labeled nodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    /// Seed the split was drawn with; `None` for splits read from disk.
    #[serde(skip)]
    pub seed: Option<u64>,
}

impl SplitSpec {
    pub fn validate(&self, g: &Graph) -> Result<()> {
        let n = g.n_nodes();
        let mut owner = vec![0u8; n];
        for (tag, set) in [(1u8, &self.train), (2, &self.val), (3, &self.test)] {
            for &i in set {
                if i >= n {
                    return Err(Error::InvalidArgument(format!("split index {i} out of range")));
                }
                if owner[i] != 0 {
                    return Err(Error::InvalidArgument(format!("node {i} appears in two splits")));
                }
                if g.labels()[i] < 0 {
                    return Err(Error::InvalidArgument(format!("node {i} is unlabeled")));
                }
                owner[i] = tag;
            }
        }
        Ok(())
    }
}

/// Random split of the labeled nodes: `⌊frac·L⌋` train and val nodes, rest test.
pub fn make_splits(g: &Graph, train_frac: Real, val_frac: Real, seed: u64) -> Result<SplitSpec> {
    let ok = |f: Real| f > 0.0 && f < 1.0;
    if !ok(train_frac) || !ok(val_frac) || train_frac + val_frac >= 1.0 {
        return Err(Error::InvalidArgument(format!(
            "split fractions must be positive with sum < 1, got {train_frac} and {val_frac}"
        )));
    }
    let mut nodes = g.labeled_nodes();
    let total = nodes.len();
    nodes.shuffle(&mut stream(seed, 0, 0, Purpose::Split));
    let n_train = (train_frac * total as Real).floor() as usize;
    let n_val = (val_frac * total as Real).floor() as usize;
    let mut train = nodes[..n_train].to_vec();
    let mut val = nodes[n_train..n_train + n_val].to_vec();
    let mut test = nodes[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(SplitSpec {
        train,
        val,
        test,
        seed: Some(seed),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Adjacency;
    use crate::matrix::Matrix;

    fn labeled(n: usize) -> Graph {
        Graph::new(Adjacency::empty(n), Matrix::zeros(n, 1), (0..n as i64).map(|i| i % 3).collect()).unwrap()
    }

    #[test]
    fn ten_nodes_floor_sizes() {
        let s = make_splits(&labeled(10), 0.1, 0.1, 0).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (1, 1, 8));
        s.validate(&labeled(10)).unwrap();
    }

    #[test]
    fn cora_sized_floor_sizes() {
        let s = make_splits(&labeled(2708), 0.1, 0.1, 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (270, 270, 2168));
    }

    #[test]
    fn deterministic_under_seed() {
        let g = labeled(50);
        assert_eq!(make_splits(&g, 0.2, 0.2, 9).unwrap(), make_splits(&g, 0.2, 0.2, 9).unwrap());
    }

    #[test]
    fn distinct_seeds_differ() {
        let g = labeled(10);
        let splits: Vec<_> = (0..20).map(|s| make_splits(&g, 0.1, 0.1, s).unwrap()).collect();
        // 90 ordered (train, val) choices exist for N = 10
        let distinct: std::collections::HashSet<_> =
            splits.iter().map(|s| (s.train.clone(), s.val.clone())).collect();
        assert!(distinct.len() >= 15, "only {} distinct splits", distinct.len());
    }

    #[test]
    fn unlabeled_nodes_are_excluded() {
        let mut labels = vec![0i64; 20];
        labels[3] = -1;
        labels[7] = -1;
        let g = Graph::new(Adjacency::empty(20), Matrix::zeros(20, 1), labels).unwrap();
        let s = make_splits(&g, 0.25, 0.25, 1).unwrap();
        assert_eq!(s.train.len() + s.val.len() + s.test.len(), 18);
        assert_eq!(s.train.len(), 4);
        s.validate(&g).unwrap();
    }

    #[test]
    fn bad_fractions_rejected() {
        let g = labeled(10);
        assert!(make_splits(&g, 0.0, 0.1, 0).is_err());
        assert!(make_splits(&g, 0.6, 0.4, 0).is_err());
        assert!(make_splits(&g, -0.1, 0.1, 0).is_err());
    }
}
