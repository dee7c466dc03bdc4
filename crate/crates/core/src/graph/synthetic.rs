//! Small labelled random graphs for tests and benchmarks.

use rand::Rng;

use super::{Adjacency, Graph};
use crate::matrix::Matrix;
use crate::rng::{stream, Purpose};
use crate::Real;

/// Planted-partition graph with bag-of-words style binary features.
///
/// Nodes are assigned to classes round-robin. Each pair is linked with
/// probability `p_in` inside a class and `p_out` across classes. Feature
/// dimensions are split into one block per class; a node switches on each
/// dimension of its own block with probability `q_in` and every other
/// dimension with probability `q_out`.
#[derive(Debug, Clone)]
pub struct PlantedPartition {
    pub nodes: usize,
    pub classes: usize,
    pub p_in: Real,
    pub p_out: Real,
    pub features: usize,
    pub q_in: Real,
    pub q_out: Real,
}

impl Default for PlantedPartition {
    fn default() -> Self {
        PlantedPartition {
            nodes: 60,
            classes: 3,
            p_in: 0.15,
            p_out: 0.01,
            features: 24,
            q_in: 0.4,
            q_out: 0.05,
        }
    }
}

impl PlantedPartition {
    pub fn generate(&self, seed: u64) -> Graph {
        let mut rng = stream(seed, 0, 0, Purpose::Synthetic);
        let n = self.nodes;
        let labels: Vec<i64> = (0..n).map(|i| (i % self.classes) as i64).collect();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let p = if labels[i] == labels[j] { self.p_in } else { self.p_out };
                if rng.gen::<f64>() < p as f64 {
                    edges.push((i as u32, j as u32));
                }
            }
        }
        let block = (self.features / self.classes).max(1);
        let mut x = Matrix::zeros(n, self.features);
        for i in 0..n {
            let own = labels[i] as usize;
            for d in 0..self.features {
                let q = if d / block == own { self.q_in } else { self.q_out };
                if rng.gen::<f64>() < q as f64 {
                    x.set(i, d, 1.0);
                }
            }
        }
        let adj = Adjacency::from_unique_undirected(n, &edges);
        Graph::new(adj, x, labels).expect("consistent synthetic graph")
    }
}

/// Erdős–Rényi graph with exactly `edges` distinct undirected edges and
/// uniform features in `[-1, 1)`.
pub fn random_graph(nodes: usize, edges: usize, features: usize, seed: u64) -> Graph {
    assert!(nodes >= 2 && edges <= nodes * (nodes - 1) / 2);
    let mut rng = stream(seed, 0, 1, Purpose::Synthetic);
    let mut set = std::collections::BTreeSet::new();
    while set.len() < edges {
        let a = rng.gen_range(0..nodes as u32);
        let b = rng.gen_range(0..nodes as u32);
        if a != b {
            set.insert((a.min(b), a.max(b)));
        }
    }
    let edges: Vec<(u32, u32)> = set.into_iter().collect();
    let x = Matrix::from_vec(
        nodes,
        features,
        (0..nodes * features).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let labels = (0..nodes).map(|i| (i % 2) as i64).collect();
    Graph::new(Adjacency::from_unique_undirected(nodes, &edges), x, labels).unwrap()
}
