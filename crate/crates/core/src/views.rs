//! Stochastic graph corruption: edge removal and feature masking.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Adjacency, Graph, NormKind, NormalizedAdjacency};
use crate::matrix::Matrix;
use crate::rng::{stream, Purpose};
use crate::Real;

/// Edge-removal probability `p_r` and feature-mask probability `p_m` of one view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionParams {
    #[serde(rename = "pr")]
    pub p_r: Real,
    #[serde(rename = "pm")]
    pub p_m: Real,
}

impl CorruptionParams {
    pub const NONE: CorruptionParams = CorruptionParams { p_r: 0.0, p_m: 0.0 };

    pub fn new(p_r: Real, p_m: Real) -> Result<Self> {
        let c = CorruptionParams { p_r, p_m };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_r", self.p_r), ("p_m", self.p_m)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("{name} = {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Which random substreams produced a view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub epoch: u64,
    pub view: u8,
}

#[derive(Debug, Clone)]
pub struct GraphView {
    pub adjacency: NormalizedAdjacency,
    pub features: Matrix,
    /// Surviving edges before self-loops and normalisation.
    pub edges: Adjacency,
    /// `true` for feature columns that were zeroed.
    pub masked_columns: Vec<bool>,
    pub params: CorruptionParams,
    pub provenance: Provenance,
}

impl GraphView {
    pub fn n_masked_columns(&self) -> usize {
        self.masked_columns.iter().filter(|&&m| m).count()
    }
}

/// Keeps each undirected edge independently with probability `1 - p_r`.
///
/// One draw per undirected edge, in CSR order, so both orientations survive
/// or vanish together.
pub fn remove_edges<R: Rng + ?Sized>(adj: &Adjacency, p_r: Real, rng: &mut R) -> Adjacency {
    if p_r <= 0.0 {
        return adj.clone();
    }
    let kept: Vec<(u32, u32)> = adj
        .undirected_edges()
        .filter(|_| rng.gen::<f64>() >= p_r as f64)
        .collect();
    Adjacency::from_unique_undirected(adj.n_nodes(), &kept)
}

/// Draws one mask over feature dimensions; `true` means the column is zeroed.
pub fn draw_feature_mask<R: Rng + ?Sized>(n_features: usize, p_m: Real, rng: &mut R) -> Vec<bool> {
    (0..n_features).map(|_| rng.gen::<f64>() < p_m as f64).collect()
}

/// Zeros the masked columns of every row.
pub fn apply_feature_mask(x: &Matrix, mask: &[bool]) -> Matrix {
    let mut out = x.clone();
    if mask.iter().any(|&m| m) {
        for r in 0..out.rows() {
            for (v, &m) in out.row_mut(r).iter_mut().zip(mask) {
                if m {
                    *v = 0.0;
                }
            }
        }
    }
    out
}

/// Masks a shared random subset of feature dimensions (same columns for every node).
pub fn mask_features<R: Rng + ?Sized>(x: &Matrix, p_m: Real, rng: &mut R) -> Matrix {
    let mask = draw_feature_mask(x.cols(), p_m, rng);
    apply_feature_mask(x, &mask)
}

/// Corrupts `g` with edge removal then feature masking and normalises the
/// surviving adjacency, recomputing degrees on the corrupted graph.
pub fn generate_view(
    g: &Graph,
    params: CorruptionParams,
    norm: NormKind,
    provenance: Provenance,
) -> Result<GraphView> {
    params.validate()?;
    let Provenance { seed, epoch, view } = provenance;
    let edges = remove_edges(
        g.adjacency(),
        params.p_r,
        &mut stream(seed, epoch, view, Purpose::EdgeRemoval),
    );
    let masked_columns = draw_feature_mask(
        g.n_features(),
        params.p_m,
        &mut stream(seed, epoch, view, Purpose::FeatureMask),
    );
    let features = apply_feature_mask(g.features(), &masked_columns);
    let adjacency = NormalizedAdjacency::new(&edges, norm);
    Ok(GraphView {
        adjacency,
        features,
        edges,
        masked_columns,
        params,
        provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::synthetic::random_graph;
    use crate::graph::sym_normalize;

    fn prov(seed: u64) -> Provenance {
        Provenance {
            seed,
            epoch: 0,
            view: 1,
        }
    }

    #[test]
    fn zero_probabilities_are_identity() {
        let g = random_graph(30, 60, 5, 1);
        let v = generate_view(&g, CorruptionParams::NONE, NormKind::Symmetric, prov(3)).unwrap();
        assert_eq!(&v.edges, g.adjacency());
        assert_eq!(&v.features, g.features());
        assert_eq!(v.adjacency, sym_normalize(&g));
    }

    #[test]
    fn full_probabilities_leave_self_loops_and_zeros() {
        let g = random_graph(12, 20, 4, 2);
        let v = generate_view(&g, CorruptionParams::new(1.0, 1.0).unwrap(), NormKind::Symmetric, prov(3))
            .unwrap();
        assert_eq!(v.edges.n_edges(), 0);
        assert_eq!(v.adjacency.to_dense(), Matrix::identity(12));
        assert!(v.features.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn same_provenance_same_view() {
        let g = random_graph(40, 100, 6, 4);
        let p = CorruptionParams::new(0.3, 0.4).unwrap();
        let a = generate_view(&g, p, NormKind::Row, prov(11)).unwrap();
        let b = generate_view(&g, p, NormKind::Row, prov(11)).unwrap();
        assert_eq!(a.edges, b.edges);
        assert_eq!(a.features, b.features);
        assert_eq!(a.adjacency, b.adjacency);
    }

    #[test]
    fn masked_columns_are_zero_columns() {
        let g = random_graph(10, 10, 50, 5);
        let v = generate_view(&g, CorruptionParams::new(0.0, 0.5).unwrap(), NormKind::Symmetric, prov(1))
            .unwrap();
        for c in 0..50 {
            let zero = (0..10).all(|r| v.features.get(r, c) == 0.0);
            assert_eq!(zero, v.masked_columns[c], "column {c}");
        }
    }

    #[test]
    fn out_of_range_probability_rejected() {
        assert!(CorruptionParams::new(1.2, 0.0).is_err());
        assert!(CorruptionParams::new(0.0, -0.1).is_err());
    }
}
