use grace_core::graph::synthetic::random_graph;
use grace_core::graph::Graph;
use grace_core::objective::{
    bound_gap, grace_objective, infonce_objective, objective_tape, pairwise_loss, CriticMatrix,
};
use grace_core::rng::{stream, Purpose};
use grace_core::{Activation, Arch, EncoderParams, LossConfig, LossMode, Matrix, NormalizedAdjacency, Tape};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, scale: f64) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-scale..scale, rows * cols).prop_map(move |d| Matrix::from_vec(rows, cols, d).unwrap())
}

/// Two same-shaped embedding matrices with no zero rows.
fn embedding_pair() -> impl Strategy<Value = (Matrix, Matrix)> {
    (1usize..9, 1usize..6).prop_flat_map(|(n, d)| (matrix(n, d, 3.0), matrix(n, d, 3.0))).prop_filter(
        "zero row",
        |(u, v)| {
            [u, v].iter().all(|m| (0..m.rows()).all(|r| m.row(r).iter().map(|x| x * x).sum::<f64>() > 1e-6))
        },
    )
}

fn tau() -> impl Strategy<Value = f64> {
    0.05f64..2.0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn logsumexp_is_bracketed_by_the_row_max(x in (1usize..6, 1usize..12).prop_flat_map(|(r, c)| matrix(r, c, 1e6))) {
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let l = tape.logsumexp_rows(v);
        let lse = tape.value(l);
        let log_n = (x.cols() as f64).ln();
        for r in 0..x.rows() {
            let max = x.row(r).iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let slack = 4.0 * f64::EPSILON * (max.abs() + log_n);
            prop_assert!(lse.get(r, 0) >= max);
            prop_assert!(lse.get(r, 0) <= max + log_n + slack);
        }
    }

    #[test]
    fn backward_is_linear(
        x in matrix(5, 3, 2.0),
        w in matrix(3, 4, 2.0),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        // f = Σ relu(XW)², g = Σ lse_rows(XW)
        let grad = |ca: f64, cb: f64| {
            let mut t = Tape::new();
            let xv = t.constant(x.clone());
            let wv = t.param(w.clone());
            let h = t.matmul(xv, wv).unwrap();
            let r = t.relu(h);
            let sq = t.mul(r, r).unwrap();
            let f = t.sum(sq);
            let l = t.logsumexp_rows(h);
            let g = t.sum(l);
            let fa = t.scale(f, ca);
            let gb = t.scale(g, cb);
            let out = t.add(fa, gb).unwrap();
            t.backward(out).unwrap().take(wv).unwrap()
        };
        let combined = grad(a, b);
        let mut separate = grad(1.0, 0.0);
        separate.scale_assign(a);
        let mut gpart = grad(0.0, 1.0);
        gpart.scale_assign(b);
        separate.add_assign(&gpart);
        let scale = 1.0 + separate.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(combined.max_abs_diff(&separate) <= 1e-12 * scale);
    }

    #[test]
    fn pairwise_terms_and_objective_are_non_positive((u, v) in embedding_pair(), t in tau()) {
        let theta = CriticMatrix::cosine(&u, &v).unwrap();
        for i in 0..theta.n() {
            prop_assert!(pairwise_loss(i, &theta, t) <= 0.0);
            prop_assert!(pairwise_loss(i, &theta.swapped(), t) <= 0.0);
        }
        prop_assert!(grace_objective(&theta, t) <= 0.0);
    }

    #[test]
    fn objective_is_symmetric_in_the_views((u, v) in embedding_pair(), t in tau()) {
        let uv = grace_objective(&CriticMatrix::cosine(&u, &v).unwrap(), t);
        let vu = grace_objective(&CriticMatrix::cosine(&v, &u).unwrap(), t);
        prop_assert_eq!(uv.to_bits(), vu.to_bits());
    }

    #[test]
    fn objective_ignores_positive_rescaling((u, v) in embedding_pair(), t in tau(), c in 1e-3f64..1e3) {
        let base = grace_objective(&CriticMatrix::cosine(&u, &v).unwrap(), t);
        let scaled = grace_objective(&CriticMatrix::cosine(&u.map(|x| c * x), &v.map(|x| c * x)).unwrap(), t);
        prop_assert!((base - scaled).abs() <= 1e-12 * (1.0 + base.abs()) / t);
    }

    #[test]
    fn bound_gap_is_non_negative((u, v) in embedding_pair(), t in tau()) {
        let theta = CriticMatrix::cosine(&u, &v).unwrap();
        prop_assert!(bound_gap(&theta, t) >= 0.0);
    }

    #[test]
    fn tape_objective_matches_plain((u, v) in embedding_pair(), t in tau()) {
        for mode in [LossMode::Grace, LossMode::Infonce] {
            let cfg = LossConfig { tau: t, mode, nce_temperature: true };
            let mut tape = Tape::new();
            let pu = tape.constant(u.clone());
            let pv = tape.constant(v.clone());
            let terms = objective_tape(&mut tape, pu, pv, &cfg).unwrap();
            let got = tape.value(terms.value).item();
            let theta = CriticMatrix::cosine(&u, &v).unwrap();
            let want = match mode {
                LossMode::Grace => grace_objective(&theta, t),
                LossMode::Infonce => infonce_objective(&theta, t, true),
            };
            prop_assert!((got - want).abs() <= 1e-11 * (1.0 + want.abs()) / t, "{mode:?}: {got} vs {want}");
            let gap = terms.bound_gap(&tape).unwrap();
            if mode == LossMode::Grace {
                prop_assert!((gap - bound_gap(&theta, t)).abs() <= 1e-11 * (1.0 + gap) / t);
            }
        }
    }
}

fn permuted(g: &Graph, perm: &[usize]) -> Graph {
    let edges: Vec<(usize, usize)> = g.adjacency().undirected_edges().map(|(a, b)| (perm[a as usize], perm[b as usize])).collect();
    let mut x = Matrix::zeros(g.n_nodes(), g.n_features());
    let mut labels = vec![0; g.n_nodes()];
    for i in 0..g.n_nodes() {
        x.row_mut(perm[i]).copy_from_slice(g.features().row(i));
        labels[perm[i]] = g.labels()[i];
    }
    Graph::from_edges(g.n_nodes(), &edges, x, labels).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn encoders_are_permutation_equivariant(
        seed: u64,
        m in 0usize..20,
        perm in Just((0..8).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let g = random_graph(8, m, 5, seed);
        let pg = permuted(&g, &perm);
        for arch in [Arch::Gcn2, Arch::Mp3Residual] {
            for act in [Activation::Relu, Activation::Prelu, Activation::Elu, Activation::Rrelu] {
                let enc = EncoderParams::init(arch, act, 5, 4, &mut stream(seed, 0, 0, Purpose::Init));
                let a = NormalizedAdjacency::new(g.adjacency(), arch.norm_kind());
                let pa = NormalizedAdjacency::new(pg.adjacency(), arch.norm_kind());
                let h = enc.encode(&a, g.features()).unwrap();
                prop_assert_eq!(&h, &enc.encode(&a, g.features()).unwrap());
                let ph = enc.encode(&pa, pg.features()).unwrap();
                for i in 0..8 {
                    for (x, y) in h.row(i).iter().zip(ph.row(perm[i])) {
                        prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()), "{arch:?}/{act:?} node {i}");
                    }
                }
            }
        }
    }
}
