use grace_core::graph::synthetic::{random_graph, PlantedPartition};
use grace_core::graph::{load_dataset, row_normalize, save_dataset, sym_normalize, Adjacency};
use grace_core::rng::{stream, Purpose};
use grace_core::views::{generate_view, remove_edges};
use grace_core::{CorruptionParams, Matrix, NormKind, NormalizedAdjacency, Provenance};
use proptest::prelude::*;

fn small_graph() -> impl Strategy<Value = grace_core::Graph> {
    (2usize..30, any::<u64>()).prop_flat_map(|(n, seed)| {
        let max_edges = n * (n - 1) / 2;
        (0..=max_edges.min(80)).prop_map(move |m| random_graph(n, m, 3, seed))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn edge_removal_only_drops_edges(g in small_graph(), p_r in 0.0f64..=1.0, seed: u64) {
        let kept = remove_edges(g.adjacency(), p_r, &mut stream(seed, 1, 1, Purpose::EdgeRemoval));
        prop_assert_eq!(kept.n_nodes(), g.n_nodes());
        prop_assert!(kept.n_edges() <= g.n_edges());
        for i in 0..kept.n_nodes() {
            for &j in kept.neighbors(i) {
                prop_assert!(g.adjacency().has_edge(i, j as usize));
                prop_assert!(kept.has_edge(j as usize, i));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn views_zero_exactly_the_masked_columns(
        g in small_graph(),
        p_r in 0.0f64..=1.0,
        p_m in 0.0f64..=1.0,
        seed: u64,
    ) {
        let prov = Provenance { seed, epoch: 3, view: 2 };
        let v = generate_view(&g, CorruptionParams::new(p_r, p_m).unwrap(), NormKind::Symmetric, prov).unwrap();
        prop_assert_eq!(v.features.shape(), g.features().shape());
        for c in 0..g.n_features() {
            for r in 0..g.n_nodes() {
                let expected = if v.masked_columns[c] { 0.0 } else { g.features().get(r, c) };
                prop_assert_eq!(v.features.get(r, c).to_bits(), expected.to_bits());
            }
        }
    }

    #[test]
    fn symmetric_normalisation_is_bitwise_symmetric(g in small_graph()) {
        let a = sym_normalize(&g).to_dense();
        for i in 0..a.rows() {
            for j in 0..a.cols() {
                prop_assert_eq!(a.get(i, j).to_bits(), a.get(j, i).to_bits());
            }
        }
    }

    #[test]
    fn row_normalised_rows_sum_to_one(g in small_graph()) {
        let a = row_normalize(&g);
        for i in 0..a.n() {
            let s: f64 = a.row_entries(i).map(|(_, v)| v).sum();
            prop_assert!((s - 1.0).abs() < 1e-9, "row {i} sums to {s}");
        }
    }

    #[test]
    fn identity_adjacency_spmm_is_identity(n in 1usize..20, f in 1usize..6, seed: u64) {
        let x = random_graph(n.max(2), 0, f, seed).features().select_rows(&(0..n).collect::<Vec<_>>());
        for kind in [NormKind::Symmetric, NormKind::Row] {
            let a = NormalizedAdjacency::new(&Adjacency::empty(n), kind);
            prop_assert_eq!(&a.spmm(&x).unwrap(), &x);
        }
    }
}

#[test]
fn view_one_ignores_view_two_parameters() {
    let g = random_graph(50, 200, 10, 8);
    let prov = Provenance { seed: 4, epoch: 7, view: 1 };
    let a = generate_view(&g, CorruptionParams::new(0.3, 0.2).unwrap(), NormKind::Symmetric, prov).unwrap();
    for p_r_2 in [0.0, 0.5, 0.9] {
        let other = Provenance { view: 2, ..prov };
        generate_view(&g, CorruptionParams::new(p_r_2, 0.4).unwrap(), NormKind::Symmetric, other).unwrap();
        let again = generate_view(&g, CorruptionParams::new(0.3, 0.2).unwrap(), NormKind::Symmetric, prov).unwrap();
        assert_eq!(again.edges, a.edges);
        assert_eq!(again.masked_columns, a.masked_columns);
    }
}

#[test]
fn save_then_load_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut g = random_graph(40, 90, 7, 12);
    // awkward values that a lossy decimal writer would not preserve
    let mut x = g.features().clone();
    x.set(0, 0, 0.1 + 0.2);
    x.set(1, 1, f64::MIN_POSITIVE);
    x.set(2, 2, -1e300);
    g = g.with_features(x).unwrap();
    save_dataset(&g, dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.adjacency(), g.adjacency());
    assert_eq!(back.labels(), g.labels());
    let bits = |m: &Matrix| m.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(back.features()), bits(g.features()));

    let dir2 = tempfile::tempdir().unwrap();
    save_dataset(&back, dir2.path()).unwrap();
    let again = load_dataset(dir2.path()).unwrap();
    assert_eq!(bits(again.features()), bits(g.features()));
    assert_eq!(again.adjacency(), g.adjacency());
}

#[test]
fn planted_partition_round_trips_with_unlabeled_nodes() {
    let dir = tempfile::tempdir().unwrap();
    let g = PlantedPartition::default().generate(3);
    let mut labels = g.labels().to_vec();
    labels[5] = -1;
    let g = grace_core::Graph::new(g.adjacency().clone(), g.features().clone(), labels).unwrap();
    save_dataset(&g, dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.labels(), g.labels());
    assert_eq!(back.labeled_nodes().len(), g.n_nodes() - 1);
}
