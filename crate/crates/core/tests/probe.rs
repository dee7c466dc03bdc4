use grace_core::eval::{evaluate, fit_probe, Metric, ProbeConfig, ProtocolOptions};
use grace_core::graph::make_splits;
use grace_core::graph::synthetic::PlantedPartition;
use grace_core::rng::{stream, Purpose};
use grace_core::trainer::embed;
use grace_core::{encoder::Model, Activation, Arch, Matrix};
use rand::Rng;

/// Three overlapping Gaussian-ish blobs in the plane, 20 points.
fn blobs() -> (Matrix, Vec<i64>) {
    let mut rng = stream(42, 0, 0, Purpose::Synthetic);
    let centres = [(0.0, 0.0), (1.5, 0.5), (0.5, 1.8)];
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..20 {
        let c = i % 3;
        let jitter = |r: &mut grace_core::rng::StreamRng| (0..3).map(|_| r.gen_range(-1.0..1.0)).sum::<f64>() * 0.5;
        rows.push(vec![centres[c].0 + jitter(&mut rng), 3.0 * (centres[c].1 + jitter(&mut rng))]);
        labels.push(c as i64);
    }
    (Matrix::from_rows(&rows), labels)
}

/// (1/n)[Σ CE + (λ/2)‖W‖²] on standardised inputs, written out directly.
fn oracle_objective(x: &[Vec<f64>], y: &[usize], w: &[Vec<f64>], b: &[f64], lambda: f64) -> f64 {
    let mut total = 0.0;
    for (xi, &yi) in x.iter().zip(y) {
        let z: Vec<f64> = w.iter().zip(b).map(|(wc, bc)| wc.iter().zip(xi).map(|(a, c)| a * c).sum::<f64>() + bc).collect();
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - z[yi];
    }
    let reg: f64 = w.iter().flatten().map(|v| v * v).sum();
    (total + 0.5 * lambda * reg) / x.len() as f64
}

fn standardise(x: &Matrix) -> Vec<Vec<f64>> {
    let n = x.rows() as f64;
    let cols: Vec<(f64, f64)> = (0..x.cols())
        .map(|c| {
            let mean = (0..x.rows()).map(|r| x.get(r, c)).sum::<f64>() / n;
            let var = (0..x.rows()).map(|r| (x.get(r, c) - mean).powi(2)).sum::<f64>() / n;
            (mean, if var > 0.0 { var.sqrt() } else { 1.0 })
        })
        .collect();
    (0..x.rows()).map(|r| cols.iter().enumerate().map(|(c, (m, s))| (x.get(r, c) - m) / s).collect()).collect()
}

/// Plain gradient descent with a fixed small step until the gradient vanishes.
fn oracle_minimum(x: &[Vec<f64>], y: &[usize], classes: usize, lambda: f64) -> f64 {
    let n = x.len() as f64;
    let d = x[0].len();
    let mut w = vec![vec![0.0; d]; classes];
    let mut b = vec![0.0; classes];
    for _ in 0..200_000 {
        let mut gw = vec![vec![0.0; d]; classes];
        let mut gb = vec![0.0; classes];
        for (xi, &yi) in x.iter().zip(y) {
            let z: Vec<f64> = w.iter().zip(&b).map(|(wc, bc)| wc.iter().zip(xi).map(|(a, c)| a * c).sum::<f64>() + bc).collect();
            let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            for c in 0..classes {
                let r = e[c] / s - if c == yi { 1.0 } else { 0.0 };
                gb[c] += r / n;
                for k in 0..d {
                    gw[c][k] += r * xi[k] / n;
                }
            }
        }
        let mut norm = 0.0;
        for c in 0..classes {
            for k in 0..d {
                gw[c][k] += lambda * w[c][k] / n;
                norm += gw[c][k] * gw[c][k];
                w[c][k] -= 0.5 * gw[c][k];
            }
            norm += gb[c] * gb[c];
            b[c] -= 0.5 * gb[c];
        }
        if norm.sqrt() < 1e-12 {
            break;
        }
    }
    oracle_objective(x, y, &w, &b, lambda)
}

#[test]
fn probe_reaches_the_gradient_descent_minimum() {
    let (x, labels) = blobs();
    let train: Vec<usize> = (0..20).collect();
    let y: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let xs = standardise(&x);
    for lambda in [1.0, 0.1, 5.0] {
        let cfg = ProbeConfig {
            lambda,
            max_iter: 2000,
            tol: 1e-10,
            standardize: true,
        };
        let probe = fit_probe(&x, &labels, &train, &cfg, 0).unwrap();
        let want = oracle_minimum(&xs, &y, 3, lambda);
        assert!((probe.objective - want).abs() < 1e-6, "λ={lambda}: {} vs {want}", probe.objective);

        // the reported objective is the objective of the reported parameters
        let w: Vec<Vec<f64>> = (0..3).map(|c| probe.weights.row(c).to_vec()).collect();
        let at_probe = oracle_objective(&xs, &y, &w, probe.bias.data(), lambda);
        assert!((at_probe - probe.objective).abs() < 1e-12);
    }
}

#[test]
fn restarts_agree_on_the_final_loss() {
    let g = PlantedPartition { nodes: 90, features: 30, q_in: 0.25, q_out: 0.1, ..Default::default() }.generate(2);
    let split = make_splits(&g, 0.3, 0.1, 1).unwrap();
    let cfg = ProbeConfig::default();
    let losses: Vec<f64> = (0..5)
        .map(|seed| fit_probe(g.features(), g.labels(), &split.train, &cfg, 100 + seed).unwrap().objective)
        .collect();
    let lo = losses.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert!(hi - lo < 1e-5, "{losses:?}");
}

#[test]
fn probing_leaves_the_encoder_untouched() {
    let g = PlantedPartition::default().generate(9);
    let model = Model::init(Arch::Gcn2, Activation::Prelu, g.n_features(), 8, &mut stream(3, 0, 0, Purpose::Init));
    let before = model.checksum();
    let e = embed(&model, &g).unwrap();
    let opts = ProtocolOptions::default();
    let split = opts.split(&g, 5).unwrap();
    opts.score(&e, &g, &split, 5).unwrap();
    assert_eq!(model.checksum(), before);
    assert_eq!(embed(&model, &g).unwrap(), e);
}

#[test]
fn micro_f1_equals_accuracy_on_a_real_probe() {
    let g = PlantedPartition::default().generate(4);
    let split = make_splits(&g, 0.2, 0.1, 8).unwrap();
    let probe = fit_probe(g.features(), g.labels(), &split.train, &ProbeConfig::default(), 8).unwrap();
    let acc = evaluate(&probe, g.features(), g.labels(), &split.test, Metric::Accuracy).unwrap();
    let f1 = evaluate(&probe, g.features(), g.labels(), &split.test, Metric::MicroF1).unwrap();
    assert_eq!(acc, f1);
    assert!(acc > 0.5, "planted features should be informative, got {acc}");
}
