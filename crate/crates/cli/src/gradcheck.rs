//! Finite-difference self-check of every differentiable component.

use grace_core::encoder::{EncoderVars, Model, ProjectionVars};
use grace_core::graph::synthetic::random_graph;
use grace_core::ndiff::{grad_check_params, GradCheckOptions, GradCheckReport};
use grace_core::objective::objective_tape;
use grace_core::rng::{stream, Purpose};
use grace_core::views::generate_view;
use grace_core::{
    Activation, Arch, CorruptionParams, EncoderParams, Graph, LossConfig, LossMode, Matrix, NormalizedAdjacency,
    ProjectionParams, Provenance, Real, Tape, Var,
};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::failure::{CliResult, Failure};

/// Largest accepted `|analytic - numeric| / max(1, |numeric|)`.
pub const TOLERANCE: Real = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentCheck {
    pub component: String,
    pub nodes: usize,
    pub max_rel_error: Real,
    /// Name of the parameter holding the worst coordinate.
    pub worst_param: String,
    pub worst_index: usize,
    pub coordinates: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckSummary {
    pub seed: u64,
    pub tolerance: Real,
    pub components: Vec<ComponentCheck>,
    pub passed: bool,
}

impl GradCheckSummary {
    /// Fails with the worst offending component named.
    pub fn verdict(&self) -> CliResult<()> {
        let worst = self
            .components
            .iter()
            .filter(|c| !c.passed)
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error));
        match worst {
            None => Ok(()),
            Some(c) => Err(Failure::GradCheck(format!(
                "{}: max rel. err {:.3e} at {}[{}] (tolerance {:.0e})",
                c.component, c.max_rel_error, c.worst_param, c.worst_index, self.tolerance
            ))),
        }
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        for c in &self.components {
            s.push_str(&format!(
                "{:<5} {:<34} N={:<3} max rel. err {:.3e}  ({} coordinates)\n",
                if c.passed { "ok" } else { "FAIL" },
                c.component,
                c.nodes,
                c.max_rel_error,
                c.coordinates
            ));
        }
        s
    }
}

fn uniform(rows: usize, cols: usize, seed: u64, salt: u8) -> Matrix {
    let mut r = stream(seed, 0, salt, Purpose::Synthetic);
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| r.gen_range(-1.0..1.0)).collect()).expect("sized")
}

/// A connected-ish random graph with 6 to 10 nodes.
fn small_graph(seed: u64, salt: u8) -> Graph {
    let mut r = stream(seed, 0, salt, Purpose::Synthetic);
    let n = r.gen_range(6..=10);
    random_graph(n, n + 2, 5, seed.wrapping_add(salt as u64))
}

fn encoder_vars(p: &EncoderParams, v: &[Var]) -> EncoderVars {
    let (nw, ns) = (p.weights.len(), p.skips.len());
    EncoderVars {
        arch: p.arch,
        activation: p.activation,
        weights: v[..nw].to_vec(),
        skips: v[nw..nw + ns].to_vec(),
        slopes: v[nw + ns..].to_vec(),
    }
}

fn projection_vars(v: &[Var]) -> ProjectionVars {
    ProjectionVars {
        w1: v[0],
        b1: v[1],
        w2: v[2],
        b2: v[3],
    }
}

fn encoder_param_names(p: &EncoderParams) -> Vec<String> {
    let w = (0..p.weights.len()).map(|i| format!("W{i}"));
    let s = (0..p.skips.len()).map(|i| format!("W_skip{i}"));
    let a = (0..p.slopes.len()).map(|i| format!("prelu{i}"));
    w.chain(s).chain(a).collect()
}

const PROJECTION_NAMES: [&str; 4] = ["proj.W1", "proj.b1", "proj.W2", "proj.b2"];

/// Reduces a matrix to a scalar through fixed random weights, so every
/// output entry gets a distinct upstream gradient.
fn weighted_sum(t: &mut Tape<'_>, x: Var, w: &Matrix) -> grace_core::Result<Var> {
    let w = t.constant(w.clone());
    let p = t.mul(x, w)?;
    Ok(t.sum(p))
}

struct Check {
    component: String,
    nodes: usize,
    names: Vec<String>,
    report: GradCheckReport,
}

fn encoder_check(arch: Arch, act: Activation, seed: u64, salt: u8, opts: GradCheckOptions) -> CliResult<Check> {
    let g = small_graph(seed, salt);
    let enc = EncoderParams::init(arch, act, g.n_features(), 4, &mut stream(seed, 0, salt, Purpose::Init));
    let adj = NormalizedAdjacency::new(g.adjacency(), arch.norm_kind());
    let probe = uniform(g.n_nodes(), 4, seed, salt.wrapping_add(100));
    let params: Vec<Matrix> = enc.tensors().into_iter().cloned().collect();
    let report = grad_check_params(
        |t, v| {
            let vars = encoder_vars(&enc, v);
            let x = t.constant(g.features().clone());
            let h = vars.forward(t, &adj, x)?;
            weighted_sum(t, h, &probe)
        },
        &params,
        opts,
    )?;
    Ok(Check {
        component: format!("{} encoder ({})", arch.name(), act.name()),
        nodes: g.n_nodes(),
        names: encoder_param_names(&enc),
        report,
    })
}

fn projection_check(seed: u64, salt: u8, opts: GradCheckOptions) -> CliResult<Check> {
    let n = small_graph(seed, salt).n_nodes();
    let head = ProjectionParams::init(4, &mut stream(seed, 0, salt, Purpose::Init));
    let input = uniform(n, 4, seed, salt);
    let probe = uniform(n, 4, seed, salt.wrapping_add(100));
    let params: Vec<Matrix> = head.tensors().into_iter().cloned().collect();
    let report = grad_check_params(
        |t, v| {
            let x = t.constant(input.clone());
            let p = projection_vars(v).forward(t, x)?;
            weighted_sum(t, p, &probe)
        },
        &params,
        opts,
    )?;
    Ok(Check {
        component: "projection head".into(),
        nodes: n,
        names: PROJECTION_NAMES.iter().map(|s| s.to_string()).collect(),
        report,
    })
}

fn objective_check(label: &str, cfg: LossConfig, seed: u64, salt: u8, opts: GradCheckOptions) -> CliResult<Check> {
    let n = small_graph(seed, salt).n_nodes();
    let params = vec![uniform(n, 4, seed, salt), uniform(n, 4, seed, salt.wrapping_add(1))];
    let report = grad_check_params(|t, v| Ok(objective_tape(t, v[0], v[1], &cfg)?.value), &params, opts)?;
    Ok(Check {
        component: label.into(),
        nodes: n,
        names: vec!["U".into(), "V".into()],
        report,
    })
}

/// Model, two corrupted views and the objective, end to end.
fn end_to_end_check(arch: Arch, mode: LossMode, seed: u64, salt: u8, opts: GradCheckOptions) -> CliResult<Check> {
    let g = small_graph(seed, salt);
    let model = Model::init(arch, Activation::Prelu, g.n_features(), 4, &mut stream(seed, 0, salt, Purpose::Init));
    let views = [1u8, 2].map(|view| {
        let prov = Provenance {
            seed,
            epoch: salt as u64,
            view,
        };
        generate_view(&g, CorruptionParams { p_r: 0.2, p_m: 0.2 }, arch.norm_kind(), prov)
    });
    let [v1, v2] = views;
    let (v1, v2) = (v1?, v2?);
    let cfg = LossConfig {
        mode,
        ..LossConfig::default()
    };
    let n_enc = model.encoder.tensors().len();
    let params: Vec<Matrix> = model.tensors().into_iter().cloned().collect();
    let report = grad_check_params(
        |t, v| {
            let enc = encoder_vars(&model.encoder, &v[..n_enc]);
            let proj = projection_vars(&v[n_enc..]);
            let x1 = t.constant(v1.features.clone());
            let x2 = t.constant(v2.features.clone());
            let h1 = enc.forward(t, &v1.adjacency, x1)?;
            let h2 = enc.forward(t, &v2.adjacency, x2)?;
            let pu = proj.forward(t, h1)?;
            let pv = proj.forward(t, h2)?;
            Ok(objective_tape(t, pu, pv, &cfg)?.value)
        },
        &params,
        opts,
    )?;
    let mut names = encoder_param_names(&model.encoder);
    names.extend(PROJECTION_NAMES.iter().map(|s| s.to_string()));
    let mode = match mode {
        LossMode::Grace => "grace",
        LossMode::Infonce => "infonce",
    };
    Ok(Check {
        component: format!("end to end ({}, {mode})", arch.name()),
        nodes: g.n_nodes(),
        names,
        report,
    })
}

/// Runs the suite. `corrupt_gradient` offsets every analytic gradient entry
/// by 1e-3, which must make the suite fail.
pub fn cmd_gradcheck(seed: u64, corrupt_gradient: bool) -> CliResult<GradCheckSummary> {
    let opts = GradCheckOptions {
        perturb_analytic: if corrupt_gradient { 1e-3 } else { 0.0 },
        ..GradCheckOptions::default()
    };
    let grace = LossConfig::default();
    let sharp = LossConfig { tau: 0.2, ..grace };
    let nce = LossConfig {
        mode: LossMode::Infonce,
        ..grace
    };
    let nce_plain = LossConfig {
        nce_temperature: false,
        ..nce
    };
    let mut checks = Vec::new();
    for (salt, act) in [Activation::Relu, Activation::Prelu, Activation::Elu, Activation::Rrelu]
        .into_iter()
        .enumerate()
    {
        checks.push(encoder_check(Arch::Gcn2, act, seed, salt as u8, opts)?);
    }
    checks.push(encoder_check(Arch::Mp3Residual, Activation::Prelu, seed, 4, opts)?);
    checks.push(encoder_check(Arch::Mp3Residual, Activation::Relu, seed, 5, opts)?);
    checks.push(projection_check(seed, 6, opts)?);
    checks.push(objective_check("grace objective (tau 0.5)", grace, seed, 7, opts)?);
    checks.push(objective_check("grace objective (tau 0.2)", sharp, seed, 8, opts)?);
    checks.push(objective_check("infonce objective", nce, seed, 9, opts)?);
    checks.push(objective_check("infonce objective (no temperature)", nce_plain, seed, 10, opts)?);
    checks.push(end_to_end_check(Arch::Gcn2, LossMode::Grace, seed, 11, opts)?);
    checks.push(end_to_end_check(Arch::Mp3Residual, LossMode::Infonce, seed, 12, opts)?);

    let components: Vec<ComponentCheck> = checks
        .into_iter()
        .map(|c| {
            let (param, index) = c.report.worst;
            ComponentCheck {
                component: c.component,
                nodes: c.nodes,
                max_rel_error: c.report.max_rel_error,
                worst_param: c.names.get(param).cloned().unwrap_or_else(|| format!("param{param}")),
                worst_index: index,
                coordinates: c.report.coordinates,
                passed: c.report.max_rel_error < TOLERANCE,
            }
        })
        .collect();
    Ok(GradCheckSummary {
        seed,
        tolerance: TOLERANCE,
        passed: components.iter().all(|c| c.passed),
        components,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_suite_passes() {
        let s = cmd_gradcheck(0, false).unwrap();
        assert!(s.passed, "{}", s.table());
        assert!(s.verdict().is_ok());
        assert!(s.components.iter().all(|c| (6..=10).contains(&c.nodes)));
    }

    #[test]
    fn corrupted_gradient_fails_with_named_offender() {
        let s = cmd_gradcheck(0, true).unwrap();
        assert!(!s.passed);
        let err = s.verdict().unwrap_err();
        assert_eq!(err.exit_code(), 5);
        assert!(err.to_string().contains("max rel. err"));
    }
}
