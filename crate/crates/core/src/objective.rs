//! The contrastive objective, its InfoNCE variant and two diagnostics.
//!
//! With critic θ(u, v) = cos(g(u), g(v)) and temperature τ, the pairwise term
//! for node i is
//!
//! ```text
//! ℓ(u_i, v_i) = θ(u_i,v_i)/τ − log( Σ_k e^{θ(u_i,v_k)/τ} + Σ_{k≠i} e^{θ(u_i,u_k)/τ} )
//! ```
//!
//! and the objective is 𝒥 = (1/2N) Σ_i [ℓ(u_i, v_i) + ℓ(v_i, u_i)].
//! Everything is evaluated in log space.
//!
//! Two evaluation paths exist: tape functions used for training
//! ([`objective_tape`]) and plain functions over a [`CriticMatrix`] used for
//! diagnostics and tests.

use serde::{Deserialize, Serialize};

use crate::encoder::ProjectionParams;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::ndiff::{logsumexp, Tape, Var};
use crate::Real;

pub const DEFAULT_TAU: Real = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    Grace,
    Infonce,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub tau: Real,
    pub mode: LossMode,
    /// InfoNCE only: divide the critic by τ. Off gives the plain-critic form.
    pub nce_temperature: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            tau: DEFAULT_TAU,
            mode: LossMode::Grace,
            nce_temperature: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidArgument(format!("tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }
}

/// Critic values between and within two embedding sets.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticMatrix {
    /// θ(u_i, v_j)
    pub uv: Matrix,
    /// θ(u_i, u_j)
    pub uu: Matrix,
    /// θ(v_i, v_j)
    pub vv: Matrix,
}

impl CriticMatrix {
    /// Inner products of the rows as given.
    pub fn inner(u: &Matrix, v: &Matrix) -> Result<Self> {
        if u.shape() != v.shape() {
            return Err(Error::Shape {
                op: "critic",
                left: u.shape(),
                right: v.shape(),
            });
        }
        Ok(CriticMatrix {
            uv: u.matmul_nt(v)?,
            uu: u.matmul_nt(u)?,
            vv: v.matmul_nt(v)?,
        })
    }

    /// Cosine similarities of the rows.
    pub fn cosine(u: &Matrix, v: &Matrix) -> Result<Self> {
        Self::inner(&normalize_rows(u)?, &normalize_rows(v)?)
    }

    pub fn n(&self) -> usize {
        self.uv.rows()
    }

    /// Same critic with the roles of the two views exchanged.
    pub fn swapped(&self) -> CriticMatrix {
        CriticMatrix {
            uv: self.uv.transpose(),
            uu: self.vv.clone(),
            vv: self.uu.clone(),
        }
    }
}

fn normalize_rows(x: &Matrix) -> Result<Matrix> {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let n = out.row(r).iter().map(|v| v * v).sum::<Real>().sqrt();
        if n == 0.0 {
            return Err(Error::CollapsedEmbedding { row: r });
        }
        out.row_mut(r).iter_mut().for_each(|v| *v /= n);
    }
    Ok(out)
}

/// θ(u, v) = cos(g(u), g(v)) for every pair of rows.
pub fn critic(u: &Matrix, v: &Matrix, g: &ProjectionParams) -> Result<CriticMatrix> {
    CriticMatrix::cosine(&g.project(u)?, &g.project(v)?)
}

/// ℓ(u_i, v_i) from critic values. Always ≤ 0.
pub fn pairwise_loss(i: usize, theta: &CriticMatrix, tau: Real) -> Real {
    let n = theta.n();
    let terms: Vec<Real> = (0..n)
        .map(|k| theta.uv.get(i, k) / tau)
        .chain((0..n).filter(|&k| k != i).map(|k| theta.uu.get(i, k) / tau))
        .collect();
    theta.uv.get(i, i) / tau - logsumexp(&terms)
}

/// 𝒥 = (1/2N) Σ_i [ℓ(u_i, v_i) + ℓ(v_i, u_i)].
pub fn grace_objective(theta: &CriticMatrix, tau: Real) -> Real {
    let n = theta.n();
    let swapped = theta.swapped();
    let total: Real = (0..n)
        .map(|i| pairwise_loss(i, theta, tau) + pairwise_loss(i, &swapped, tau))
        .sum();
    total / (2 * n) as Real
}

/// Symmetrised InfoNCE, `½[ℓ_NCE(U,V) + ℓ_NCE(V,U)]` with
/// `ℓ_NCE(U,V) = (1/N) Σ_i [θ_ii/τ − log((1/N) Σ_j e^{θ_ij/τ})]`.
/// With `temperature` off τ is ignored.
pub fn infonce_objective(theta: &CriticMatrix, tau: Real, temperature: bool) -> Real {
    let t = if temperature { tau } else { 1.0 };
    let n = theta.n();
    let log_n = (n as Real).ln();
    let side = |m: &Matrix| -> Real {
        (0..n)
            .map(|i| {
                let row: Vec<Real> = m.row(i).iter().map(|v| v / t).collect();
                m.get(i, i) / t - (logsumexp(&row) - log_n)
            })
            .sum::<Real>()
            / n as Real
    };
    0.5 * (side(&theta.uv) + side(&theta.uv.transpose()))
}

/// `I_NCE(U,V) + I_NCE(V,U) − 2𝒥`, where `I_NCE` uses the critic θ/τ and the
/// cross-view denominator `ρ_c(u_i) = Σ_j e^{θ(u_i,v_j)/τ}`.
///
/// Row by row this is `log(1 + ρ_r/ρ_c)` with `ρ_r` the intra-view
/// denominator, evaluated as a softplus of log-sum-exp differences so small
/// gaps keep full relative precision. Never negative.
pub fn bound_gap(theta: &CriticMatrix, tau: Real) -> Real {
    let scaled = CriticMatrix {
        uv: theta.uv.map(|v| v / tau),
        uu: theta.uu.map(|v| v / tau),
        vv: theta.vv.map(|v| v / tau),
    };
    bound_gap_scaled(&scaled.uv, &scaled.uu, &scaled.vv)
}

/// [`bound_gap`] over critic values already divided by τ.
pub fn bound_gap_scaled(s_uv: &Matrix, s_uu: &Matrix, s_vv: &Matrix) -> Real {
    let n = s_uv.rows();
    if n < 2 {
        return 0.0;
    }
    let s_vu = s_uv.transpose();
    let off_diag = |m: &Matrix, i: usize| -> Vec<Real> {
        m.row(i).iter().enumerate().filter(|&(k, _)| k != i).map(|(_, &v)| v).collect()
    };
    let mut total = 0.0;
    for i in 0..n {
        for (cross, intra) in [(s_uv, s_uu), (&s_vu, s_vv)] {
            let d = logsumexp(&off_diag(intra, i)) - logsumexp(cross.row(i));
            total += softplus(d);
        }
    }
    total / n as Real
}

fn softplus(x: Real) -> Real {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Triplet form of ℓ(u_i, v_i) for an identity head and inner-product critic:
///
/// `4Nτ + Σ_{j≠i} [(‖u_i−v_i‖² − ‖u_i−v_j‖²) + (‖u_i−v_i‖² − ‖u_i−u_j‖²)]`.
pub fn triplet_surrogate(u: &Matrix, v: &Matrix, i: usize, tau: Real) -> Real {
    let n = u.rows();
    let d2 = |a: &[Real], b: &[Real]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<Real>();
    let pos = d2(u.row(i), v.row(i));
    let margins: Real = (0..n)
        .filter(|&j| j != i)
        .map(|j| (pos - d2(u.row(i), v.row(j))) + (pos - d2(u.row(i), u.row(j))))
        .sum();
    4.0 * n as Real * tau + margins
}

/// Tape handles produced by [`objective_tape`].
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveTerms {
    /// 𝒥 or 𝒥_NCE, to be maximised.
    pub value: Var,
    /// Row-normalised projections divided by √τ, so that their products are θ/τ.
    pub zu: Var,
    pub zv: Var,
    pub s_uv: Var,
    /// N×2 per-node terms `ℓ_u`, `ℓ_v` (fused contrastive node).
    pub terms: Var,
}

impl ObjectiveTerms {
    /// Bound gap of the current values. Reuses the denominators recorded by
    /// the objective when it has them.
    pub fn bound_gap(&self, tape: &Tape<'_>) -> Result<Real> {
        if let Some(ratio) = tape.intra_cross_ratio(self.terms) {
            let n = (ratio.len() / 2) as Real;
            return Ok(ratio.iter().map(|r| r.ln_1p()).sum::<Real>() / n);
        }
        let (zu, zv) = (tape.value(self.zu), tape.value(self.zv));
        Ok(bound_gap_scaled(tape.value(self.s_uv), &zu.matmul_nt(zu)?, &zv.matmul_nt(zv)?))
    }
}

/// Records the objective over projected (not yet normalised) embeddings
/// `pu`, `pv`. Returns the objective value to maximise plus intermediates.
pub fn objective_tape(tape: &mut Tape<'_>, pu: Var, pv: Var, cfg: &LossConfig) -> Result<ObjectiveTerms> {
    cfg.validate()?;
    let n = tape.value(pu).rows();
    let inv_sqrt_tau = 1.0 / cfg.tau.sqrt();
    let nu = tape.l2_normalize_rows(pu)?;
    let nv = tape.l2_normalize_rows(pv)?;
    let zu = tape.scale(nu, inv_sqrt_tau);
    let zv = tape.scale(nv, inv_sqrt_tau);
    match cfg.mode {
        LossMode::Grace => {
            let s_uv = tape.matmul_nt(zu, zv)?;
            let s_uu = tape.gram(zu)?;
            let s_vv = tape.gram(zv)?;
            let terms = tape.contrastive_terms(s_uv, Some((s_uu, s_vv)))?;
            let total = tape.sum(terms);
            let value = tape.scale(total, 1.0 / (2 * n) as Real);
            Ok(ObjectiveTerms {
                value,
                zu,
                zv,
                s_uv,
                terms,
            })
        }
        LossMode::Infonce => {
            let s_uv = tape.matmul_nt(zu, zv)?;
            let logits = if cfg.nce_temperature {
                s_uv
            } else {
                tape.matmul_nt(nu, nv)?
            };
            let terms = tape.contrastive_terms(logits, None)?;
            let mean = tape.mean(terms);
            let value = tape.add_const(mean, (n as Real).ln());
            Ok(ObjectiveTerms {
                value,
                zu,
                zv,
                s_uv,
                terms,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use rand::Rng;

    fn random(n: usize, f: usize, seed: u64) -> Matrix {
        let mut r = stream(seed, 0, 0, Purpose::Synthetic);
        Matrix::from_vec(n, f, (0..n * f).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn tape_objective(u: &Matrix, v: &Matrix, cfg: LossConfig) -> Real {
        let mut t = Tape::new();
        let pu = t.constant(u.clone());
        let pv = t.constant(v.clone());
        let terms = objective_tape(&mut t, pu, pv, &cfg).unwrap();
        t.value(terms.value).item()
    }

    #[test]
    fn single_node_terms_vanish() {
        let u = Matrix::from_rows(&[[0.3, -0.2]]);
        let v = Matrix::from_rows(&[[0.1, 0.9]]);
        let th = CriticMatrix::cosine(&u, &v).unwrap();
        assert_eq!(pairwise_loss(0, &th, 0.5), 0.0);
        assert_eq!(grace_objective(&th, 0.5), 0.0);
        assert_eq!(infonce_objective(&th, 0.5, true), 0.0);
        assert_eq!(bound_gap(&th, 0.5), 0.0);
        assert_eq!(tape_objective(&u, &v, LossConfig::default()), 0.0);
    }

    #[test]
    fn equal_critic_two_nodes_gives_minus_log_three() {
        let th = CriticMatrix {
            uv: Matrix::filled(2, 2, 0.3),
            uu: Matrix::filled(2, 2, 0.3),
            vv: Matrix::filled(2, 2, 0.3),
        };
        assert!((pairwise_loss(0, &th, 0.5) + (3.0 as Real).ln()).abs() < 1e-15);
        assert!(infonce_objective(&th, 0.5, true).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_rows_have_zero_critic() {
        let u = Matrix::from_rows(&[[2.0, 0.0]]);
        let v = Matrix::from_rows(&[[0.0, 5.0]]);
        assert_eq!(CriticMatrix::cosine(&u, &v).unwrap().uv.item(), 0.0);
    }

    #[test]
    fn collapsed_projection_is_an_error() {
        let u = Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]]);
        assert!(matches!(CriticMatrix::cosine(&u, &u), Err(Error::CollapsedEmbedding { row: 1 })));
    }

    #[test]
    fn tape_and_plain_objectives_agree() {
        let (u, v) = (random(7, 4, 1), random(7, 4, 2));
        let th = CriticMatrix::cosine(&u, &v).unwrap();
        for tau in [0.2, 0.5, 1.3] {
            let cfg = LossConfig {
                tau,
                ..Default::default()
            };
            assert!((tape_objective(&u, &v, cfg) - grace_objective(&th, tau)).abs() < 1e-13);
            for temp in [true, false] {
                let cfg = LossConfig {
                    tau,
                    mode: LossMode::Infonce,
                    nce_temperature: temp,
                };
                let (a, b) = (tape_objective(&u, &v, cfg), infonce_objective(&th, tau, temp));
                assert!((a - b).abs() < 1e-13, "{tau} {temp}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn gap_matches_definition() {
        let (u, v) = (random(6, 3, 3), random(6, 3, 4));
        let th = CriticMatrix::cosine(&u, &v).unwrap();
        let tau = 0.4;
        let n = 6.0 as Real;
        // I_NCE in the ρ_c form drops the log N term of the mean-denominator form
        let i_uv_plus_i_vu = 2.0 * (infonce_objective(&th, tau, true) - n.ln());
        let direct = i_uv_plus_i_vu - 2.0 * grace_objective(&th, tau);
        assert!((bound_gap(&th, tau) - direct).abs() < 1e-12);

        let mut t = Tape::new();
        let pu = t.constant(u.clone());
        let pv = t.constant(v.clone());
        for mode in [LossMode::Grace, LossMode::Infonce] {
            let cfg = LossConfig {
                tau,
                mode,
                nce_temperature: true,
            };
            let terms = objective_tape(&mut t, pu, pv, &cfg).unwrap();
            assert!((terms.bound_gap(&t).unwrap() - bound_gap(&th, tau)).abs() < 1e-13);
        }
    }

    #[test]
    fn triplet_surrogate_plug_ins() {
        let same = Matrix::filled(4, 3, 0.5);
        assert!((triplet_surrogate(&same, &same, 1, 0.5) - 8.0).abs() < 1e-15);
        let one = Matrix::from_rows(&[[1.0, 2.0]]);
        assert_eq!(triplet_surrogate(&one, &one.map(|x| -x), 0, 0.25), 1.0);
    }

    #[test]
    fn tau_must_be_positive() {
        let cfg = LossConfig {
            tau: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
