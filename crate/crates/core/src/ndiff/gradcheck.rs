//! Central finite-difference checks of tape gradients.

use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::Real;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub step: Real,
    /// Constant added to every analytic gradient entry before comparing.
    /// Only useful as a negative control.
    pub perturb_analytic: Real,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-6,
            perturb_analytic: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(1, |numeric|)` over all coordinates.
    pub max_rel_error: Real,
    /// `(parameter, flat index)` of the worst coordinate.
    pub worst: (usize, usize),
    pub coordinates: usize,
}

fn evaluate<'a, F>(f: &F, params: &[Matrix]) -> Result<Real>
where
    F: Fn(&mut Tape<'a>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out);
    if v.shape() != (1, 1) {
        return Err(Error::InvalidArgument(format!("gradcheck needs a scalar function, got {:?}", v.shape())));
    }
    Ok(v.item())
}

/// Compares the tape gradient of the scalar `f` with central differences
/// in every coordinate of every parameter.
///
/// `f` is evaluated twice at the starting point first; differing results
/// are reported as [`Error::NonDeterministic`].
pub fn grad_check_params<'a, F>(f: F, params: &[Matrix], opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'a>, &[Var]) -> Result<Var>,
{
    let a = evaluate(&f, params)?;
    let b = evaluate(&f, params)?;
    if a.to_bits() != b.to_bits() {
        return Err(Error::NonDeterministic);
    }

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let h = opts.step;
    let mut work: Vec<Matrix> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        coordinates: 0,
    };
    for (p, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("every parameter has a gradient");
        for k in 0..params[p].len() {
            let orig = params[p].data()[k];
            work[p].data_mut()[k] = orig + h;
            let up = evaluate(&f, &work)?;
            work[p].data_mut()[k] = orig - h;
            let down = evaluate(&f, &work)?;
            work[p].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let an = analytic.data()[k] + opts.perturb_analytic;
            let rel = (an - numeric).abs() / numeric.abs().max(1.0);
            if !rel.is_finite() {
                return Err(Error::NonFinite(format!("gradcheck at parameter {p} index {k}")));
            }
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (p, k);
            }
            report.coordinates += 1;
        }
    }
    Ok(report)
}

/// Single-parameter form of [`grad_check_params`].
pub fn grad_check<'a, F>(f: F, theta: &Matrix, step: Real) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'a>, Var) -> Result<Var>,
{
    grad_check_params(
        |t, v| f(t, v[0]),
        std::slice::from_ref(theta),
        GradCheckOptions {
            step,
            ..Default::default()
        },
    )
}
