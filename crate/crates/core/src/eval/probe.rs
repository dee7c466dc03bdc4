//! Multinomial logistic regression on frozen embeddings.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{stream, Purpose};
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    /// ℓ2 coefficient on the weights (the bias is not penalised).
    pub lambda: Real,
    pub max_iter: usize,
    /// Stop once the gradient's Euclidean norm falls below this.
    pub tol: Real,
    /// Z-score every dimension with training-split statistics first.
    pub standardize: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            lambda: 1.0,
            max_iter: 500,
            tol: 1e-5,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    /// C×F.
    pub weights: Matrix,
    /// 1×C.
    pub bias: Matrix,
    pub lambda: Real,
    /// Per-dimension shift and scale applied before the linear map.
    pub mean: Vec<Real>,
    pub scale: Vec<Real>,
    /// Final value of the training objective.
    pub objective: Real,
    pub iterations: usize,
    pub converged: bool,
}

impl ProbeModel {
    pub fn n_classes(&self) -> usize {
        self.weights.rows()
    }

    fn transform(&self, e: &Matrix, idx: &[usize]) -> Matrix {
        let mut x = e.select_rows(idx);
        standardize_in_place(&mut x, &self.mean, &self.scale);
        x
    }

    /// Class scores `x·Wᵀ + b` for the selected rows.
    pub fn logits(&self, e: &Matrix, idx: &[usize]) -> Result<Matrix> {
        let x = self.transform(e, idx);
        let mut z = x.matmul_nt(&self.weights)?;
        add_row(&mut z, self.bias.data());
        Ok(z)
    }

    /// Argmax class per selected row; ties go to the lowest class index.
    pub fn predict(&self, e: &Matrix, idx: &[usize]) -> Result<Vec<usize>> {
        let z = self.logits(e, idx)?;
        Ok((0..z.rows()).map(|r| argmax(z.row(r))).collect())
    }
}

pub(crate) fn argmax(row: &[Real]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

fn add_row(z: &mut Matrix, b: &[Real]) {
    for r in 0..z.rows() {
        for (v, bi) in z.row_mut(r).iter_mut().zip(b) {
            *v += bi;
        }
    }
}

fn standardize_in_place(x: &mut Matrix, mean: &[Real], scale: &[Real]) {
    for r in 0..x.rows() {
        for ((v, m), s) in x.row_mut(r).iter_mut().zip(mean).zip(scale) {
            *v = (*v - m) / s;
        }
    }
}

/// Column means and population standard deviations; a zero deviation becomes 1.
pub fn column_stats(x: &Matrix) -> (Vec<Real>, Vec<Real>) {
    let n = x.rows() as Real;
    let mut mean = vec![0.0; x.cols()];
    for r in 0..x.rows() {
        for (m, v) in mean.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; x.cols()];
    for r in 0..x.rows() {
        for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let scale = var
        .into_iter()
        .map(|s| {
            let sd = (s / n).sqrt();
            if sd > 0.0 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    (mean, scale)
}

/// Objective `(1/n)[Σ_i CE_i + (λ/2)‖W‖²]` and its gradient over the packed
/// parameter vector `[W row-major ; b]`.
pub(crate) struct Problem<'p> {
    pub x: &'p Matrix,
    pub y: &'p [usize],
    pub classes: usize,
    pub lambda: Real,
}

impl Problem<'_> {
    pub fn dim(&self) -> usize {
        self.classes * (self.x.cols() + 1)
    }

    fn unpack(&self, theta: &[Real]) -> (Matrix, Vec<Real>) {
        let wlen = self.classes * self.x.cols();
        let w = Matrix::from_vec(self.classes, self.x.cols(), theta[..wlen].to_vec()).expect("packed length");
        (w, theta[wlen..].to_vec())
    }

    pub fn value_grad(&self, theta: &[Real]) -> (Real, Vec<Real>) {
        let n = self.x.rows() as Real;
        let (w, b) = self.unpack(theta);
        let mut z = self.x.matmul_nt(&w).expect("probe shapes");
        add_row(&mut z, &b);
        let mut ce = 0.0;
        for (r, &yi) in self.y.iter().enumerate() {
            let row = z.row_mut(r);
            let max = row.iter().copied().fold(Real::NEG_INFINITY, Real::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                s += *v;
            }
            ce += s.ln() + max - (row[yi].ln() + max);
            for v in row.iter_mut() {
                *v /= s;
            }
            row[yi] -= 1.0;
        }
        // z now holds P − Y
        let mut gw = z.matmul_tn(self.x).expect("probe shapes");
        let reg = 0.5 * self.lambda * w.frobenius_sq();
        for (g, wv) in gw.data_mut().iter_mut().zip(w.data()) {
            *g = (*g + self.lambda * wv) / n;
        }
        let mut grad = gw.into_data();
        for c in 0..self.classes {
            grad.push((0..z.rows()).map(|r| z.get(r, c)).sum::<Real>() / n);
        }
        ((ce + reg) / n, grad)
    }
}

fn dot(a: &[Real], b: &[Real]) -> Real {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) struct Solution {
    pub theta: Vec<Real>,
    pub value: Real,
    pub iterations: usize,
    pub converged: bool,
}

/// L-BFGS (10 pairs) with Armijo backtracking.
pub(crate) fn lbfgs(p: &Problem<'_>, mut theta: Vec<Real>, max_iter: usize, tol: Real) -> Solution {
    const MEMORY: usize = 10;
    let (mut f, mut g) = p.value_grad(&theta);
    let mut hist: std::collections::VecDeque<(Vec<Real>, Vec<Real>, Real)> = Default::default();
    let mut it = 0;
    while it < max_iter {
        if dot(&g, &g).sqrt() < tol {
            return Solution {
                theta,
                value: f,
                iterations: it,
                converged: true,
            };
        }
        it += 1;
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        let gamma = hist
            .back()
            .map_or(1.0 / dot(&g, &g).sqrt().max(1.0), |(s, y, _)| dot(s, y) / dot(y, y));
        q.iter_mut().for_each(|v| *v *= gamma);
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut dir: Vec<Real> = q.into_iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if slope >= 0.0 {
            hist.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<Real> = theta.iter().zip(&dir).map(|(x, d)| x + t * d).collect();
            let (fc, gc) = p.value_grad(&cand);
            if fc <= f + 1e-4 * t * slope {
                accepted = Some((cand, fc, gc));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, fc, gc)) = accepted else {
            // no decrease representable along the direction
            break;
        };
        let s: Vec<Real> = cand.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let y: Vec<Real> = gc.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if hist.len() == MEMORY {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        theta = cand;
        f = fc;
        g = gc;
    }
    let converged = dot(&g, &g).sqrt() < tol;
    Solution {
        theta,
        value: f,
        iterations: it,
        converged,
    }
}

/// Fits the probe on the rows `train_idx` of `e`. Weights start uniform in
/// `±0.01` from the `seed` stream; the objective is strictly convex, so the
/// start only affects the path.
pub fn fit_probe(e: &Matrix, labels: &[i64], train_idx: &[usize], cfg: &ProbeConfig, seed: u64) -> Result<ProbeModel> {
    if labels.len() != e.rows() {
        return Err(Error::Dimension(format!("{} labels for {} embeddings", labels.len(), e.rows())));
    }
    if train_idx.is_empty() {
        return Err(Error::EmptyEvaluationSet);
    }
    if !(cfg.lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be non-negative, got {}", cfg.lambda)));
    }
    let mut y = Vec::with_capacity(train_idx.len());
    for &i in train_idx {
        let l = *labels
            .get(i)
            .ok_or_else(|| Error::InvalidArgument(format!("train index {i} out of range")))?;
        if l < 0 {
            return Err(Error::InvalidArgument(format!("train node {i} is unlabeled")));
        }
        y.push(l as usize);
    }
    let classes = labels.iter().copied().max().unwrap_or(-1).max(0) as usize + 1;
    let first = y[0];
    if y.iter().all(|&c| c == first) {
        return Err(Error::SingleClass);
    }
    e.check_finite("embeddings")?;

    let mut x = e.select_rows(train_idx);
    let (mean, scale) = if cfg.standardize {
        column_stats(&x)
    } else {
        (vec![0.0; x.cols()], vec![1.0; x.cols()])
    };
    standardize_in_place(&mut x, &mean, &scale);

    let problem = Problem {
        x: &x,
        y: &y,
        classes,
        lambda: cfg.lambda,
    };
    let mut rng = stream(seed, 0, 0, Purpose::Probe);
    let theta0: Vec<Real> = (0..problem.dim()).map(|_| rng.gen_range(-0.01..0.01)).collect();
    let sol = lbfgs(&problem, theta0, cfg.max_iter, cfg.tol);
    let (weights, b) = problem.unpack(&sol.theta);
    Ok(ProbeModel {
        weights,
        bias: Matrix::from_vec(1, classes, b)?,
        lambda: cfg.lambda,
        mean,
        scale,
        objective: sol.value,
        iterations: sol.iterations,
        converged: sol.converged,
    })
}
