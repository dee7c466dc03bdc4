//! Dense matrices on a tape with reverse-mode differentiation.
//!
//! A [`Tape`] records every operation in execution order, so the recording is
//! already topologically sorted and [`Tape::backward`] walks it once in
//! reverse. Values are plain [`Matrix`]es; scalars are 1x1 matrices.
//!
//! ```
//! use grace_core::{Matrix, Tape};
//!
//! let mut tape = Tape::new();
//! let w = tape.param(Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]));
//! let sq = tape.mul(w, w).unwrap();
//! let loss = tape.sum(sq);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(w).unwrap(), &Matrix::from_rows(&[[2.0, 4.0], [6.0, 8.0]]));
//! ```

mod gradcheck;
mod kernels;

pub use gradcheck::{grad_check, grad_check_params, GradCheckOptions, GradCheckReport};

use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;
use crate::matrix::{gemm, Matrix};
use kernels::exp_in_place;
use crate::Real;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<'a> {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Gram(Var),
    Spmm(&'a NormalizedAdjacency, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, Real),
    AddConst(Var),
    Relu(Var),
    LeakyRelu(Var, Real),
    Prelu(Var, Var),
    Elu(Var),
    ConcatCols(Var, Var),
    L2NormalizeRows(Var, Vec<Real>),
    Exp(Var),
    Log(Var),
    LogSumExpRows(Var),
    ContrastiveTerms {
        cross: Var,
        intra: Option<(Var, Var)>,
        exp_cross: Matrix,
        exp_intra: Option<(Matrix, Matrix)>,
        /// Exponential sums, u side then v side.
        totals: Vec<Real>,
        ratio: Option<Vec<Real>>,
    },
    Transpose(Var),
    Diagonal(Var),
    MaskDiagonal(Var),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node<'a> {
    value: Matrix,
    op: Op<'a>,
    requires_grad: bool,
}

/// Recording of a computation. `'a` bounds borrowed sparse operands.
#[derive(Debug, Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients of every trainable leaf, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn shape_err(op: &'static str, a: &Matrix, b: &Matrix) -> Error {
    Error::Shape {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op<'a>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Matrix, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        if a == b {
            return self.gram(a);
        }
        let out = self.value(a).matmul_nt(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMulNt(a, b), rg))
    }

    /// `a · aᵀ`.
    pub fn gram(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).matmul_nt(self.value(a))?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Gram(a), rg))
    }

    /// Sparse-dense product `adj · x`.
    pub fn spmm(&mut self, adj: &'a NormalizedAdjacency, x: Var) -> Result<Var> {
        let out = adj.spmm(self.value(x))?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Spmm(adj, x), rg))
    }

    /// Adds the 1×C row `bias` to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(shape_err("add_bias", xv, bv));
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(out, Op::AddBias(x, bias), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(op, av, bv));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, c: Real) -> Var {
        let out = self.value(x).map(|v| v * c);
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, c), rg)
    }

    pub fn add_const(&mut self, x: Var, c: Real) -> Var {
        let out = self.value(x).map(|v| v + c);
        let rg = self.rg(x);
        self.push(out, Op::AddConst(x), rg)
    }

    /// ReLU; the subgradient at 0 is taken as 0.
    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    /// Leaky ReLU with a fixed negative slope.
    pub fn leaky_relu(&mut self, x: Var, slope: Real) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        let rg = self.rg(x);
        self.push(out, Op::LeakyRelu(x, slope), rg)
    }

    /// Leaky ReLU whose negative slope is the 1×1 value `slope`.
    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        let a = self.value(slope);
        if a.shape() != (1, 1) {
            return Err(shape_err("prelu", self.value(x), a));
        }
        let a = a.item();
        let out = self.value(x).map(|v| if v > 0.0 { v } else { a * v });
        let rg = self.rg(x) || self.rg(slope);
        Ok(self.push(out, Op::Prelu(x, slope), rg))
    }

    /// ELU with α = 1.
    pub fn elu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { v.exp_m1() });
        let rg = self.rg(x);
        self.push(out, Op::Elu(x), rg)
    }

    /// `[a ; b]` along columns.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(shape_err("concat_cols", av, bv));
        }
        let (ca, cb) = (av.cols(), bv.cols());
        let mut out = Matrix::zeros(av.rows(), ca + cb);
        for r in 0..av.rows() {
            let row = out.row_mut(r);
            row[..ca].copy_from_slice(av.row(r));
            row[ca..].copy_from_slice(bv.row(r));
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::ConcatCols(a, b), rg))
    }

    /// Scales each row to unit Euclidean norm. A zero row is an error.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let mut out = xv.clone();
        let mut norms = Vec::with_capacity(xv.rows());
        for r in 0..xv.rows() {
            let n = xv.row(r).iter().map(|v| v * v).sum::<Real>().sqrt();
            if n == 0.0 {
                return Err(Error::CollapsedEmbedding { row: r });
            }
            for o in out.row_mut(r) {
                *o /= n;
            }
            norms.push(n);
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::L2NormalizeRows(x, norms), rg))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(Real::exp);
        let rg = self.rg(x);
        self.push(out, Op::Exp(x), rg)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if let Some(i) = xv.data().iter().position(|&v| !(v > 0.0)) {
            return Err(Error::LogDomain {
                index: i,
                value: xv.data()[i],
            });
        }
        let out = xv.map(Real::ln);
        let rg = self.rg(x);
        Ok(self.push(out, Op::Log(x), rg))
    }

    /// Row-wise `log Σ_j exp(x_ij)` as an N×1 column, evaluated with a max shift.
    /// Entries equal to `-inf` contribute nothing.
    pub fn logsumexp_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut out = Matrix::zeros(xv.rows(), 1);
        for r in 0..xv.rows() {
            out.set(r, 0, logsumexp(xv.row(r)));
        }
        let rg = self.rg(x);
        self.push(out, Op::LogSumExpRows(x), rg)
    }

    /// Both sides of the contrastive objective in one node, as an N×2 matrix:
    ///
    /// `out_i0 = c_ii - log( Σ_k exp(c_ik) + Σ_{k≠i} exp(a_ik) )`
    /// `out_i1 = c_ii - log( Σ_k exp(c_ki) + Σ_{k≠i} exp(b_ik) )`
    ///
    /// with `c = cross` and `(a, b) = intra`; without `intra` only the cross
    /// sums remain. All exponentials share one global shift, so a single
    /// exponentiated copy of `c` serves both columns. Each row and column
    /// must come within roughly 700 of the global maximum (true for critics
    /// bounded by `1/τ` with any practical τ); otherwise the sums underflow
    /// and [`Error::NonFinite`] is returned.
    pub fn contrastive_terms(&mut self, cross: Var, intra: Option<(Var, Var)>) -> Result<Var> {
        let c = self.value(cross);
        let n = c.rows();
        if c.cols() != n {
            return Err(shape_err("contrastive_terms", c, c));
        }
        let intra_vals = match intra {
            Some((a, b)) => {
                let (a, b) = (self.value(a), self.value(b));
                for s in [a, b] {
                    if s.shape() != (n, n) {
                        return Err(shape_err("contrastive_terms", c, s));
                    }
                }
                Some((a, b))
            }
            None => None,
        };

        let mut shift = c.data().iter().copied().fold(Real::NEG_INFINITY, Real::max);
        if let Some((a, b)) = intra_vals {
            shift = shift.max(off_diagonal_max(a)).max(off_diagonal_max(b));
        }
        if !shift.is_finite() {
            return Err(Error::NonFinite(format!("contrastive_terms: maximum entry is {shift}")));
        }

        let mut row_sum = vec![0.0; n];
        let mut col_sum = vec![0.0; n];
        let mut exp_cross = Vec::with_capacity(n * n);
        for r in 0..n {
            exp_cross.extend(c.row(r).iter().map(|v| v - shift));
            let row = &mut exp_cross[r * n..];
            exp_in_place(row);
            row_sum[r] = row.iter().sum();
            col_sum.iter_mut().zip(row.iter()).for_each(|(acc, e)| *acc += e);
        }
        let exp_cross = Matrix::from_vec(n, n, exp_cross)?;
        let mut intra_sum = [vec![0.0; n], vec![0.0; n]];
        let exp_intra = intra_vals.map(|(a, b)| {
            let exp_off_diagonal = |s: &Matrix, sums: &mut [Real]| {
                let mut data = Vec::with_capacity(n * n);
                for i in 0..n {
                    data.extend(s.row(i).iter().map(|v| v - shift));
                    let row = &mut data[i * n..];
                    exp_in_place(row);
                    row[i] = 0.0;
                    sums[i] = row.iter().sum();
                }
                Matrix::from_vec(n, n, data).expect("n×n buffer")
            };
            let [su, sv] = &mut intra_sum;
            (exp_off_diagonal(a, su), exp_off_diagonal(b, sv))
        });

        let totals: Vec<Real> = (row_sum.iter().zip(&intra_sum[0]))
            .chain(col_sum.iter().zip(&intra_sum[1]))
            .map(|(x, y)| x + y)
            .collect();
        if let Some(t) = totals.iter().find(|t| !(**t >= Real::MIN_POSITIVE && t.is_finite())) {
            return Err(Error::NonFinite(format!(
                "contrastive_terms: exponential sum {t} after a shift of {shift}"
            )));
        }
        let mut out = Matrix::zeros(n, 2);
        for i in 0..n {
            let pos = c.get(i, i) - shift;
            out.set(i, 0, pos - totals[i].ln());
            out.set(i, 1, pos - totals[n + i].ln());
        }
        let ratio = exp_intra.as_ref().map(|_| {
            (intra_sum[0].iter().zip(&row_sum))
                .chain(intra_sum[1].iter().zip(&col_sum))
                .map(|(a, b)| a / b)
                .collect()
        });
        let rg = self.rg(cross) || intra.is_some_and(|(a, b)| self.rg(a) || self.rg(b));
        Ok(self.push(
            out,
            Op::ContrastiveTerms {
                cross,
                intra,
                exp_cross,
                exp_intra,
                totals,
                ratio,
            },
            rg,
        ))
    }

    /// For a [`contrastive_terms`](Self::contrastive_terms) node with intra
    /// terms: per row, the intra sum over the cross sum, u side then v side.
    pub fn intra_cross_ratio(&self, v: Var) -> Option<&[Real]> {
        match &self.nodes[v.0].op {
            Op::ContrastiveTerms { ratio, .. } => ratio.as_deref(),
            _ => None,
        }
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let out = self.value(x).transpose();
        let rg = self.rg(x);
        self.push(out, Op::Transpose(x), rg)
    }

    /// Diagonal of a square matrix as an N×1 column.
    pub fn diagonal(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.rows() != xv.cols() {
            return Err(shape_err("diagonal", xv, xv));
        }
        let out = Matrix::from_vec(xv.rows(), 1, (0..xv.rows()).map(|i| xv.get(i, i)).collect())?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Diagonal(x), rg))
    }

    /// Copy of a square matrix with the diagonal set to `-inf`.
    pub fn mask_diagonal(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.rows() != xv.cols() {
            return Err(shape_err("mask_diagonal", xv, xv));
        }
        let mut out = xv.clone();
        for i in 0..out.rows() {
            out.set(i, i, Real::NEG_INFINITY);
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::MaskDiagonal(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Matrix::scalar(self.value(x).sum());
        let rg = self.rg(x);
        self.push(out, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let out = Matrix::scalar(xv.sum() / xv.len() as Real);
        let rg = self.rg(x);
        self.push(out, Op::Mean(x), rg)
    }

    /// Reverse pass from the scalar `loss`. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::InvalidArgument(format!(
                "backward needs a 1x1 loss, got {:?}",
                lv.shape()
            )));
        }
        if !self.rg(loss) {
            return Err(Error::Detached);
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));
        let mut leaf_grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, g, &mut grads, &mut leaf_grads, idx)?;
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad && leaf_grads[i].is_none() {
                let (r, c) = node.value.shape();
                leaf_grads[i] = Some(Matrix::zeros(r, c));
            }
        }
        Ok(Gradients { grads: leaf_grads })
    }

    fn propagate(
        &self,
        node: &Node<'a>,
        g: Matrix,
        grads: &mut [Option<Matrix>],
        leaf_grads: &mut [Option<Matrix>],
        idx: usize,
    ) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        let want = |v: Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, m: Matrix| accumulate(grads, v, m);

        match &node.op {
            Op::Leaf => {
                leaf_grads[idx] = Some(g);
            }
            Op::MatMul(a, b) => {
                if want(*a) {
                    acc(*a, g.matmul_nt(val(*b))?);
                }
                if want(*b) {
                    acc(*b, val(*a).matmul_tn(&g)?);
                }
            }
            Op::MatMulNt(a, b) => {
                if want(*a) {
                    acc(*a, g.matmul(val(*b))?);
                }
                if want(*b) {
                    acc(*b, g.matmul_tn(val(*a))?);
                }
            }
            Op::Gram(a) => {
                // d(aaᵀ) = (g + gᵀ) a
                let av = val(*a);
                let mut ga = Matrix::zeros(av.rows(), av.cols());
                gemm(1.0, &g, false, av, false, 0.0, &mut ga);
                gemm(1.0, &g, true, av, false, 1.0, &mut ga);
                acc(*a, ga);
            }
            Op::Spmm(adj, x) => acc(*x, adj.spmm_transpose(&g)?),
            Op::AddBias(x, b) => {
                if want(*b) {
                    let mut gb = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (s, v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *s += v;
                        }
                    }
                    acc(*b, gb);
                }
                if want(*x) {
                    acc(*x, g);
                }
            }
            Op::Add(a, b) => {
                if want(*a) && want(*b) {
                    acc(*a, g.clone());
                    acc(*b, g);
                } else if want(*a) {
                    acc(*a, g);
                } else {
                    acc(*b, g);
                }
            }
            Op::Sub(a, b) => {
                if want(*b) {
                    acc(*b, g.map(|v| -v));
                }
                if want(*a) {
                    acc(*a, g);
                }
            }
            Op::Mul(a, b) => {
                if want(*a) {
                    acc(*a, g.zip_map(val(*b), |gv, bv| gv * bv));
                }
                if want(*b) {
                    acc(*b, g.zip_map(val(*a), |gv, av| gv * av));
                }
            }
            Op::Scale(x, c) => {
                let c = *c;
                acc(*x, g.map(|v| v * c));
            }
            Op::AddConst(x) => acc(*x, g),
            Op::Relu(x) => acc(*x, g.zip_map(val(*x), |gv, xv| if xv > 0.0 { gv } else { 0.0 })),
            Op::LeakyRelu(x, s) => {
                let s = *s;
                acc(*x, g.zip_map(val(*x), |gv, xv| if xv > 0.0 { gv } else { s * gv }));
            }
            Op::Prelu(x, slope) => {
                let xv = val(*x);
                if want(*slope) {
                    let gs: Real = g
                        .data()
                        .iter()
                        .zip(xv.data())
                        .map(|(gv, &x)| if x > 0.0 { 0.0 } else { gv * x })
                        .sum();
                    acc(*slope, Matrix::scalar(gs));
                }
                if want(*x) {
                    let a = val(*slope).item();
                    acc(*x, g.zip_map(xv, |gv, x| if x > 0.0 { gv } else { a * gv }));
                }
            }
            Op::Elu(x) => {
                let y = &node.value;
                let gx = Matrix::from_vec(
                    g.rows(),
                    g.cols(),
                    g.data()
                        .iter()
                        .zip(val(*x).data())
                        .zip(y.data())
                        .map(|((gv, &xv), &yv)| if xv > 0.0 { *gv } else { gv * (yv + 1.0) })
                        .collect(),
                )?;
                acc(*x, gx);
            }
            Op::ConcatCols(a, b) => {
                let ca = val(*a).cols();
                let cb = g.cols() - ca;
                if want(*a) {
                    let mut ga = Matrix::zeros(g.rows(), ca);
                    for r in 0..g.rows() {
                        ga.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                    }
                    acc(*a, ga);
                }
                if want(*b) {
                    let mut gb = Matrix::zeros(g.rows(), cb);
                    for r in 0..g.rows() {
                        gb.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                    }
                    acc(*b, gb);
                }
            }
            Op::L2NormalizeRows(x, norms) => {
                let y = &node.value;
                let mut gx = g;
                for (r, &n) in norms.iter().enumerate() {
                    let yr = y.row(r);
                    let dot: Real = gx.row(r).iter().zip(yr).map(|(a, b)| a * b).sum();
                    for (gv, yv) in gx.row_mut(r).iter_mut().zip(yr) {
                        *gv = (*gv - yv * dot) / n;
                    }
                }
                acc(*x, gx);
            }
            Op::Exp(x) => acc(*x, g.zip_map(&node.value, |gv, yv| gv * yv)),
            Op::Log(x) => acc(*x, g.zip_map(val(*x), |gv, xv| gv / xv)),
            Op::LogSumExpRows(x) => {
                let xv = val(*x);
                let mut gx = Matrix::zeros(xv.rows(), xv.cols());
                for r in 0..xv.rows() {
                    let (lse, gr) = (node.value.get(r, 0), g.get(r, 0));
                    for (o, &v) in gx.row_mut(r).iter_mut().zip(xv.row(r)) {
                        *o = gr * (v - lse).exp();
                    }
                }
                acc(*x, gx);
            }
            Op::ContrastiveTerms {
                cross,
                intra,
                exp_cross,
                exp_intra,
                totals,
                ..
            } => {
                let n = g.rows();
                let su: Vec<Real> = (0..n).map(|i| g.get(i, 0) / totals[i]).collect();
                let sv: Vec<Real> = (0..n).map(|i| g.get(i, 1) / totals[n + i]).collect();
                if want(*cross) {
                    let mut data = Vec::with_capacity(n * n);
                    for r in 0..n {
                        let s = su[r];
                        data.extend(exp_cross.row(r).iter().zip(&sv).map(|(e, t)| -e * (s + t)));
                        data[r * n + r] += g.get(r, 0) + g.get(r, 1);
                    }
                    acc(*cross, Matrix::from_vec(n, n, data)?);
                }
                if let (Some((a, b)), Some((ea, eb))) = (intra, exp_intra) {
                    for (v, e, scale) in [(*a, ea, &su), (*b, eb, &sv)] {
                        if want(v) {
                            let mut data = Vec::with_capacity(n * n);
                            for (i, s) in scale.iter().enumerate() {
                                data.extend(e.row(i).iter().map(|x| -x * s));
                            }
                            acc(v, Matrix::from_vec(n, n, data)?);
                        }
                    }
                }
            }
            Op::Transpose(x) => acc(*x, g.transpose()),
            Op::Diagonal(x) => {
                let n = g.rows();
                let mut gx = Matrix::zeros(n, n);
                for i in 0..n {
                    gx.set(i, i, g.get(i, 0));
                }
                acc(*x, gx);
            }
            Op::MaskDiagonal(x) => {
                let mut gx = g;
                for i in 0..gx.rows() {
                    gx.set(i, i, 0.0);
                }
                acc(*x, gx);
            }
            Op::Sum(x) => {
                let (r, c) = val(*x).shape();
                acc(*x, Matrix::filled(r, c, g.item()));
            }
            Op::Mean(x) => {
                let (r, c) = val(*x).shape();
                acc(*x, Matrix::filled(r, c, g.item() / (r * c) as Real));
            }
        }
        Ok(())
    }
}

fn off_diagonal_max(m: &Matrix) -> Real {
    let mut best = Real::NEG_INFINITY;
    for i in 0..m.rows() {
        let row = m.row(i);
        for &v in row[..i].iter().chain(&row[i + 1..]) {
            best = best.max(v);
        }
    }
    best
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, m: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&m),
        slot @ None => *slot = Some(m),
    }
}

/// `log Σ exp(x_i)` with max shift; `-inf` for an empty or all `-inf` slice.
pub fn logsumexp(xs: &[Real]) -> Real {
    let max = xs.iter().copied().fold(Real::NEG_INFINITY, Real::max);
    if max == Real::NEG_INFINITY {
        return max;
    }
    let s: Real = xs.iter().map(|&x| (x - max).exp()).sum();
    max + s.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{sym_normalize, Graph};

    fn close(a: &Matrix, b: &Matrix, tol: Real) -> bool {
        a.shape() == b.shape() && a.max_abs_diff(b) <= tol
    }

    #[test]
    fn relu_example() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::from_rows(&[[-1.0, 2.0]]));
        let y = t.relu(x);
        assert_eq!(t.value(y), &Matrix::from_rows(&[[0.0, 2.0]]));
    }

    #[test]
    fn l2_normalize_example() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::from_rows(&[[3.0, 4.0]]));
        let y = t.l2_normalize_rows(x).unwrap();
        assert!(close(t.value(y), &Matrix::from_rows(&[[0.6, 0.8]]), 1e-15));
    }

    #[test]
    fn zero_row_normalisation_is_collapse_error() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]]));
        assert!(matches!(t.l2_normalize_rows(x), Err(Error::CollapsedEmbedding { row: 1 })));
    }

    #[test]
    fn logsumexp_example() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::from_rows(&[[0.0, 0.0]]));
        let y = t.logsumexp_rows(x);
        assert!((t.value(y).item() - (2.0 as Real).ln()).abs() < 1e-15);
    }

    #[test]
    fn logsumexp_survives_large_inputs() {
        let v = logsumexp(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + (2.0 as Real).ln())).abs() < 1e-9);
        assert_eq!(logsumexp(&[Real::NEG_INFINITY, 0.0]), 0.0);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut t = Tape::new();
        let w = t.param(Matrix::from_rows(&[[1.0, -2.0], [0.5, 3.0]]));
        let s = t.sum(w);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(w).unwrap(), &Matrix::filled(2, 2, 1.0));
    }

    #[test]
    fn square_gradient_is_twice_value() {
        let wv = Matrix::from_rows(&[[1.0, -2.0], [0.5, 3.0]]);
        let mut t = Tape::new();
        let w = t.param(wv.clone());
        let sq = t.mul(w, w).unwrap();
        let s = t.sum(sq);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(w).unwrap(), &wv.map(|v| 2.0 * v));
    }

    #[test]
    fn spmm_identity_and_two_node_examples() {
        let g1 = Graph::from_edges(1, &[], Matrix::zeros(1, 1), vec![0]).unwrap();
        let a1 = sym_normalize(&g1);
        let mut t = Tape::new();
        let x = t.constant(Matrix::from_rows(&[[3.0]]));
        let y = t.spmm(&a1, x).unwrap();
        assert_eq!(t.value(y), &Matrix::from_rows(&[[3.0]]));

        let g2 = Graph::from_edges(2, &[(0, 1)], Matrix::zeros(2, 1), vec![0, 0]).unwrap();
        let a2 = sym_normalize(&g2);
        let x = t.constant(Matrix::from_rows(&[[1.0], [3.0]]));
        let y = t.spmm(&a2, x).unwrap();
        assert_eq!(t.value(y), &Matrix::from_rows(&[[2.0], [2.0]]));
    }

    #[test]
    fn backward_on_constant_is_detached() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::scalar(2.0));
        let y = t.scale(x, 3.0);
        assert!(matches!(t.backward(y), Err(Error::Detached)));
    }

    #[test]
    fn backward_needs_scalar() {
        let mut t = Tape::new();
        let x = t.param(Matrix::zeros(2, 1));
        assert!(t.backward(x).is_err());
    }

    #[test]
    fn log_rejects_non_positive() {
        let mut t = Tape::new();
        let x = t.param(Matrix::from_rows(&[[1.0, 0.0]]));
        assert!(matches!(t.log(x), Err(Error::LogDomain { index: 1, .. })));
    }

    #[test]
    fn shape_mismatch_reported() {
        let mut t = Tape::new();
        let a = t.param(Matrix::zeros(2, 3));
        let b = t.param(Matrix::zeros(2, 3));
        assert!(matches!(t.matmul(a, b), Err(Error::Shape { op: "matmul", .. })));
        let c = t.param(Matrix::zeros(3, 2));
        assert!(matches!(t.add(a, c), Err(Error::Shape { .. })));
    }

    #[test]
    fn contrastive_terms_match_composed_ops() {
        let c = Matrix::from_rows(&[[0.3, -1.0, 2.0], [0.5, 0.1, -0.2], [1.5, 0.0, 0.7]]);
        let a = Matrix::from_rows(&[[9.0, 0.4, -0.3], [0.2, 9.0, 1.1], [-0.6, 0.8, 9.0]]);
        let b = Matrix::from_rows(&[[-4.0, 1.4, 0.3], [0.0, 7.0, -1.1], [0.6, 0.2, 3.0]]);
        for with_intra in [true, false] {
            let mut t = Tape::new();
            let cv = t.param(c.clone());
            let av = t.param(a.clone());
            let bv = t.param(b.clone());
            let fused = t.contrastive_terms(cv, with_intra.then_some((av, bv))).unwrap();

            let pos = t.diagonal(cv).unwrap();
            let ct = t.transpose(cv);
            let side = |t: &mut Tape, cross: Var, intra: Var| {
                let lse = if with_intra {
                    let masked = t.mask_diagonal(intra).unwrap();
                    let cat = t.concat_cols(cross, masked).unwrap();
                    t.logsumexp_rows(cat)
                } else {
                    t.logsumexp_rows(cross)
                };
                t.sub(pos, lse).unwrap()
            };
            let lu = side(&mut t, cv, av);
            let lv = side(&mut t, ct, bv);
            let composed = t.concat_cols(lu, lv).unwrap();
            assert!(close(t.value(fused), t.value(composed), 1e-14));

            let w = t.constant(Matrix::from_rows(&[[1.0, 0.3], [-2.0, 0.7], [0.5, -1.2]]));
            let x = t.mul(fused, w).unwrap();
            let y = t.mul(composed, w).unwrap();
            let y = t.scale(y, -1.0);
            let diff = t.add(x, y).unwrap();
            let l = t.sum(diff);
            // fused and composed paths cancel, so every gradient is ~0
            let g = t.backward(l).unwrap();
            for v in [cv, av, bv] {
                assert!(g.get(v).unwrap().data().iter().all(|x| x.abs() < 1e-14));
            }
        }
    }

    #[test]
    fn contrastive_terms_reject_unbounded_spread() {
        let mut t = Tape::new();
        let c = t.param(Matrix::from_rows(&[[0.0, 0.0], [0.0, 2000.0]]));
        assert!(matches!(t.contrastive_terms(c, None), Err(Error::NonFinite(_))));
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut t = Tape::new();
        let a = t.param(Matrix::scalar(1.0));
        let unused = t.param(Matrix::zeros(2, 2));
        let s = t.sum(a);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(unused).unwrap(), &Matrix::zeros(2, 2));
    }
}
