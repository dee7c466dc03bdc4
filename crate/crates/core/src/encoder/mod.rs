//! Graph encoders and the projection head.
//!
//! Two architectures are available. `gcn2` stacks two graph-convolution
//! layers over the symmetric normalised adjacency. `mp3_residual` stacks three
//! mean-pooling layers over the row-normalised adjacency with skip
//! projections from the input features into the second and third layer.

mod checkpoint;

pub use checkpoint::{
    checkpoint_bytes, parse_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{NormKind, NormalizedAdjacency};
use crate::matrix::Matrix;
use crate::ndiff::{Tape, Var};
use crate::trainer::glorot_uniform;
use crate::Real;

/// Negative slope used for RReLU: midpoint of `[1/8, 1/3]`.
pub const RRELU_SLOPE: Real = (1.0 / 8.0 + 1.0 / 3.0) / 2.0;
/// Initial PReLU slope.
pub const PRELU_INIT: Real = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Prelu,
    Elu,
    Rrelu,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Prelu => "prelu",
            Activation::Elu => "elu",
            Activation::Rrelu => "rrelu",
            Activation::Identity => "identity",
        }
    }

    /// Applies the activation; `slope` must be given for PReLU.
    pub fn apply(self, tape: &mut Tape<'_>, x: Var, slope: Option<Var>) -> Result<Var> {
        Ok(match self {
            Activation::Relu => tape.relu(x),
            Activation::Prelu => {
                let s = slope.ok_or_else(|| Error::InvalidArgument("prelu needs a slope".into()))?;
                tape.prelu(x, s)?
            }
            Activation::Elu => tape.elu(x),
            Activation::Rrelu => tape.leaky_relu(x, RRELU_SLOPE),
            Activation::Identity => x,
        })
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "prelu" => Ok(Activation::Prelu),
            "elu" => Ok(Activation::Elu),
            "rrelu" => Ok(Activation::Rrelu),
            "identity" | "linear" => Ok(Activation::Identity),
            other => Err(Error::InvalidArgument(format!("unknown activation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Gcn2,
    Mp3Residual,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::Gcn2 => "gcn2",
            Arch::Mp3Residual => "mp3_residual",
        }
    }

    /// Adjacency normalisation the architecture propagates over.
    pub fn norm_kind(self) -> NormKind {
        match self {
            Arch::Gcn2 => NormKind::Symmetric,
            Arch::Mp3Residual => NormKind::Row,
        }
    }

    pub fn n_layers(self) -> usize {
        match self {
            Arch::Gcn2 => 2,
            Arch::Mp3Residual => 3,
        }
    }

    fn n_skips(self) -> usize {
        match self {
            Arch::Gcn2 => 0,
            Arch::Mp3Residual => 2,
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Arch::Gcn2 => 1,
            Arch::Mp3Residual => 2,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Arch> {
        match tag {
            1 => Some(Arch::Gcn2),
            2 => Some(Arch::Mp3Residual),
            _ => None,
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gcn2" => Ok(Arch::Gcn2),
            "mp3_residual" => Ok(Arch::Mp3Residual),
            other => Err(Error::InvalidArgument(format!("unknown arch {other:?}"))),
        }
    }
}

/// Encoder weights. GC layers carry no bias.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub arch: Arch,
    pub activation: Activation,
    pub weights: Vec<Matrix>,
    /// `W_skip` and `W_skip′` for `mp3_residual`, empty otherwise.
    pub skips: Vec<Matrix>,
    /// One 1×1 slope per layer for PReLU, empty otherwise.
    pub slopes: Vec<Matrix>,
}

impl EncoderParams {
    /// Glorot-initialised encoder mapping `in_dim` features to `out_dim`.
    /// The hidden layer of `gcn2` is `2·out_dim` wide.
    pub fn init<R: Rng + ?Sized>(
        arch: Arch,
        activation: Activation,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let (weights, skips) = match arch {
            Arch::Gcn2 => (
                vec![
                    glorot_uniform(in_dim, 2 * out_dim, rng),
                    glorot_uniform(2 * out_dim, out_dim, rng),
                ],
                vec![],
            ),
            Arch::Mp3Residual => (
                vec![
                    glorot_uniform(2 * in_dim, out_dim, rng),
                    glorot_uniform(2 * out_dim, out_dim, rng),
                    glorot_uniform(2 * out_dim, out_dim, rng),
                ],
                vec![
                    glorot_uniform(in_dim, out_dim, rng),
                    glorot_uniform(in_dim, out_dim, rng),
                ],
            ),
        };
        let slopes = if activation == Activation::Prelu {
            vec![Matrix::scalar(PRELU_INIT); arch.n_layers()]
        } else {
            vec![]
        };
        EncoderParams {
            arch,
            activation,
            weights,
            skips,
            slopes,
        }
    }

    pub fn in_dim(&self) -> usize {
        match self.arch {
            Arch::Gcn2 => self.weights[0].rows(),
            Arch::Mp3Residual => self.weights[0].rows() / 2,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.weights.last().map_or(0, Matrix::cols)
    }

    /// Checks that layer dimensions chain and every value is finite.
    pub fn validate(&self) -> Result<()> {
        let dim = |msg: String| Err(Error::Dimension(msg));
        if self.weights.len() != self.arch.n_layers() || self.skips.len() != self.arch.n_skips() {
            return dim(format!(
                "{} expects {} layers and {} skips, got {} and {}",
                self.arch,
                self.arch.n_layers(),
                self.arch.n_skips(),
                self.weights.len(),
                self.skips.len()
            ));
        }
        let want_slopes = if self.activation == Activation::Prelu { self.arch.n_layers() } else { 0 };
        if self.slopes.len() != want_slopes || self.slopes.iter().any(|s| s.shape() != (1, 1)) {
            return dim(format!("expected {want_slopes} scalar slopes, got {}", self.slopes.len()));
        }
        let w = &self.weights;
        match self.arch {
            Arch::Gcn2 => {
                if w[0].cols() != w[1].rows() {
                    return dim(format!("layer widths {:?} -> {:?} do not chain", w[0].shape(), w[1].shape()));
                }
            }
            Arch::Mp3Residual => {
                let (f, h) = (self.in_dim(), w[0].cols());
                if w[0].rows() != 2 * f {
                    return dim(format!("first layer needs an even row count, got {}", w[0].rows()));
                }
                for (i, layer) in w.iter().enumerate().skip(1) {
                    if layer.shape() != (2 * h, h) {
                        return dim(format!("layer {} is {:?}, expected {:?}", i + 1, layer.shape(), (2 * h, h)));
                    }
                }
                for s in &self.skips {
                    if s.shape() != (f, h) {
                        return dim(format!("skip projection is {:?}, expected {:?}", s.shape(), (f, h)));
                    }
                }
            }
        }
        for t in self.tensors() {
            t.check_finite("encoder parameter")?;
        }
        Ok(())
    }

    /// Weights, then skips, then slopes.
    pub fn tensors(&self) -> Vec<&Matrix> {
        self.weights.iter().chain(&self.skips).chain(&self.slopes).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        self.weights
            .iter_mut()
            .chain(self.skips.iter_mut())
            .chain(self.slopes.iter_mut())
            .collect()
    }

    /// Records every tensor on the tape as a leaf.
    pub fn register(&self, tape: &mut Tape<'_>, trainable: bool) -> EncoderVars {
        let mut put = |ms: &[Matrix]| ms.iter().map(|m| tape.leaf(m.clone(), trainable)).collect();
        EncoderVars {
            arch: self.arch,
            activation: self.activation,
            weights: put(&self.weights),
            skips: put(&self.skips),
            slopes: put(&self.slopes),
        }
    }

    /// Forward pass without gradient tracking.
    pub fn encode(&self, adj: &NormalizedAdjacency, x: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, false);
        let xv = tape.constant(x.clone());
        let out = vars.forward(&mut tape, adj, xv)?;
        Ok(tape.value(out).clone())
    }
}

/// Tape handles of an [`EncoderParams`].
#[derive(Debug, Clone)]
pub struct EncoderVars {
    pub arch: Arch,
    pub activation: Activation,
    pub weights: Vec<Var>,
    pub skips: Vec<Var>,
    pub slopes: Vec<Var>,
}

impl EncoderVars {
    pub fn all(&self) -> Vec<Var> {
        self.weights.iter().chain(&self.skips).chain(&self.slopes).copied().collect()
    }

    fn act(&self, tape: &mut Tape<'_>, x: Var, layer: usize) -> Result<Var> {
        self.activation.apply(tape, x, self.slopes.get(layer).copied())
    }

    pub fn forward<'a>(&self, tape: &mut Tape<'a>, adj: &'a NormalizedAdjacency, x: Var) -> Result<Var> {
        if adj.kind() != self.arch.norm_kind() {
            return Err(Error::InvalidArgument(format!(
                "{} needs {:?} normalisation, got {:?}",
                self.arch,
                self.arch.norm_kind(),
                adj.kind()
            )));
        }
        match self.arch {
            Arch::Gcn2 => {
                let h = gc_layer(tape, adj, x, self.weights[0])?;
                let h = self.act(tape, h, 0)?;
                let h = gc_layer(tape, adj, h, self.weights[1])?;
                self.act(tape, h, 1)
            }
            Arch::Mp3Residual => {
                let h1 = mp_layer(tape, adj, x, self.weights[0])?;
                let h1 = self.act(tape, h1, 0)?;
                let s1 = tape.matmul(x, self.skips[0])?;
                let in2 = tape.add(s1, h1)?;
                let h2 = mp_layer(tape, adj, in2, self.weights[1])?;
                let h2 = self.act(tape, h2, 1)?;
                let s2 = tape.matmul(x, self.skips[1])?;
                let in3 = tape.add(s2, h1)?;
                let in3 = tape.add(in3, h2)?;
                let h3 = mp_layer(tape, adj, in3, self.weights[2])?;
                self.act(tape, h3, 2)
            }
        }
    }
}

/// `Ã X W` before the activation.
pub fn gc_layer<'a>(tape: &mut Tape<'a>, adj: &'a NormalizedAdjacency, x: Var, w: Var) -> Result<Var> {
    let ax = tape.spmm(adj, x)?;
    tape.matmul(ax, w)
}

/// `[Ã X ; X] W` before the activation.
pub fn mp_layer<'a>(tape: &mut Tape<'a>, adj: &'a NormalizedAdjacency, x: Var, w: Var) -> Result<Var> {
    let (wr, xc) = (tape.value(w).rows(), tape.value(x).cols());
    if wr != 2 * xc {
        return Err(Error::Dimension(format!("mp layer weight has {wr} rows, expected {}", 2 * xc)));
    }
    let ax = tape.spmm(adj, x)?;
    let cat = tape.concat_cols(ax, x)?;
    tape.matmul(cat, w)
}

/// Two dense layers with biases; ELU between them, linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionParams {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

impl ProjectionParams {
    /// Square head of width `dim`. Weights are Glorot uniform and biases
    /// uniform in `±1/√dim`.
    pub fn init<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let w1 = glorot_uniform(dim, dim, rng);
        let b1 = bias_init(dim, dim, rng);
        let w2 = glorot_uniform(dim, dim, rng);
        let b2 = bias_init(dim, dim, rng);
        ProjectionParams { w1, b1, w2, b2 }
    }

    pub fn identity(dim: usize) -> Self {
        ProjectionParams {
            w1: Matrix::identity(dim),
            b1: Matrix::zeros(1, dim),
            w2: Matrix::identity(dim),
            b2: Matrix::zeros(1, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.w1.rows();
        let h = self.w1.cols();
        let ok = self.b1.shape() == (1, h) && self.w2.rows() == h && self.b2.shape() == (1, self.w2.cols());
        if !ok || self.w2.cols() != d {
            return Err(Error::Dimension(format!(
                "projection head shapes {:?} {:?} {:?} {:?} do not chain",
                self.w1.shape(),
                self.b1.shape(),
                self.w2.shape(),
                self.b2.shape()
            )));
        }
        for t in self.tensors() {
            t.check_finite("projection parameter")?;
        }
        Ok(())
    }

    pub fn tensors(&self) -> Vec<&Matrix> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn register(&self, tape: &mut Tape<'_>, trainable: bool) -> ProjectionVars {
        ProjectionVars {
            w1: tape.leaf(self.w1.clone(), trainable),
            b1: tape.leaf(self.b1.clone(), trainable),
            w2: tape.leaf(self.w2.clone(), trainable),
            b2: tape.leaf(self.b2.clone(), trainable),
        }
    }

    /// Applies the head without gradient tracking.
    pub fn project(&self, e: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, false);
        let x = tape.constant(e.clone());
        let out = vars.forward(&mut tape, x)?;
        Ok(tape.value(out).clone())
    }
}

fn bias_init<R: Rng + ?Sized>(fan_in: usize, width: usize, rng: &mut R) -> Matrix {
    let bound = 1.0 / (fan_in as Real).sqrt();
    let data = (0..width).map(|_| rng.gen_range(-bound..=bound)).collect();
    Matrix::from_vec(1, width, data).expect("row vector")
}

#[derive(Debug, Clone, Copy)]
pub struct ProjectionVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl ProjectionVars {
    pub fn all(&self) -> Vec<Var> {
        vec![self.w1, self.b1, self.w2, self.b2]
    }

    pub fn forward(&self, tape: &mut Tape<'_>, e: Var) -> Result<Var> {
        let h = tape.matmul(e, self.w1)?;
        let h = tape.add_bias(h, self.b1)?;
        let h = tape.elu(h);
        let o = tape.matmul(h, self.w2)?;
        tape.add_bias(o, self.b2)
    }
}

/// Encoder plus projection head.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub encoder: EncoderParams,
    pub projection: ProjectionParams,
}

impl Model {
    pub fn init<R: Rng + ?Sized>(
        arch: Arch,
        activation: Activation,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let encoder = EncoderParams::init(arch, activation, in_dim, out_dim, rng);
        let projection = ProjectionParams::init(out_dim, rng);
        Model { encoder, projection }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.projection.validate()?;
        if self.projection.dim() != self.encoder.out_dim() {
            return Err(Error::Dimension(format!(
                "projection width {} does not match encoder output {}",
                self.projection.dim(),
                self.encoder.out_dim()
            )));
        }
        Ok(())
    }

    /// Encoder tensors followed by the head's, in registration order.
    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut v = self.encoder.tensors();
        v.extend(self.projection.tensors());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v = self.encoder.tensors_mut();
        v.extend(self.projection.tensors_mut());
        v
    }

    pub fn register(&self, tape: &mut Tape<'_>) -> (EncoderVars, ProjectionVars) {
        (self.encoder.register(tape, true), self.projection.register(tape, true))
    }

    /// Sum of every parameter value, bit-cast; cheap change detector.
    pub fn checksum(&self) -> u64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.data().iter())
            .fold(0xcbf2_9ce4_8422_2325u64, |h, v| {
                (h ^ (*v as f64).to_bits()).wrapping_mul(0x0000_0100_0000_01b3)
            })
    }
}
