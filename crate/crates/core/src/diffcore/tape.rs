//! Reverse-mode differentiation over dense matrices.
//!
//! Every operation appends a node whose parents already exist on the tape, so
//! node indices are a topological order and `backward` is a single reverse
//! sweep.

use crate::diffcore::matrix::{dot, DenseMatrix};
use crate::diffcore::spectral::top_singular;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Vector-Jacobian product of a linear map, used for operations whose forward
/// value is computed outside the tape.
pub type LinearVjp = fn(&DenseMatrix) -> DenseMatrix;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    ScalarMul(Var, Var),
    Exp(Var),
    Ln(Var),
    LogSoftmaxRows(Var),
    SoftmaxRows(Var),
    RowNormalize(Var),
    FrobNormalize(Var),
    Sum(Var),
    FrobDot(Var, Var),
    Entry(Var, usize, usize),
    FromScalars(Vec<Var>),
    ConcatCols(Vec<Var>),
    SpectralCap {
        x: Var,
        limit: f64,
        sigma: f64,
        left: Vec<f64>,
        right: Vec<f64>,
    },
    Linear(Var, LinearVjp),
}

impl Op {
    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Hadamard(a, b)
            | Op::AddRow(a, b)
            | Op::ScalarMul(a, b)
            | Op::FrobDot(a, b) => vec![*a, *b],
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Exp(a)
            | Op::Ln(a)
            | Op::LogSoftmaxRows(a)
            | Op::SoftmaxRows(a)
            | Op::RowNormalize(a)
            | Op::FrobNormalize(a)
            | Op::Sum(a)
            | Op::Entry(a, _, _)
            | Op::Linear(a, _) => vec![*a],
            Op::SpectralCap { x, .. } => vec![*x],
            Op::FromScalars(v) | Op::ConcatCols(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: DenseMatrix,
    op: Op,
    is_param: bool,
}

/// Recorded computation graph.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<DenseMatrix>>,
    params: Vec<Var>,
}

impl Gradients {
    /// Gradient for `v`. Parameters always have an entry (zeros when the
    /// output does not depend on them).
    pub fn get(&self, v: Var) -> Option<&DenseMatrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn params(&self) -> &[Var] {
        &self.params
    }
}

fn rowwise_max(x: &DenseMatrix) -> Vec<f64> {
    (0..x.rows())
        .map(|i| x.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: DenseMatrix, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            op,
            is_param: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Non-differentiated input.
    pub fn constant(&mut self, value: DenseMatrix) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Registered parameter; always receives a gradient.
    pub fn param(&mut self, value: DenseMatrix) -> Var {
        let v = self.push(value, Op::Leaf);
        self.nodes[v.0].is_param = true;
        v
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> Option<f64> {
        self.value(v).as_scalar()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(v, Op::Hadamard(a, b)))
    }

    /// `a + 𝟙·row` (row broadcast over every row of `a`).
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (am, rm) = (self.value(a), self.value(row));
        if rm.rows() != 1 || rm.cols() != am.cols() {
            return Err(Error::shape(
                "add_row",
                format!("{:?} + row {:?}", am.shape(), rm.shape()),
            ));
        }
        let mut v = am.clone();
        for i in 0..v.rows() {
            for (x, b) in v.row_mut(i).iter_mut().zip(rm.row(0)) {
                *x += b;
            }
        }
        Ok(self.push(v, Op::AddRow(a, row)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).scale(c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddScalar(a))
    }

    /// `s · a` where `s` is a 1×1 node.
    pub fn scalar_mul(&mut self, s: Var, a: Var) -> Result<Var> {
        let c = self
            .scalar_value(s)
            .ok_or_else(|| Error::shape("scalar_mul", "multiplier is not 1x1"))?;
        let v = self.value(a).scale(c);
        Ok(self.push(v, Op::ScalarMul(s, a)))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|x| !(*x > 0.0)) {
            return Err(Error::Evaluation("ln of a non-positive entry".into()));
        }
        let v = self.value(a).map(f64::ln);
        Ok(self.push(v, Op::Ln(a)))
    }

    /// Row-wise log-softmax with max subtraction.
    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let maxes = rowwise_max(x);
        let mut v = x.clone();
        for (i, m) in maxes.iter().enumerate() {
            let row = v.row_mut(i);
            let lse = m + row.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|z| *z -= lse);
        }
        self.push(v, Op::LogSoftmaxRows(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = softmax_rows(self.value(a));
        self.push(v, Op::SoftmaxRows(a))
    }

    /// Divides every row by its Euclidean norm. A zero row is an error naming
    /// the row.
    pub fn row_normalize(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let mut v = x.clone();
        for i in 0..x.rows() {
            let n = dot(x.row(i), x.row(i)).sqrt();
            if n == 0.0 {
                return Err(Error::DegenerateProjection(format!("row {i} has zero norm")));
            }
            v.row_mut(i).iter_mut().for_each(|z| *z /= n);
        }
        Ok(self.push(v, Op::RowNormalize(a)))
    }

    pub fn frob_normalize(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).frobenius_norm();
        if n == 0.0 {
            return Err(Error::DegenerateEmbedding("zero Frobenius norm".into()));
        }
        let v = self.value(a).scale(1.0 / n);
        Ok(self.push(v, Op::FrobNormalize(a)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = DenseMatrix::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn frob_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = DenseMatrix::scalar(self.value(a).frobenius_dot(self.value(b))?);
        Ok(self.push(v, Op::FrobDot(a, b)))
    }

    pub fn entry(&mut self, a: Var, i: usize, j: usize) -> Result<Var> {
        let x = self.value(a);
        if i >= x.rows() || j >= x.cols() {
            return Err(Error::shape(
                "entry",
                format!("({i}, {j}) outside {:?}", x.shape()),
            ));
        }
        let v = DenseMatrix::scalar(x.get(i, j));
        Ok(self.push(v, Op::Entry(a, i, j)))
    }

    /// Assembles 1×1 nodes into a `rows × cols` matrix (row-major).
    pub fn from_scalars(&mut self, scalars: &[Var], rows: usize, cols: usize) -> Result<Var> {
        if scalars.len() != rows * cols {
            return Err(Error::shape(
                "from_scalars",
                format!("{} scalars for {rows}x{cols}", scalars.len()),
            ));
        }
        let mut data = Vec::with_capacity(scalars.len());
        for s in scalars {
            data.push(
                self.scalar_value(*s)
                    .ok_or_else(|| Error::shape("from_scalars", "entry is not 1x1"))?,
            );
        }
        let v = DenseMatrix::new(rows, cols, data)?;
        Ok(self.push(v, Op::FromScalars(scalars.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let vals: Vec<&DenseMatrix> = parts.iter().map(|p| self.value(*p)).collect();
        let v = DenseMatrix::hconcat(&vals)?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    /// Rescales a square matrix by `min(1, limit / ‖x‖₂)`. Returns the node and
    /// the factor applied. Differentiated through the spectral norm.
    pub fn spectral_cap(&mut self, x: Var, limit: f64, tol: f64, max_iter: usize) -> Result<(Var, f64)> {
        let top = top_singular(self.value(x), tol, max_iter)?;
        let factor = if top.sigma > limit { limit / top.sigma } else { 1.0 };
        let v = self.value(x).scale(factor);
        let node = self.push(
            v,
            Op::SpectralCap {
                x,
                limit,
                sigma: top.sigma,
                left: top.left,
                right: top.right,
            },
        );
        Ok((node, factor))
    }

    /// Node whose forward value is supplied by the caller and whose backward
    /// pass applies the linear map `vjp` to the incoming gradient.
    pub fn linear_map(&mut self, x: Var, value: DenseMatrix, vjp: LinearVjp) -> Result<Var> {
        self.value(x).check_same_shape(&value, "linear_map")?;
        Ok(self.push(value, Op::Linear(x, vjp)))
    }

    /// Reverse accumulation from a 1×1 output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self
            .nodes
            .get(output.0)
            .ok_or(Error::Index {
                index: output.0,
                len: self.nodes.len(),
            })?;
        if out.value.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a 1x1 output, got {:?}",
                out.value.shape()
            )));
        }
        for (idx, node) in self.nodes.iter().enumerate().take(output.0 + 1) {
            if node.op.parents().iter().any(|p| p.0 >= idx) {
                return Err(Error::Graph(format!("node {idx} references a later node (cycle)")));
            }
        }

        let mut grads: Vec<Option<DenseMatrix>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(DenseMatrix::scalar(1.0));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let contributions = self.local_vjp(node, &g)?;
            grads[idx] = Some(g);
            for (parent, pg) in contributions {
                match &mut grads[parent.0] {
                    Some(acc) => acc.axpy(1.0, &pg)?,
                    slot @ None => *slot = Some(pg),
                }
            }
        }

        let params: Vec<Var> = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.is_param)
            .map(|(i, _)| Var(i))
            .collect();
        for p in &params {
            if grads[p.0].is_none() {
                let (r, c) = self.nodes[p.0].value.shape();
                grads[p.0] = Some(DenseMatrix::zeros(r, c));
            }
        }
        Ok(Gradients { grads, params })
    }

    fn local_vjp(&self, node: &Node, g: &DenseMatrix) -> Result<Vec<(Var, DenseMatrix)>> {
        let val = |v: Var| &self.nodes[v.0].value;
        Ok(match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => vec![
                (*a, g.matmul_transposed(val(*b))?),
                (*b, val(*a).transposed_matmul(g)?),
            ],
            Op::Transpose(a) => vec![(*a, g.transpose())],
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.scale(-1.0))],
            Op::Hadamard(a, b) => vec![
                (*a, g.hadamard(val(*b))?),
                (*b, g.hadamard(val(*a))?),
            ],
            Op::AddRow(a, r) => {
                let sums = g.col_sums();
                vec![(*a, g.clone()), (*r, DenseMatrix::new(1, sums.len(), sums)?)]
            }
            Op::Scale(a, c) => vec![(*a, g.scale(*c))],
            Op::AddScalar(a) => vec![(*a, g.clone())],
            Op::ScalarMul(s, a) => {
                let c = val(*s).data()[0];
                vec![
                    (*s, DenseMatrix::scalar(g.frobenius_dot(val(*a))?)),
                    (*a, g.scale(c)),
                ]
            }
            Op::Exp(a) => vec![(*a, g.hadamard(&node.value)?)],
            Op::Ln(a) => vec![(*a, g.zip_with(val(*a), "ln backward", |gi, x| gi / x)?)],
            Op::LogSoftmaxRows(a) => {
                let y = &node.value;
                let mut out = g.clone();
                for i in 0..y.rows() {
                    let gsum: f64 = g.row(i).iter().sum();
                    for (o, yi) in out.row_mut(i).iter_mut().zip(y.row(i)) {
                        *o -= yi.exp() * gsum;
                    }
                }
                vec![(*a, out)]
            }
            Op::SoftmaxRows(a) => {
                let s = &node.value;
                let mut out = g.clone();
                for i in 0..s.rows() {
                    let inner = dot(g.row(i), s.row(i));
                    for (o, si) in out.row_mut(i).iter_mut().zip(s.row(i)) {
                        *o = si * (*o - inner);
                    }
                }
                vec![(*a, out)]
            }
            Op::RowNormalize(a) => {
                let x = val(*a);
                let y = &node.value;
                let mut out = g.clone();
                for i in 0..y.rows() {
                    let n = dot(x.row(i), x.row(i)).sqrt();
                    let proj = dot(g.row(i), y.row(i));
                    for (o, yi) in out.row_mut(i).iter_mut().zip(y.row(i)) {
                        *o = (*o - yi * proj) / n;
                    }
                }
                vec![(*a, out)]
            }
            Op::FrobNormalize(a) => {
                let n = val(*a).frobenius_norm();
                let y = &node.value;
                let proj = g.frobenius_dot(y)?;
                let mut out = g.clone();
                out.axpy(-proj, y)?;
                vec![(*a, out.scale(1.0 / n))]
            }
            Op::Sum(a) => {
                let (r, c) = val(*a).shape();
                vec![(*a, DenseMatrix::filled(r, c, g.data()[0]))]
            }
            Op::FrobDot(a, b) => {
                let s = g.data()[0];
                vec![(*a, val(*b).scale(s)), (*b, val(*a).scale(s))]
            }
            Op::Entry(a, i, j) => {
                let (r, c) = val(*a).shape();
                let mut out = DenseMatrix::zeros(r, c);
                out.set(*i, *j, g.data()[0]);
                vec![(*a, out)]
            }
            Op::FromScalars(parts) => parts
                .iter()
                .zip(g.data())
                .map(|(p, gi)| (*p, DenseMatrix::scalar(*gi)))
                .collect(),
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                let mut out = Vec::with_capacity(parts.len());
                for p in parts {
                    let (r, c) = val(*p).shape();
                    let part = DenseMatrix::from_fn(r, c, |i, j| g.get(i, offset + j));
                    offset += c;
                    out.push((*p, part));
                }
                out
            }
            Op::SpectralCap {
                x,
                limit,
                sigma,
                left,
                right,
            } => {
                if *sigma <= *limit {
                    vec![(*x, g.clone())]
                } else {
                    // y = limit·x/σ(x);  ∂σ/∂x = u vᵀ
                    let xv = val(*x);
                    let gx = g.frobenius_dot(xv)?;
                    let coef = limit * gx / (sigma * sigma);
                    let mut out = g.scale(limit / sigma);
                    for i in 0..out.rows() {
                        let ui = left[i];
                        for (o, vj) in out.row_mut(i).iter_mut().zip(right) {
                            *o -= coef * ui * vj;
                        }
                    }
                    vec![(*x, out)]
                }
            }
            Op::Linear(x, vjp) => vec![(*x, vjp(g))],
        })
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &DenseMatrix) -> DenseMatrix {
    let maxes = rowwise_max(x);
    let mut v = x.clone();
    for (i, m) in maxes.iter().enumerate() {
        let row = v.row_mut(i);
        row.iter_mut().for_each(|z| *z = (*z - m).exp());
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|z| *z /= s);
    }
    v
}
