//! Reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Tensor`] is a reference-counted handle to a value and, when it was
//! produced from an attached input, the [`Primitive`] that produced it. The
//! graph is implicit in those handles: there is no separate tape object, and a
//! graph lives exactly as long as the tensors that reference it.
//!
//! Every backward rule is itself written with tensor primitives. Calling
//! [`gradient`] with `create_graph = true` records those primitives, so the
//! returned gradients are attached and can be differentiated again. This is
//! what the critic's gradient penalty needs: the input gradient of the critic
//! is a function of the critic weights, and its norm is part of the loss.
//!
//! Conventions at kinks: `relu'(0) = 0`, `leaky_relu` uses slope 0.2 below
//! zero, and the row-norm backward returns zero at the origin.
//!
//! Tensors hold `Rc` handles and are confined to one thread. Use
//! [`Tensor::value`] / [`Tensor::into_value`] to get a plain [`Matrix`] that can be sent
//! elsewhere.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Negative-side slope of the leaky ReLU used by the networks.
pub const LEAKY_SLOPE: f64 = 0.2;

/// The primitive set. Shapes are `(rows, cols)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Primitive {
    /// `op(a) · op(b)` with optional transposes.
    MatMul { trans_a: bool, trans_b: bool },
    Transpose,
    Add,
    Sub,
    /// Elementwise product.
    Mul,
    /// `n × m` plus a `1 × m` row broadcast over rows (bias add).
    AddRow,
    /// `n × m` times an `n × 1` column broadcast over columns.
    MulCol,
    Scale(f64),
    AddScalar(f64),
    Neg,
    Relu,
    LeakyRelu(f64),
    Exp,
    Log,
    Sqrt,
    Square,
    /// `1/x`, with `0` mapped to `0`.
    Recip,
    /// `ln(1 + e^x)`.
    Softplus,
    /// Sum of all entries to `1 × 1`.
    Sum,
    /// Mean of all entries to `1 × 1`.
    Mean,
    /// `n × m` to `n × 1`.
    SumRows,
    /// `n × m` to `1 × m`.
    SumCols,
    /// Row-wise Euclidean norm, `n × d` to `n × 1`.
    L2NormRows,
    /// Pairwise squared distances between rows, `n × d`, `m × d` to `n × m`.
    SqDist,
    /// `1 × 1` to `rows × cols`.
    Broadcast { rows: usize, cols: usize },
    /// `n × 1` to `n × cols`.
    ExpandCols(usize),
    /// `1 × m` to `rows × m`.
    ExpandRows(usize),
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::MatMul { .. } => "matmul",
            Primitive::Transpose => "transpose",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::AddRow => "add_row",
            Primitive::MulCol => "mul_col",
            Primitive::Scale(_) => "scale",
            Primitive::AddScalar(_) => "add_scalar",
            Primitive::Neg => "neg",
            Primitive::Relu => "relu",
            Primitive::LeakyRelu(_) => "leaky_relu",
            Primitive::Exp => "exp",
            Primitive::Log => "log",
            Primitive::Sqrt => "sqrt",
            Primitive::Square => "square",
            Primitive::Recip => "recip",
            Primitive::Softplus => "softplus",
            Primitive::Sum => "sum",
            Primitive::Mean => "mean",
            Primitive::SumRows => "sum_rows",
            Primitive::SumCols => "sum_cols",
            Primitive::L2NormRows => "l2norm_rows",
            Primitive::SqDist => "sq_dist",
            Primitive::Broadcast { .. } => "broadcast",
            Primitive::ExpandCols(_) => "expand_cols",
            Primitive::ExpandRows(_) => "expand_rows",
        }
    }

    fn arity(&self) -> usize {
        match self {
            Primitive::MatMul { .. }
            | Primitive::Add
            | Primitive::Sub
            | Primitive::Mul
            | Primitive::AddRow
            | Primitive::MulCol
            | Primitive::SqDist => 2,
            _ => 1,
        }
    }
}

struct Node {
    op: Primitive,
    inputs: Vec<Tensor>,
}

struct Inner {
    value: Matrix,
    node: Option<Node>,
    leaf: bool,
}

#[derive(Clone)]
pub struct Tensor(Rc<Inner>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("attached", &self.is_attached())
            .field("op", &self.0.node.as_ref().map(|n| n.op.name()))
            .finish()
    }
}

impl Tensor {
    /// A value outside the graph. Gradients never flow into it.
    pub fn constant(value: Matrix) -> Self {
        Self(Rc::new(Inner {
            value,
            node: None,
            leaf: false,
        }))
    }

    /// A leaf that gradients can be taken with respect to.
    pub fn variable(value: Matrix) -> Self {
        Self(Rc::new(Inner {
            value,
            node: None,
            leaf: true,
        }))
    }

    pub fn scalar(v: f64) -> Self {
        Self::constant(Matrix::scalar(v))
    }

    pub fn value(&self) -> &Matrix {
        &self.0.value
    }

    /// Takes the value out without copying when this is the last handle.
    pub fn into_value(self) -> Matrix {
        match Rc::try_unwrap(self.0) {
            Ok(inner) => inner.value,
            Err(rc) => rc.value.clone(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.value.shape()
    }

    pub fn item(&self) -> f64 {
        self.0.value.item()
    }

    /// True for variables and for anything computed from one.
    pub fn is_attached(&self) -> bool {
        self.0.leaf || self.0.node.is_some()
    }

    pub fn detach(&self) -> Self {
        Self::constant(self.0.value.clone())
    }

    fn key(&self) -> usize {
        Rc::as_ptr(&self.0) as usize
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        apply_primitive(
            Primitive::MatMul {
                trans_a: false,
                trans_b: false,
            },
            &[self, other],
        )
    }

    pub fn matmul_t(&self, other: &Self, trans_a: bool, trans_b: bool) -> Result<Self> {
        apply_primitive(Primitive::MatMul { trans_a, trans_b }, &[self, other])
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        apply_primitive(Primitive::Add, &[self, other])
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        apply_primitive(Primitive::Sub, &[self, other])
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        apply_primitive(Primitive::Mul, &[self, other])
    }

    pub fn add_row(&self, row: &Self) -> Result<Self> {
        apply_primitive(Primitive::AddRow, &[self, row])
    }

    pub fn mul_col(&self, col: &Self) -> Result<Self> {
        apply_primitive(Primitive::MulCol, &[self, col])
    }

    pub fn sq_dist(&self, other: &Self) -> Result<Self> {
        apply_primitive(Primitive::SqDist, &[self, other])
    }

    pub fn scale(&self, s: f64) -> Self {
        self.unary(Primitive::Scale(s))
    }

    pub fn add_scalar(&self, s: f64) -> Self {
        self.unary(Primitive::AddScalar(s))
    }

    pub fn neg(&self) -> Self {
        self.unary(Primitive::Neg)
    }

    pub fn transpose(&self) -> Self {
        self.unary(Primitive::Transpose)
    }

    pub fn relu(&self) -> Self {
        self.unary(Primitive::Relu)
    }

    pub fn leaky_relu(&self) -> Self {
        self.unary(Primitive::LeakyRelu(LEAKY_SLOPE))
    }

    pub fn exp(&self) -> Self {
        self.unary(Primitive::Exp)
    }

    pub fn log(&self) -> Self {
        self.unary(Primitive::Log)
    }

    pub fn sqrt(&self) -> Self {
        self.unary(Primitive::Sqrt)
    }

    pub fn square(&self) -> Self {
        self.unary(Primitive::Square)
    }

    pub fn recip(&self) -> Self {
        self.unary(Primitive::Recip)
    }

    pub fn softplus(&self) -> Self {
        self.unary(Primitive::Softplus)
    }

    pub fn sum(&self) -> Self {
        self.unary(Primitive::Sum)
    }

    pub fn mean(&self) -> Self {
        self.unary(Primitive::Mean)
    }

    pub fn sum_rows(&self) -> Self {
        self.unary(Primitive::SumRows)
    }

    pub fn sum_cols(&self) -> Self {
        self.unary(Primitive::SumCols)
    }

    pub fn l2norm_rows(&self) -> Self {
        self.unary(Primitive::L2NormRows)
    }

    fn unary(&self, op: Primitive) -> Self {
        apply_primitive(op, &[self]).expect("unary primitive accepts any shape")
    }
}

/// Evaluates `op` on `inputs`, recording a graph node when any input is
/// attached.
pub fn apply_primitive(op: Primitive, inputs: &[&Tensor]) -> Result<Tensor> {
    apply(op, inputs, true)
}

fn apply(op: Primitive, inputs: &[&Tensor], record: bool) -> Result<Tensor> {
    if inputs.len() != op.arity() {
        return Err(Error::InvalidArgument(format!(
            "{} takes {} inputs, got {}",
            op.name(),
            op.arity(),
            inputs.len()
        )));
    }
    let values: Vec<&Matrix> = inputs.iter().map(|t| t.value()).collect();
    let value = forward(op, &values)?;
    let node = (record && inputs.iter().any(|t| t.is_attached())).then(|| Node {
        op,
        inputs: inputs.iter().map(|t| (*t).clone()).collect(),
    });
    Ok(Tensor(Rc::new(Inner {
        value,
        node,
        leaf: false,
    })))
}

fn mismatch(op: Primitive, values: &[&Matrix]) -> Error {
    Error::ShapeMismatch {
        op: op.name(),
        shapes: values
            .iter()
            .map(|m| format!("{:?}", m.shape()))
            .collect::<Vec<_>>()
            .join(", "),
    }
}

fn forward(op: Primitive, v: &[&Matrix]) -> Result<Matrix> {
    let a = v[0];
    let same_shape = || {
        if a.shape() == v[1].shape() {
            Ok(())
        } else {
            Err(mismatch(op, v))
        }
    };
    Ok(match op {
        Primitive::MatMul { trans_a, trans_b } => a
            .matmul_t(v[1], trans_a, trans_b)
            .map_err(|_| mismatch(op, v))?,
        Primitive::Transpose => a.transpose(),
        Primitive::Add => {
            same_shape()?;
            a.zip_map(v[1], |x, y| x + y)
        }
        Primitive::Sub => {
            same_shape()?;
            a.zip_map(v[1], |x, y| x - y)
        }
        Primitive::Mul => {
            same_shape()?;
            a.zip_map(v[1], |x, y| x * y)
        }
        Primitive::AddRow => a.add_row(v[1]).map_err(|_| mismatch(op, v))?,
        Primitive::MulCol => {
            let c = v[1];
            if c.cols() != 1 || c.rows() != a.rows() {
                return Err(mismatch(op, v));
            }
            Matrix::from_fn(a.rows(), a.cols(), |r, k| a.get(r, k) * c.get(r, 0))
        }
        Primitive::Scale(s) => a.map(|x| x * s),
        Primitive::AddScalar(s) => a.map(|x| x + s),
        Primitive::Neg => a.map(|x| -x),
        Primitive::Relu => a.map(|x| if x <= 0.0 { 0.0 } else { x }),
        Primitive::LeakyRelu(s) => a.map(|x| if x > 0.0 { x } else { s * x }),
        Primitive::Exp => a.map(f64::exp),
        Primitive::Log => a.map(f64::ln),
        Primitive::Sqrt => a.map(f64::sqrt),
        Primitive::Square => a.map(|x| x * x),
        Primitive::Recip => a.map(|x| if x == 0.0 { 0.0 } else { 1.0 / x }),
        Primitive::Softplus => a.map(softplus),
        Primitive::Sum => Matrix::scalar(a.sum()),
        Primitive::Mean => Matrix::scalar(a.mean()),
        Primitive::SumRows => {
            Matrix::col_vector(&(0..a.rows()).map(|r| a.row(r).iter().sum()).collect::<Vec<_>>())
        }
        Primitive::SumCols => {
            let mut out = vec![0.0; a.cols()];
            for r in 0..a.rows() {
                for (o, x) in out.iter_mut().zip(a.row(r)) {
                    *o += x;
                }
            }
            Matrix::row_vector(&out)
        }
        Primitive::L2NormRows => a.row_norms(),
        Primitive::SqDist => {
            let b = v[1];
            if a.cols() != b.cols() {
                return Err(mismatch(op, v));
            }
            Matrix::from_fn(a.rows(), b.rows(), |i, j| {
                a.row(i)
                    .iter()
                    .zip(b.row(j))
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum()
            })
        }
        Primitive::Broadcast { rows, cols } => {
            if a.shape() != (1, 1) || rows == 0 || cols == 0 {
                return Err(mismatch(op, v));
            }
            Matrix::filled(rows, cols, a.item())
        }
        Primitive::ExpandCols(cols) => {
            if a.cols() != 1 || cols == 0 {
                return Err(mismatch(op, v));
            }
            Matrix::from_fn(a.rows(), cols, |r, _| a.get(r, 0))
        }
        Primitive::ExpandRows(rows) => {
            if a.rows() != 1 || rows == 0 {
                return Err(mismatch(op, v));
            }
            Matrix::from_fn(rows, a.cols(), |_, c| a.get(0, c))
        }
    })
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Builds backward expressions, recording them only when asked to.
struct Ctx {
    record: bool,
}

impl Ctx {
    fn op(&self, op: Primitive, inputs: &[&Tensor]) -> Tensor {
        apply(op, inputs, self.record).expect("backward shapes are consistent by construction")
    }

    fn mm(&self, a: &Tensor, b: &Tensor, trans_a: bool, trans_b: bool) -> Tensor {
        self.op(Primitive::MatMul { trans_a, trans_b }, &[a, b])
    }

    fn un(&self, op: Primitive, a: &Tensor) -> Tensor {
        self.op(op, &[a])
    }

    fn mul(&self, a: &Tensor, b: &Tensor) -> Tensor {
        self.op(Primitive::Mul, &[a, b])
    }
}

/// Gradients of `out`'s inputs given the incoming gradient `g`. Entries whose
/// `need` flag is false are skipped.
fn backward(
    op: Primitive,
    inputs: &[Tensor],
    out: &Tensor,
    g: &Tensor,
    need: &[bool],
    ctx: &Ctx,
) -> Vec<Option<Tensor>> {
    let a = &inputs[0];
    let want = |i: usize| need.get(i).copied().unwrap_or(false);
    let one = |t: Tensor| vec![Some(t)];
    match op {
        Primitive::MatMul { trans_a, trans_b } => {
            let b = &inputs[1];
            let da = want(0).then(|| match (trans_a, trans_b) {
                (false, false) => ctx.mm(g, b, false, true),
                (true, false) => ctx.mm(b, g, false, true),
                (false, true) => ctx.mm(g, b, false, false),
                (true, true) => ctx.mm(b, g, true, true),
            });
            let db = want(1).then(|| match (trans_a, trans_b) {
                (false, false) => ctx.mm(a, g, true, false),
                (true, false) => ctx.mm(a, g, false, false),
                (false, true) => ctx.mm(g, a, true, false),
                (true, true) => ctx.mm(g, a, true, true),
            });
            vec![da, db]
        }
        Primitive::Transpose => one(ctx.un(Primitive::Transpose, g)),
        Primitive::Add => vec![want(0).then(|| g.clone()), want(1).then(|| g.clone())],
        Primitive::Sub => vec![
            want(0).then(|| g.clone()),
            want(1).then(|| ctx.un(Primitive::Neg, g)),
        ],
        Primitive::Mul => {
            let b = &inputs[1];
            vec![want(0).then(|| ctx.mul(g, b)), want(1).then(|| ctx.mul(g, a))]
        }
        Primitive::AddRow => vec![
            want(0).then(|| g.clone()),
            want(1).then(|| ctx.un(Primitive::SumCols, g)),
        ],
        Primitive::MulCol => {
            let c = &inputs[1];
            vec![
                want(0).then(|| ctx.op(Primitive::MulCol, &[g, c])),
                want(1).then(|| ctx.un(Primitive::SumRows, &ctx.mul(g, a))),
            ]
        }
        Primitive::Scale(s) => one(ctx.un(Primitive::Scale(s), g)),
        Primitive::AddScalar(_) => one(g.clone()),
        Primitive::Neg => one(ctx.un(Primitive::Neg, g)),
        Primitive::Relu => {
            let mask = Tensor::constant(a.value().map(|x| if x > 0.0 { 1.0 } else { 0.0 }));
            one(ctx.mul(g, &mask))
        }
        Primitive::LeakyRelu(s) => {
            let mask = Tensor::constant(a.value().map(|x| if x > 0.0 { 1.0 } else { s }));
            one(ctx.mul(g, &mask))
        }
        Primitive::Exp => one(ctx.mul(g, out)),
        Primitive::Log => one(ctx.mul(g, &ctx.un(Primitive::Recip, a))),
        Primitive::Sqrt => {
            let half_inv = ctx.un(Primitive::Scale(0.5), &ctx.un(Primitive::Recip, out));
            one(ctx.mul(g, &half_inv))
        }
        Primitive::Square => one(ctx.mul(g, &ctx.un(Primitive::Scale(2.0), a))),
        Primitive::Recip => {
            let d = ctx.un(Primitive::Neg, &ctx.un(Primitive::Square, out));
            one(ctx.mul(g, &d))
        }
        Primitive::Softplus => {
            // sigmoid(x) = exp(-softplus(-x))
            let neg_a = ctx.un(Primitive::Neg, a);
            let sig = ctx.un(
                Primitive::Exp,
                &ctx.un(Primitive::Neg, &ctx.un(Primitive::Softplus, &neg_a)),
            );
            one(ctx.mul(g, &sig))
        }
        Primitive::Sum => {
            let (rows, cols) = a.shape();
            one(ctx.un(Primitive::Broadcast { rows, cols }, g))
        }
        Primitive::Mean => {
            let (rows, cols) = a.shape();
            let spread = ctx.un(Primitive::Broadcast { rows, cols }, g);
            one(ctx.un(Primitive::Scale(1.0 / (rows * cols) as f64), &spread))
        }
        Primitive::SumRows => one(ctx.un(Primitive::ExpandCols(a.shape().1), g)),
        Primitive::SumCols => one(ctx.un(Primitive::ExpandRows(a.shape().0), g)),
        Primitive::L2NormRows => {
            let coef = ctx.mul(g, &ctx.un(Primitive::Recip, out));
            one(ctx.op(Primitive::MulCol, &[a, &coef]))
        }
        Primitive::SqDist => {
            let b = &inputs[1];
            let da = want(0).then(|| {
                let row_sum = ctx.un(Primitive::SumRows, g);
                let t = ctx.op(Primitive::MulCol, &[a, &row_sum]);
                let gb = ctx.mm(g, b, false, false);
                ctx.un(Primitive::Scale(2.0), &ctx.op(Primitive::Sub, &[&t, &gb]))
            });
            let db = want(1).then(|| {
                let col_sum = ctx.un(Primitive::Transpose, &ctx.un(Primitive::SumCols, g));
                let t = ctx.op(Primitive::MulCol, &[b, &col_sum]);
                let ga = ctx.mm(g, a, true, false);
                ctx.un(Primitive::Scale(2.0), &ctx.op(Primitive::Sub, &[&t, &ga]))
            });
            vec![da, db]
        }
        Primitive::Broadcast { .. } => one(ctx.un(Primitive::Sum, g)),
        Primitive::ExpandCols(_) => one(ctx.un(Primitive::SumRows, g)),
        Primitive::ExpandRows(_) => one(ctx.un(Primitive::SumCols, g)),
    }
}

/// Inputs-before-outputs ordering of every tensor reachable from `root`.
fn topo_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut seen = HashSet::new();
    let mut stack: Vec<(Tensor, bool)> = vec![(root.clone(), false)];
    while let Some((t, expanded)) = stack.pop() {
        if expanded {
            order.push(t);
            continue;
        }
        if !seen.insert(t.key()) {
            continue;
        }
        stack.push((t.clone(), true));
        if let Some(node) = &t.0.node {
            for input in node.inputs.iter().rev() {
                if !seen.contains(&input.key()) {
                    stack.push((input.clone(), false));
                }
            }
        }
    }
    order
}

/// `∂output/∂wrt` for a scalar `output`.
///
/// Tensors in `wrt` that `output` does not depend on get zero gradients. With
/// `create_graph` the backward pass is recorded and the results are attached,
/// so they can be fed into another call.
pub fn gradient(output: &Tensor, wrt: &[&Tensor], create_graph: bool) -> Result<Vec<Tensor>> {
    let (rows, cols) = output.shape();
    if (rows, cols) != (1, 1) {
        return Err(Error::NonScalarOutput { rows, cols });
    }
    let targets: HashSet<usize> = wrt.iter().map(|t| t.key()).collect();
    let order = topo_order(output);

    let mut needs: HashMap<usize, bool> = HashMap::with_capacity(order.len());
    for t in &order {
        let upstream = t
            .0
            .node
            .as_ref()
            .is_some_and(|n| n.inputs.iter().any(|i| needs[&i.key()]));
        needs.insert(t.key(), targets.contains(&t.key()) || upstream);
    }

    let ctx = Ctx {
        record: create_graph,
    };
    let mut grads: HashMap<usize, Tensor> = HashMap::new();
    grads.insert(output.key(), Tensor::scalar(1.0));

    for t in order.iter().rev() {
        let Some(node) = &t.0.node else { continue };
        if !needs[&t.key()] {
            continue;
        }
        let Some(g) = grads.get(&t.key()).cloned() else {
            continue;
        };
        let need: Vec<bool> = node.inputs.iter().map(|i| needs[&i.key()]).collect();
        let input_grads = backward(node.op, &node.inputs, t, &g, &need, &ctx);
        for ((input, ig), wanted) in node.inputs.iter().zip(input_grads).zip(need) {
            let (Some(ig), true) = (ig, wanted) else {
                continue;
            };
            let merged = match grads.remove(&input.key()) {
                Some(prev) => ctx.op(Primitive::Add, &[&prev, &ig]),
                None => ig,
            };
            grads.insert(input.key(), merged);
        }
    }

    Ok(wrt
        .iter()
        .map(|w| {
            grads.get(&w.key()).cloned().unwrap_or_else(|| {
                let (r, c) = w.shape();
                Tensor::constant(Matrix::zeros(r, c))
            })
        })
        .collect())
}
