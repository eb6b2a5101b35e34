use std::collections::BTreeMap;

use super::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf { trainable: bool },
    MatMul { a: usize, b: usize, trans_b: bool },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize, f64),
    Relu(usize),
    Tanh(usize),
    Sigmoid(usize),
    Square(usize),
    Sqrt(usize),
    Exp(usize),
    Recip(usize),
    Clamp { a: usize, lo: f64, hi: f64 },
    Sum(usize),
    Mean(usize),
    SumRows(usize),
    MeanRows(usize),
    Concat { inputs: Vec<usize>, axis: usize },
    SliceCols { a: usize, start: usize, end: usize },
    Detach(usize),
    PairwiseSqDist(usize, usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(_) => "neg",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Relu(_) => "relu",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Square(_) => "square",
            Op::Sqrt(_) => "sqrt",
            Op::Exp(_) => "exp",
            Op::Recip(_) => "recip",
            Op::Clamp { .. } => "clamp",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SumRows(_) => "sum_rows",
            Op::MeanRows(_) => "mean_rows",
            Op::Concat { .. } => "concat",
            Op::SliceCols { .. } => "slice_cols",
            Op::Detach(_) => "detach",
            Op::PairwiseSqDist(..) => "pairwise_sq_dist",
        }
    }

    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf { .. } => vec![],
            Op::MatMul { a, b, .. } => vec![*a, *b],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::PairwiseSqDist(a, b) => vec![*a, *b],
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a, _)
            | Op::Relu(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Square(a)
            | Op::Sqrt(a)
            | Op::Exp(a)
            | Op::Recip(a)
            | Op::Clamp { a, .. }
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SumRows(a)
            | Op::MeanRows(a)
            | Op::SliceCols { a, .. }
            | Op::Detach(a) => vec![*a],
            Op::Concat { inputs, .. } => inputs.clone(),
        }
    }
}

/// How the right operand of a binary op lines up with the left one.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Broadcast {
    Same,
    Row,
    Scalar,
}

fn broadcast_kind(a: &Tensor, b: &Tensor) -> Option<Broadcast> {
    if a.shape() == b.shape() {
        Some(Broadcast::Same)
    } else if b.len() == 1 {
        Some(Broadcast::Scalar)
    } else if a.is_matrix()
        && b.len() == a.cols()
        && (b.shape().len() == 1 || (b.is_matrix() && b.rows() == 1))
    {
        Some(Broadcast::Row)
    } else {
        None
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
    name: Option<String>,
}

/// Define-by-run computation graph.
///
/// Every op is evaluated eagerly and appended to the tape, so node order is
/// a topological order. Leaves are either trainable parameters or constants;
/// gradients only flow into nodes with a trainable ancestor and never
/// through [`Graph::detach`].
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients returned by [`Graph::backward`], one entry per requested node.
/// `None` means no gradient reached the node.
#[derive(Clone, Debug)]
pub struct Gradients {
    entries: Vec<(Var, Option<Tensor>)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.entries
            .iter()
            .find(|(w, _)| *w == v)
            .and_then(|(_, g)| g.as_ref())
    }

    /// Largest absolute gradient entry over the given nodes, 0 if none flowed.
    pub fn max_abs(&self, vars: &[Var]) -> f64 {
        vars.iter()
            .filter_map(|&v| self.get(v))
            .fold(0.0, |m, g| m.max(g.max_abs()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, Option<&Tensor>)> {
        self.entries.iter().map(|(v, g)| (*v, g.as_ref()))
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// True if no gradient can flow from `v` back into a parameter.
    pub fn is_detached(&self, v: Var) -> bool {
        !self.nodes[v.0].requires_grad
    }

    /// Attaches a name so the node is reported by [`Graph::outputs`] and can
    /// be rebound by [`Graph::forward_eval`] if it is a leaf.
    pub fn set_name(&mut self, v: Var, name: &str) {
        self.nodes[v.0].name = Some(name.to_string());
    }

    fn leaf(&mut self, value: Tensor, trainable: bool, name: Option<String>) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf { trainable },
            value,
            requires_grad: trainable,
            name,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false, None)
    }

    /// Named constant input, rebindable through [`Graph::forward_eval`].
    pub fn input(&mut self, name: &str, value: Tensor) -> Var {
        self.leaf(value, false, Some(name.to_string()))
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true, None)
    }

    fn push(&mut self, op: Op) -> Result<Var> {
        let value = self.compute(&op)?;
        let idx = self.nodes.len();
        if !value.all_finite() {
            return Err(Error::NonFinite {
                op: op.name(),
                node: idx,
            });
        }
        let requires_grad = match op {
            Op::Detach(_) => false,
            _ => op.inputs().iter().any(|&i| self.nodes[i].requires_grad),
        };
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
            name: None,
        });
        Ok(Var(idx))
    }

    fn shape_err(&self, op: &'static str, ids: &[usize]) -> Error {
        Error::Shape {
            op,
            shapes: ids
                .iter()
                .map(|&i| self.nodes[i].value.shape().to_vec())
                .collect(),
        }
    }

    fn compute(&self, op: &Op) -> Result<Tensor> {
        let val = |i: usize| &self.nodes[i].value;
        let unary = |a: usize, f: &dyn Fn(f64) -> f64| Ok(val(a).map(f));
        match *op {
            Op::Leaf { .. } => unreachable!("leaves carry their own value"),
            Op::MatMul { a, b, trans_b } => {
                let (ta, tb) = (val(a), val(b));
                if !ta.is_matrix() || !tb.is_matrix() {
                    return Err(self.shape_err("matmul", &[a, b]));
                }
                let (m, k) = (ta.rows(), ta.cols());
                let (kb, n) = if trans_b {
                    (tb.cols(), tb.rows())
                } else {
                    (tb.rows(), tb.cols())
                };
                if k != kb {
                    return Err(self.shape_err("matmul", &[a, b]));
                }
                let mut out = vec![0.0; m * n];
                gemm(m, k, n, ta.data(), false, tb.data(), trans_b, &mut out, false);
                Ok(Tensor::from_parts(vec![m, n], out))
            }
            Op::Add(a, b) => self.binary("add", a, b, |x, y| x + y),
            Op::Sub(a, b) => self.binary("sub", a, b, |x, y| x - y),
            Op::Mul(a, b) => self.binary("mul", a, b, |x, y| x * y),
            Op::Div(a, b) => self.binary("div", a, b, |x, y| x / y),
            Op::Neg(a) => unary(a, &|x| -x),
            Op::Scale(a, c) => unary(a, &|x| c * x),
            Op::AddScalar(a, c) => unary(a, &|x| x + c),
            Op::Relu(a) => unary(a, &|x| x.max(0.0)),
            Op::Tanh(a) => unary(a, &f64::tanh),
            Op::Sigmoid(a) => unary(a, &sigmoid),
            Op::Square(a) => unary(a, &|x| x * x),
            Op::Sqrt(a) => unary(a, &f64::sqrt),
            Op::Exp(a) => unary(a, &f64::exp),
            Op::Recip(a) => unary(a, &|x| 1.0 / x),
            Op::Clamp { a, lo, hi } => unary(a, &|x| x.clamp(lo, hi)),
            Op::Sum(a) => Ok(Tensor::scalar(val(a).data().iter().sum())),
            Op::Mean(a) => {
                let t = val(a);
                Ok(Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64))
            }
            Op::SumRows(a) | Op::MeanRows(a) => {
                let t = val(a);
                if !t.is_matrix() {
                    return Err(self.shape_err("sum_rows", &[a]));
                }
                let (r, c) = (t.rows(), t.cols());
                let mut out = vec![0.0; c];
                for i in 0..r {
                    for (o, v) in out.iter_mut().zip(t.row(i)) {
                        *o += v;
                    }
                }
                if matches!(op, Op::MeanRows(_)) {
                    out.iter_mut().for_each(|o| *o /= r as f64);
                }
                Ok(Tensor::from_parts(vec![1, c], out))
            }
            Op::Concat { ref inputs, axis } => self.concat_values(inputs, axis),
            Op::SliceCols { a, start, end } => {
                let t = val(a);
                if !t.is_matrix() || start >= end || end > t.cols() {
                    return Err(self.shape_err("slice_cols", &[a]));
                }
                let mut out = Vec::with_capacity(t.rows() * (end - start));
                for i in 0..t.rows() {
                    out.extend_from_slice(&t.row(i)[start..end]);
                }
                Ok(Tensor::from_parts(vec![t.rows(), end - start], out))
            }
            Op::Detach(a) => Ok(val(a).clone()),
            Op::PairwiseSqDist(a, b) => {
                let (ta, tb) = (val(a), val(b));
                if !ta.is_matrix() || !tb.is_matrix() || ta.cols() != tb.cols() {
                    return Err(self.shape_err("pairwise_sq_dist", &[a, b]));
                }
                let (m, p) = (ta.rows(), tb.rows());
                let mut out = vec![0.0; m * p];
                for i in 0..m {
                    let ai = ta.row(i);
                    for j in 0..p {
                        out[i * p + j] = ai
                            .iter()
                            .zip(tb.row(j))
                            .map(|(x, y)| (x - y) * (x - y))
                            .sum();
                    }
                }
                Ok(Tensor::from_parts(vec![m, p], out))
            }
        }
    }

    fn binary(
        &self,
        name: &'static str,
        a: usize,
        b: usize,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tb) = (&self.nodes[a].value, &self.nodes[b].value);
        let kind = broadcast_kind(ta, tb).ok_or_else(|| self.shape_err(name, &[a, b]))?;
        let bd = tb.data();
        let out = match kind {
            Broadcast::Same => ta.data().iter().zip(bd).map(|(&x, &y)| f(x, y)).collect(),
            Broadcast::Scalar => ta.data().iter().map(|&x| f(x, bd[0])).collect(),
            Broadcast::Row => {
                let c = ta.cols();
                ta.data()
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| f(x, bd[i % c]))
                    .collect()
            }
        };
        Ok(Tensor::from_parts(ta.shape().to_vec(), out))
    }

    fn concat_values(&self, inputs: &[usize], axis: usize) -> Result<Tensor> {
        let ts: Vec<&Tensor> = inputs.iter().map(|&i| &self.nodes[i].value).collect();
        if ts.is_empty() || axis > 1 || ts.iter().any(|t| !t.is_matrix()) {
            return Err(self.shape_err("concat", inputs));
        }
        if axis == 0 {
            let c = ts[0].cols();
            if ts.iter().any(|t| t.cols() != c) {
                return Err(self.shape_err("concat", inputs));
            }
            let rows = ts.iter().map(|t| t.rows()).sum();
            let data = ts.iter().flat_map(|t| t.data().iter().copied()).collect();
            Ok(Tensor::from_parts(vec![rows, c], data))
        } else {
            let r = ts[0].rows();
            if ts.iter().any(|t| t.rows() != r) {
                return Err(self.shape_err("concat", inputs));
            }
            let cols: usize = ts.iter().map(|t| t.cols()).sum();
            let mut data = Vec::with_capacity(r * cols);
            for i in 0..r {
                for t in &ts {
                    data.extend_from_slice(t.row(i));
                }
            }
            Ok(Tensor::from_parts(vec![r, cols], data))
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::MatMul {
            a: a.0,
            b: b.0,
            trans_b: false,
        })
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::MatMul {
            a: a.0,
            b: b.0,
            trans_b: true,
        })
    }

    /// Elementwise sum; `b` may also be a row vector or a scalar broadcast
    /// over `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Mul(a.0, b.0))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Div(a.0, b.0))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Neg(a.0))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.push(Op::Scale(a.0, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.push(Op::AddScalar(a.0, c))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Relu(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Tanh(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Sigmoid(a.0))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Square(a.0))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Sqrt(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Exp(a.0))
    }

    pub fn recip(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Recip(a.0))
    }

    /// Clamp into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.push(Op::Clamp { a: a.0, lo, hi })
    }

    /// Sum of all entries, shape `[1]`.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Sum(a.0))
    }

    /// Mean of all entries, shape `[1]`.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Mean(a.0))
    }

    /// Column sums of a matrix, shape `[1, cols]`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        self.push(Op::SumRows(a.0))
    }

    /// Column means of a matrix, shape `[1, cols]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        self.push(Op::MeanRows(a.0))
    }

    /// Concatenate matrices along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        self.push(Op::Concat {
            inputs: inputs.iter().map(|v| v.0).collect(),
            axis,
        })
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        self.push(Op::SliceCols { a: a.0, start, end })
    }

    /// Stop-gradient: same value, but nothing downstream differentiates
    /// through it.
    pub fn detach(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Detach(a.0))
    }

    /// `out[i, j] = ||a_i - b_j||²` for row sets `a: [m, d]`, `b: [p, d]`.
    pub fn pairwise_sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::PairwiseSqDist(a.0, b.0))
    }

    /// Named tensors of the graph: every node given a name.
    pub fn outputs(&self) -> BTreeMap<String, Tensor> {
        self.nodes
            .iter()
            .filter_map(|n| n.name.as_ref().map(|s| (s.clone(), n.value.clone())))
            .collect()
    }

    /// Replays the recorded ops with the named leaves rebound to `inputs`,
    /// returning the re-evaluated graph. Node handles stay valid.
    pub fn forward_eval(&self, inputs: &[(&str, Tensor)]) -> Result<Graph> {
        for (name, _) in inputs {
            let bound = self
                .nodes
                .iter()
                .any(|n| matches!(n.op, Op::Leaf { .. }) && n.name.as_deref() == Some(*name));
            if !bound {
                return Err(Error::Lookup(format!("no input leaf named `{name}`")));
            }
        }
        let mut out = Graph::new();
        for node in &self.nodes {
            match node.op {
                Op::Leaf { trainable } => {
                    let value = node
                        .name
                        .as_deref()
                        .and_then(|nm| inputs.iter().find(|(k, _)| *k == nm))
                        .map_or_else(|| node.value.clone(), |(_, t)| t.clone());
                    out.leaf(value, trainable, node.name.clone());
                }
                ref op => {
                    let v = out.push(op.clone())?;
                    out.nodes[v.0].name = node.name.clone();
                }
            }
        }
        Ok(out)
    }

    /// Reverse-mode gradients of the scalar `output` with respect to `wrt`.
    pub fn backward(&self, output: Var, wrt: &[Var]) -> Result<Gradients> {
        if output.0 >= self.nodes.len() {
            return Err(Error::Lookup(format!("output node {} not in graph", output.0)));
        }
        if let Some(v) = wrt.iter().find(|v| v.0 >= self.nodes.len()) {
            return Err(Error::Lookup(format!("node {} not in graph", v.0)));
        }
        if self.nodes[output.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, got shape {:?}",
                self.nodes[output.0].value.shape()
            )));
        }
        let mut wanted = vec![false; output.0 + 1];
        for v in wrt.iter().filter(|v| v.0 <= output.0) {
            wanted[v.0] = true;
        }
        let mut captured: Vec<(usize, Vec<f64>)> = Vec::new();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        if self.nodes[output.0].requires_grad {
            grads[output.0] = Some(vec![1.0]);
        }
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if wanted[i] {
                captured.push((i, g.clone()));
            }
            self.propagate(i, &g, &mut grads)?;
        }
        let entries = wrt
            .iter()
            .map(|&v| {
                let g = captured
                    .iter()
                    .find(|(i, _)| *i == v.0)
                    .map(|(_, g)| Tensor::from_parts(self.nodes[v.0].value.shape().to_vec(), g.clone()));
                (v, g)
            })
            .collect();
        Ok(Gradients { entries })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let node = &self.nodes[i];
        let val = |j: usize| &self.nodes[j].value;
        let needs = |j: usize| self.nodes[j].requires_grad;
        fn slot(grads: &mut [Option<Vec<f64>>], j: usize, len: usize) -> &mut Vec<f64> {
            grads[j].get_or_insert_with(|| vec![0.0; len])
        }
        // Elementwise unary ops: d_in += g * local(x, y).
        let unary = |grads: &mut [Option<Vec<f64>>], a: usize, local: &dyn Fn(f64, f64) -> f64| {
            if needs(a) {
                let x = val(a).data();
                let y = node.value.data();
                let s = slot(grads, a, x.len());
                for k in 0..x.len() {
                    s[k] += g[k] * local(x[k], y[k]);
                }
            }
        };
        match node.op {
            Op::Leaf { .. } | Op::Detach(_) => {}
            Op::MatMul { a, b, trans_b } => {
                let (ta, tb) = (val(a), val(b));
                let (m, k) = (ta.rows(), ta.cols());
                let n = node.value.cols();
                if needs(a) {
                    // dA = G · op(B)ᵀ
                    let s = slot(grads, a, m * k);
                    gemm(m, n, k, g, false, tb.data(), !trans_b, s, true);
                }
                if needs(b) {
                    let s = slot(grads, b, k * n);
                    if trans_b {
                        // B is [n, k]: dB = Gᵀ · A
                        gemm(n, m, k, g, true, ta.data(), false, s, true);
                    } else {
                        // dB = Aᵀ · G
                        gemm(k, m, n, ta.data(), true, g, false, s, true);
                    }
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if needs(a) {
                    let s = slot(grads, a, g.len());
                    s.iter_mut().zip(g).for_each(|(s, g)| *s += g);
                }
                if needs(b) {
                    let kind = broadcast_kind(val(a), val(b)).expect("checked in forward");
                    let s = slot(grads, b, val(b).len());
                    reduce_into(kind, val(a).cols(), g, s, |gk, _| sign * gk);
                }
            }
            Op::Mul(a, b) => {
                let kind = broadcast_kind(val(a), val(b)).expect("checked in forward");
                let (xa, xb) = (val(a).data(), val(b).data());
                let c = val(a).cols();
                if needs(a) {
                    let s = slot(grads, a, g.len());
                    for k in 0..g.len() {
                        s[k] += g[k] * xb[bidx(kind, k, c)];
                    }
                }
                if needs(b) {
                    let s = slot(grads, b, xb.len());
                    reduce_into(kind, c, g, s, |gk, k| gk * xa[k]);
                }
            }
            Op::Div(a, b) => {
                let kind = broadcast_kind(val(a), val(b)).expect("checked in forward");
                let (xa, xb) = (val(a).data(), val(b).data());
                let c = val(a).cols();
                if needs(a) {
                    let s = slot(grads, a, g.len());
                    for k in 0..g.len() {
                        s[k] += g[k] / xb[bidx(kind, k, c)];
                    }
                }
                if needs(b) {
                    let s = slot(grads, b, xb.len());
                    reduce_into(kind, c, g, s, |gk, k| {
                        let d = xb[bidx(kind, k, c)];
                        -gk * xa[k] / (d * d)
                    });
                }
            }
            Op::Neg(a) => unary(grads, a, &|_, _| -1.0),
            Op::Scale(a, c) => unary(grads, a, &|_, _| c),
            Op::AddScalar(a, _) => unary(grads, a, &|_, _| 1.0),
            Op::Relu(a) => unary(grads, a, &|x, _| if x > 0.0 { 1.0 } else { 0.0 }),
            Op::Tanh(a) => unary(grads, a, &|_, y| 1.0 - y * y),
            Op::Sigmoid(a) => unary(grads, a, &|_, y| y * (1.0 - y)),
            Op::Square(a) => unary(grads, a, &|x, _| 2.0 * x),
            Op::Sqrt(a) => unary(grads, a, &|_, y| 0.5 / y),
            Op::Exp(a) => unary(grads, a, &|_, y| y),
            Op::Recip(a) => unary(grads, a, &|_, y| -y * y),
            Op::Clamp { a, lo, hi } => {
                unary(grads, a, &|x, _| if x >= lo && x <= hi { 1.0 } else { 0.0 })
            }
            Op::Sum(a) | Op::Mean(a) => {
                if needs(a) {
                    let len = val(a).len();
                    let scale = if matches!(node.op, Op::Mean(_)) {
                        g[0] / len as f64
                    } else {
                        g[0]
                    };
                    slot(grads, a, len).iter_mut().for_each(|s| *s += scale);
                }
            }
            Op::SumRows(a) | Op::MeanRows(a) => {
                if needs(a) {
                    let (r, c) = (val(a).rows(), val(a).cols());
                    let scale = if matches!(node.op, Op::MeanRows(_)) {
                        1.0 / r as f64
                    } else {
                        1.0
                    };
                    let s = slot(grads, a, r * c);
                    for (k, sk) in s.iter_mut().enumerate() {
                        *sk += g[k % c] * scale;
                    }
                }
            }
            Op::Concat { ref inputs, axis } => {
                let total_cols = node.value.cols();
                let mut offset = 0;
                for &j in inputs {
                    let t = val(j);
                    let (r, c) = (t.rows(), t.cols());
                    if needs(j) {
                        let s = slot(grads, j, r * c);
                        if axis == 0 {
                            for (sk, gk) in s.iter_mut().zip(&g[offset * c..(offset + r) * c]) {
                                *sk += gk;
                            }
                        } else {
                            for row in 0..r {
                                for col in 0..c {
                                    s[row * c + col] += g[row * total_cols + offset + col];
                                }
                            }
                        }
                    }
                    offset += if axis == 0 { r } else { c };
                }
            }
            Op::SliceCols { a, start, end } => {
                if needs(a) {
                    let (r, c) = (val(a).rows(), val(a).cols());
                    let w = end - start;
                    let s = slot(grads, a, r * c);
                    for row in 0..r {
                        for col in 0..w {
                            s[row * c + start + col] += g[row * w + col];
                        }
                    }
                }
            }
            Op::PairwiseSqDist(a, b) => {
                let (ta, tb) = (val(a), val(b));
                let (m, p, d) = (ta.rows(), tb.rows(), ta.cols());
                let mut da = vec![0.0; m * d];
                let mut db = vec![0.0; p * d];
                for i in 0..m {
                    for j in 0..p {
                        let gij = 2.0 * g[i * p + j];
                        if gij == 0.0 {
                            continue;
                        }
                        for l in 0..d {
                            let diff = gij * (ta.get(i, l) - tb.get(j, l));
                            da[i * d + l] += diff;
                            db[j * d + l] -= diff;
                        }
                    }
                }
                if needs(a) {
                    let s = slot(grads, a, m * d);
                    s.iter_mut().zip(&da).for_each(|(s, v)| *s += v);
                }
                if needs(b) {
                    let s = slot(grads, b, p * d);
                    s.iter_mut().zip(&db).for_each(|(s, v)| *s += v);
                }
            }
        }
        for j in node.op.inputs() {
            if let Some(s) = &grads[j] {
                if s.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        op: node.op.name(),
                        node: i,
                    });
                }
            }
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Index into the right operand for flat position `k` of the left operand.
fn bidx(kind: Broadcast, k: usize, cols: usize) -> usize {
    match kind {
        Broadcast::Same => k,
        Broadcast::Row => k % cols,
        Broadcast::Scalar => 0,
    }
}

/// Accumulates `term(g[k], k)` into the right-operand gradient, summing over
/// broadcast positions.
fn reduce_into(
    kind: Broadcast,
    cols: usize,
    g: &[f64],
    s: &mut [f64],
    term: impl Fn(f64, usize) -> f64,
) {
    for (k, &gk) in g.iter().enumerate() {
        s[bidx(kind, k, cols)] += term(gk, k);
    }
}
