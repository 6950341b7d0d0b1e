use std::collections::HashMap;

use super::tensor::{self, Shape, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Input,
    Parameter,
    Constant,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale(f64),
    Offset(f64),
    MatMul,
    Transpose,
    Sigmoid,
    Softplus,
    /// `max(0, x)`; also the hinge.
    Relu,
    Log,
    Exp,
    Abs,
    /// Heaviside step with `step(0) = 0`. Zero derivative.
    Step,
    /// Zero derivative.
    Sign,
    Clamp(f64, f64),
    /// Indicator of `lo <= x <= hi`. Zero derivative.
    InRange(f64, f64),
    SoftmaxRows,
    Sum,
    SumRows,
    SumCols,
    Reshape(Shape),
    Expand(Shape),
    SumTo(Shape),
    RepeatRows(usize),
    GroupSumRows(usize),
}

#[derive(Debug, Clone)]
pub struct Node {
    pub op: Op,
    pub parents: Vec<NodeId>,
    pub value: Tensor,
    pub requires_grad: bool,
}

/// A derivative of a scalar node with respect to one node of the graph.
#[derive(Debug, Clone)]
pub struct Gradient {
    pub wrt: NodeId,
    /// Node holding the gradient value. Differentiable when `graph_attached`.
    pub node: NodeId,
    pub tensor: Tensor,
    pub graph_attached: bool,
}

/// Define-by-run computation graph. Values are computed as nodes are added;
/// [`Graph::evaluate`] replays the recorded graph on fresh input bindings.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    no_grad: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push_leaf(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { op, parents: vec![], value, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.push_leaf(Op::Input, value, requires_grad)
    }

    pub fn parameter(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(Op::Parameter, value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(Op::Constant, value, false)
    }

    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.constant(Tensor::scalar(value))
    }

    fn push(&mut self, op: Op, parents: Vec<NodeId>) -> Result<NodeId> {
        let value = {
            let vals: Vec<&Tensor> = parents.iter().map(|p| &self.nodes[p.0].value).collect();
            compute(&op, &vals)?
        };
        let requires_grad = !self.no_grad && !zero_derivative(&op) && parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node { op, parents, value, requires_grad });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Add, vec![a, b])
    }
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Sub, vec![a, b])
    }
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Mul, vec![a, b])
    }
    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Div, vec![a, b])
    }
    pub fn neg(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Neg, vec![a])
    }
    pub fn scale(&mut self, a: NodeId, s: f64) -> Result<NodeId> {
        self.push(Op::Scale(s), vec![a])
    }
    pub fn offset(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.push(Op::Offset(c), vec![a])
    }
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::MatMul, vec![a, b])
    }
    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Transpose, vec![a])
    }
    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Sigmoid, vec![a])
    }
    pub fn softplus(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Softplus, vec![a])
    }
    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Relu, vec![a])
    }
    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Log, vec![a])
    }
    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Exp, vec![a])
    }
    pub fn abs(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Abs, vec![a])
    }
    pub fn step(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Step, vec![a])
    }
    pub fn sign(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Sign, vec![a])
    }
    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        self.push(Op::Clamp(lo, hi), vec![a])
    }
    pub fn in_range(&mut self, a: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        self.push(Op::InRange(lo, hi), vec![a])
    }
    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::SoftmaxRows, vec![a])
    }
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Sum, vec![a])
    }
    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }
    /// Row sums as an `[r, 1]` column.
    pub fn sum_rows(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::SumRows, vec![a])
    }
    /// Column sums as a `[1, c]` row.
    pub fn sum_cols(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::SumCols, vec![a])
    }
    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        if self.shape(a) == shape {
            return Ok(a);
        }
        self.push(Op::Reshape(shape.to_vec()), vec![a])
    }
    pub fn expand(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        if self.shape(a) == shape {
            return Ok(a);
        }
        self.push(Op::Expand(shape.to_vec()), vec![a])
    }
    pub fn sum_to(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        if self.shape(a) == shape {
            return Ok(a);
        }
        self.push(Op::SumTo(shape.to_vec()), vec![a])
    }
    /// Repeat every row `k` times consecutively: `[r, c] -> [r*k, c]`.
    pub fn repeat_rows(&mut self, a: NodeId, k: usize) -> Result<NodeId> {
        self.push(Op::RepeatRows(k), vec![a])
    }
    /// Sum consecutive groups of `k` rows: `[r*k, c] -> [r, c]`.
    pub fn group_sum_rows(&mut self, a: NodeId, k: usize) -> Result<NodeId> {
        self.push(Op::GroupSumRows(k), vec![a])
    }

    /// Derivatives of the rank-0 node `target` with respect to each node in `wrt`.
    ///
    /// With `create_graph` the returned gradient nodes are themselves
    /// differentiable, so `gradient` can be applied to functions of them.
    pub fn gradient(&mut self, target: NodeId, wrt: &[NodeId], create_graph: bool) -> Result<Vec<Gradient>> {
        if self.value(target).rank() != 0 {
            return Err(Error::Rank(format!("gradient target must be rank 0, got shape {:?}", self.shape(target))));
        }
        for &w in wrt {
            if !self.requires_grad(w) {
                return Err(Error::Grad(format!("node {} does not require grad", w.0)));
            }
        }
        let end = target.0 + 1;
        let mut relevant = vec![false; end];
        for &w in wrt {
            if w.0 < end {
                relevant[w.0] = true;
            }
        }
        for i in 0..end {
            if !relevant[i] && self.nodes[i].requires_grad {
                relevant[i] = self.nodes[i].parents.iter().any(|p| relevant[p.0]);
            }
        }

        let saved = self.no_grad;
        self.no_grad = !create_graph;
        let result = self.backward(target, &relevant);
        self.no_grad = saved;
        let grads = result?;

        let mut out = Vec::with_capacity(wrt.len());
        for &w in wrt {
            let node = match grads.get(&w) {
                Some(&g) => g,
                None => {
                    let zeros = Tensor::zeros(self.shape(w));
                    self.constant(zeros)
                }
            };
            out.push(Gradient {
                wrt: w,
                node,
                tensor: self.value(node).clone(),
                graph_attached: self.requires_grad(node),
            });
        }
        Ok(out)
    }

    fn backward(&mut self, target: NodeId, relevant: &[bool]) -> Result<HashMap<NodeId, NodeId>> {
        let mut grads: HashMap<NodeId, NodeId> = HashMap::new();
        if !relevant[target.0] {
            return Ok(grads);
        }
        let seed = self.scalar(1.0);
        grads.insert(target, seed);
        for i in (0..=target.0).rev() {
            let id = NodeId(i);
            if !relevant[i] {
                continue;
            }
            let Some(&g) = grads.get(&id) else { continue };
            let parents = self.nodes[i].parents.clone();
            for (slot, &p) in parents.iter().enumerate() {
                if !relevant[p.0] {
                    continue;
                }
                if let Some(contrib) = self.vjp(id, slot, g)? {
                    let acc = match grads.get(&p) {
                        Some(&prev) => self.add(prev, contrib)?,
                        None => contrib,
                    };
                    grads.insert(p, acc);
                }
            }
        }
        Ok(grads)
    }

    /// Vector-Jacobian product of node `id` for its parent in position `slot`,
    /// built from graph ops so it can be differentiated again.
    fn vjp(&mut self, id: NodeId, slot: usize, g: NodeId) -> Result<Option<NodeId>> {
        let node = self.nodes[id.0].clone();
        let p = &node.parents;
        let pshape = |s: &Self, k: usize| s.shape(p[k]).to_vec();
        let out = match &node.op {
            Op::Input | Op::Parameter | Op::Constant => return Ok(None),
            Op::Step | Op::Sign | Op::InRange(..) => return Ok(None),
            Op::Add => {
                let sh = pshape(self, slot);
                self.sum_to(g, &sh)?
            }
            Op::Sub => {
                let sh = pshape(self, slot);
                if slot == 0 {
                    self.sum_to(g, &sh)?
                } else {
                    let n = self.neg(g)?;
                    self.sum_to(n, &sh)?
                }
            }
            Op::Mul => {
                let other = p[1 - slot];
                let sh = pshape(self, slot);
                let m = self.mul(g, other)?;
                self.sum_to(m, &sh)?
            }
            Op::Div => {
                let sh = pshape(self, slot);
                if slot == 0 {
                    let q = self.div(g, p[1])?;
                    self.sum_to(q, &sh)?
                } else {
                    let gy = self.mul(g, id)?;
                    let q = self.div(gy, p[1])?;
                    let n = self.neg(q)?;
                    self.sum_to(n, &sh)?
                }
            }
            Op::Neg => self.neg(g)?,
            Op::Scale(s) => self.scale(g, *s)?,
            Op::Offset(_) => g,
            Op::MatMul => {
                if slot == 0 {
                    let bt = self.transpose(p[1])?;
                    self.matmul(g, bt)?
                } else {
                    let at = self.transpose(p[0])?;
                    self.matmul(at, g)?
                }
            }
            Op::Transpose => self.transpose(g)?,
            Op::Sigmoid => {
                let neg = self.neg(id)?;
                let one_minus = self.offset(neg, 1.0)?;
                let d = self.mul(id, one_minus)?;
                self.mul(g, d)?
            }
            Op::Softplus => {
                let s = self.sigmoid(p[0])?;
                self.mul(g, s)?
            }
            Op::Relu => {
                let s = self.step(p[0])?;
                self.mul(g, s)?
            }
            Op::Log => self.div(g, p[0])?,
            Op::Exp => self.mul(g, id)?,
            Op::Abs => {
                let s = self.sign(p[0])?;
                self.mul(g, s)?
            }
            Op::Clamp(lo, hi) => {
                let m = self.in_range(p[0], *lo, *hi)?;
                self.mul(g, m)?
            }
            Op::SoftmaxRows => {
                let gy = self.mul(g, id)?;
                let rs = self.sum_rows(gy)?;
                let centered = self.sub(g, rs)?;
                self.mul(id, centered)?
            }
            Op::Sum | Op::SumRows | Op::SumCols | Op::SumTo(_) => {
                let sh = pshape(self, 0);
                self.expand(g, &sh)?
            }
            Op::Expand(_) => {
                let sh = pshape(self, 0);
                self.sum_to(g, &sh)?
            }
            Op::Reshape(_) => {
                let sh = pshape(self, 0);
                self.reshape(g, &sh)?
            }
            Op::RepeatRows(k) => self.group_sum_rows(g, *k)?,
            Op::GroupSumRows(k) => self.repeat_rows(g, *k)?,
        };
        Ok(Some(out))
    }

    /// Recompute the graph with `bindings` replacing leaf values and return
    /// the values of `outputs`. Every input node must be bound; parameters
    /// and constants keep their recorded value unless bound.
    pub fn evaluate(&self, bindings: &HashMap<NodeId, Tensor>, outputs: &[NodeId]) -> Result<Vec<Tensor>> {
        for (id, t) in bindings {
            let declared = self.nodes.get(id.0).ok_or_else(|| Error::UnboundInput(format!("no node {}", id.0)))?;
            if declared.value.shape() != t.shape() {
                return Err(Error::Shape(format!(
                    "binding for node {} has shape {:?}, expected {:?}",
                    id.0,
                    t.shape(),
                    declared.value.shape()
                )));
            }
        }
        let end = outputs.iter().map(|o| o.0 + 1).max().unwrap_or(0);
        let mut values: Vec<Tensor> = Vec::with_capacity(end);
        for i in 0..end {
            let node = &self.nodes[i];
            let v = match node.op {
                Op::Input => bindings
                    .get(&NodeId(i))
                    .cloned()
                    .ok_or_else(|| Error::UnboundInput(format!("input node {i} has no binding")))?,
                Op::Parameter | Op::Constant => bindings.get(&NodeId(i)).cloned().unwrap_or_else(|| node.value.clone()),
                _ => {
                    let vals: Vec<&Tensor> = node.parents.iter().map(|p| &values[p.0]).collect();
                    compute(&node.op, &vals)?
                }
            };
            values.push(v);
        }
        Ok(outputs.iter().map(|o| values[o.0].clone()).collect())
    }
}

fn zero_derivative(op: &Op) -> bool {
    matches!(op, Op::Step | Op::Sign | Op::InRange(..))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn compute(op: &Op, p: &[&Tensor]) -> Result<Tensor> {
    let binary = |f: fn(f64, f64) -> f64| -> Result<Tensor> {
        let shape = tensor::broadcast_shape(p[0].shape(), p[1].shape())?;
        Ok(tensor::zip_broadcast(p[0], p[1], &shape, f))
    };
    Ok(match op {
        Op::Input | Op::Parameter | Op::Constant => unreachable!("leaf values are stored"),
        Op::Add => binary(|a, b| a + b)?,
        Op::Sub => binary(|a, b| a - b)?,
        Op::Mul => binary(|a, b| a * b)?,
        Op::Div => binary(|a, b| a / b)?,
        Op::Neg => p[0].map(|x| -x),
        Op::Scale(s) => p[0].map(|x| x * s),
        Op::Offset(c) => p[0].map(|x| x + c),
        Op::MatMul => tensor::matmul(p[0], p[1])?,
        Op::Transpose => tensor::transpose(p[0])?,
        Op::Sigmoid => p[0].map(sigmoid),
        Op::Softplus => p[0].map(softplus),
        Op::Relu => p[0].map(|x| if x > 0.0 { x } else { 0.0 }),
        Op::Log => p[0].map(f64::ln),
        Op::Exp => p[0].map(f64::exp),
        Op::Abs => p[0].map(f64::abs),
        Op::Step => p[0].map(|x| if x > 0.0 { 1.0 } else { 0.0 }),
        Op::Sign => p[0].map(|x| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        }),
        Op::Clamp(lo, hi) => p[0].map(|x| x.clamp(*lo, *hi)),
        Op::InRange(lo, hi) => p[0].map(|x| if x >= *lo && x <= *hi { 1.0 } else { 0.0 }),
        Op::SoftmaxRows => {
            let (r, c) = p[0].dims2();
            let mut out = p[0].clone();
            for i in 0..r {
                let row = &mut out.data_mut()[i * c..(i + 1) * c];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for x in row.iter_mut() {
                    *x = (*x - max).exp();
                    total += *x;
                }
                for x in row.iter_mut() {
                    *x /= total;
                }
            }
            out
        }
        Op::Sum => Tensor::scalar(p[0].data().iter().sum()),
        Op::SumRows => {
            let (r, _) = p[0].dims2();
            tensor::sum_to(p[0], &[r, 1]).and_then(|t| if p[0].rank() == 2 { Ok(t) } else { t.reshaped(&[r, 1]) })?
        }
        Op::SumCols => {
            let (_, c) = p[0].dims2();
            let t = tensor::sum_to(&p[0].reshaped(&[p[0].dims2().0, c])?, &[1, c])?;
            t
        }
        Op::Reshape(shape) => {
            let numel: usize = shape.iter().product();
            if numel != p[0].numel() {
                return Err(Error::Shape(format!("cannot reshape {:?} to {:?}", p[0].shape(), shape)));
            }
            p[0].reshaped(shape)?
        }
        Op::Expand(shape) => tensor::expand(p[0], shape)?,
        Op::SumTo(shape) => tensor::sum_to(p[0], shape)?,
        Op::RepeatRows(k) => {
            if p[0].rank() != 2 {
                return Err(Error::Shape("repeat_rows needs rank 2".into()));
            }
            let (r, c) = p[0].dims2();
            let mut out = Vec::with_capacity(r * k * c);
            for i in 0..r {
                for _ in 0..*k {
                    out.extend_from_slice(p[0].row(i));
                }
            }
            Tensor::matrix(r * k, c, out)?
        }
        Op::GroupSumRows(k) => {
            let (r, c) = p[0].dims2();
            if p[0].rank() != 2 || *k == 0 || r % k != 0 {
                return Err(Error::Shape(format!("cannot group {:?} rows by {}", p[0].shape(), k)));
            }
            let mut out = vec![0.0; (r / k) * c];
            for i in 0..r {
                let o = &mut out[(i / k) * c..(i / k + 1) * c];
                for (x, &y) in o.iter_mut().zip(p[0].row(i)) {
                    *x += y;
                }
            }
            Tensor::matrix(r / k, c, out)?
        }
    })
}
