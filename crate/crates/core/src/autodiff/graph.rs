use super::{AutodiffError, ParamId, ParameterStore, Tensor};

/// Index of a node inside one [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatVec(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddN(Vec<NodeId>),
    Concat(Vec<NodeId>),
    Slice { x: NodeId, start: usize },
    Tanh(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    LogSumExp(NodeId),
    Pick { x: NodeId, index: usize },
    PickRow { m: NodeId, row: usize },
    Sum(NodeId),
    Dot(NodeId, NodeId),
    Max { x: NodeId, argmax: usize },
}

struct Node {
    op: Op,
    /// `None` for parameter leaves, whose value lives in the store.
    value: Option<Tensor>,
    requires_grad: bool,
}

/// A per-sentence computation tape.
///
/// Nodes are appended in evaluation order, so the tape is topologically
/// sorted by construction and backward is a single reverse sweep. Parameter
/// values are borrowed from the store; every parameter gets at most one leaf
/// per graph.
pub struct Graph<'s> {
    store: &'s ParameterStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<NodeId>>,
}

/// Result of a backward sweep: gradients for every parameter touched by the
/// graph and for every variable leaf.
#[derive(Debug, Default)]
pub struct Gradients {
    params: Vec<(ParamId, Tensor)>,
    nodes: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params.iter().map(|(id, g)| (*id, g))
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.iter().find(|(p, _)| *p == id).map(|(_, g)| g)
    }

    /// Gradient of a leaf created with [`Graph::variable`].
    pub fn node(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes.get(id.0).and_then(|g| g.as_ref())
    }
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<(), AutodiffError> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(AutodiffError::NonFinite { op })
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

/// Max-shifted `ln(sum(exp(x)))`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParameterStore) -> Self {
        Graph {
            store,
            nodes: Vec::new(),
            param_nodes: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'s ParameterStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        let node = &self.nodes[id.0];
        match (&node.value, &node.op) {
            (Some(v), _) => v,
            (None, Op::Param(p)) => self.store.value(*p),
            (None, _) => unreachable!("non-parameter node without value"),
        }
    }

    /// Value of a scalar node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        self.value(id).data()[0]
    }

    fn push(&mut self, op: Op, value: Tensor, op_name: &'static str) -> Result<NodeId, AutodiffError> {
        check_finite(op_name, value.data())?;
        let requires_grad = self.parents(&op).iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            op,
            value: Some(value),
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn parents(&self, op: &Op) -> Vec<NodeId> {
        match op {
            Op::Input | Op::Param(_) => vec![],
            Op::MatVec(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Dot(a, b) => {
                vec![*a, *b]
            }
            Op::AddN(xs) | Op::Concat(xs) => xs.clone(),
            Op::Scale(x, _)
            | Op::Slice { x, .. }
            | Op::Tanh(x)
            | Op::Sigmoid(x)
            | Op::Relu(x)
            | Op::LogSumExp(x)
            | Op::Pick { x, .. }
            | Op::Sum(x)
            | Op::Max { x, .. } => vec![*x],
            Op::PickRow { m, .. } => vec![*m],
        }
    }

    /// Constant leaf; never receives a gradient.
    pub fn input(&mut self, value: Tensor) -> Result<NodeId, AutodiffError> {
        check_finite("input", value.data())?;
        self.nodes.push(Node {
            op: Op::Input,
            value: Some(value),
            requires_grad: false,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Differentiable leaf whose gradient is reported in [`Gradients::node`].
    pub fn variable(&mut self, value: Tensor) -> Result<NodeId, AutodiffError> {
        check_finite("variable", value.data())?;
        self.nodes.push(Node {
            op: Op::Input,
            value: Some(value),
            requires_grad: true,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Leaf bound to a stored parameter (cached per graph).
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(node) = self.param_nodes[id.0] {
            return node;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
            requires_grad: true,
        });
        let node = NodeId(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(node);
        node
    }

    pub fn matvec(&mut self, m: NodeId, x: NodeId) -> Result<NodeId, AutodiffError> {
        let (mv, xv) = (self.value(m), self.value(x));
        if !mv.is_matrix() || !xv.is_vector() || mv.cols() != xv.len() {
            return Err(AutodiffError::shape("matvec", mv.shape(), xv.shape()));
        }
        let cols = mv.cols();
        let xd = xv.data();
        let out: Vec<f64> = mv
            .data()
            .chunks_exact(cols)
            .map(|row| row.iter().zip(xd).map(|(a, b)| a * b).sum())
            .collect();
        self.push(Op::MatVec(m, x), Tensor::vector(out), "matvec")
    }

    fn binary(
        &mut self,
        a: NodeId,
        b: NodeId,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<NodeId, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(AutodiffError::shape(name, av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        self.push(op, value, name)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.binary(a, b, "add", Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.binary(a, b, "sub", Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.binary(a, b, "mul", Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId, AutodiffError> {
        let v = self.value(x);
        let data = v.data().iter().map(|a| a * factor).collect();
        let value = Tensor::new(v.shape().to_vec(), data)?;
        self.push(Op::Scale(x, factor), value, "scale")
    }

    /// Elementwise sum of equally shaped nodes.
    pub fn add_n(&mut self, xs: &[NodeId]) -> Result<NodeId, AutodiffError> {
        let first = *xs.first().ok_or(AutodiffError::EmptyOperands("add_n"))?;
        let shape = self.value(first).shape().to_vec();
        let mut acc = vec![0.0; self.value(first).len()];
        for &x in xs {
            let v = self.value(x);
            if v.shape() != shape.as_slice() {
                return Err(AutodiffError::shape("add_n", &shape, v.shape()));
            }
            for (a, b) in acc.iter_mut().zip(v.data()) {
                *a += b;
            }
        }
        self.push(Op::AddN(xs.to_vec()), Tensor::new(shape, acc)?, "add_n")
    }

    /// Concatenation of vectors.
    pub fn concat(&mut self, xs: &[NodeId]) -> Result<NodeId, AutodiffError> {
        if xs.is_empty() {
            return Err(AutodiffError::EmptyOperands("concat"));
        }
        let mut out = Vec::new();
        for &x in xs {
            let v = self.value(x);
            if !v.is_vector() {
                return Err(AutodiffError::shape("concat", &[out.len()], v.shape()));
            }
            out.extend_from_slice(v.data());
        }
        self.push(Op::Concat(xs.to_vec()), Tensor::vector(out), "concat")
    }

    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId, AutodiffError> {
        let v = self.value(x);
        if !v.is_vector() || len == 0 || start + len > v.len() {
            return Err(AutodiffError::shape("slice", v.shape(), &[start, len]));
        }
        let out = v.data()[start..start + len].to_vec();
        self.push(Op::Slice { x, start }, Tensor::vector(out), "slice")
    }

    fn unary(
        &mut self,
        x: NodeId,
        name: &'static str,
        op: Op,
        f: impl Fn(f64) -> f64,
    ) -> Result<NodeId, AutodiffError> {
        let v = self.value(x);
        let data = v.data().iter().map(|a| f(*a)).collect();
        let value = Tensor::new(v.shape().to_vec(), data)?;
        self.push(op, value, name)
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        self.unary(x, "tanh", Op::Tanh(x), f64::tanh)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        self.unary(x, "sigmoid", Op::Sigmoid(x), sigmoid)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        self.unary(x, "relu", Op::Relu(x), |a| a.max(0.0))
    }

    /// Overflow-safe `ln(sum(exp(x)))` over all elements.
    pub fn log_sum_exp(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let out = log_sum_exp(self.value(x).data());
        self.push(Op::LogSumExp(x), Tensor::scalar(out), "log_sum_exp")
    }

    /// Single element at a flat index.
    pub fn pick(&mut self, x: NodeId, index: usize) -> Result<NodeId, AutodiffError> {
        let v = self.value(x);
        if index >= v.len() {
            return Err(AutodiffError::IndexOutOfRange {
                op: "pick",
                index,
                len: v.len(),
            });
        }
        let out = v.data()[index];
        self.push(Op::Pick { x, index }, Tensor::scalar(out), "pick")
    }

    pub fn pick_row(&mut self, m: NodeId, row: usize) -> Result<NodeId, AutodiffError> {
        let v = self.value(m);
        if !v.is_matrix() || row >= v.rows() {
            return Err(AutodiffError::IndexOutOfRange {
                op: "pick_row",
                index: row,
                len: if v.is_matrix() { v.rows() } else { 0 },
            });
        }
        let out = v.row(row).to_vec();
        self.push(Op::PickRow { m, row }, Tensor::vector(out), "pick_row")
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let out = self.value(x).data().iter().sum();
        self.push(Op::Sum(x), Tensor::scalar(out), "sum")
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.len() != bv.len() {
            return Err(AutodiffError::shape("dot", av.shape(), bv.shape()));
        }
        let out = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).sum();
        self.push(Op::Dot(a, b), Tensor::scalar(out), "dot")
    }

    /// Largest element; the gradient flows to the first maximal position.
    pub fn max(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let data = self.value(x).data();
        let mut argmax = 0;
        for (i, v) in data.iter().enumerate() {
            if *v > data[argmax] {
                argmax = i;
            }
        }
        let out = data[argmax];
        self.push(Op::Max { x, argmax }, Tensor::scalar(out), "max")
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, AutodiffError> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(AutodiffError::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let mut out = Gradients {
            params: Vec::new(),
            nodes: vec![None; self.nodes.len()],
        };
        for (idx, node) in self.nodes.iter().enumerate() {
            let Some(g) = grads[idx].take() else { continue };
            match node.op {
                Op::Param(p) => {
                    let shape = self.store.value(p).shape().to_vec();
                    out.params.push((p, Tensor::new(shape, g)?));
                }
                Op::Input if node.requires_grad => {
                    let shape = self.value(NodeId(idx)).shape().to_vec();
                    out.nodes[idx] = Some(Tensor::new(shape, g)?);
                }
                _ => {}
            }
        }
        out.params.sort_by_key(|(p, _)| *p);
        Ok(out)
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], id: NodeId) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[id.0].requires_grad {
            return None;
        }
        let len = self.value(id).len();
        Some(grads[id.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = || self.value(NodeId(idx)).data();
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::MatVec(m, x) => {
                let mv = self.value(*m);
                let cols = mv.cols();
                let xv = self.value(*x).data();
                if let Some(gm) = self.slot(grads, *m) {
                    for (r, gr) in g.iter().enumerate() {
                        if *gr == 0.0 {
                            continue;
                        }
                        let row = &mut gm[r * cols..(r + 1) * cols];
                        for (a, b) in row.iter_mut().zip(xv) {
                            *a += gr * b;
                        }
                    }
                }
                if let Some(gx) = self.slot(grads, *x) {
                    for (r, row) in mv.data().chunks_exact(cols).enumerate() {
                        let gr = g[r];
                        if gr == 0.0 {
                            continue;
                        }
                        for (a, w) in gx.iter_mut().zip(row) {
                            *a += gr * w;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for p in [*a, *b] {
                    if let Some(gp) = self.slot(grads, p) {
                        gp.iter_mut().zip(g).for_each(|(s, v)| *s += v);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(s, v)| *s += v);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gb.iter_mut().zip(g).for_each(|(s, v)| *s -= v);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.slot(grads, *a) {
                    for ((s, v), o) in ga.iter_mut().zip(g).zip(bv) {
                        *s += v * o;
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for ((s, v), o) in gb.iter_mut().zip(g).zip(av) {
                        *s += v * o;
                    }
                }
            }
            Op::Scale(x, factor) => {
                if let Some(gx) = self.slot(grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(s, v)| *s += v * factor);
                }
            }
            Op::AddN(xs) => {
                for p in xs {
                    if let Some(gp) = self.slot(grads, *p) {
                        gp.iter_mut().zip(g).for_each(|(s, v)| *s += v);
                    }
                }
            }
            Op::Concat(xs) => {
                let mut offset = 0;
                for p in xs {
                    let len = self.value(*p).len();
                    if let Some(gp) = self.slot(grads, *p) {
                        gp.iter_mut()
                            .zip(&g[offset..offset + len])
                            .for_each(|(s, v)| *s += v);
                    }
                    offset += len;
                }
            }
            Op::Slice { x, start } => {
                if let Some(gx) = self.slot(grads, *x) {
                    gx[*start..*start + g.len()]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(s, v)| *s += v);
                }
            }
            Op::Tanh(x) => {
                let y = out();
                if let Some(gx) = self.slot(grads, *x) {
                    for ((s, v), t) in gx.iter_mut().zip(g).zip(y) {
                        *s += v * (1.0 - t * t);
                    }
                }
            }
            Op::Sigmoid(x) => {
                let y = out();
                if let Some(gx) = self.slot(grads, *x) {
                    for ((s, v), t) in gx.iter_mut().zip(g).zip(y) {
                        *s += v * t * (1.0 - t);
                    }
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                if let Some(gx) = self.slot(grads, *x) {
                    for ((s, v), a) in gx.iter_mut().zip(g).zip(xv) {
                        if *a > 0.0 {
                            *s += v;
                        }
                    }
                }
            }
            Op::LogSumExp(x) => {
                let xv = self.value(*x).data();
                let lse = out()[0];
                if let Some(gx) = self.slot(grads, *x) {
                    for (s, a) in gx.iter_mut().zip(xv) {
                        *s += g[0] * (a - lse).exp();
                    }
                }
            }
            Op::Pick { x, index } => {
                if let Some(gx) = self.slot(grads, *x) {
                    gx[*index] += g[0];
                }
            }
            Op::PickRow { m, row } => {
                let cols = self.value(*m).cols();
                if let Some(gm) = self.slot(grads, *m) {
                    gm[row * cols..(row + 1) * cols]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(s, v)| *s += v);
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    gx.iter_mut().for_each(|s| *s += g[0]);
                }
            }
            Op::Dot(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.slot(grads, *a) {
                    ga.iter_mut().zip(bv).for_each(|(s, o)| *s += g[0] * o);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gb.iter_mut().zip(av).for_each(|(s, o)| *s += g[0] * o);
                }
            }
            Op::Max { x, argmax } => {
                if let Some(gx) = self.slot(grads, *x) {
                    gx[*argmax] += g[0];
                }
            }
        }
    }
}
