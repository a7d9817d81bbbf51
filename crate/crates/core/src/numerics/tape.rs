//! Tensor-level reverse-mode differentiation.
//!
//! A [`Tape`] records every forward operation together with its output.
//! [`Tape::backward`] walks the record in reverse, accumulating adjoints,
//! and returns one gradient tensor per registered parameter.
//! [`Tape::replay`] re-evaluates the record from its leaves, which must
//! reproduce the recorded values bit-for-bit.

use std::rc::Rc;

use crate::error::{Error, Result};

use super::tensor::{NamedTensors, Tensor};

/// Norm below which a capsule is treated as the zero vector.
pub const SQUASH_EPS: f64 = 1e-12;

/// Upper bound on a squashed vector's length, keeping `‖v‖ < 1` in floating
/// point even when `‖s‖²/(1+‖s‖²)` would round to one.
pub const SQUASH_MAX_NORM: f64 = 1.0 - 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    /// Valid stride-1 convolution. input `[H, W]`, kernel `[F, kh, kw]`,
    /// optional bias `[F]`; output `[P, F]` with `P = (H-kh+1)(W-kw+1)`.
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
    },
    Relu(NodeId),
    MatMul(NodeId, NodeId),
    AddBias {
        x: NodeId,
        bias: NodeId,
    },
    Reshape(NodeId),
    ConcatRows(Vec<NodeId>),
    SquashRows(NodeId),
    MulConst {
        x: NodeId,
        factor: Rc<Tensor>,
    },
    /// `û[i, j] = W[group[i], j] · u[i]`. weights `[G, J, Lo, Li]`, u `[N, Li]`.
    CapsuleTransform {
        weights: NodeId,
        u: NodeId,
        groups: Rc<[usize]>,
    },
    SoftmaxRows(NodeId),
    /// `s[j] = Σ_i c[i, j] û[i, j]`.
    WeightedSum {
        coupling: NodeId,
        predictions: NodeId,
    },
    /// `a[i, j] = û[i, j] · v[j]`.
    Agreement {
        predictions: NodeId,
        outputs: NodeId,
    },
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Affine {
        x: NodeId,
        scale: f64,
        shift: f64,
    },
    RowNorms(NodeId),
    DotConst {
        x: NodeId,
        weights: Rc<Tensor>,
    },
    Sum(NodeId),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Recorded forward computation plus its parameter registry.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, NodeId)>,
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// Non-learnable input.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_node(Op::Leaf, value, false)
    }

    /// Learnable input. Names must be unique within a tape.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor) -> Result<NodeId> {
        let name = name.into();
        if self.params.iter().any(|(n, _)| *n == name) {
            return Err(Error::Contract(format!(
                "parameter {name} registered twice"
            )));
        }
        let id = self.push_node(Op::Leaf, value, true);
        self.params.push((name, id));
        Ok(id)
    }

    /// Registers every tensor of `params` and returns their node ids in order.
    pub fn params(&mut self, params: &NamedTensors) -> Result<Vec<NodeId>> {
        params
            .iter()
            .map(|(name, t)| self.param(name, t.clone()))
            .collect()
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|(n, _)| n.as_str())
    }

    fn push_node(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op) -> Result<NodeId> {
        let value = eval(&op, &self.nodes, |n| &n.value)?;
        let requires_grad = inputs(&op).iter().any(|i| self.nodes[i.0].requires_grad);
        Ok(self.push_node(op, value, requires_grad))
    }

    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
    ) -> Result<NodeId> {
        self.push(Op::Conv2d {
            input,
            kernel,
            bias,
        })
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(Op::Relu(x))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::MatMul(a, b))
    }

    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        self.push(Op::AddBias { x, bias })
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let value = self.value(x).clone().reshape(shape)?;
        let requires_grad = self.nodes[x.0].requires_grad;
        Ok(self.push_node(Op::Reshape(x), value, requires_grad))
    }

    pub fn concat_rows(&mut self, xs: Vec<NodeId>) -> Result<NodeId> {
        self.push(Op::ConcatRows(xs))
    }

    pub fn squash_rows(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(Op::SquashRows(x))
    }

    pub fn mul_const(&mut self, x: NodeId, factor: Tensor) -> Result<NodeId> {
        self.push(Op::MulConst {
            x,
            factor: Rc::new(factor),
        })
    }

    pub fn capsule_transform(
        &mut self,
        weights: NodeId,
        u: NodeId,
        groups: Rc<[usize]>,
    ) -> Result<NodeId> {
        self.push(Op::CapsuleTransform { weights, u, groups })
    }

    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(Op::SoftmaxRows(x))
    }

    pub fn weighted_sum(&mut self, coupling: NodeId, predictions: NodeId) -> Result<NodeId> {
        self.push(Op::WeightedSum {
            coupling,
            predictions,
        })
    }

    pub fn agreement(&mut self, predictions: NodeId, outputs: NodeId) -> Result<NodeId> {
        self.push(Op::Agreement {
            predictions,
            outputs,
        })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Add(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Mul(a, b))
    }

    /// `scale * x + shift`, element-wise.
    pub fn affine(&mut self, x: NodeId, scale: f64, shift: f64) -> Result<NodeId> {
        self.push(Op::Affine { x, scale, shift })
    }

    pub fn row_norms(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(Op::RowNorms(x))
    }

    /// Scalar `Σ x ⊙ weights`.
    pub fn dot_const(&mut self, x: NodeId, weights: Tensor) -> Result<NodeId> {
        self.push(Op::DotConst {
            x,
            weights: Rc::new(weights),
        })
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(Op::Sum(x))
    }

    /// Re-evaluates every node from the recorded leaves.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match &node.op {
                Op::Leaf => node.value.clone(),
                Op::Reshape(x) => values[x.0].clone().reshape(node.value.shape().to_vec())?,
                op => eval(op, &values, |t| t)?,
            };
            values.push(v);
        }
        Ok(values)
    }

    /// Gradients of the scalar `output` with respect to every parameter,
    /// scaled by `loss_adjoint`.
    pub fn backward(&self, output: NodeId, loss_adjoint: f64) -> Result<NamedTensors> {
        if self.value(output).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar terminal, got shape {:?}",
                self.shape(output)
            )));
        }
        let mut adjoints: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        adjoints[output.0] = Some(Tensor::full(self.shape(output), loss_adjoint));

        for idx in (0..=output.0).rev() {
            let Some(g) = adjoints[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                adjoints[idx] = Some(g);
                continue;
            }
            for (input, grad) in self.input_grads(idx, &g) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut adjoints[input.0] {
                    Some(acc) => acc.axpy(1.0, &grad),
                    slot => *slot = Some(grad),
                }
            }
        }

        let mut grads = NamedTensors::new();
        for (name, id) in &self.params {
            let g = adjoints
                .get_mut(id.0)
                .and_then(Option::take)
                .unwrap_or_else(|| Tensor::zeros(self.shape(*id)));
            grads.insert(name.clone(), g);
        }
        Ok(grads)
    }

    fn input_grads(&self, idx: usize, g: &Tensor) -> Vec<(NodeId, Tensor)> {
        let node = &self.nodes[idx];
        let val = |id: NodeId| &self.nodes[id.0].value;
        let wants = |id: NodeId| self.nodes[id.0].requires_grad;
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
            } => {
                let (x, k) = (val(*input), val(*kernel));
                let (h, w) = (x.shape()[0], x.shape()[1]);
                let (f, kh, kw) = (k.shape()[0], k.shape()[1], k.shape()[2]);
                let (oh, ow) = (h - kh + 1, w - kw + 1);
                let gd = g.data();
                if wants(*kernel) {
                    let mut dk = vec![0.0; k.len()];
                    for r in 0..oh {
                        for c in 0..ow {
                            let grow = &gd[(r * ow + c) * f..(r * ow + c + 1) * f];
                            for (fi, &gv) in grow.iter().enumerate() {
                                if gv == 0.0 {
                                    continue;
                                }
                                let kbase = fi * kh * kw;
                                for a in 0..kh {
                                    let xrow = &x.data()[(r + a) * w + c..(r + a) * w + c + kw];
                                    let krow = &mut dk[kbase + a * kw..kbase + (a + 1) * kw];
                                    for (dkv, xv) in krow.iter_mut().zip(xrow) {
                                        *dkv += gv * xv;
                                    }
                                }
                            }
                        }
                    }
                    out.push((*kernel, tensor(k.shape(), dk)));
                }
                if wants(*input) {
                    let mut dx = vec![0.0; x.len()];
                    for r in 0..oh {
                        for c in 0..ow {
                            let grow = &gd[(r * ow + c) * f..(r * ow + c + 1) * f];
                            for (fi, &gv) in grow.iter().enumerate() {
                                let kbase = fi * kh * kw;
                                for a in 0..kh {
                                    for b in 0..kw {
                                        dx[(r + a) * w + c + b] +=
                                            gv * k.data()[kbase + a * kw + b];
                                    }
                                }
                            }
                        }
                    }
                    out.push((*input, tensor(x.shape(), dx)));
                }
                if let Some(b) = bias {
                    if wants(*b) {
                        let mut db = vec![0.0; f];
                        for row in gd.chunks_exact(f) {
                            for (d, v) in db.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                        out.push((*b, Tensor::from_vec(db)));
                    }
                }
            }
            Op::Relu(x) => {
                let d = val(*x)
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&xv, &gv)| if xv > 0.0 { gv } else { 0.0 })
                    .collect();
                out.push((*x, tensor(g.shape(), d)));
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if wants(*a) {
                    // dA = G Bᵀ
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        let grow = &g.data()[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv.data()[p * n..(p + 1) * n];
                            da[i * k + p] = dot(grow, brow);
                        }
                    }
                    out.push((*a, tensor(av.shape(), da)));
                }
                if wants(*b) {
                    // dB = Aᵀ G
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        let grow = &g.data()[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = av.data()[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for (d, gv) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *d += aip * gv;
                            }
                        }
                    }
                    out.push((*b, tensor(bv.shape(), db)));
                }
            }
            Op::AddBias { x, bias } => {
                out.push((*x, g.clone()));
                if wants(*bias) {
                    let n = val(*bias).len();
                    let mut db = vec![0.0; n];
                    for row in g.data().chunks_exact(n) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    out.push((*bias, Tensor::from_vec(db)));
                }
            }
            Op::Reshape(x) => {
                out.push((*x, tensor(val(*x).shape(), g.data().to_vec())));
            }
            Op::ConcatRows(xs) => {
                let mut offset = 0;
                for x in xs {
                    let xv = val(*x);
                    out.push((
                        *x,
                        tensor(xv.shape(), g.data()[offset..offset + xv.len()].to_vec()),
                    ));
                    offset += xv.len();
                }
            }
            Op::SquashRows(x) => {
                let xv = val(*x);
                let l = xv.shape()[1];
                let mut d = vec![0.0; xv.len()];
                for ((s, gr), dr) in xv
                    .data()
                    .chunks_exact(l)
                    .zip(g.data().chunks_exact(l))
                    .zip(d.chunks_exact_mut(l))
                {
                    squash_backward(s, gr, dr);
                }
                out.push((*x, tensor(xv.shape(), d)));
            }
            Op::MulConst { x, factor } => {
                let d = g
                    .data()
                    .iter()
                    .zip(factor.data())
                    .map(|(a, b)| a * b)
                    .collect();
                out.push((*x, tensor(g.shape(), d)));
            }
            Op::CapsuleTransform { weights, u, groups } => {
                let (wv, uv) = (val(*weights), val(*u));
                let (j_n, lo, li) = (wv.shape()[1], wv.shape()[2], wv.shape()[3]);
                let n = uv.shape()[0];
                let mut dw = wants(*weights).then(|| vec![0.0; wv.len()]);
                let mut du = wants(*u).then(|| vec![0.0; uv.len()]);
                for i in 0..n {
                    let ui = uv.row(i);
                    for j in 0..j_n {
                        let gij = &g.data()[(i * j_n + j) * lo..(i * j_n + j + 1) * lo];
                        let wbase = (groups[i] * j_n + j) * lo * li;
                        for (o, &go) in gij.iter().enumerate() {
                            if go == 0.0 {
                                continue;
                            }
                            let wrow = wbase + o * li;
                            if let Some(dw) = dw.as_mut() {
                                for (d, uk) in dw[wrow..wrow + li].iter_mut().zip(ui) {
                                    *d += go * uk;
                                }
                            }
                            if let Some(du) = du.as_mut() {
                                for (d, wk) in du[i * li..(i + 1) * li]
                                    .iter_mut()
                                    .zip(&wv.data()[wrow..wrow + li])
                                {
                                    *d += go * wk;
                                }
                            }
                        }
                    }
                }
                if let Some(dw) = dw {
                    out.push((*weights, tensor(wv.shape(), dw)));
                }
                if let Some(du) = du {
                    out.push((*u, tensor(uv.shape(), du)));
                }
            }
            Op::SoftmaxRows(x) => {
                let y = &node.value;
                let j = y.shape()[1];
                let mut d = vec![0.0; y.len()];
                for ((yr, gr), dr) in y
                    .data()
                    .chunks_exact(j)
                    .zip(g.data().chunks_exact(j))
                    .zip(d.chunks_exact_mut(j))
                {
                    let gy = dot(gr, yr);
                    for ((dv, yv), gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *dv = yv * (gv - gy);
                    }
                }
                out.push((*x, tensor(y.shape(), d)));
            }
            Op::WeightedSum {
                coupling,
                predictions,
            } => {
                let (cv, pv) = (val(*coupling), val(*predictions));
                let (n, j_n, l) = (pv.shape()[0], pv.shape()[1], pv.shape()[2]);
                if wants(*coupling) {
                    let mut dc = vec![0.0; n * j_n];
                    for i in 0..n {
                        for j in 0..j_n {
                            let p = &pv.data()[(i * j_n + j) * l..(i * j_n + j + 1) * l];
                            dc[i * j_n + j] = dot(p, &g.data()[j * l..(j + 1) * l]);
                        }
                    }
                    out.push((*coupling, tensor(cv.shape(), dc)));
                }
                if wants(*predictions) {
                    let mut dp = vec![0.0; pv.len()];
                    for i in 0..n {
                        for j in 0..j_n {
                            let c = cv.data()[i * j_n + j];
                            for (d, gv) in dp[(i * j_n + j) * l..(i * j_n + j + 1) * l]
                                .iter_mut()
                                .zip(&g.data()[j * l..(j + 1) * l])
                            {
                                *d = c * gv;
                            }
                        }
                    }
                    out.push((*predictions, tensor(pv.shape(), dp)));
                }
            }
            Op::Agreement {
                predictions,
                outputs,
            } => {
                let (pv, vv) = (val(*predictions), val(*outputs));
                let (n, j_n, l) = (pv.shape()[0], pv.shape()[1], pv.shape()[2]);
                if wants(*predictions) {
                    let mut dp = vec![0.0; pv.len()];
                    for i in 0..n {
                        for j in 0..j_n {
                            let gij = g.data()[i * j_n + j];
                            for (d, v) in dp[(i * j_n + j) * l..(i * j_n + j + 1) * l]
                                .iter_mut()
                                .zip(&vv.data()[j * l..(j + 1) * l])
                            {
                                *d = gij * v;
                            }
                        }
                    }
                    out.push((*predictions, tensor(pv.shape(), dp)));
                }
                if wants(*outputs) {
                    let mut dv = vec![0.0; vv.len()];
                    for i in 0..n {
                        for j in 0..j_n {
                            let gij = g.data()[i * j_n + j];
                            if gij == 0.0 {
                                continue;
                            }
                            let p = &pv.data()[(i * j_n + j) * l..(i * j_n + j + 1) * l];
                            for (d, pk) in dv[j * l..(j + 1) * l].iter_mut().zip(p) {
                                *d += gij * pk;
                            }
                        }
                    }
                    out.push((*outputs, tensor(vv.shape(), dv)));
                }
            }
            Op::Add(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.clone()));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let da = g.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
                let db = g.data().iter().zip(av.data()).map(|(x, y)| x * y).collect();
                out.push((*a, tensor(av.shape(), da)));
                out.push((*b, tensor(bv.shape(), db)));
            }
            Op::Affine { x, scale, .. } => {
                let d = g.data().iter().map(|v| v * scale).collect();
                out.push((*x, tensor(g.shape(), d)));
            }
            Op::RowNorms(x) => {
                let xv = val(*x);
                let l = xv.shape()[1];
                let mut d = vec![0.0; xv.len()];
                for (r, (row, dr)) in xv
                    .data()
                    .chunks_exact(l)
                    .zip(d.chunks_exact_mut(l))
                    .enumerate()
                {
                    let n = node.value.data()[r];
                    if n > 0.0 {
                        let scale = g.data()[r] / n;
                        for (dv, xv) in dr.iter_mut().zip(row) {
                            *dv = scale * xv;
                        }
                    }
                }
                out.push((*x, tensor(xv.shape(), d)));
            }
            Op::DotConst { x, weights } => {
                let gs = g.data()[0];
                let d = weights.data().iter().map(|w| gs * w).collect();
                out.push((*x, tensor(val(*x).shape(), d)));
            }
            Op::Sum(x) => {
                out.push((*x, Tensor::full(val(*x).shape(), g.data()[0])));
            }
        }
        out
    }
}

fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::new(shape.to_vec(), data).expect("gradient shape matches its input")
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inputs(op: &Op) -> Vec<NodeId> {
    match op {
        Op::Leaf => vec![],
        Op::Conv2d {
            input,
            kernel,
            bias,
        } => {
            let mut v = vec![*input, *kernel];
            v.extend(bias);
            v
        }
        Op::Relu(x)
        | Op::Reshape(x)
        | Op::SquashRows(x)
        | Op::SoftmaxRows(x)
        | Op::RowNorms(x)
        | Op::Sum(x)
        | Op::MulConst { x, .. }
        | Op::Affine { x, .. }
        | Op::DotConst { x, .. } => vec![*x],
        Op::MatMul(a, b) | Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
        Op::AddBias { x, bias } => vec![*x, *bias],
        Op::ConcatRows(xs) => xs.clone(),
        Op::CapsuleTransform { weights, u, .. } => vec![*weights, *u],
        Op::WeightedSum {
            coupling,
            predictions,
        } => vec![*coupling, *predictions],
        Op::Agreement {
            predictions,
            outputs,
        } => vec![*predictions, *outputs],
    }
}

fn expect_rank(t: &Tensor, rank: usize, op: &str) -> Result<()> {
    if t.rank() != rank {
        return Err(Error::dim(
            op,
            format!("expected rank {rank}, got shape {:?}", t.shape()),
        ));
    }
    Ok(())
}

fn expect_same(a: &Tensor, b: &Tensor, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(
            op,
            format!("shapes {:?} and {:?} differ", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn eval<T>(op: &Op, nodes: &[T], get: impl Fn(&T) -> &Tensor) -> Result<Tensor> {
    let val = |id: &NodeId| get(&nodes[id.0]);
    match op {
        Op::Leaf | Op::Reshape(_) => unreachable!("leaves and reshapes carry their own value"),
        Op::Conv2d {
            input,
            kernel,
            bias,
        } => conv2d_valid(
            val(input),
            val(kernel),
            bias.as_ref().map(|b| val(b).data()),
        ),
        Op::Relu(x) => {
            let x = val(x);
            tensor_ok(x.shape(), x.data().iter().map(|v| v.max(0.0)).collect())
        }
        Op::MatMul(a, b) => {
            let (a, b) = (val(a), val(b));
            expect_rank(a, 2, "matmul")?;
            expect_rank(b, 2, "matmul")?;
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            if b.shape()[0] != k {
                return Err(Error::dim(
                    "matmul",
                    format!("inner extents differ: {:?} x {:?}", a.shape(), b.shape()),
                ));
            }
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                let orow = &mut out[i * n..(i + 1) * n];
                for p in 0..k {
                    let aip = a.data()[i * k + p];
                    if aip == 0.0 {
                        continue;
                    }
                    for (o, bv) in orow.iter_mut().zip(&b.data()[p * n..(p + 1) * n]) {
                        *o += aip * bv;
                    }
                }
            }
            tensor_ok(&[m, n], out)
        }
        Op::AddBias { x, bias } => {
            let (x, b) = (val(x), val(bias));
            let n = b.len();
            if x.shape().last() != Some(&n) {
                return Err(Error::dim(
                    "add_bias",
                    format!("bias length {n} vs input {:?}", x.shape()),
                ));
            }
            let mut d = x.data().to_vec();
            for row in d.chunks_exact_mut(n) {
                for (v, bv) in row.iter_mut().zip(b.data()) {
                    *v += bv;
                }
            }
            tensor_ok(x.shape(), d)
        }
        Op::ConcatRows(xs) => {
            let first = val(&xs[0]);
            expect_rank(first, 2, "concat_rows")?;
            let w = first.shape()[1];
            let mut rows = 0;
            let mut d = Vec::new();
            for x in xs {
                let t = val(x);
                if t.rank() != 2 || t.shape()[1] != w {
                    return Err(Error::dim(
                        "concat_rows",
                        format!("width {w} vs {:?}", t.shape()),
                    ));
                }
                rows += t.shape()[0];
                d.extend_from_slice(t.data());
            }
            tensor_ok(&[rows, w], d)
        }
        Op::SquashRows(x) => {
            let x = val(x);
            expect_rank(x, 2, "squash_rows")?;
            let l = x.shape()[1];
            let mut d = vec![0.0; x.len()];
            for (s, v) in x.data().chunks_exact(l).zip(d.chunks_exact_mut(l)) {
                squash_into(s, v);
            }
            tensor_ok(x.shape(), d)
        }
        Op::MulConst { x, factor } => {
            let x = val(x);
            expect_same(x, factor, "mul_const")?;
            tensor_ok(
                x.shape(),
                x.data()
                    .iter()
                    .zip(factor.data())
                    .map(|(a, b)| a * b)
                    .collect(),
            )
        }
        Op::CapsuleTransform { weights, u, groups } => {
            let (w, u) = (val(weights), val(u));
            expect_rank(w, 4, "capsule_transform")?;
            expect_rank(u, 2, "capsule_transform")?;
            let (g_n, j_n, lo, li) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
            let n = u.shape()[0];
            if u.shape()[1] != li || groups.len() != n || groups.iter().any(|&g| g >= g_n) {
                return Err(Error::dim(
                    "capsule_transform",
                    format!(
                        "weights {:?}, capsules {:?}, {} group ids",
                        w.shape(),
                        u.shape(),
                        groups.len()
                    ),
                ));
            }
            let mut out = vec![0.0; n * j_n * lo];
            for i in 0..n {
                let ui = u.row(i);
                if ui.iter().all(|&v| v == 0.0) {
                    continue;
                }
                for j in 0..j_n {
                    let wbase = (groups[i] * j_n + j) * lo * li;
                    for o in 0..lo {
                        out[(i * j_n + j) * lo + o] =
                            dot(&w.data()[wbase + o * li..wbase + (o + 1) * li], ui);
                    }
                }
            }
            tensor_ok(&[n, j_n, lo], out)
        }
        Op::SoftmaxRows(x) => {
            let x = val(x);
            expect_rank(x, 2, "softmax_rows")?;
            let j = x.shape()[1];
            let mut d = vec![0.0; x.len()];
            for (row, out) in x.data().chunks_exact(j).zip(d.chunks_exact_mut(j)) {
                softmax_into(row, out);
            }
            tensor_ok(x.shape(), d)
        }
        Op::WeightedSum {
            coupling,
            predictions,
        } => {
            let (c, p) = (val(coupling), val(predictions));
            expect_rank(p, 3, "weighted_sum")?;
            let (n, j_n, l) = (p.shape()[0], p.shape()[1], p.shape()[2]);
            if c.shape() != [n, j_n] {
                return Err(Error::dim(
                    "weighted_sum",
                    format!("coupling {:?} vs predictions {:?}", c.shape(), p.shape()),
                ));
            }
            let mut s = vec![0.0; j_n * l];
            for i in 0..n {
                for j in 0..j_n {
                    let cij = c.data()[i * j_n + j];
                    for (sv, pv) in s[j * l..(j + 1) * l]
                        .iter_mut()
                        .zip(&p.data()[(i * j_n + j) * l..(i * j_n + j + 1) * l])
                    {
                        *sv += cij * pv;
                    }
                }
            }
            tensor_ok(&[j_n, l], s)
        }
        Op::Agreement {
            predictions,
            outputs,
        } => {
            let (p, v) = (val(predictions), val(outputs));
            expect_rank(p, 3, "agreement")?;
            let (n, j_n, l) = (p.shape()[0], p.shape()[1], p.shape()[2]);
            if v.shape() != [j_n, l] {
                return Err(Error::dim(
                    "agreement",
                    format!("outputs {:?} vs predictions {:?}", v.shape(), p.shape()),
                ));
            }
            let mut a = vec![0.0; n * j_n];
            for i in 0..n {
                for j in 0..j_n {
                    a[i * j_n + j] = dot(
                        &p.data()[(i * j_n + j) * l..(i * j_n + j + 1) * l],
                        &v.data()[j * l..(j + 1) * l],
                    );
                }
            }
            tensor_ok(&[n, j_n], a)
        }
        Op::Add(a, b) => {
            let (a, b) = (val(a), val(b));
            expect_same(a, b, "add")?;
            tensor_ok(
                a.shape(),
                a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect(),
            )
        }
        Op::Mul(a, b) => {
            let (a, b) = (val(a), val(b));
            expect_same(a, b, "mul")?;
            tensor_ok(
                a.shape(),
                a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect(),
            )
        }
        Op::Affine { x, scale, shift } => {
            let x = val(x);
            tensor_ok(
                x.shape(),
                x.data().iter().map(|v| scale * v + shift).collect(),
            )
        }
        Op::RowNorms(x) => {
            let x = val(x);
            expect_rank(x, 2, "row_norms")?;
            let l = x.shape()[1];
            Ok(Tensor::from_vec(
                x.data().chunks_exact(l).map(|r| dot(r, r).sqrt()).collect(),
            ))
        }
        Op::DotConst { x, weights } => {
            let x = val(x);
            expect_same(x, weights, "dot_const")?;
            Ok(Tensor::scalar(dot(x.data(), weights.data())))
        }
        Op::Sum(x) => Ok(Tensor::scalar(val(x).sum())),
    }
}

fn tensor_ok(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
    Tensor::new(shape.to_vec(), data)
}

/// Valid stride-1 2-D convolution producing a position-major `[P, F]` map.
pub(crate) fn conv2d_valid(
    input: &Tensor,
    kernel: &Tensor,
    bias: Option<&[f64]>,
) -> Result<Tensor> {
    expect_rank(input, 2, "conv")?;
    expect_rank(kernel, 3, "conv")?;
    let (h, w) = (input.shape()[0], input.shape()[1]);
    let (f, kh, kw) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[2]);
    if kh > h || kw > w {
        return Err(Error::dim(
            "conv",
            format!("kernel {kh}x{kw} larger than input {h}x{w}"),
        ));
    }
    if let Some(b) = bias {
        if b.len() != f {
            return Err(Error::dim(
                "conv",
                format!("{} biases for {f} filters", b.len()),
            ));
        }
    }
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let x = input.data();
    let k = kernel.data();
    let mut out = vec![0.0; oh * ow * f];
    for r in 0..oh {
        for c in 0..ow {
            let orow = &mut out[(r * ow + c) * f..(r * ow + c + 1) * f];
            for (fi, o) in orow.iter_mut().enumerate() {
                let kbase = fi * kh * kw;
                let mut acc = bias.map_or(0.0, |b| b[fi]);
                for a in 0..kh {
                    acc += dot(
                        &x[(r + a) * w + c..(r + a) * w + c + kw],
                        &k[kbase + a * kw..kbase + (a + 1) * kw],
                    );
                }
                *o = acc;
            }
        }
    }
    Tensor::new(vec![oh * ow, f], out)
}

pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &x) in out.iter_mut().zip(logits) {
        *o = (x - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Length factor `‖v‖ = ‖s‖²/(1+‖s‖²)`, capped just below one.
fn squash_factor(norm: f64) -> (f64, bool) {
    let n2 = norm * norm;
    let f = n2 / (1.0 + n2);
    if f > SQUASH_MAX_NORM {
        (SQUASH_MAX_NORM, true)
    } else {
        (f, false)
    }
}

pub(crate) fn squash_into(s: &[f64], v: &mut [f64]) {
    let norm = dot(s, s).sqrt();
    if norm < SQUASH_EPS {
        v.fill(0.0);
        return;
    }
    let scale = squash_factor(norm).0 / norm;
    for (vo, si) in v.iter_mut().zip(s) {
        *vo = scale * si;
    }
}

fn squash_backward(s: &[f64], g: &[f64], ds: &mut [f64]) {
    let norm = dot(s, s).sqrt();
    if norm < SQUASH_EPS {
        ds.fill(0.0);
        return;
    }
    // v = a(n) s with a(n) = f(n)/n; dv/ds = a I + (a'(n)/n) s sᵀ
    let (f, capped) = squash_factor(norm);
    let a = f / norm;
    let da_dn = if capped {
        -f / (norm * norm)
    } else {
        let n2 = norm * norm;
        (1.0 - n2) / ((1.0 + n2) * (1.0 + n2))
    };
    let sg = dot(s, g);
    let coef = da_dn / norm * sg;
    for ((d, gv), sv) in ds.iter_mut().zip(g).zip(s) {
        *d = a * gv + coef * sv;
    }
}
