//! Tape of recorded operations and the reverse sweep over it.

use crate::error::{Error, Result};

use super::kernels::{self, ConvGeom};
use super::{dims2, dims4, Exec, Tensor};

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Kind of a recorded node, for introspection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Conv2d,
    MaxPool2d,
    Upsample2x,
    ConcatChannels,
    Relu,
    Sigmoid,
    Dense,
    Reshape,
    BceLoss,
    Scale,
    Sum,
    WeightedSum,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { x: Var, k: Var, b: Var, geom: ConvGeom },
    MaxPool2d { x: Var, window: usize, argmax: Vec<u32> },
    Upsample2x { x: Var },
    Concat { a: Var, b: Var },
    Relu { x: Var },
    Sigmoid { x: Var },
    Dense { x: Var, w: Var, b: Var },
    Reshape { x: Var },
    Bce { pred: Var, target: Var },
    Scale { x: Var, factor: f32 },
    Sum { x: Var },
    WeightedSum { x: Var, weights: Vec<f32> },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::MaxPool2d { .. } => OpKind::MaxPool2d,
            Op::Upsample2x { .. } => OpKind::Upsample2x,
            Op::Concat { .. } => OpKind::ConcatChannels,
            Op::Relu { .. } => OpKind::Relu,
            Op::Sigmoid { .. } => OpKind::Sigmoid,
            Op::Dense { .. } => OpKind::Dense,
            Op::Reshape { .. } => OpKind::Reshape,
            Op::Bce { .. } => OpKind::BceLoss,
            Op::Scale { .. } => OpKind::Scale,
            Op::Sum { .. } => OpKind::Sum,
            Op::WeightedSum { .. } => OpKind::WeightedSum,
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Records a forward computation so that [`backward`] can replay it.
///
/// Nodes are appended in execution order, so the node list is already a
/// topological order. With recording off the graph only evaluates values
/// and drops what the reverse sweep would need.
#[derive(Debug)]
pub struct Graph {
    exec: Exec,
    record: bool,
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new(exec: Exec) -> Self {
        Self {
            exec,
            record: true,
            nodes: Vec::new(),
        }
    }

    /// A graph that evaluates without keeping backward state.
    pub fn inference(exec: Exec) -> Self {
        Self {
            exec,
            record: false,
            nodes: Vec::new(),
        }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn exec(&self) -> &Exec {
        &self.exec
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn op_kinds(&self) -> Vec<OpKind> {
        self.nodes.iter().map(|n| n.op.kind()).collect()
    }

    pub fn count(&self, kind: OpKind) -> usize {
        self.nodes.iter().filter(|n| n.op.kind() == kind).count()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn take_value(&mut self, v: Var) -> Tensor {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::zeros(&[0]))
    }

    fn requires(&self, v: Var) -> bool {
        self.record && self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        let op = if self.record { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            requires_grad: self.record && requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a leaf; gradients flow to it iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Result<Var> {
        let rg = t.requires_grad();
        let mut value = t;
        value.clear_grad();
        self.push(value, rg, Op::Leaf, "leaf")
    }

    /// Records a constant leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        let mut value = t;
        value.set_requires_grad(false);
        value.clear_grad();
        self.push(value, false, Op::Leaf, "constant")
    }

    /// Records a copy of a parameter tensor.
    pub fn param(&mut self, t: &Tensor) -> Result<Var> {
        let value = Tensor {
            shape: t.shape.clone(),
            data: t.data.clone(),
            grad: None,
            requires_grad: t.requires_grad,
        };
        self.push(value, t.requires_grad, Op::Leaf, "param")
    }

    pub fn conv2d(&mut self, x: Var, k: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let xs = dims4(self.value(x), "conv2d input")?;
        let ks = dims4(self.value(k), "conv2d kernel")?;
        let geom = ConvGeom::new(xs, ks, stride, pad)?;
        if self.value(b).shape() != [geom.f] {
            return Err(Error::shape(format!(
                "conv2d bias shape {:?}, expected [{}]",
                self.value(b).shape(),
                geom.f
            )));
        }
        let out = kernels::conv2d_forward(
            &self.exec,
            &geom,
            self.value(x).data(),
            self.value(k).data(),
            self.value(b).data(),
        );
        let rg = self.requires(x) || self.requires(k) || self.requires(b);
        let t = Tensor::new(geom.output_shape().to_vec(), out)?;
        self.push(t, rg, Op::Conv2d { x, k, b, geom }, "conv2d")
    }

    pub fn maxpool2d(&mut self, x: Var, window: usize) -> Result<Var> {
        let dims = dims4(self.value(x), "maxpool2d")?;
        let [n, c, h, w] = dims;
        if window == 0 || h % window != 0 || w % window != 0 {
            return Err(Error::shape(format!(
                "maxpool2d window {window} does not divide {h}x{w}"
            )));
        }
        let (out, argmax) = kernels::maxpool2d_forward(&self.exec, dims, window, self.value(x).data());
        let t = Tensor::new(vec![n, c, h / window, w / window], out)?;
        let rg = self.requires(x);
        self.push(t, rg, Op::MaxPool2d { x, window, argmax }, "maxpool2d")
    }

    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let dims = dims4(self.value(x), "upsample2x")?;
        let [n, c, h, w] = dims;
        let out = kernels::upsample2x_forward(&self.exec, dims, self.value(x).data());
        let t = Tensor::new(vec![n, c, 2 * h, 2 * w], out)?;
        let rg = self.requires(x);
        self.push(t, rg, Op::Upsample2x { x }, "upsample2x")
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let [na, ca, ha, wa] = dims4(self.value(a), "concat_channels")?;
        let [nb, cb, hb, wb] = dims4(self.value(b), "concat_channels")?;
        if (na, ha, wa) != (nb, hb, wb) {
            return Err(Error::shape(format!(
                "concat_channels: [{na},_,{ha},{wa}] vs [{nb},_,{hb},{wb}]"
            )));
        }
        let out = kernels::concat_channels(self.value(a).data(), ca, self.value(b).data(), cb, na, ha * wa);
        let t = Tensor::new(vec![na, ca + cb, ha, wa], out)?;
        let rg = self.requires(a) || self.requires(b);
        self.push(t, rg, Op::Concat { a, b }, "concat_channels")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = kernels::relu_forward(&self.exec, self.value(x).data());
        let t = Tensor::new(self.value(x).shape().to_vec(), out)?;
        let rg = self.requires(x);
        self.push(t, rg, Op::Relu { x }, "relu")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = kernels::sigmoid_forward(&self.exec, self.value(x).data());
        let t = Tensor::new(self.value(x).shape().to_vec(), out)?;
        let rg = self.requires(x);
        self.push(t, rg, Op::Sigmoid { x }, "sigmoid")
    }

    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let [n, d] = dims2(self.value(x), "dense input")?;
        let [dw, m] = dims2(self.value(w), "dense weights")?;
        if d != dw || self.value(b).shape() != [m] {
            return Err(Error::shape(format!(
                "dense: input [{n},{d}], weights [{dw},{m}], bias {:?}",
                self.value(b).shape()
            )));
        }
        let out = kernels::dense_forward(
            &self.exec,
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            n,
            d,
            m,
        );
        let t = Tensor::new(vec![n, m], out)?;
        let rg = self.requires(x) || self.requires(w) || self.requires(b);
        self.push(t, rg, Op::Dense { x, w, b }, "dense")
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let rg = self.requires(x);
        self.push(t, rg, Op::Reshape { x }, "reshape")
    }

    /// `[N, C, H, W]` → `[N, C·H·W]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let shape = self.value(x).shape();
        let n = *shape.first().ok_or_else(|| Error::shape("flatten of empty shape"))?;
        let rest = shape[1..].iter().product();
        self.reshape(x, vec![n, rest])
    }

    pub fn bce_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, y) = (self.value(pred), self.value(target));
        if p.shape() != y.shape() {
            return Err(Error::shape(format!(
                "bce_loss: prediction {:?} vs target {:?}",
                p.shape(),
                y.shape()
            )));
        }
        let loss = kernels::bce_forward(p.data(), y.data());
        let rg = self.requires(pred);
        self.push(Tensor::scalar(loss as f32), rg, Op::Bce { pred, target }, "bce_loss")
    }

    pub fn scale(&mut self, x: Var, factor: f32) -> Result<Var> {
        let src = self.value(x);
        let data = src.data().iter().map(|v| v * factor).collect();
        let t = Tensor::new(src.shape().to_vec(), data)?;
        let rg = self.requires(x);
        self.push(t, rg, Op::Scale { x, factor }, "scale")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.value(x).data().iter().map(|&v| v as f64).sum();
        let rg = self.requires(x);
        self.push(Tensor::scalar(s as f32), rg, Op::Sum { x }, "sum")
    }

    /// Scalar `Σ x_i · weights_i` against a constant weight tensor.
    pub fn weighted_sum(&mut self, x: Var, weights: &Tensor) -> Result<Var> {
        let src = self.value(x);
        if src.shape() != weights.shape() {
            return Err(Error::shape(format!(
                "weighted_sum: {:?} vs {:?}",
                src.shape(),
                weights.shape()
            )));
        }
        let s = kernels::dot_f64(src.data(), weights.data());
        let rg = self.requires(x);
        self.push(
            Tensor::scalar(s as f32),
            rg,
            Op::WeightedSum {
                x,
                weights: weights.data().to_vec(),
            },
            "weighted_sum",
        )
    }

    /// Reverse sweep from the scalar `loss`; consumes the graph.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        backward(self, loss)
    }
}

/// Gradients of every leaf that requires one, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f32>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f32]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of `v` into `t`'s gradient buffer.
    pub fn accumulate_into(&self, v: Var, t: &mut Tensor) -> Result<()> {
        match self.get(v) {
            Some(g) => t.accumulate_grad(g),
            None => Err(Error::usage(format!("no gradient recorded for node {}", v.0))),
        }
    }
}

fn add_into(slot: &mut Option<Vec<f32>>, g: Vec<f32>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
        None => *slot = Some(g),
    }
}

/// Runs the reverse sweep from `loss`, visiting each recorded op once in
/// reverse order. Every leaf that requires a gradient gets one, zero-filled
/// when the loss does not depend on it.
pub fn backward(graph: Graph, loss: Var) -> Result<Gradients> {
    if !graph.record {
        return Err(Error::usage("backward on an inference graph"));
    }
    let numel = graph
        .nodes
        .get(loss.0)
        .ok_or_else(|| Error::usage("loss is not a node of this graph"))?
        .value
        .numel();
    if numel != 1 {
        return Err(Error::usage(format!(
            "backward needs a scalar loss, got {numel} elements"
        )));
    }
    let exec = graph.exec;
    let mut nodes = graph.nodes;
    let is_leaf: Vec<bool> = nodes.iter().map(|n| matches!(n.op, Op::Leaf)).collect();
    let mut grads: Vec<Option<Vec<f32>>> = (0..nodes.len()).map(|_| None).collect();
    if nodes[loss.0].requires_grad {
        grads[loss.0] = Some(vec![1.0]);
    }

    for id in (0..=loss.0).rev() {
        if is_leaf[id] {
            continue;
        }
        let Some(dout) = grads[id].take() else { continue };
        let op = std::mem::replace(&mut nodes[id].op, Op::Leaf);
        let needs = |v: Var| nodes[v.0].requires_grad;
        match op {
            Op::Leaf => unreachable!(),
            Op::Conv2d { x, k, b, geom } => {
                if needs(k) || needs(b) {
                    let (dk, db) = kernels::conv2d_backward_params(&exec, &geom, &dout, nodes[x.0].value.data());
                    if needs(k) {
                        add_into(&mut grads[k.0], dk);
                    }
                    if needs(b) {
                        add_into(&mut grads[b.0], db);
                    }
                }
                if needs(x) {
                    let dx = kernels::conv2d_backward_input(&exec, &geom, &dout, nodes[k.0].value.data());
                    add_into(&mut grads[x.0], dx);
                }
            }
            Op::MaxPool2d { x, window, argmax } => {
                let dims = dims4(&nodes[x.0].value, "maxpool2d")?;
                let dx = kernels::maxpool2d_backward(&exec, dims, window, &dout, &argmax);
                add_into(&mut grads[x.0], dx);
            }
            Op::Upsample2x { x } => {
                let dims = dims4(&nodes[x.0].value, "upsample2x")?;
                let dx = kernels::upsample2x_backward(&exec, dims, &dout);
                add_into(&mut grads[x.0], dx);
            }
            Op::Concat { a, b } => {
                let [n, ca, h, w] = dims4(&nodes[a.0].value, "concat")?;
                let cb = nodes[b.0].value.shape()[1];
                let (da, db) = kernels::split_channels(&dout, ca, cb, n, h * w);
                if needs(a) {
                    add_into(&mut grads[a.0], da);
                }
                if needs(b) {
                    add_into(&mut grads[b.0], db);
                }
            }
            Op::Relu { x } => {
                let dx = kernels::relu_backward(&exec, nodes[x.0].value.data(), &dout);
                add_into(&mut grads[x.0], dx);
            }
            Op::Sigmoid { x } => {
                let dx = kernels::sigmoid_backward(&exec, nodes[id].value.data(), &dout);
                add_into(&mut grads[x.0], dx);
            }
            Op::Dense { x, w, b } => {
                let [n, d] = dims2(&nodes[x.0].value, "dense")?;
                let m = nodes[w.0].value.shape()[1];
                if needs(w) || needs(b) {
                    let (dw, db) = kernels::dense_backward_params(&exec, &dout, nodes[x.0].value.data(), n, d, m);
                    if needs(w) {
                        add_into(&mut grads[w.0], dw);
                    }
                    if needs(b) {
                        add_into(&mut grads[b.0], db);
                    }
                }
                if needs(x) {
                    let dx = kernels::dense_backward_input(&exec, &dout, nodes[w.0].value.data(), n, d, m);
                    add_into(&mut grads[x.0], dx);
                }
            }
            Op::Reshape { x } => add_into(&mut grads[x.0], dout),
            Op::Bce { pred, target } => {
                let dp =
                    kernels::bce_backward(nodes[pred.0].value.data(), nodes[target.0].value.data(), dout[0] as f64);
                add_into(&mut grads[pred.0], dp);
            }
            Op::Scale { x, factor } => {
                let dx = dout.iter().map(|g| g * factor).collect();
                add_into(&mut grads[x.0], dx);
            }
            Op::Sum { x } => {
                let dx = vec![dout[0]; nodes[x.0].value.numel()];
                add_into(&mut grads[x.0], dx);
            }
            Op::WeightedSum { x, weights } => {
                let dx = weights.iter().map(|w| w * dout[0]).collect();
                add_into(&mut grads[x.0], dx);
            }
        }
        // Intermediate values are dead once their op has been replayed.
        nodes[id].value = Tensor::zeros(&[0]);
    }

    for (id, node) in nodes.iter().enumerate() {
        if !is_leaf[id] || !node.requires_grad {
            grads[id] = None;
        } else if grads[id].is_none() {
            grads[id] = Some(vec![0.0; node.value.numel()]);
        }
    }
    Ok(Gradients { grads })
}
