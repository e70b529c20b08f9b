//! Reverse-mode tape. Nodes are appended in evaluation order, so every
//! input of node `i` has an index below `i` and one reverse sweep suffices.

use super::attention::AttentionOp;
use super::conv::{Conv2dOp, MaxPoolOp};
use super::norm::{BatchNormOp, DropoutOp};
use super::recurrent::BlstmOp;
use super::tensor::{gemm, Scalar, Tensor};
use super::{ModelError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(super) usize);

pub(super) enum Op<T> {
    Leaf,
    Linear { x: Var, w: Var, b: Option<Var> },
    Relu(Var),
    Tanh(Var),
    /// Same cells, new shape.
    Reshape(Var),
    /// `[batch, ch, time, band] -> [batch, time, ch * band]`.
    ConvToSeq(Var),
    Conv2d(Box<Conv2dOp>),
    MaxPool(Box<MaxPoolOp>),
    Blstm(Box<BlstmOp<T>>),
    Attention(Box<AttentionOp<T>>),
    BatchNorm(Box<BatchNormOp<T>>),
    Dropout(Box<DropoutOp<T>>),
    SoftmaxCe { logits: Var, probs: Vec<T>, labels: Vec<usize> },
    /// Scalar `sum(x * c)`, a random projection used by gradient checks.
    DotConst { x: Var, c: Vec<T> },
}

pub(super) struct Node<T> {
    pub value: Tensor<T>,
    pub op: Op<T>,
}

/// Gradient contributions of one node to its inputs.
pub(super) type Contributions<T> = Vec<(Var, Vec<T>)>;

pub struct Graph<T> {
    pub(super) nodes: Vec<Node<T>>,
    params: Vec<(Var, usize)>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

pub(super) fn shape_err<V>(msg: impl Into<String>) -> Result<V> {
    Err(ModelError::ShapeMismatch(msg.into()))
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad.as_deref()
    }

    pub(super) fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad
    }

    pub(super) fn push(&mut self, mut value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        value.requires_grad = inputs.iter().any(|&v| self.requires_grad(v));
        value.grad = None;
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// A constant input (no gradient unless `requires_grad`).
    pub fn input(&mut self, mut value: Tensor<T>, requires_grad: bool) -> Var {
        value.requires_grad = requires_grad;
        value.grad = None;
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// A trainable leaf tied to slot `index` of a parameter store.
    pub fn param(&mut self, value: &Tensor<T>, index: usize) -> Var {
        let v = self.input(Tensor::new(&value.shape, value.data.clone()), true);
        self.params.push((v, index));
        v
    }

    /// `(store index, gradient)` for every parameter leaf reached by `backward`.
    pub fn param_grads(&self) -> impl Iterator<Item = (usize, &[T])> {
        self.params
            .iter()
            .filter_map(|&(v, i)| self.grad(v).map(|g| (i, g)))
    }

    /// `x [.., in] . w [in, out] + b [out]`, applied to every leading row.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if ws.len() != 2 || xs.is_empty() || *xs.last().unwrap() != ws[0] {
            return shape_err(format!("linear: x {xs:?} with w {ws:?}"));
        }
        let (fan_in, fan_out) = (ws[0], ws[1]);
        if let Some(b) = b {
            if self.shape(b) != [fan_out] {
                return shape_err(format!("linear: bias {:?} for {fan_out} outputs", self.shape(b)));
            }
        }
        let rows = self.value(x).len() / fan_in;
        let mut out_shape = xs.to_vec();
        *out_shape.last_mut().unwrap() = fan_out;
        let mut y = vec![T::zero(); rows * fan_out];
        if let Some(b) = b {
            let bias = &self.value(b).data;
            for row in y.chunks_mut(fan_out) {
                row.copy_from_slice(bias);
            }
        }
        gemm(
            rows,
            fan_in,
            fan_out,
            &self.value(x).data,
            false,
            &self.value(w).data,
            false,
            &mut y,
            b.is_some(),
        );
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(Tensor::new(&out_shape, y), Op::Linear { x, w, b }, &inputs))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let y: Vec<T> = v.data.iter().map(|&a| a.max(T::zero())).collect();
        let t = Tensor::new(&v.shape, y);
        self.push(t, Op::Relu(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let y: Vec<T> = v.data.iter().map(|a| a.tanh()).collect();
        let t = Tensor::new(&v.shape, y);
        self.push(t, Op::Tanh(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x);
        if shape.iter().product::<usize>() != v.len() {
            return shape_err(format!("reshape {:?} to {shape:?}", v.shape));
        }
        let t = Tensor::new(shape, v.data.clone());
        Ok(self.push(t, Op::Reshape(x), &[x]))
    }

    pub fn conv_to_seq(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let &[b, c, h, w] = v.shape.as_slice() else {
            return shape_err(format!("conv_to_seq expects 4 axes, got {:?}", v.shape));
        };
        let mut y = vec![T::zero(); v.len()];
        for n in 0..b {
            for ch in 0..c {
                for t in 0..h {
                    let src = ((n * c + ch) * h + t) * w;
                    let dst = (n * h + t) * c * w + ch * w;
                    y[dst..dst + w].copy_from_slice(&v.data[src..src + w]);
                }
            }
        }
        let t = Tensor::new(&[b, h, c * w], y);
        Ok(self.push(t, Op::ConvToSeq(x), &[x]))
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let v = self.value(logits);
        let &[batch, classes] = v.shape.as_slice() else {
            return shape_err(format!("logits must be [batch, classes], got {:?}", v.shape));
        };
        if labels.len() != batch || batch == 0 {
            return shape_err(format!("{} labels for batch {batch}", labels.len()));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(ModelError::LabelOutOfRange {
                label,
                n_classes: classes,
            });
        }
        let probs = softmax_rows(&v.data, classes);
        let mut loss = T::zero();
        for (row, &l) in v.data.chunks(classes).zip(labels) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<T>().ln();
            loss += lse - row[l];
        }
        loss = loss / T::lit(batch as f64);
        let t = Tensor::new(&[], vec![loss]);
        Ok(self.push(
            t,
            Op::SoftmaxCe {
                logits,
                probs,
                labels: labels.to_vec(),
            },
            &[logits],
        ))
    }

    pub fn dot_const(&mut self, x: Var, c: Vec<T>) -> Result<Var> {
        let v = self.value(x);
        if c.len() != v.len() {
            return shape_err("dot_const length");
        }
        let s = v.data.iter().zip(&c).map(|(&a, &b)| a * b).sum::<T>();
        Ok(self.push(Tensor::new(&[], vec![s]), Op::DotConst { x, c }, &[x]))
    }

    /// Fill `grad` on every node that influences the scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return shape_err("backward needs a scalar loss");
        }
        for node in &mut self.nodes {
            node.value.grad = None;
        }
        self.nodes[loss.0].value.grad = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            if !node.value.requires_grad {
                continue;
            }
            let Some(dy) = node.value.grad.take() else {
                continue;
            };
            let contributions = backward_node(&node.op, &node.value, &dy, before)?;
            node.value.grad = Some(dy);
            for (v, g) in contributions {
                let target = &mut before[v.0].value;
                match target.grad.as_mut() {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            *a += *b;
                        }
                    }
                    None => target.grad = Some(g),
                }
            }
        }
        Ok(())
    }
}

pub(super) fn softmax_rows<T: Scalar>(data: &[T], width: usize) -> Vec<T> {
    let mut out = vec![T::zero(); data.len()];
    for (row, o) in data.chunks(width).zip(out.chunks_mut(width)) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for (oj, &z) in o.iter_mut().zip(row) {
            *oj = (z - max).exp();
            sum += *oj;
        }
        for oj in o.iter_mut() {
            *oj = *oj / sum;
        }
    }
    out
}

pub(super) fn needs<T>(nodes: &[Node<T>], v: Var) -> bool {
    nodes[v.0].value.requires_grad
}

fn backward_node<T: Scalar>(
    op: &Op<T>,
    out: &Tensor<T>,
    dy: &[T],
    nodes: &[Node<T>],
) -> Result<Contributions<T>> {
    let val = |v: Var| &nodes[v.0].value;
    let mut c: Contributions<T> = Vec::new();
    match op {
        Op::Leaf => {}
        Op::Linear { x, w, b } => {
            let (fan_in, fan_out) = (val(*w).shape[0], val(*w).shape[1]);
            let rows = val(*x).len() / fan_in;
            if needs(nodes, *x) {
                let mut dx = vec![T::zero(); rows * fan_in];
                gemm(rows, fan_out, fan_in, dy, false, &val(*w).data, true, &mut dx, false);
                c.push((*x, dx));
            }
            if needs(nodes, *w) {
                let mut dw = vec![T::zero(); fan_in * fan_out];
                gemm(fan_in, rows, fan_out, &val(*x).data, true, dy, false, &mut dw, false);
                c.push((*w, dw));
            }
            if let Some(b) = b.filter(|&b| needs(nodes, b)) {
                let mut db = vec![T::zero(); fan_out];
                for row in dy.chunks(fan_out) {
                    for (d, &g) in db.iter_mut().zip(row) {
                        *d += g;
                    }
                }
                c.push((b, db));
            }
        }
        Op::Relu(x) => {
            let dx = val(*x)
                .data
                .iter()
                .zip(dy)
                .map(|(&a, &g)| if a > T::zero() { g } else { T::zero() })
                .collect();
            c.push((*x, dx));
        }
        Op::Tanh(x) => {
            let dx = out
                .data
                .iter()
                .zip(dy)
                .map(|(&y, &g)| g * (T::one() - y * y))
                .collect();
            c.push((*x, dx));
        }
        Op::Reshape(x) => c.push((*x, dy.to_vec())),
        Op::ConvToSeq(x) => {
            let &[b, ch, h, w] = val(*x).shape.as_slice() else {
                unreachable!("checked at construction")
            };
            let mut dx = vec![T::zero(); dy.len()];
            for n in 0..b {
                for k in 0..ch {
                    for t in 0..h {
                        let dst = ((n * ch + k) * h + t) * w;
                        let src = (n * h + t) * ch * w + k * w;
                        dx[dst..dst + w].copy_from_slice(&dy[src..src + w]);
                    }
                }
            }
            c.push((*x, dx));
        }
        Op::Conv2d(op) => op.backward(dy, nodes, &mut c),
        Op::MaxPool(op) => op.backward(dy, nodes, &mut c),
        Op::Blstm(op) => op.backward(dy, nodes, &mut c),
        Op::Attention(op) => op.backward(dy, nodes, &mut c),
        Op::BatchNorm(op) => op.backward(dy, nodes, &mut c),
        Op::Dropout(op) => op.backward(dy, &mut c),
        Op::SoftmaxCe {
            logits,
            probs,
            labels,
        } => {
            let classes = val(*logits).shape[1];
            let scale = dy[0] / T::lit(labels.len() as f64);
            let mut dx: Vec<T> = probs.iter().map(|&p| p * scale).collect();
            for (row, &l) in dx.chunks_mut(classes).zip(labels) {
                row[l] -= scale;
            }
            c.push((*logits, dx));
        }
        Op::DotConst { x, c: k } => {
            c.push((*x, k.iter().map(|&a| a * dy[0]).collect()));
        }
    }
    Ok(c.into_iter().filter(|(v, _)| needs(nodes, *v)).collect())
}
