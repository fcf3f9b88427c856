//! Reverse-mode differentiation over a linear record of primitive operations.
//!
//! Every primitive appends one node holding its output value. `backward` walks
//! the nodes in exact reverse order of creation and accumulates gradients
//! additively, so a tensor consumed twice receives the sum of both
//! contributions.

use crate::error::{Error, Result};
use crate::kernels::{self, ConvDims};
use crate::tensor::Tensor;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Var },
    Relu(Var),
    MaxPool2 { input: Var, argmax: Vec<u32> },
    Dense { input: Var, weight: Var, bias: Var },
    Mul(Var, Var),
    Add(Var, Var),
    Reshape(Var),
    Softmax(Var),
    SoftmaxCrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f32> },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d { input, weight, bias } | Op::Dense { input, weight, bias } => {
                vec![*input, *weight, *bias]
            }
            Op::Relu(a) | Op::Reshape(a) | Op::Softmax(a) => vec![*a],
            Op::MaxPool2 { input, .. } => vec![*input],
            Op::Mul(a, b) | Op::Add(a, b) => vec![*a, *b],
            Op::SoftmaxCrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    layer: String,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    layer: String,
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; all zeros when `v` does not influence the output.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
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

    /// Name attached to subsequently recorded nodes; used in numeric errors.
    pub fn set_layer(&mut self, name: impl Into<String>) {
        self.layer = name.into();
    }

    pub fn layer_of(&self, v: Var) -> &str {
        &self.nodes[v.0].layer
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            layer: self.layer.clone(),
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::numeric(
                format!("layer '{}'", self.layer),
                "non-finite value produced",
            ));
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            layer: self.layer.clone(),
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// `input` is `[n, cin, h, w]`, `weight` is `[cout, cin, 3, 3]`, `bias` is `[cout]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let d = self.conv_dims(input, weight, bias)?;
        let out = kernels::conv3x3_forward(
            d,
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
        );
        let value = Tensor::new(vec![d.n, d.cout, d.h, d.w], out)?;
        self.push(value, Op::Conv2d { input, weight, bias })
    }

    fn conv_dims(&self, input: Var, weight: Var, bias: Var) -> Result<ConvDims> {
        let xs = self.value(input).shape();
        let ws = self.value(weight).shape();
        let bs = self.value(bias).shape();
        if xs.len() != 4 || ws.len() != 4 || ws[2] != 3 || ws[3] != 3 || xs[1] != ws[1] || bs != [ws[0]] {
            return Err(Error::dim(format!(
                "conv2d in layer '{}': input {xs:?}, weight {ws:?}, bias {bs:?}",
                self.layer
            )));
        }
        Ok(ConvDims {
            n: xs[0],
            cin: xs[1],
            cout: ws[0],
            h: xs[2],
            w: xs[3],
        })
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| v.max(0.0)).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        self.push(value, Op::Relu(input))
    }

    /// 2x2 max pool, stride 2, over the last two dimensions of a rank-4 tensor.
    pub fn maxpool2(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let s = x.shape().to_vec();
        if s.len() != 4 || s[2] % 2 != 0 || s[3] % 2 != 0 {
            return Err(Error::dim(format!(
                "maxpool in layer '{}' needs [n, c, even h, even w], got {s:?}",
                self.layer
            )));
        }
        let (out, argmax) = kernels::maxpool2_forward(s[0] * s[1], s[2], s[3], x.data());
        let value = Tensor::new(vec![s[0], s[1], s[2] / 2, s[3] / 2], out)?;
        self.push(value, Op::MaxPool2 { input, argmax })
    }

    /// `input` is `[n, ...]` flattened per row; `weight` is `[out, in]`, `bias` is `[out]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let x = self.value(input);
        let (n, fin) = (x.batch(), x.row_len());
        let ws = self.value(weight).shape();
        if ws.len() != 2 || ws[1] != fin || self.value(bias).shape() != [ws[0]] {
            return Err(Error::dim(format!(
                "dense in layer '{}': input rows of {fin}, weight {ws:?}",
                self.layer
            )));
        }
        let fout = ws[0];
        let out = kernels::dense_forward(
            n,
            fin,
            fout,
            x.data(),
            self.value(weight).data(),
            self.value(bias).data(),
        );
        let value = Tensor::new(vec![n, fout], out)?;
        self.push(value, Op::Dense { input, weight, bias })
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if !x.same_shape(y) {
            return Err(Error::dim(format!("mul: {:?} vs {:?}", x.shape(), y.shape())));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        self.push(value, Op::Mul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if !x.same_shape(y) {
            return Err(Error::dim(format!("add: {:?} vs {:?}", x.shape(), y.shape())));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        self.push(value, Op::Add(a, b))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).reshape(shape)?;
        self.push(value, Op::Reshape(input))
    }

    /// Row-wise softmax over `[n, classes]`.
    pub fn softmax(&mut self, logits: Var) -> Result<Var> {
        let z = self.value(logits);
        if z.shape().len() != 2 {
            return Err(Error::dim(format!("softmax expects [n, classes], got {:?}", z.shape())));
        }
        let p = kernels::softmax_rows(z.shape()[1], z.data());
        let value = Tensor::new(z.shape().to_vec(), p)?;
        self.push(value, Op::Softmax(logits))
    }

    /// Mean cross-entropy of `softmax(logits)` against `labels`; a scalar node.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let z = self.value(logits);
        let s = z.shape();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(Error::dim(format!(
                "cross-entropy: logits {s:?} with {} labels",
                labels.len()
            )));
        }
        let classes = s[1];
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::dim(format!("label {bad} outside {classes} classes")));
        }
        let mut loss = 0.0f64;
        for (row, &y) in z.data().chunks(classes).zip(labels) {
            let m = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
            let lse = m + row.iter().map(|&v| (v as f64 - m).exp()).sum::<f64>().ln();
            loss += lse - row[y] as f64;
        }
        loss /= labels.len() as f64;
        let probs = kernels::softmax_rows(classes, z.data());
        self.push(
            Tensor::scalar(loss as f32),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        )
    }

    /// Backpropagate from a scalar node.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.is_empty() {
            return Err(Error::State("backward on an empty tape".into()));
        }
        let n = self.value(root).numel();
        if n != 1 {
            return Err(Error::dim(format!("backward root must be scalar, has {n} values")));
        }
        self.backward_from(root, Tensor::full(self.value(root).shape(), 1.0))
    }

    /// Backpropagate `d(out[:, class])` summed over rows of a `[n, classes]` node.
    pub fn backward_select(&self, root: Var, class: usize) -> Result<Gradients> {
        if self.is_empty() {
            return Err(Error::State("backward on an empty tape".into()));
        }
        let v = self.value(root);
        if v.shape().len() != 2 || class >= v.shape()[1] {
            return Err(Error::dim(format!(
                "class {class} not selectable from output of shape {:?}",
                v.shape()
            )));
        }
        let mut seed = Tensor::zeros(v.shape());
        let cols = v.shape()[1];
        for r in 0..v.shape()[0] {
            seed.data_mut()[r * cols + class] = 1.0;
        }
        self.backward_from(root, seed)
    }

    /// Backpropagate an arbitrary upstream gradient `seed` into `root`.
    pub fn backward_from(&self, root: Var, seed: Tensor) -> Result<Gradients> {
        if self.is_empty() {
            return Err(Error::State("backward on an empty tape".into()));
        }
        if !seed.same_shape(self.value(root)) {
            return Err(Error::dim(format!(
                "seed {:?} does not match root {:?}",
                seed.shape(),
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed);

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads)?;
            }
            grads[i] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let mut accumulate = |v: Var, t: Tensor| {
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, weight, bias } => {
                let d = self.conv_dims(*input, *weight, *bias)?;
                let need_params = self.wants(*weight) || self.wants(*bias);
                let (gi, gp) = kernels::conv3x3_backward(
                    d,
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    g.data(),
                    self.wants(*input),
                    need_params,
                );
                if let Some(gi) = gi {
                    accumulate(*input, Tensor::new(self.value(*input).shape().to_vec(), gi)?);
                }
                if let Some((gw, gb)) = gp {
                    accumulate(*weight, Tensor::new(self.value(*weight).shape().to_vec(), gw)?);
                    accumulate(*bias, Tensor::new(self.value(*bias).shape().to_vec(), gb)?);
                }
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                let data = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                    .collect();
                accumulate(*a, Tensor::new(x.shape().to_vec(), data)?);
            }
            Op::MaxPool2 { input, argmax } => {
                let x = self.value(*input);
                let mut gi = vec![0.0f32; x.numel()];
                for (&src, &gv) in argmax.iter().zip(g.data()) {
                    gi[src as usize] += gv;
                }
                accumulate(*input, Tensor::new(x.shape().to_vec(), gi)?);
            }
            Op::Dense { input, weight, bias } => {
                let x = self.value(*input);
                let ws = self.value(*weight).shape();
                let need_params = self.wants(*weight) || self.wants(*bias);
                let (gi, gp) = kernels::dense_backward(
                    x.batch(),
                    x.row_len(),
                    ws[0],
                    x.data(),
                    self.value(*weight).data(),
                    g.data(),
                    self.wants(*input),
                    need_params,
                );
                if let Some(gi) = gi {
                    accumulate(*input, Tensor::new(x.shape().to_vec(), gi)?);
                }
                if let Some((gw, gb)) = gp {
                    accumulate(*weight, Tensor::new(ws.to_vec(), gw)?);
                    accumulate(*bias, Tensor::new(vec![ws[0]], gb)?);
                }
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let d = g.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
                    accumulate(*a, Tensor::new(x.shape().to_vec(), d)?);
                }
                if self.wants(*b) {
                    let d = g.data().iter().zip(x.data()).map(|(p, q)| p * q).collect();
                    accumulate(*b, Tensor::new(y.shape().to_vec(), d)?);
                }
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    accumulate(*a, g.clone());
                }
                if self.wants(*b) {
                    accumulate(*b, g.clone());
                }
            }
            Op::Reshape(a) => {
                accumulate(*a, g.reshape(self.value(*a).shape())?);
            }
            Op::Softmax(a) => {
                let p = &node.value;
                let cols = p.shape()[1];
                let mut gz = vec![0.0f32; p.numel()];
                for ((o, pr), gr) in gz.chunks_mut(cols).zip(p.data().chunks(cols)).zip(g.data().chunks(cols)) {
                    let dot: f32 = pr.iter().zip(gr).map(|(x, y)| x * y).sum();
                    for ((ov, &pv), &gv) in o.iter_mut().zip(pr).zip(gr) {
                        *ov = pv * (gv - dot);
                    }
                }
                accumulate(*a, Tensor::new(p.shape().to_vec(), gz)?);
            }
            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                let shape = self.value(*logits).shape().to_vec();
                let cols = shape[1];
                let scale = g.data()[0] / labels.len() as f32;
                let mut gz = probs.clone();
                for (r, &y) in labels.iter().enumerate() {
                    gz[r * cols + y] -= 1.0;
                }
                gz.iter_mut().for_each(|v| *v *= scale);
                accumulate(*logits, Tensor::new(shape, gz)?);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn linear_map_gradient_is_weight_vector() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 4], &[0.3, -1.0, 2.0, 5.0]), true);
        let w = tape.leaf(t(&[1, 4], &[1.0, -2.0, 3.0, 0.0]), false);
        let b = tape.leaf(t(&[1], &[0.0]), false);
        let y = tape.dense(x, w, b).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).data(), &[1.0, -2.0, 3.0, 0.0]);
    }

    #[test]
    fn softmax_gradient_at_uniform_point() {
        let mut tape = Tape::new();
        let z = tape.leaf(t(&[1, 2], &[0.0, 0.0]), true);
        let p = tape.softmax(z).unwrap();
        let g = tape.backward_select(p, 0).unwrap();
        let gz = g.get(z);
        assert!((gz.data()[0] - 0.25).abs() < 1e-7);
        assert!((gz.data()[1] + 0.25).abs() < 1e-7);
    }

    #[test]
    fn disconnected_tensor_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 2], &[1.0, 2.0]), true);
        let stray = tape.leaf(t(&[3], &[1.0, 1.0, 1.0]), true);
        let _unused = tape.relu(stray).unwrap();
        let y = tape.softmax(x).unwrap();
        let g = tape.backward_select(y, 1).unwrap();
        assert_eq!(g.get(stray).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn duplicated_edge_doubles_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 3], &[0.5, -0.2, 0.1]), true);
        let w = tape.leaf(t(&[1, 3], &[2.0, 1.0, -1.0]), false);
        let b = tape.leaf(t(&[1], &[0.0]), false);
        let single = {
            let y = tape.dense(x, w, b).unwrap();
            tape.backward(y).unwrap().get(x)
        };
        let xx = tape.add(x, x).unwrap();
        let y2 = tape.dense(xx, w, b).unwrap();
        let double = tape.backward(y2).unwrap().get(x);
        for (s, d) in single.data().iter().zip(double.data()) {
            assert_eq!(2.0 * s, *d);
        }
    }

    #[test]
    fn empty_tape_is_state_error() {
        let tape = Tape::new();
        assert!(matches!(tape.backward(Var(0)), Err(Error::State(_))));
    }

    #[test]
    fn cross_entropy_at_uniform_logits_is_ln_classes() {
        let mut tape = Tape::new();
        let z = tape.leaf(t(&[2, 4], &[0.0; 8]), true);
        let l = tape.softmax_cross_entropy(z, &[1, 3]).unwrap();
        assert!((tape.value(l).data()[0] - 4f32.ln()).abs() < 1e-6);
        let g = tape.backward(l).unwrap().get(z);
        assert!((g.data()[1] - (0.25 - 1.0) / 2.0).abs() < 1e-7);
        assert!((g.data()[0] - 0.25 / 2.0).abs() < 1e-7);
    }

    #[test]
    fn non_finite_output_names_layer() {
        let mut tape = Tape::new();
        tape.set_layer("dense_x");
        let x = tape.leaf(t(&[1, 1], &[f32::MAX]), true);
        let w = tape.leaf(t(&[1, 1], &[4.0]), false);
        let b = tape.leaf(t(&[1], &[0.0]), false);
        match tape.dense(x, w, b) {
            Err(Error::Numeric { context, .. }) => assert!(context.contains("dense_x")),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }
}
