//! Reverse-mode automatic differentiation over a replayable operation
//! record.
//!
//! A forward pass appends one node per primitive to the tape; `backward`
//! walks the record in reverse and accumulates vector-Jacobian products.
//! Every primitive's backward rule is covered by [`grad_check`] against
//! central finite differences.

use crate::tensor::{self, Tensor, TensorError};

/// Handle to a value on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf { trainable: bool },
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    Sigmoid(usize),
    Swish(usize),
    Tanh(usize),
    Softplus(usize),
    SqrtClamped(usize),
    MeanAxis(usize, usize),
    Transpose(usize),
    Reshape(usize),
    SoftmaxRows(usize),
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        eps: f64,
    },
    SliceCols {
        x: usize,
        start: usize,
        end: usize,
    },
    SliceRows {
        x: usize,
        start: usize,
    },
    ConcatCols(usize, usize),
    FlattenFrames(usize),
    MulLayerwise {
        x: usize,
        w: usize,
    },
    WeightedSumLayers {
        x: usize,
        w: usize,
    },
    StackLayers(Vec<usize>),
    LayerSlice {
        x: usize,
        layer: usize,
    },
    LogSumExp(usize),
    Pick {
        x: usize,
        index: usize,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients returned by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for `v`, or zeros of the given shape when `v` did not
    /// influence the loss.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        match self.grads[v.0].as_ref() {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape),
        }
    }
}

/// Ordered record of the primitive operations of one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grad_fault: Option<f64>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Negative-control hook: perturbs the first trainable leaf gradient
    /// produced by `backward` by `epsilon`. Exists so gradient-checking
    /// harnesses can prove they detect a broken backward pass.
    pub fn inject_gradient_fault(&mut self, epsilon: f64) {
        self.grad_fault = Some(epsilon);
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn flag(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf; `backward` reports its gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf { trainable: true }, true)
    }

    /// Non-trainable leaf (inputs, constants): receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf { trainable: false }, false)
    }

    // ── Differentiable primitives ────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let v = tensor::matmul(self.value(a), self.value(b))?;
        let f = self.flag(a) || self.flag(b);
        Ok(self.push(v, Op::MatMul(a.0, b.0), f))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let v = tensor::add(self.value(a), self.value(b))?;
        let f = self.flag(a) || self.flag(b);
        Ok(self.push(v, Op::Add(a.0, b.0), f))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let v = tensor::sub(self.value(a), self.value(b))?;
        let f = self.flag(a) || self.flag(b);
        Ok(self.push(v, Op::Sub(a.0, b.0), f))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let v = tensor::mul(self.value(a), self.value(b))?;
        let f = self.flag(a) || self.flag(b);
        Ok(self.push(v, Op::Mul(a.0, b.0), f))
    }

    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let v = tensor::add_row(self.value(a), self.value(b))?;
        let f = self.flag(a) || self.flag(b);
        Ok(self.push(v, Op::AddRow(a.0, b.0), f))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = tensor::scale(self.value(a), c);
        let f = self.flag(a);
        self.push(v, Op::Scale(a.0, c), f)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = tensor::sigmoid(self.value(a));
        let f = self.flag(a);
        self.push(v, Op::Sigmoid(a.0), f)
    }

    pub fn swish(&mut self, a: Var) -> Var {
        let v = tensor::swish(self.value(a));
        let f = self.flag(a);
        self.push(v, Op::Swish(a.0), f)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = tensor::tanh(self.value(a));
        let f = self.flag(a);
        self.push(v, Op::Tanh(a.0), f)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = tensor::softplus(self.value(a));
        let f = self.flag(a);
        self.push(v, Op::Softplus(a.0), f)
    }

    pub fn sqrt_clamped(&mut self, a: Var) -> Var {
        let v = tensor::sqrt_clamped(self.value(a));
        let f = self.flag(a);
        self.push(v, Op::SqrtClamped(a.0), f)
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var, TensorError> {
        let v = tensor::mean_axis(self.value(a), axis)?;
        let f = self.flag(a);
        Ok(self.push(v, Op::MeanAxis(a.0, axis), f))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let v = tensor::transpose(self.value(a))?;
        let f = self.flag(a);
        Ok(self.push(v, Op::Transpose(a.0), f))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var, TensorError> {
        let v = self.value(a).reshape(shape)?;
        let f = self.flag(a);
        Ok(self.push(v, Op::Reshape(a.0), f))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let v = tensor::softmax_rows(self.value(a))?;
        let f = self.flag(a);
        Ok(self.push(v, Op::SoftmaxRows(a.0), f))
    }

    pub fn layer_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<Var, TensorError> {
        let v = tensor::layer_norm_rows(self.value(x), self.value(gamma), self.value(beta), eps)?;
        let f = self.flag(x) || self.flag(gamma) || self.flag(beta);
        Ok(self.push(
            v,
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                eps,
            },
            f,
        ))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        let v = tensor::slice_cols(self.value(a), start, end)?;
        let f = self.flag(a);
        Ok(self.push(v, Op::SliceCols { x: a.0, start, end }, f))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        let v = tensor::slice_rows(self.value(a), start, end)?;
        let f = self.flag(a);
        Ok(self.push(v, Op::SliceRows { x: a.0, start }, f))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let v = tensor::concat_cols(self.value(a), self.value(b))?;
        let f = self.flag(a) || self.flag(b);
        Ok(self.push(v, Op::ConcatCols(a.0, b.0), f))
    }

    pub fn flatten_frames(&mut self, a: Var) -> Result<Var, TensorError> {
        let v = tensor::flatten_frames(self.value(a))?;
        let f = self.flag(a);
        Ok(self.push(v, Op::FlattenFrames(a.0), f))
    }

    pub fn mul_layerwise(&mut self, x: Var, w: Var) -> Result<Var, TensorError> {
        let v = tensor::mul_layerwise(self.value(x), self.value(w))?;
        let f = self.flag(x) || self.flag(w);
        Ok(self.push(v, Op::MulLayerwise { x: x.0, w: w.0 }, f))
    }

    pub fn weighted_sum_layers(&mut self, x: Var, w: Var) -> Result<Var, TensorError> {
        let v = tensor::weighted_sum_layers(self.value(x), self.value(w))?;
        let f = self.flag(x) || self.flag(w);
        Ok(self.push(v, Op::WeightedSumLayers { x: x.0, w: w.0 }, f))
    }

    pub fn stack_layers(&mut self, layers: &[Var]) -> Result<Var, TensorError> {
        let tensors: Vec<&Tensor> = layers.iter().map(|v| &self.nodes[v.0].value).collect();
        let v = tensor::stack_layers(&tensors)?;
        let f = layers.iter().any(|&l| self.flag(l));
        Ok(self.push(v, Op::StackLayers(layers.iter().map(|v| v.0).collect()), f))
    }

    pub fn layer_slice(&mut self, x: Var, layer: usize) -> Result<Var, TensorError> {
        let v = tensor::layer_slice(self.value(x), layer)?;
        let f = self.flag(x);
        Ok(self.push(v, Op::LayerSlice { x: x.0, layer }, f))
    }

    pub fn logsumexp(&mut self, a: Var) -> Result<Var, TensorError> {
        let v = tensor::logsumexp(self.value(a))?;
        let f = self.flag(a);
        Ok(self.push(v, Op::LogSumExp(a.0), f))
    }

    pub fn pick(&mut self, a: Var, index: usize) -> Result<Var, TensorError> {
        let v = tensor::pick(self.value(a), index)?;
        let f = self.flag(a);
        Ok(self.push(v, Op::Pick { x: a.0, index }, f))
    }

    // ── Backward pass ────────────────────────────────────────────────

    /// Gradients of a finite scalar `loss` with respect to every node that
    /// influences it. Nodes downstream of non-trainable leaves only are
    /// skipped.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(TensorError::NotScalar {
                shape: lv.shape().to_vec(),
            });
        }
        let lval = lv.data()[0];
        if !lval.is_finite() {
            return Err(TensorError::NonFiniteLoss { value: lval });
        }

        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::new(lv.shape().to_vec(), vec![1.0]).expect("seed"));

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads)?;
            grads[id] = Some(g);
        }

        if let Some(eps) = self.grad_fault {
            for (id, node) in self.nodes.iter().enumerate() {
                if matches!(node.op, Op::Leaf { trainable: true }) {
                    if let Some(g) = grads[id].as_mut() {
                        g.data_mut()[0] += eps;
                        break;
                    }
                }
            }
        }

        Ok(Gradients { grads })
    }

    fn accumulate(
        &self,
        grads: &mut [Option<Tensor>],
        target: usize,
        delta: Tensor,
    ) -> Result<(), TensorError> {
        if !self.nodes[target].needs_grad {
            return Ok(());
        }
        match grads[target].take() {
            Some(existing) => grads[target] = Some(tensor::add(&existing, &delta)?),
            None => grads[target] = Some(delta),
        }
        Ok(())
    }

    fn propagate(
        &self,
        id: usize,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<(), TensorError> {
        match &self.nodes[id].op {
            Op::Leaf { .. } => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let da = tensor::matmul(g, &tensor::transpose(bv)?)?;
                let db = tensor::matmul(&tensor::transpose(av)?, g)?;
                self.accumulate(grads, *a, da)?;
                self.accumulate(grads, *b, db)?;
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, tensor::scale(g, -1.0))?;
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                self.accumulate(grads, *a, tensor::mul(g, bv)?)?;
                self.accumulate(grads, *b, tensor::mul(g, av)?)?;
            }
            Op::AddRow(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                // column sums of g
                let (m, n) = (g.shape()[0], g.shape()[1]);
                let mut db = vec![0.0; n];
                for i in 0..m {
                    for j in 0..n {
                        db[j] += g.data()[i * n + j];
                    }
                }
                self.accumulate(grads, *b, Tensor::new(vec![n], db)?)?;
            }
            Op::Scale(a, c) => {
                self.accumulate(grads, *a, tensor::scale(g, *c))?;
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[id].value;
                let d: Vec<f64> = y
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&s, &gi)| gi * s * (1.0 - s))
                    .collect();
                self.accumulate(grads, *a, Tensor::new(y.shape().to_vec(), d)?)?;
            }
            Op::Swish(a) => {
                let x = &self.nodes[*a].value;
                let d: Vec<f64> = x
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&xi, &gi)| {
                        let s = tensor::sigmoid_scalar(xi);
                        gi * s * (1.0 + xi * (1.0 - s))
                    })
                    .collect();
                self.accumulate(grads, *a, Tensor::new(x.shape().to_vec(), d)?)?;
            }
            Op::Tanh(a) => {
                let y = &self.nodes[id].value;
                let d: Vec<f64> = y
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&t, &gi)| gi * (1.0 - t * t))
                    .collect();
                self.accumulate(grads, *a, Tensor::new(y.shape().to_vec(), d)?)?;
            }
            Op::Softplus(a) => {
                let x = &self.nodes[*a].value;
                let d: Vec<f64> = x
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&xi, &gi)| gi * tensor::sigmoid_scalar(xi))
                    .collect();
                self.accumulate(grads, *a, Tensor::new(x.shape().to_vec(), d)?)?;
            }
            Op::SqrtClamped(a) => {
                // zero subgradient at and below the clamp point
                let x = &self.nodes[*a].value;
                let d: Vec<f64> = x
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&xi, &gi)| {
                        if xi > 1e-12 {
                            gi * 0.5 / xi.sqrt()
                        } else {
                            0.0
                        }
                    })
                    .collect();
                self.accumulate(grads, *a, Tensor::new(x.shape().to_vec(), d)?)?;
            }
            Op::MeanAxis(a, axis) => {
                let x = &self.nodes[*a].value;
                let n_axis = x.shape()[*axis];
                let inner: usize = x.shape()[*axis + 1..].iter().product();
                let outer: usize = x.shape()[..*axis].iter().product();
                let inv = 1.0 / n_axis as f64;
                let mut dx = vec![0.0; x.len()];
                for o in 0..outer {
                    for k in 0..n_axis {
                        let base = (o * n_axis + k) * inner;
                        for i in 0..inner {
                            dx[base + i] = g.data()[o * inner + i] * inv;
                        }
                    }
                }
                self.accumulate(grads, *a, Tensor::new(x.shape().to_vec(), dx)?)?;
            }
            Op::Transpose(a) => {
                self.accumulate(grads, *a, tensor::transpose(g)?)?;
            }
            Op::Reshape(a) => {
                let orig = self.nodes[*a].value.shape().to_vec();
                self.accumulate(grads, *a, g.reshape(orig)?)?;
            }
            Op::SoftmaxRows(a) => {
                // per row: dx = y ∘ (g − <g, y>)
                let y = &self.nodes[id].value;
                let (m, n) = (y.shape()[0], y.shape()[1]);
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    let yr = &y.data()[i * n..(i + 1) * n];
                    let gr = &g.data()[i * n..(i + 1) * n];
                    let dot: f64 = yr.iter().zip(gr).map(|(&yi, &gi)| yi * gi).sum();
                    for j in 0..n {
                        dx[i * n + j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.accumulate(grads, *a, Tensor::new(vec![m, n], dx)?)?;
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                let xv = &self.nodes[*x].value;
                let gv = &self.nodes[*gamma].value;
                let (m, n) = (xv.shape()[0], xv.shape()[1]);
                let nf = n as f64;
                let mut dx = vec![0.0; m * n];
                let mut dgamma = vec![0.0; n];
                let mut dbeta = vec![0.0; n];
                for i in 0..m {
                    let row = &xv.data()[i * n..(i + 1) * n];
                    let gr = &g.data()[i * n..(i + 1) * n];
                    let mean = row.iter().sum::<f64>() / nf;
                    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / nf;
                    let inv = 1.0 / (var + eps).sqrt();
                    let xhat: Vec<f64> = row.iter().map(|&v| (v - mean) * inv).collect();
                    // gx = g ∘ gamma
                    let gx: Vec<f64> = gr
                        .iter()
                        .zip(gv.data())
                        .map(|(&gi, &ga)| gi * ga)
                        .collect();
                    let mean_gx = gx.iter().sum::<f64>() / nf;
                    let mean_gx_xhat = gx
                        .iter()
                        .zip(&xhat)
                        .map(|(&a, &b)| a * b)
                        .sum::<f64>()
                        / nf;
                    for j in 0..n {
                        dx[i * n + j] = inv * (gx[j] - mean_gx - xhat[j] * mean_gx_xhat);
                        dgamma[j] += gr[j] * xhat[j];
                        dbeta[j] += gr[j];
                    }
                }
                self.accumulate(grads, *x, Tensor::new(vec![m, n], dx)?)?;
                self.accumulate(grads, *gamma, Tensor::new(vec![n], dgamma)?)?;
                self.accumulate(grads, *beta, Tensor::new(vec![n], dbeta)?)?;
            }
            Op::SliceCols { x, start, end } => {
                let xv = &self.nodes[*x].value;
                let (m, n) = (xv.shape()[0], xv.shape()[1]);
                let w = end - start;
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..w {
                        dx[i * n + start + j] = g.data()[i * w + j];
                    }
                }
                self.accumulate(grads, *x, Tensor::new(vec![m, n], dx)?)?;
            }
            Op::SliceRows { x, start } => {
                let xv = &self.nodes[*x].value;
                let (m, n) = (xv.shape()[0], xv.shape()[1]);
                let mut dx = vec![0.0; m * n];
                dx[start * n..start * n + g.len()].copy_from_slice(g.data());
                self.accumulate(grads, *x, Tensor::new(vec![m, n], dx)?)?;
            }
            Op::ConcatCols(a, b) => {
                let n1 = self.nodes[*a].value.shape()[1];
                let n = g.shape()[1];
                self.accumulate(grads, *a, tensor::slice_cols(g, 0, n1)?)?;
                self.accumulate(grads, *b, tensor::slice_cols(g, n1, n)?)?;
            }
            Op::FlattenFrames(a) => {
                let xv = &self.nodes[*a].value;
                let (t, h, l) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                let w = h * l;
                let mut dx = vec![0.0; t * h * l];
                for ti in 0..t {
                    for hi in 0..h {
                        for li in 0..l {
                            dx[(ti * h + hi) * l + li] = g.data()[ti * w + hi + h * li];
                        }
                    }
                }
                self.accumulate(grads, *a, Tensor::new(vec![t, h, l], dx)?)?;
            }
            Op::MulLayerwise { x, w } => {
                let xv = &self.nodes[*x].value;
                let wv = &self.nodes[*w].value;
                let (t, h, l) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                let mut dx = vec![0.0; t * h * l];
                let mut dw = vec![0.0; l];
                for i in 0..t * h {
                    for j in 0..l {
                        let gi = g.data()[i * l + j];
                        dx[i * l + j] = gi * wv.data()[j];
                        dw[j] += gi * xv.data()[i * l + j];
                    }
                }
                self.accumulate(grads, *x, Tensor::new(vec![t, h, l], dx)?)?;
                self.accumulate(grads, *w, Tensor::new(vec![l], dw)?)?;
            }
            Op::WeightedSumLayers { x, w } => {
                let xv = &self.nodes[*x].value;
                let wv = &self.nodes[*w].value;
                let (t, h, l) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                let mut dx = vec![0.0; t * h * l];
                let mut dw = vec![0.0; l];
                for i in 0..t * h {
                    let gi = g.data()[i];
                    for j in 0..l {
                        dx[i * l + j] = gi * wv.data()[j];
                        dw[j] += gi * xv.data()[i * l + j];
                    }
                }
                self.accumulate(grads, *x, Tensor::new(vec![t, h, l], dx)?)?;
                self.accumulate(grads, *w, Tensor::new(vec![l], dw)?)?;
            }
            Op::StackLayers(inputs) => {
                let l = inputs.len();
                for (li, &inp) in inputs.iter().enumerate() {
                    if !self.nodes[inp].needs_grad {
                        continue;
                    }
                    let shape = self.nodes[inp].value.shape().to_vec();
                    let th = shape[0] * shape[1];
                    let mut d = vec![0.0; th];
                    for i in 0..th {
                        d[i] = g.data()[i * l + li];
                    }
                    self.accumulate(grads, inp, Tensor::new(shape, d)?)?;
                }
            }
            Op::LayerSlice { x, layer } => {
                let xv = &self.nodes[*x].value;
                let (t, h, l) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                let mut dx = vec![0.0; t * h * l];
                for i in 0..t * h {
                    dx[i * l + layer] = g.data()[i];
                }
                self.accumulate(grads, *x, Tensor::new(vec![t, h, l], dx)?)?;
            }
            Op::LogSumExp(a) => {
                let x = &self.nodes[*a].value;
                let gs = g.data()[0];
                let mx = x.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = x.data().iter().map(|&v| (v - mx).exp()).collect();
                let sum: f64 = exps.iter().sum();
                let d: Vec<f64> = exps.iter().map(|&e| gs * e / sum).collect();
                self.accumulate(grads, *a, Tensor::new(x.shape().to_vec(), d)?)?;
            }
            Op::Pick { x, index } => {
                let xv = &self.nodes[*x].value;
                let mut dx = vec![0.0; xv.len()];
                dx[*index] = g.data()[0];
                self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), dx)?)?;
            }
        }
        Ok(())
    }
}

// ── Gradient checking ────────────────────────────────────────────────

/// Maximum relative disagreement between tape gradients and central finite
/// differences for a scalar-valued builder over `params`.
///
/// Relative error per entry is |analytic − numeric| / max(1, |analytic|,
/// |numeric|).
pub fn grad_check<F>(build: &F, params: &[Tensor], h: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    grad_check_with_fault(build, params, h, None)
}

/// [`grad_check`] with an optional injected backward fault (negative
/// control for harness tests).
pub fn grad_check_with_fault<F>(
    build: &F,
    params: &[Tensor],
    h: f64,
    fault: Option<f64>,
) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    if let Some(eps) = fault {
        tape.inject_gradient_fault(eps);
    }
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| grads.get_or_zeros(v, p.shape()))
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64, TensorError> {
        let mut t = Tape::new();
        let vs: Vec<Var> = perturbed.iter().map(|p| t.param(p.clone())).collect();
        let loss = build(&mut t, &vs)?;
        let v = t
            .value(loss)
            .as_scalar()
            .ok_or_else(|| TensorError::NotScalar {
                shape: t.value(loss).shape().to_vec(),
            })?;
        if !v.is_finite() {
            return Err(TensorError::NonFiniteLoss { value: v });
        }
        Ok(v)
    };

    let mut worst: f64 = 0.0;
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        for ei in 0..p.len() {
            let orig = p.data()[ei];
            work[pi].data_mut()[ei] = orig + h;
            let plus = eval(&work)?;
            work[pi].data_mut()[ei] = orig - h;
            let minus = eval(&work)?;
            work[pi].data_mut()[ei] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[pi].data()[ei];
            let rel = (a - numeric).abs() / 1.0f64.max(a.abs()).max(numeric.abs());
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}
