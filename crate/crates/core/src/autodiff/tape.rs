//! Reverse-mode automatic differentiation on a Wengert tape.
//!
//! Every operation appends a node holding its cached forward value and the
//! ids of its inputs. `backward` walks the node list once in reverse and
//! accumulates gradients, so one tape serves exactly one training step.

use std::collections::BTreeMap;

use super::tensor::Tensor;
use super::AutodiffError;

/// Log arguments are clamped at this floor so finite inputs never produce
/// infinities during the forward pass.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf { param: Option<String> },
    Add(ValueId, ValueId),
    Sub(ValueId, ValueId),
    /// Elementwise product; one side may be a 1-element tensor, which
    /// broadcasts across the other.
    Mul(ValueId, ValueId),
    Scale(ValueId, f64),
    AddConst(ValueId),
    /// (m x n) matrix times length-n vector.
    MatVec(ValueId, ValueId),
    Dot(ValueId, ValueId),
    Relu(ValueId),
    LeakyRelu(ValueId, f64),
    Tanh(ValueId),
    Sigmoid(ValueId),
    Concat(Vec<ValueId>),
    /// k scalars stacked into a length-k vector.
    Stack(Vec<ValueId>),
    Sum(ValueId),
    Mean(ValueId),
    Softmax(ValueId),
    /// Negative log softmax probability of the target index.
    CrossEntropy(ValueId, usize),
    /// Elementwise x * ln(max(x, LOG_FLOOR)).
    XLogX(ValueId),
    /// Elementwise ln(max(x, LOG_FLOOR)).
    Log(ValueId),
    /// Single component of a vector, as a 1-element tensor.
    Index(ValueId, usize),
    /// Row r of a matrix, as a vector.
    Row(ValueId, usize),
    /// Elementwise product with a fixed mask (inverted-dropout scaling baked in).
    Dropout(ValueId, Vec<f64>),
}

struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, keyed by parameter name.
#[derive(Debug, Default)]
pub struct Gradients {
    pub by_name: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.by_name.get(name)
    }

    /// Merge another gradient map into this one, adding overlapping entries.
    pub fn accumulate(&mut self, other: Gradients) -> Result<(), AutodiffError> {
        for (name, grad) in other.by_name {
            match self.by_name.get_mut(&name) {
                None => {
                    self.by_name.insert(name, grad);
                }
                Some(acc) => {
                    if !acc.same_shape(&grad) {
                        return Err(AutodiffError::Shape {
                            op: "accumulate",
                            detail: format!(
                                "gradient for '{}' has shape {:?} vs {:?}",
                                name, acc.shape, grad.shape
                            ),
                        });
                    }
                    for (a, g) in acc.data.iter_mut().zip(&grad.data) {
                        *a += g;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, k: f64) {
        for grad in self.by_name.values_mut() {
            for g in &mut grad.data {
                *g *= k;
            }
        }
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

fn softmax_vec(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Scalar convenience accessor for 1-element values.
    pub fn scalar_value(&self, id: ValueId) -> f64 {
        self.nodes[id.0].value.data[0]
    }

    fn push(&mut self, op: Op, value: Tensor) -> ValueId {
        self.nodes.push(Node { op, value });
        ValueId(self.nodes.len() - 1)
    }

    fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> AutodiffError {
        AutodiffError::Shape { op, detail: format!("shapes {:?} and {:?}", a.shape, b.shape) }
    }

    pub fn constant(&mut self, t: Tensor) -> ValueId {
        self.push(Op::Leaf { param: None }, t)
    }

    /// Tracked leaf; its gradient is reported under `name` after `backward`.
    pub fn param(&mut self, name: &str, t: Tensor) -> ValueId {
        self.push(Op::Leaf { param: Some(name.to_string()) }, t)
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.same_shape(tb) {
            return Err(Self::shape_err("add", ta, tb));
        }
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x + y).collect();
        let shape = ta.shape.clone();
        Ok(self.push(Op::Add(a, b), Tensor { shape, data }))
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.same_shape(tb) {
            return Err(Self::shape_err("sub", ta, tb));
        }
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x - y).collect();
        let shape = ta.shape.clone();
        Ok(self.push(Op::Sub(a, b), Tensor { shape, data }))
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let value = if ta.same_shape(tb) {
            let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x * y).collect();
            Tensor { shape: ta.shape.clone(), data }
        } else if tb.is_scalar() {
            let s = tb.data[0];
            Tensor { shape: ta.shape.clone(), data: ta.data.iter().map(|x| x * s).collect() }
        } else if ta.is_scalar() {
            let s = ta.data[0];
            Tensor { shape: tb.shape.clone(), data: tb.data.iter().map(|x| x * s).collect() }
        } else {
            return Err(Self::shape_err("mul", ta, tb));
        };
        Ok(self.push(Op::Mul(a, b), value))
    }

    pub fn scale(&mut self, a: ValueId, k: f64) -> ValueId {
        let ta = self.value(a);
        let value =
            Tensor { shape: ta.shape.clone(), data: ta.data.iter().map(|x| x * k).collect() };
        self.push(Op::Scale(a, k), value)
    }

    pub fn add_const(&mut self, a: ValueId, k: f64) -> ValueId {
        let ta = self.value(a);
        let value =
            Tensor { shape: ta.shape.clone(), data: ta.data.iter().map(|x| x + k).collect() };
        self.push(Op::AddConst(a), value)
    }

    pub fn matvec(&mut self, w: ValueId, x: ValueId) -> Result<ValueId, AutodiffError> {
        let (tw, tx) = (self.value(w), self.value(x));
        if tw.shape.len() != 2 || tw.shape[1] != tx.len() {
            return Err(Self::shape_err("matvec", tw, tx));
        }
        let (m, n) = (tw.shape[0], tw.shape[1]);
        let mut out = vec![0.0; m];
        for r in 0..m {
            let row = &tw.data[r * n..(r + 1) * n];
            let mut acc = 0.0;
            for c in 0..n {
                acc += row[c] * tx.data[c];
            }
            out[r] = acc;
        }
        Ok(self.push(Op::MatVec(w, x), Tensor::vector(out)))
    }

    pub fn dot(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.len() != tb.len() {
            return Err(Self::shape_err("dot", ta, tb));
        }
        let acc: f64 = ta.data.iter().zip(&tb.data).map(|(x, y)| x * y).sum();
        Ok(self.push(Op::Dot(a, b), Tensor::scalar(acc)))
    }

    pub fn relu(&mut self, a: ValueId) -> ValueId {
        let ta = self.value(a);
        let value =
            Tensor { shape: ta.shape.clone(), data: ta.data.iter().map(|x| x.max(0.0)).collect() };
        self.push(Op::Relu(a), value)
    }

    pub fn leaky_relu(&mut self, a: ValueId, slope: f64) -> ValueId {
        let ta = self.value(a);
        let data = ta.data.iter().map(|&x| if x >= 0.0 { x } else { slope * x }).collect();
        let shape = ta.shape.clone();
        self.push(Op::LeakyRelu(a, slope), Tensor { shape, data })
    }

    pub fn tanh(&mut self, a: ValueId) -> ValueId {
        let ta = self.value(a);
        let value =
            Tensor { shape: ta.shape.clone(), data: ta.data.iter().map(|x| x.tanh()).collect() };
        self.push(Op::Tanh(a), value)
    }

    pub fn sigmoid(&mut self, a: ValueId) -> ValueId {
        let ta = self.value(a);
        let value =
            Tensor { shape: ta.shape.clone(), data: ta.data.iter().map(|&x| sigmoid(x)).collect() };
        self.push(Op::Sigmoid(a), value)
    }

    pub fn concat(&mut self, parts: &[ValueId]) -> Result<ValueId, AutodiffError> {
        if parts.is_empty() {
            return Err(AutodiffError::Shape { op: "concat", detail: "no inputs".into() });
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(&self.value(p).data);
        }
        Ok(self.push(Op::Concat(parts.to_vec()), Tensor::vector(data)))
    }

    pub fn stack(&mut self, parts: &[ValueId]) -> Result<ValueId, AutodiffError> {
        let mut data = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            if !t.is_scalar() {
                return Err(AutodiffError::Shape {
                    op: "stack",
                    detail: format!("input has shape {:?}, expected 1 element", t.shape),
                });
            }
            data.push(t.data[0]);
        }
        Ok(self.push(Op::Stack(parts.to_vec()), Tensor::vector(data)))
    }

    pub fn sum(&mut self, a: ValueId) -> ValueId {
        let s: f64 = self.value(a).data.iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    pub fn mean(&mut self, a: ValueId) -> ValueId {
        let t = self.value(a);
        let s: f64 = t.data.iter().sum();
        let n = t.len().max(1) as f64;
        self.push(Op::Mean(a), Tensor::scalar(s / n))
    }

    pub fn softmax(&mut self, a: ValueId) -> ValueId {
        let probs = softmax_vec(&self.value(a).data);
        self.push(Op::Softmax(a), Tensor::vector(probs))
    }

    pub fn cross_entropy(&mut self, logits: ValueId, target: usize) -> Result<ValueId, AutodiffError> {
        let t = self.value(logits);
        if target >= t.len() {
            return Err(AutodiffError::Shape {
                op: "cross_entropy",
                detail: format!("target {} out of range for {} logits", target, t.len()),
            });
        }
        let max = t.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse: f64 = t.data.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
        let loss = lse - t.data[target];
        Ok(self.push(Op::CrossEntropy(logits, target), Tensor::scalar(loss)))
    }

    pub fn xlogx(&mut self, a: ValueId) -> ValueId {
        let ta = self.value(a);
        let data = ta.data.iter().map(|&x| x * x.max(LOG_FLOOR).ln()).collect();
        let shape = ta.shape.clone();
        self.push(Op::XLogX(a), Tensor { shape, data })
    }

    pub fn log(&mut self, a: ValueId) -> ValueId {
        let ta = self.value(a);
        let data = ta.data.iter().map(|&x| x.max(LOG_FLOOR).ln()).collect();
        let shape = ta.shape.clone();
        self.push(Op::Log(a), Tensor { shape, data })
    }

    pub fn index(&mut self, a: ValueId, i: usize) -> Result<ValueId, AutodiffError> {
        let ta = self.value(a);
        if i >= ta.len() {
            return Err(AutodiffError::Shape {
                op: "index",
                detail: format!("index {} out of range for {} elements", i, ta.len()),
            });
        }
        let v = ta.data[i];
        Ok(self.push(Op::Index(a, i), Tensor::scalar(v)))
    }

    pub fn row(&mut self, a: ValueId, r: usize) -> Result<ValueId, AutodiffError> {
        let ta = self.value(a);
        if ta.shape.len() != 2 || r >= ta.shape[0] {
            return Err(AutodiffError::Shape {
                op: "row",
                detail: format!("row {} of shape {:?}", r, ta.shape),
            });
        }
        let n = ta.shape[1];
        let data = ta.data[r * n..(r + 1) * n].to_vec();
        Ok(self.push(Op::Row(a, r), Tensor::vector(data)))
    }

    /// Inverted dropout: each kept entry is scaled by 1/(1-p) at train time so
    /// evaluation needs no rescaling. The mask is sampled by the caller.
    pub fn dropout(&mut self, a: ValueId, mask: Vec<f64>) -> Result<ValueId, AutodiffError> {
        let ta = self.value(a);
        if mask.len() != ta.len() {
            return Err(AutodiffError::Shape {
                op: "dropout",
                detail: format!("mask len {} vs value len {}", mask.len(), ta.len()),
            });
        }
        let data = ta.data.iter().zip(&mask).map(|(x, m)| x * m).collect();
        let shape = ta.shape.clone();
        Ok(self.push(Op::Dropout(a, mask), Tensor { shape, data }))
    }

    /// Reverse pass from a scalar loss. Returns gradients for every tracked
    /// parameter leaf; leaves the tape intact so cached values stay readable.
    pub fn backward(&self, loss: ValueId) -> Result<Gradients, AutodiffError> {
        let loss_val = self.value(loss);
        if !loss_val.is_scalar() {
            return Err(AutodiffError::NonScalarLoss { shape: loss_val.shape.clone() });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..self.nodes.len()).rev() {
            let gy = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf { .. } => {
                    grads[idx] = Some(gy);
                }
                Op::Add(a, b) => {
                    self.accum(&mut grads, *a, &gy.data);
                    self.accum(&mut grads, *b, &gy.data);
                }
                Op::Sub(a, b) => {
                    self.accum(&mut grads, *a, &gy.data);
                    let neg: Vec<f64> = gy.data.iter().map(|g| -g).collect();
                    self.accum(&mut grads, *b, &neg);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    if ta.same_shape(tb) {
                        let ga: Vec<f64> =
                            gy.data.iter().zip(&tb.data).map(|(g, y)| g * y).collect();
                        let gb: Vec<f64> =
                            gy.data.iter().zip(&ta.data).map(|(g, x)| g * x).collect();
                        self.accum(&mut grads, *a, &ga);
                        self.accum(&mut grads, *b, &gb);
                    } else if tb.is_scalar() {
                        let s = tb.data[0];
                        let ga: Vec<f64> = gy.data.iter().map(|g| g * s).collect();
                        let gb: f64 = gy.data.iter().zip(&ta.data).map(|(g, x)| g * x).sum();
                        self.accum(&mut grads, *a, &ga);
                        self.accum(&mut grads, *b, &[gb]);
                    } else {
                        let s = ta.data[0];
                        let gb: Vec<f64> = gy.data.iter().map(|g| g * s).collect();
                        let ga: f64 = gy.data.iter().zip(&tb.data).map(|(g, x)| g * x).sum();
                        self.accum(&mut grads, *a, &[ga]);
                        self.accum(&mut grads, *b, &gb);
                    }
                }
                Op::Scale(a, k) => {
                    let ga: Vec<f64> = gy.data.iter().map(|g| g * k).collect();
                    self.accum(&mut grads, *a, &ga);
                }
                Op::AddConst(a) => {
                    self.accum(&mut grads, *a, &gy.data);
                }
                Op::MatVec(w, x) => {
                    let (tw, tx) = (self.value(*w), self.value(*x));
                    let (m, n) = (tw.shape[0], tw.shape[1]);
                    let mut gw = vec![0.0; m * n];
                    let mut gx = vec![0.0; n];
                    for r in 0..m {
                        let g = gy.data[r];
                        if g == 0.0 {
                            continue;
                        }
                        let row = &tw.data[r * n..(r + 1) * n];
                        let grow = &mut gw[r * n..(r + 1) * n];
                        for c in 0..n {
                            grow[c] += g * tx.data[c];
                            gx[c] += g * row[c];
                        }
                    }
                    self.accum(&mut grads, *w, &gw);
                    self.accum(&mut grads, *x, &gx);
                }
                Op::Dot(a, b) => {
                    let g = gy.data[0];
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let ga: Vec<f64> = tb.data.iter().map(|y| g * y).collect();
                    let gb: Vec<f64> = ta.data.iter().map(|x| g * x).collect();
                    self.accum(&mut grads, *a, &ga);
                    self.accum(&mut grads, *b, &gb);
                }
                Op::Relu(a) => {
                    let ta = self.value(*a);
                    let ga: Vec<f64> = gy
                        .data
                        .iter()
                        .zip(&ta.data)
                        .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                        .collect();
                    self.accum(&mut grads, *a, &ga);
                }
                Op::LeakyRelu(a, slope) => {
                    let ta = self.value(*a);
                    let ga: Vec<f64> = gy
                        .data
                        .iter()
                        .zip(&ta.data)
                        .map(|(g, &x)| if x >= 0.0 { *g } else { g * slope })
                        .collect();
                    self.accum(&mut grads, *a, &ga);
                }
                Op::Tanh(a) => {
                    let ga: Vec<f64> = gy
                        .data
                        .iter()
                        .zip(&node.value.data)
                        .map(|(g, y)| g * (1.0 - y * y))
                        .collect();
                    self.accum(&mut grads, *a, &ga);
                }
                Op::Sigmoid(a) => {
                    let ga: Vec<f64> = gy
                        .data
                        .iter()
                        .zip(&node.value.data)
                        .map(|(g, y)| g * y * (1.0 - y))
                        .collect();
                    self.accum(&mut grads, *a, &ga);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        self.accum(&mut grads, p, &gy.data[offset..offset + n]);
                        offset += n;
                    }
                }
                Op::Stack(parts) => {
                    for (i, &p) in parts.iter().enumerate() {
                        self.accum(&mut grads, p, &[gy.data[i]]);
                    }
                }
                Op::Sum(a) => {
                    let g = gy.data[0];
                    let n = self.value(*a).len();
                    self.accum(&mut grads, *a, &vec![g; n]);
                }
                Op::Mean(a) => {
                    let n = self.value(*a).len().max(1);
                    let g = gy.data[0] / n as f64;
                    self.accum(&mut grads, *a, &vec![g; n]);
                }
                Op::Softmax(a) => {
                    let y = &node.value.data;
                    let dot: f64 = gy.data.iter().zip(y.iter()).map(|(g, p)| g * p).sum();
                    let ga: Vec<f64> =
                        gy.data.iter().zip(y.iter()).map(|(g, p)| p * (g - dot)).collect();
                    self.accum(&mut grads, *a, &ga);
                }
                Op::CrossEntropy(logits, target) => {
                    let g = gy.data[0];
                    let probs = softmax_vec(&self.value(*logits).data);
                    let ga: Vec<f64> = probs
                        .iter()
                        .enumerate()
                        .map(|(i, p)| g * (p - if i == *target { 1.0 } else { 0.0 }))
                        .collect();
                    self.accum(&mut grads, *logits, &ga);
                }
                Op::XLogX(a) => {
                    let ta = self.value(*a);
                    let ga: Vec<f64> = gy
                        .data
                        .iter()
                        .zip(&ta.data)
                        .map(|(g, &x)| {
                            if x >= LOG_FLOOR {
                                g * (x.ln() + 1.0)
                            } else {
                                g * LOG_FLOOR.ln()
                            }
                        })
                        .collect();
                    self.accum(&mut grads, *a, &ga);
                }
                Op::Log(a) => {
                    let ta = self.value(*a);
                    let ga: Vec<f64> = gy
                        .data
                        .iter()
                        .zip(&ta.data)
                        .map(|(g, &x)| if x >= LOG_FLOOR { g / x } else { 0.0 })
                        .collect();
                    self.accum(&mut grads, *a, &ga);
                }
                Op::Index(a, i) => {
                    let n = self.value(*a).len();
                    let mut ga = vec![0.0; n];
                    ga[*i] = gy.data[0];
                    self.accum(&mut grads, *a, &ga);
                }
                Op::Row(a, r) => {
                    let ta = self.value(*a);
                    let n = ta.shape[1];
                    let mut ga = vec![0.0; ta.len()];
                    ga[r * n..(r + 1) * n].copy_from_slice(&gy.data);
                    self.accum(&mut grads, *a, &ga);
                }
                Op::Dropout(a, mask) => {
                    let ga: Vec<f64> = gy.data.iter().zip(mask).map(|(g, m)| g * m).collect();
                    self.accum(&mut grads, *a, &ga);
                }
            }
        }

        let mut out = Gradients::default();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { param: Some(name) } = &node.op {
                if let Some(g) = grads[idx].take() {
                    match out.by_name.get_mut(name) {
                        None => {
                            out.by_name.insert(name.clone(), g);
                        }
                        Some(acc) => {
                            for (a, v) in acc.data.iter_mut().zip(&g.data) {
                                *a += v;
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    fn accum(&self, grads: &mut [Option<Tensor>], id: ValueId, delta: &[f64]) {
        let slot = &mut grads[id.0];
        match slot {
            None => {
                let shape = self.nodes[id.0].value.shape.clone();
                let mut t = Tensor { shape, data: delta.to_vec() };
                debug_assert_eq!(t.len(), delta.len());
                t.data.copy_from_slice(delta);
                *slot = Some(t);
            }
            Some(t) => {
                for (a, d) in t.data.iter_mut().zip(delta) {
                    *a += d;
                }
            }
        }
    }
}
