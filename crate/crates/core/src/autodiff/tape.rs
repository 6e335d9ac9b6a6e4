use std::borrow::Cow;

use crate::{Error, Real, Result};

use super::kernels::{self, Conv3dGeometry};
use super::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for an operation whose forward pass ran outside the tape.
pub trait CustomOp<T: Real>: Send + Sync {
    fn name(&self) -> &str;

    /// One gradient per input (same length as that input), `None` for inputs
    /// that receive no gradient.
    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad_out: &[T]) -> Result<Vec<Option<Vec<T>>>>;
}

enum Op<'p, T: Real> {
    Leaf,
    Conv3d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: Conv3dGeometry,
    },
    InstanceNorm {
        input: Var,
        inv_std: Vec<T>,
    },
    Relu(Var),
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    L2Normalize {
        input: Var,
        norm: T,
    },
    SoftmaxNegDistance {
        query: Var,
        keys: Var,
        dists: Vec<T>,
    },
    GatherRows {
        input: Var,
        indices: Vec<usize>,
    },
    Stack(Vec<Var>),
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Sum(Var),
    Abs(Var),
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp<T> + 'p>,
    },
}

struct Node<'p, T: Real> {
    value: Cow<'p, Tensor<T>>,
    op: Op<'p, T>,
    requires_grad: bool,
}

/// Ordered record of executed operations.
///
/// Parameters can be borrowed (`'p`) so several tapes share one parameter set
/// read-only; a tape itself is single-threaded.
pub struct Tape<'p, T: Real> {
    nodes: Vec<Node<'p, T>>,
}

/// Gradients of the leaves of a tape.
#[derive(Debug, Clone)]
pub struct Gradients<T: Real> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a leaf; `None` when the leaf does not require gradients or
    /// the output does not depend on it. Dependent leaves always get a tensor,
    /// possibly all zeros.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn same_shape<T: Real>(what: &str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{what}: operands have shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn accumulate<T: Real>(slot: &mut Option<Vec<T>>, g: Vec<T>) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

impl<'p, T: Real> Default for Tape<'p, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, T: Real> Tape<'p, T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'p, Tensor<T>>, op: Op<'p, T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor<T>, op: Op<'p, T>, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(Cow::Owned(value), op, rg)
    }

    /// Owned leaf.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, requires_grad)
    }

    /// Constant leaf (no gradient).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Borrowed leaf that receives gradients.
    pub fn param(&mut self, value: &'p Tensor<T>) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn conv3d(&mut self, input: Var, kernel: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(kernel);
        let geom = Conv3dGeometry::from_shapes(x.shape(), w.shape(), stride, padding)?;
        let b = match bias {
            Some(b) => {
                let b = self.value(b);
                if b.shape() != [geom.out_channels] {
                    return Err(Error::Shape(format!(
                        "conv3d bias has shape {:?}, expected [{}]",
                        b.shape(),
                        geom.out_channels
                    )));
                }
                Some(b.data())
            }
            None => None,
        };
        let out = kernels::conv3d_forward(&geom, x.data(), w.data(), b);
        let value = Tensor::from_parts(geom.out_shape(), out);
        let mut ins = vec![input, kernel];
        ins.extend(bias);
        Ok(self.derived(
            value,
            Op::Conv3d {
                input,
                kernel,
                bias,
                geom,
            },
            &ins,
        ))
    }

    /// Per-channel standardization over all trailing dimensions (first dim is channels).
    pub fn instance_norm(&mut self, input: Var, eps: T) -> Result<Var> {
        let x = self.value(input);
        if x.shape().len() < 2 || x.is_empty() {
            return Err(Error::Shape(format!(
                "instance_norm expects [C, ...] with non-empty volume, got {:?}",
                x.shape()
            )));
        }
        let (out, inv_std) = kernels::instance_norm_forward(x.data(), x.shape()[0], eps);
        let value = Tensor::from_parts(x.shape().to_vec(), out);
        Ok(self.derived(value, Op::InstanceNorm { input, inv_std }, &[input]))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
        let value = Tensor::from_parts(x.shape().to_vec(), data);
        self.derived(value, Op::Relu(input), &[input])
    }

    /// `weight [out, in] * input + bias`, with `input` of any shape holding `in` values.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(weight);
        if w.shape().len() != 2 || w.shape()[1] != x.len() {
            return Err(Error::Shape(format!(
                "linear weight {:?} does not accept an input of {} values",
                w.shape(),
                x.len()
            )));
        }
        let (o, i) = (w.shape()[0], w.shape()[1]);
        let mut out = match bias {
            Some(b) => {
                let b = self.value(b);
                if b.shape() != [o] {
                    return Err(Error::Shape(format!("linear bias {:?}, expected [{o}]", b.shape())));
                }
                b.data().to_vec()
            }
            None => vec![T::zero(); o],
        };
        let beta = T::one();
        T::gemm(o, i, 1, T::one(), w.data(), i as isize, 1, x.data(), 1, 1, beta, &mut out, 1, 1);
        let mut ins = vec![input, weight];
        ins.extend(bias);
        Ok(self.derived(Tensor::vector(out), Op::Linear { input, weight, bias }, &ins))
    }

    pub fn l2_normalize(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let norm = x.data().iter().map(|&v| v * v).sum::<T>().sqrt();
        if !(norm.to_f64_lossy() > 1e-12) {
            return Err(Error::InvalidInput(format!("cannot normalize a vector of norm {norm}")));
        }
        let data = x.data().iter().map(|&v| v / norm).collect();
        let value = Tensor::from_parts(x.shape().to_vec(), data);
        Ok(self.derived(value, Op::L2Normalize { input, norm }, &[input]))
    }

    /// Softmax over keys of the negative Euclidean distance to `query`.
    pub fn softmax_neg_distance(&mut self, query: Var, keys: Var) -> Result<Var> {
        let q = self.value(query);
        let k = self.value(keys);
        let n = q.len();
        if k.shape().len() != 2 || k.shape()[1] != n || k.shape()[0] == 0 {
            return Err(Error::Shape(format!(
                "softmax_neg_distance: keys {:?} incompatible with query of {n} values",
                k.shape()
            )));
        }
        let dists: Vec<T> = k
            .data()
            .chunks(n)
            .map(|row| row.iter().zip(q.data()).map(|(&a, &b)| (b - a) * (b - a)).sum::<T>().sqrt())
            .collect();
        let out = softmax_neg(&dists);
        Ok(self.derived(Tensor::vector(out), Op::SoftmaxNegDistance { query, keys, dists }, &[query, keys]))
    }

    /// Rows `indices` of a `[m, ...]` tensor (a vector counts as `[m]`).
    pub fn gather_rows(&mut self, input: Var, indices: &[usize]) -> Result<Var> {
        let x = self.value(input);
        let m = *x.shape().first().ok_or_else(|| Error::Shape("gather on a 0-d tensor".into()))?;
        let row = if m == 0 { 0 } else { x.len() / m };
        let mut data = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            if i >= m {
                return Err(Error::OutOfRange {
                    what: "gather index",
                    value: i,
                    min: 0,
                    max: m.saturating_sub(1),
                });
            }
            data.extend_from_slice(&x.data()[i * row..(i + 1) * row]);
        }
        let mut shape = x.shape().to_vec();
        shape[0] = indices.len();
        let value = Tensor::from_parts(shape, data);
        Ok(self.derived(
            value,
            Op::GatherRows {
                input,
                indices: indices.to_vec(),
            },
            &[input],
        ))
    }

    /// Stacks equally shaped tensors along a new leading dimension.
    pub fn stack(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = inputs.first().ok_or_else(|| Error::Shape("stack of nothing".into()))?;
        let shape0 = self.value(*first).shape().to_vec();
        let mut data = Vec::with_capacity(inputs.len() * self.value(*first).len());
        for &v in inputs {
            let t = self.value(v);
            if t.shape() != shape0.as_slice() {
                return Err(Error::Shape(format!("stack: {:?} vs {:?}", t.shape(), shape0)));
            }
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![inputs.len()];
        shape.extend(shape0);
        Ok(self.derived(Tensor::from_parts(shape, data), Op::Stack(inputs.to_vec()), inputs))
    }

    pub fn reshape(&mut self, input: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(input).reshaped(shape)?;
        Ok(self.derived(value, Op::Reshape(input), &[input]))
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(T, T) -> T, op: Op<'p, T>) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape(what, x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let value = Tensor::from_parts(x.shape().to_vec(), data);
        Ok(self.derived(value, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |p, q| p - q, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |p, q| p * q, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let x = self.value(a);
        let value = Tensor::from_parts(x.shape().to_vec(), x.data().iter().map(|&v| v * c).collect());
        self.derived(value, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        let x = self.value(a);
        let value = Tensor::from_parts(x.shape().to_vec(), x.data().iter().map(|&v| v + c).collect());
        self.derived(value, Op::AddScalar(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        self.derived(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// Elementwise absolute value; subgradient 0 at 0.
    pub fn abs(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let value = Tensor::from_parts(x.shape().to_vec(), x.data().iter().map(|v| v.abs()).collect());
        self.derived(value, Op::Abs(a), &[a])
    }

    /// Records an externally computed `output` with a custom backward rule.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor<T>, op: Box<dyn CustomOp<T> + 'p>) -> Var {
        self.derived(
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            inputs,
        )
    }

    /// Reverse pass from a single-element output, seeded with 1.
    pub fn backward(&self, out: Var) -> Result<Gradients<T>> {
        let n = self.value(out).len();
        if n != 1 {
            return Err(Error::Shape(format!("backward needs a scalar output, got {n} values")));
        }
        self.backward_with(out, vec![T::one()])
    }

    /// Reverse pass with an explicit output gradient.
    pub fn backward_with(&self, out: Var, seed: Vec<T>) -> Result<Gradients<T>> {
        if out.0 >= self.nodes.len() {
            return Err(Error::InvalidInput(format!("variable {} is not on this tape", out.0)));
        }
        if seed.len() != self.value(out).len() {
            return Err(Error::Shape(format!(
                "seed has {} values, output has {}",
                seed.len(),
                self.value(out).len()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=out.0).map(|_| None).collect();
        let mut leaves: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(seed);
        for id in (0..=out.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                leaves[id] = Some(Tensor::from_parts(node.value.shape().to_vec(), g));
                continue;
            }
            for (v, gi) in self.node_backward(node, &g)? {
                if self.nodes[v.0].requires_grad {
                    accumulate(&mut grads[v.0], gi);
                }
            }
        }
        Ok(Gradients { grads: leaves })
    }

    fn node_backward(&self, node: &Node<'p, T>, g: &[T]) -> Result<Vec<(Var, Vec<T>)>> {
        let val = |v: Var| self.value(v);
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv3d {
                input,
                kernel,
                bias,
                geom,
            } => {
                let (dx, dw, db) = kernels::conv3d_backward(geom, val(*input).data(), val(*kernel).data(), g, rg(*input));
                if let Some(dx) = dx {
                    out.push((*input, dx));
                }
                out.push((*kernel, dw));
                if let Some(b) = bias {
                    out.push((*b, db));
                }
            }
            Op::InstanceNorm { input, inv_std } => {
                out.push((*input, kernels::instance_norm_backward(node.value.data(), inv_std, g)));
            }
            Op::Relu(input) => {
                let d = node
                    .value
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&y, &gi)| if y > T::zero() { gi } else { T::zero() })
                    .collect();
                out.push((*input, d));
            }
            Op::Linear { input, weight, bias } => {
                let x = val(*input).data();
                let w = val(*weight).data();
                let (o, i) = (g.len(), x.len());
                if rg(*input) {
                    let mut dx = vec![T::zero(); i];
                    T::gemm(i, o, 1, T::one(), w, 1, i as isize, g, 1, 1, T::zero(), &mut dx, 1, 1);
                    out.push((*input, dx));
                }
                if rg(*weight) {
                    let mut dw = vec![T::zero(); o * i];
                    for (row, &gr) in dw.chunks_mut(i).zip(g) {
                        for (d, &xv) in row.iter_mut().zip(x) {
                            *d = gr * xv;
                        }
                    }
                    out.push((*weight, dw));
                }
                if let Some(b) = bias {
                    out.push((*b, g.to_vec()));
                }
            }
            Op::L2Normalize { input, norm } => {
                let y = node.value.data();
                let yg: T = y.iter().zip(g).map(|(&a, &b)| a * b).sum();
                let d = y.iter().zip(g).map(|(&yi, &gi)| (gi - yi * yg) / *norm).collect();
                out.push((*input, d));
            }
            Op::SoftmaxNegDistance { query, keys, dists } => {
                let a = node.value.data();
                let q = val(*query).data();
                let k = val(*keys).data();
                let n = q.len();
                let ag: T = a.iter().zip(g).map(|(&x, &y)| x * y).sum();
                let mut dq = vec![T::zero(); n];
                let mut dk = vec![T::zero(); k.len()];
                for j in 0..a.len() {
                    // dL/dd_j, since a = softmax(-d)
                    let dd = -a[j] * (g[j] - ag);
                    if dists[j] == T::zero() {
                        continue;
                    }
                    let row = &k[j * n..(j + 1) * n];
                    for c in 0..n {
                        let u = (q[c] - row[c]) / dists[j] * dd;
                        dq[c] += u;
                        dk[j * n + c] = -u;
                    }
                }
                out.push((*query, dq));
                out.push((*keys, dk));
            }
            Op::GatherRows { input, indices } => {
                let x = val(*input);
                let m = x.shape()[0];
                let row = if m == 0 { 0 } else { x.len() / m };
                let mut d = vec![T::zero(); x.len()];
                for (r, &i) in indices.iter().enumerate() {
                    for c in 0..row {
                        d[i * row + c] += g[r * row + c];
                    }
                }
                out.push((*input, d));
            }
            Op::Stack(inputs) => {
                let row = if inputs.is_empty() { 0 } else { g.len() / inputs.len() };
                for (r, &v) in inputs.iter().enumerate() {
                    out.push((v, g[r * row..(r + 1) * row].to_vec()));
                }
            }
            Op::Reshape(input) => out.push((*input, g.to_vec())),
            Op::Add(a, b) => {
                out.push((*a, g.to_vec()));
                out.push((*b, g.to_vec()));
            }
            Op::Sub(a, b) => {
                out.push((*a, g.to_vec()));
                out.push((*b, g.iter().map(|&x| -x).collect()));
            }
            Op::Mul(a, b) => {
                let (x, y) = (val(*a).data(), val(*b).data());
                out.push((*a, g.iter().zip(y).map(|(&gi, &yi)| gi * yi).collect()));
                out.push((*b, g.iter().zip(x).map(|(&gi, &xi)| gi * xi).collect()));
            }
            Op::Scale(a, c) => out.push((*a, g.iter().map(|&x| x * *c).collect())),
            Op::AddScalar(a) => out.push((*a, g.to_vec())),
            Op::Sum(a) => out.push((*a, vec![g[0]; val(*a).len()])),
            Op::Abs(a) => {
                let x = val(*a).data();
                let d = x
                    .iter()
                    .zip(g)
                    .map(|(&xi, &gi)| {
                        if xi > T::zero() {
                            gi
                        } else if xi < T::zero() {
                            -gi
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                out.push((*a, d));
            }
            Op::Custom { inputs, op } => {
                let ins: Vec<&Tensor<T>> = inputs.iter().map(|&v| val(v)).collect();
                let gs = op.backward(&ins, &node.value, g)?;
                if gs.len() != inputs.len() {
                    return Err(Error::Shape(format!(
                        "custom op {} returned {} gradients for {} inputs",
                        op.name(),
                        gs.len(),
                        inputs.len()
                    )));
                }
                for ((&v, gi), t) in inputs.iter().zip(gs).zip(&ins) {
                    if let Some(gi) = gi {
                        if gi.len() != t.len() {
                            return Err(Error::Shape(format!(
                                "custom op {} returned a gradient of {} values for an input of {}",
                                op.name(),
                                gi.len(),
                                t.len()
                            )));
                        }
                        out.push((v, gi));
                    }
                }
            }
        }
        Ok(out)
    }
}

/// `exp(-d_j) / sum_l exp(-d_l)` with max-subtraction.
pub fn softmax_neg<T: Real>(d: &[T]) -> Vec<T> {
    let m = d.iter().copied().fold(T::infinity(), T::min);
    let e: Vec<T> = d.iter().map(|&x| (m - x).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|x| x / s).collect()
}
