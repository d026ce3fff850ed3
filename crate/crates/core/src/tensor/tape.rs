use super::{as_matrix, kernels, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`]. Only meaningful for the tape that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    /// rhs has a single element
    Scalar,
    /// rhs is one row repeated over every row of a matrix lhs
    Row,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum UnaryKind {
    Exp,
    Log,
    Sqrt,
    Neg,
    Relu,
}

/// Splits a shape around `axis` into (outer, axis length, inner) extents.
#[derive(Clone, Copy, Debug)]
struct AxisSplit {
    outer: usize,
    len: usize,
    inner: usize,
}

type CustomBackward = Box<dyn Fn(&Tensor, &[&Tensor]) -> Vec<Tensor>>;

enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Binary {
        kind: BinaryKind,
        lhs: Var,
        rhs: Var,
        bc: Broadcast,
    },
    AddScalar(Var),
    Scale(Var, f64),
    Unary(UnaryKind, Var),
    ClampMin(Var, f64),
    Sum(Var),
    Mean(Var),
    Max(Var, usize),
    SumAxis(Var, AxisSplit),
    MeanAxis(Var, AxisSplit),
    MaxAxis(Var, AxisSplit, Vec<usize>),
    Softmax(Var, AxisSplit),
    Transpose(Var),
    Reshape(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    NormalizeRows(Var, Vec<f64>),
    DepthwiseConv {
        input: Var,
        kernel: Var,
        side: usize,
        ksize: usize,
    },
    Custom(Vec<Var>, CustomBackward),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run record of a computation.
///
/// Nodes are appended in creation order, so parents always precede children
/// and the tape is acyclic by construction.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every leaf of the tape.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `var`, or `None` when the root does not depend on it
    /// (or `var` is not a leaf).
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient for `var`, with zeros of the given shape when absent.
    pub fn get_or_zeros(&self, var: Var, shape: &[usize]) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape))
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

    /// Drops every node created after the first `len`. Handles issued for
    /// the dropped nodes become invalid.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
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

    /// Differentiable input (a parameter or anything else whose gradient is
    /// wanted).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Constant, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push_raw(value, op, requires_grad)
    }

    // ---- linear algebra -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = as_matrix("matmul", self.value(a))?;
        let (k2, n) = as_matrix("matmul", self.value(b))?;
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            m,
            k,
            n,
        );
        Ok(self.push(
            Tensor::from_parts(vec![m, n], out),
            Op::MatMul(a, b),
            &[a, b],
        ))
    }

    // ---- elementwise ----------------------------------------------------

    fn broadcast_kind(&self, op: &'static str, a: Var, b: Var) -> Result<Broadcast> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            return Ok(Broadcast::Same);
        }
        if self.value(b).len() == 1 {
            return Ok(Broadcast::Scalar);
        }
        if let [_, n] = sa {
            if sb == [*n] || sb == [1, *n] {
                return Ok(Broadcast::Row);
            }
        }
        Err(Error::Shape {
            op,
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        })
    }

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let name = match kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
        };
        let bc = self.broadcast_kind(name, a, b)?;
        let rhs = self.value(b).data();
        if kind == BinaryKind::Div && rhs.iter().any(|&v| v == 0.0) {
            return Err(Error::domain("div", "division by zero"));
        }
        let lhs = self.value(a);
        let width = rhs.len();
        let f = |x: f64, y: f64| match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
            BinaryKind::Div => x / y,
        };
        let data: Vec<f64> = lhs
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = match bc {
                    Broadcast::Same => rhs[i],
                    Broadcast::Scalar => rhs[0],
                    Broadcast::Row => rhs[i % width],
                };
                f(x, y)
            })
            .collect();
        let value = Tensor::from_parts(lhs.shape().to_vec(), data);
        Ok(self.push(
            value,
            Op::Binary {
                kind,
                lhs: a,
                rhs: b,
                bc,
            },
            &[a, b],
        ))
    }

    /// `a + b`; `b` may be a one-element tensor or a row broadcast over `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x + c);
        self.push(value, Op::AddScalar(a), &[a])
    }

    pub fn mul_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x * c);
        self.push(value, Op::Scale(a, c), &[a])
    }

    // ---- pointwise maps -------------------------------------------------

    fn unary(&mut self, kind: UnaryKind, a: Var) -> Result<Var> {
        let x = self.value(a);
        match kind {
            UnaryKind::Log | UnaryKind::Sqrt => {
                if let Some(bad) = x.data().iter().find(|&&v| !(v > 0.0)) {
                    let op = if kind == UnaryKind::Log {
                        "log"
                    } else {
                        "sqrt"
                    };
                    return Err(Error::domain(op, format!("non-positive input {bad}")));
                }
            }
            _ => {}
        }
        let value = x.map(|v| match kind {
            UnaryKind::Exp => v.exp(),
            UnaryKind::Log => v.ln(),
            UnaryKind::Sqrt => v.sqrt(),
            UnaryKind::Neg => -v,
            UnaryKind::Relu => v.max(0.0),
        });
        Ok(self.push(value, Op::Unary(kind, a), &[a]))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Exp, a).expect("exp is total")
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Log, a)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Sqrt, a)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Neg, a).expect("neg is total")
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Relu, a).expect("relu is total")
    }

    /// `max(a, floor)` elementwise; clamped entries pass no gradient.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        let value = self.value(a).map(|v| v.max(floor));
        self.push(value, Op::ClampMin(a, floor), &[a])
    }

    // ---- reductions -----------------------------------------------------

    fn axis_split(&self, op: &'static str, a: Var, axis: usize) -> Result<(AxisSplit, Vec<usize>)> {
        let shape = self.shape(a);
        if axis >= shape.len() {
            return Err(Error::InvalidAxis {
                op,
                axis,
                rank: shape.len(),
            });
        }
        let split = AxisSplit {
            outer: shape[..axis].iter().product(),
            len: shape[axis],
            inner: shape[axis + 1..].iter().product(),
        };
        let mut reduced: Vec<usize> = shape
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != axis)
            .map(|(_, &d)| d)
            .collect();
        if reduced.is_empty() {
            reduced.push(1);
        }
        Ok((split, reduced))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let value = Tensor::scalar(x.sum() / x.len() as f64);
        self.push(value, Op::Mean(a), &[a])
    }

    /// Maximum over all elements; the gradient flows to the first maximal
    /// entry.
    pub fn max(&mut self, a: Var) -> Var {
        let (idx, best) = argmax(self.value(a).data());
        self.push(Tensor::scalar(best), Op::Max(a, idx), &[a])
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (split, shape) = self.axis_split("sum_axis", a, axis)?;
        let data = reduce_axis(self.value(a).data(), split, |s| s.iter().sum());
        Ok(self.push(Tensor::from_parts(shape, data), Op::SumAxis(a, split), &[a]))
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (split, shape) = self.axis_split("mean_axis", a, axis)?;
        let n = split.len as f64;
        let data = reduce_axis(self.value(a).data(), split, |s| s.iter().sum::<f64>() / n);
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::MeanAxis(a, split),
            &[a],
        ))
    }

    pub fn max_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (split, shape) = self.axis_split("max_axis", a, axis)?;
        let x = self.value(a).data();
        let mut data = Vec::with_capacity(split.outer * split.inner);
        let mut winners = Vec::with_capacity(split.outer * split.inner);
        let mut lane = vec![0.0; split.len];
        for o in 0..split.outer {
            for i in 0..split.inner {
                for (j, slot) in lane.iter_mut().enumerate() {
                    *slot = x[(o * split.len + j) * split.inner + i];
                }
                let (j, best) = argmax(&lane);
                data.push(best);
                winners.push(j);
            }
        }
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::MaxAxis(a, split, winners),
            &[a],
        ))
    }

    /// Softmax along `axis`, stabilized by subtracting each slice's maximum.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (split, _) = self.axis_split("softmax", a, axis)?;
        let x = self.value(a);
        let mut out = vec![0.0; x.len()];
        let data = x.data();
        for o in 0..split.outer {
            for i in 0..split.inner {
                let at = |j: usize| (o * split.len + j) * split.inner + i;
                let m = (0..split.len)
                    .map(|j| data[at(j)])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..split.len {
                    let e = (data[at(j)] - m).exp();
                    out[at(j)] = e;
                    total += e;
                }
                for j in 0..split.len {
                    out[at(j)] /= total;
                }
            }
        }
        let value = Tensor::from_parts(x.shape().to_vec(), out);
        Ok(self.push(value, Op::Softmax(a, split), &[a]))
    }

    // ---- structural -----------------------------------------------------

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose()?;
        Ok(self.push(value, Op::Transpose(a), &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let x = self.value(a);
        let n: usize = shape.iter().product();
        if n != x.len() || shape.is_empty() || shape.contains(&0) {
            return Err(Error::ElementCount {
                op: "reshape",
                from: x.len(),
                to: shape.to_vec(),
            });
        }
        let value = Tensor::from_parts(shape.to_vec(), x.data().to_vec());
        Ok(self.push(value, Op::Reshape(a), &[a]))
    }

    /// Concatenates along the leading axis; trailing dimensions must agree.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::ElementCount {
            op: "concat_rows",
            from: 0,
            to: vec![],
        })?;
        let trailing = self.shape(first)[1..].to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.shape()[1..] != trailing[..] {
                return Err(Error::Shape {
                    op: "concat_rows",
                    lhs: self.shape(first).to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![rows];
        shape.extend(trailing);
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::ConcatRows(parts.to_vec()),
            parts,
        ))
    }

    /// Concatenates matrices side by side; row counts must agree.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::ElementCount {
            op: "concat_cols",
            from: 0,
            to: vec![],
        })?;
        let (m, _) = as_matrix("concat_cols", self.value(first))?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (rows, cols) = as_matrix("concat_cols", self.value(p))?;
            if rows != m {
                return Err(Error::Shape {
                    op: "concat_cols",
                    lhs: self.shape(first).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            widths.push(cols);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for r in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![m, total], data),
            Op::ConcatCols(parts.to_vec()),
            parts,
        ))
    }

    /// Rows `start..end` along the leading axis.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let x = self.value(a);
        if start >= end || end > x.rows() {
            return Err(Error::ElementCount {
                op: "slice_rows",
                from: x.rows(),
                to: vec![start, end],
            });
        }
        let w = x.row_len();
        let mut shape = x.shape().to_vec();
        shape[0] = end - start;
        let value = Tensor::from_parts(shape, x.data()[start * w..end * w].to_vec());
        Ok(self.push(value, Op::SliceRows(a, start), &[a]))
    }

    /// Selects rows by index (repeats allowed) along the leading axis.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let x = self.value(a);
        if indices.is_empty() {
            return Err(Error::ElementCount {
                op: "gather_rows",
                from: x.rows(),
                to: vec![0],
            });
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= x.rows()) {
            return Err(Error::ElementCount {
                op: "gather_rows",
                from: x.rows(),
                to: vec![bad],
            });
        }
        let w = x.row_len();
        let mut data = Vec::with_capacity(indices.len() * w);
        for &i in indices {
            data.extend_from_slice(x.row(i));
        }
        let mut shape = x.shape().to_vec();
        shape[0] = indices.len();
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::GatherRows(a, indices.to_vec()),
            &[a],
        ))
    }

    /// Extends the leading axis to `total` rows by cycling through the
    /// existing rows from the start.
    pub fn pad_rows_cyclic(&mut self, a: Var, total: usize) -> Result<Var> {
        let rows = self.value(a).rows();
        if total < rows {
            return Err(Error::ElementCount {
                op: "pad_rows",
                from: rows,
                to: vec![total],
            });
        }
        let indices: Vec<usize> = (0..total).map(|i| i % rows).collect();
        self.gather_rows(a, &indices)
    }

    // ---- fused layers ---------------------------------------------------

    /// Per-row standardization `(x - mean) / sqrt(var + eps)` of a matrix,
    /// with the population variance.
    pub fn normalize_rows(&mut self, a: Var, eps: f64) -> Result<Var> {
        if !(eps > 0.0) {
            return Err(Error::domain("normalize_rows", "epsilon must be positive"));
        }
        let (m, d) = as_matrix("normalize_rows", self.value(a))?;
        let x = self.value(a).data();
        let mut out = vec![0.0; m * d];
        let mut inv_std = Vec::with_capacity(m);
        for r in 0..m {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for (o, v) in out[r * d..(r + 1) * d].iter_mut().zip(row) {
                *o = (v - mean) * inv;
            }
            inv_std.push(inv);
        }
        Ok(self.push(
            Tensor::from_parts(vec![m, d], out),
            Op::NormalizeRows(a, inv_std),
            &[a],
        ))
    }

    /// Same-padded depthwise 2-D convolution over a `side × side` grid.
    /// `input` is `[side², C]` (row-major cells), `kernel` is `[C, k, k]`
    /// with odd `k`.
    pub fn depthwise_conv2d(&mut self, input: Var, kernel: Var, side: usize) -> Result<Var> {
        let (cells, channels) = as_matrix("depthwise_conv2d", self.value(input))?;
        let kshape = self.shape(kernel).to_vec();
        let ok = kshape.len() == 3
            && kshape[0] == channels
            && kshape[1] == kshape[2]
            && kshape[1] % 2 == 1;
        if !ok || cells != side * side {
            return Err(Error::Shape {
                op: "depthwise_conv2d",
                lhs: self.shape(input).to_vec(),
                rhs: kshape,
            });
        }
        let ksize = kshape[1];
        let mut out = vec![0.0; cells * channels];
        kernels::depthwise_conv(
            self.value(input).data(),
            self.value(kernel).data(),
            &mut out,
            side,
            channels,
            ksize,
        );
        Ok(self.push(
            Tensor::from_parts(vec![cells, channels], out),
            Op::DepthwiseConv {
                input,
                kernel,
                side,
                ksize,
            },
            &[input, kernel],
        ))
    }

    /// Records an operation whose forward value is computed by the caller.
    /// `backward` maps the output gradient and the input values to one
    /// gradient per input.
    pub fn custom(
        &mut self,
        inputs: &[Var],
        value: Tensor,
        backward: impl Fn(&Tensor, &[&Tensor]) -> Vec<Tensor> + 'static,
    ) -> Var {
        self.push(
            value,
            Op::Custom(inputs.to_vec(), Box::new(backward)),
            inputs,
        )
    }

    // ---- reverse pass ---------------------------------------------------

    /// Reverse-mode sweep from a scalar `root`. Gradients are freshly zeroed
    /// on every call, so repeated calls on the same tape agree bitwise.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_value = self.value(root);
        if !root_value.is_scalar() {
            return Err(Error::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(vec![1.0]);
        let mut kept: Vec<Option<Tensor>> = Vec::new();
        kept.resize_with(self.nodes.len(), || None);

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                kept[idx] = Some(Tensor::from_parts(node.value.shape().to_vec(), g));
                continue;
            }
            self.propagate(idx, &g, &mut grads);
        }
        Ok(Gradients { grads: kept })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        let nodes = &self.nodes;
        // Accumulates into a parent's gradient buffer if it wants one.
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let parent = &nodes[v.0];
            if !parent.requires_grad {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; parent.value.len()]);
            f(buf);
        };
        let val = |v: Var| &nodes[v.0].value;

        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (m, k) = (val(*a).shape()[0], val(*a).shape()[1]);
                let n = val(*b).shape()[1];
                acc(*a, &mut |ga| {
                    kernels::matmul_bt(g, val(*b).data(), ga, m, n, k)
                });
                acc(*b, &mut |gb| {
                    kernels::matmul_at(val(*a).data(), g, gb, m, k, n)
                });
            }
            Op::Binary { kind, lhs, rhs, bc } => {
                let x = val(*lhs).data();
                let y = val(*rhs).data();
                let width = y.len();
                let rhs_at = |i: usize| match bc {
                    Broadcast::Same => i,
                    Broadcast::Scalar => 0,
                    Broadcast::Row => i % width,
                };
                acc(*lhs, &mut |ga| {
                    for (i, gi) in g.iter().enumerate() {
                        ga[i] += match kind {
                            BinaryKind::Add | BinaryKind::Sub => *gi,
                            BinaryKind::Mul => gi * y[rhs_at(i)],
                            BinaryKind::Div => gi / y[rhs_at(i)],
                        };
                    }
                });
                acc(*rhs, &mut |gb| {
                    for (i, gi) in g.iter().enumerate() {
                        let j = rhs_at(i);
                        gb[j] += match kind {
                            BinaryKind::Add => *gi,
                            BinaryKind::Sub => -gi,
                            BinaryKind::Mul => gi * x[i],
                            BinaryKind::Div => -gi * x[i] / (y[j] * y[j]),
                        };
                    }
                });
            }
            Op::AddScalar(a) => acc(*a, &mut |ga| add_into(ga, g)),
            Op::Scale(a, c) => acc(*a, &mut |ga| {
                for (o, gi) in ga.iter_mut().zip(g) {
                    *o += c * gi;
                }
            }),
            Op::Unary(kind, a) => {
                let x = val(*a).data();
                let y = out.data();
                acc(*a, &mut |ga| {
                    for i in 0..g.len() {
                        ga[i] += match kind {
                            UnaryKind::Exp => g[i] * y[i],
                            UnaryKind::Log => g[i] / x[i],
                            UnaryKind::Sqrt => g[i] / (2.0 * y[i]),
                            UnaryKind::Neg => -g[i],
                            UnaryKind::Relu => {
                                if x[i] > 0.0 {
                                    g[i]
                                } else {
                                    0.0
                                }
                            }
                        };
                    }
                });
            }
            Op::ClampMin(a, floor) => {
                let x = val(*a).data();
                acc(*a, &mut |ga| {
                    for i in 0..g.len() {
                        if x[i] > *floor {
                            ga[i] += g[i];
                        }
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |ga| ga.iter_mut().for_each(|o| *o += g[0])),
            Op::Mean(a) => {
                let n = val(*a).len() as f64;
                acc(*a, &mut |ga| ga.iter_mut().for_each(|o| *o += g[0] / n));
            }
            Op::Max(a, at) => acc(*a, &mut |ga| ga[*at] += g[0]),
            Op::SumAxis(a, s) | Op::MeanAxis(a, s) => {
                let scale = if matches!(node.op, Op::MeanAxis(..)) {
                    1.0 / s.len as f64
                } else {
                    1.0
                };
                acc(*a, &mut |ga| {
                    for o in 0..s.outer {
                        for j in 0..s.len {
                            for i in 0..s.inner {
                                ga[(o * s.len + j) * s.inner + i] += scale * g[o * s.inner + i];
                            }
                        }
                    }
                });
            }
            Op::MaxAxis(a, s, winners) => acc(*a, &mut |ga| {
                for o in 0..s.outer {
                    for i in 0..s.inner {
                        let r = o * s.inner + i;
                        ga[(o * s.len + winners[r]) * s.inner + i] += g[r];
                    }
                }
            }),
            Op::Softmax(a, s) => {
                let y = out.data();
                acc(*a, &mut |ga| {
                    for o in 0..s.outer {
                        for i in 0..s.inner {
                            let at = |j: usize| (o * s.len + j) * s.inner + i;
                            let dot: f64 = (0..s.len).map(|j| g[at(j)] * y[at(j)]).sum();
                            for j in 0..s.len {
                                ga[at(j)] += y[at(j)] * (g[at(j)] - dot);
                            }
                        }
                    }
                });
            }
            Op::Transpose(a) => {
                let (m, n) = (val(*a).shape()[0], val(*a).shape()[1]);
                acc(*a, &mut |ga| {
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] += g[j * m + i];
                        }
                    }
                });
            }
            Op::Reshape(a) => acc(*a, &mut |ga| add_into(ga, g)),
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = val(*p).len();
                    acc(*p, &mut |gp| add_into(gp, &g[offset..offset + n]));
                    offset += n;
                }
            }
            Op::ConcatCols(parts) => {
                let m = out.shape()[0];
                let total = out.shape()[1];
                let mut col = 0;
                for p in parts {
                    let w = val(*p).shape()[1];
                    acc(*p, &mut |gp| {
                        for r in 0..m {
                            add_into(
                                &mut gp[r * w..(r + 1) * w],
                                &g[r * total + col..r * total + col + w],
                            );
                        }
                    });
                    col += w;
                }
            }
            Op::SliceRows(a, start) => {
                let w = val(*a).row_len();
                acc(*a, &mut |ga| {
                    add_into(&mut ga[start * w..start * w + g.len()], g)
                });
            }
            Op::GatherRows(a, indices) => {
                let w = val(*a).row_len();
                acc(*a, &mut |ga| {
                    for (k, &i) in indices.iter().enumerate() {
                        add_into(&mut ga[i * w..(i + 1) * w], &g[k * w..(k + 1) * w]);
                    }
                });
            }
            Op::NormalizeRows(a, inv_std) => {
                let (m, d) = (out.shape()[0], out.shape()[1]);
                let xhat = out.data();
                acc(*a, &mut |ga| {
                    for r in 0..m {
                        let gr = &g[r * d..(r + 1) * d];
                        let xr = &xhat[r * d..(r + 1) * d];
                        let g_sum: f64 = gr.iter().sum();
                        let gx_sum: f64 = gr.iter().zip(xr).map(|(a, b)| a * b).sum();
                        let scale = inv_std[r] / d as f64;
                        for j in 0..d {
                            ga[r * d + j] += scale * (d as f64 * gr[j] - g_sum - xr[j] * gx_sum);
                        }
                    }
                });
            }
            Op::DepthwiseConv {
                input,
                kernel,
                side,
                ksize,
            } => {
                let channels = val(*input).shape()[1];
                let x = val(*input).data();
                let k = val(*kernel).data();
                acc(*input, &mut |gi| {
                    kernels::depthwise_conv_backward(
                        x,
                        k,
                        g,
                        Some(gi),
                        None,
                        *side,
                        channels,
                        *ksize,
                    )
                });
                acc(*kernel, &mut |gk| {
                    kernels::depthwise_conv_backward(
                        x,
                        k,
                        g,
                        None,
                        Some(gk),
                        *side,
                        channels,
                        *ksize,
                    )
                });
            }
            Op::Custom(inputs, backward) => {
                let g_out = Tensor::from_parts(out.shape().to_vec(), g.to_vec());
                let values: Vec<&Tensor> = inputs.iter().map(|&v| val(v)).collect();
                let input_grads = backward(&g_out, &values);
                for (v, gv) in inputs.iter().zip(input_grads) {
                    acc(*v, &mut |buf| add_into(buf, gv.data()));
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn argmax(values: &[f64]) -> (usize, f64) {
    let mut best = (0, values[0]);
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

fn reduce_axis(x: &[f64], s: AxisSplit, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(s.outer * s.inner);
    let mut lane = vec![0.0; s.len];
    for o in 0..s.outer {
        for i in 0..s.inner {
            for (j, slot) in lane.iter_mut().enumerate() {
                *slot = x[(o * s.len + j) * s.inner + i];
            }
            out.push(f(&lane));
        }
    }
    out
}
