//! Dense `f64` tensors and a define-by-run reverse-mode differentiation tape.
//!
//! A [`Graph`] owns every value computed during one forward pass. Operations
//! are methods on the graph that take [`Var`] handles and append a node; the
//! node list is therefore always in topological order, and [`Graph::backward`]
//! walks it in exact reverse. Graphs are rebuilt for every training step.
//!
//! [`Tensor`] itself is a plain detached value (shape + row-major data) and
//! can be moved freely between threads.

use std::fmt;

use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("data length {got} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, got: usize },
    #[error("{op}: argument {value} at flat index {index} is outside the domain")]
    Domain {
        op: &'static str,
        index: usize,
        value: f64,
    },
    #[error("{op}: empty tensor")]
    Empty { op: &'static str },
    #[error("{op}: non-finite value at flat index {index}")]
    NonFinite { op: &'static str, index: usize },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("{op}: index {index} out of range for extent {extent}")]
    Index {
        op: &'static str,
        index: usize,
        extent: usize,
    },
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

/// Row-major n-dimensional array of `f64`.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != data.len() {
            return Err(TensorError::DataLength {
                shape,
                got: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    /// Builds a 2-D tensor from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(TensorError::Shape {
                    op: "from_rows",
                    left: vec![cols],
                    right: vec![row.len()],
                });
            }
            data.extend_from_slice(row);
        }
        Tensor::new(vec![rows.len(), cols], data)
    }

    /// Uniform Glorot initialisation in `[-sqrt(6/(fan_in+fan_out)), +...]`.
    pub fn glorot(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.uniform_range(-limit, limit))
            .collect();
        Tensor {
            shape: vec![fan_in, fan_out],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    /// `(rows, cols)` when the tensor is 2-D, treating 1-D tensors as one row.
    pub fn dims2(&self) -> Option<(usize, usize)> {
        match self.shape.as_slice() {
            [n] => Some((1, *n)),
            [r, c] => Some((*r, *c)),
            _ => None,
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let cols = *self.shape.last().unwrap_or(&0);
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        Tensor::new(shape, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Identity,
    LeakyRelu(f64),
    Sigmoid,
    Tanh,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Neg(Var),
    Exp(Var),
    Log(Var),
    LogClamped(Var, f64),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Softplus(Var),
    Affine(Var, f64),
    AddBias(Var, Var),
    Softmax(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    ConcatCols(Var, Var),
    RepeatBatch(Var),
    MixtureSum(Var, Var),
    Pick(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Ordered record of executed operations.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    clamp_events: usize,
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

    /// Number of entries that hit the floor of [`Graph::log_clamped`].
    pub fn clamp_events(&self) -> usize {
        self.clamp_events
    }

    /// Inserts a leaf. Leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        if let Some(index) = value.first_non_finite() {
            return Err(TensorError::NonFinite { op: "leaf", index });
        }
        Ok(self.push(value, Op::Leaf, requires_grad))
    }

    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, op_name: &'static str, value: Tensor, op: Op, parents: &[Var]) -> Result<Var> {
        if let Some(index) = value.first_non_finite() {
            return Err(TensorError::NonFinite { op: op_name, index });
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        Ok(self.push(value, op, requires_grad))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(TensorError::Shape {
                op,
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn unary(&mut self, name: &'static str, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let value = self.value(x).map(f);
        self.record(name, value, op, &[x])
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor {
            shape: ta.shape.clone(),
            data,
        };
        self.record(name, value, op, &[a, b])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (m, k, k2, n) = match (sa, sb) {
            ([m, k], [k2, n]) => (*m, *k, *k2, *n),
            _ => {
                return Err(TensorError::Shape {
                    op: "matmul",
                    left: sa.to_vec(),
                    right: sb.to_vec(),
                })
            }
        };
        if k != k2 {
            return Err(TensorError::Shape {
                op: "matmul",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            &self.value(a).data,
            (k, 1),
            &self.value(b).data,
            (n, 1),
            &mut out,
        );
        self.record("matmul", Tensor { shape: vec![m, n], data: out }, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary("neg", x, Op::Neg(x), |v| -v)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary("exp", x, Op::Exp(x), f64::exp)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some((index, &value)) = self.value(x).data.iter().enumerate().find(|(_, v)| **v <= 0.0) {
            return Err(TensorError::Domain {
                op: "log",
                index,
                value,
            });
        }
        self.unary("log", x, Op::Log(x), f64::ln)
    }

    /// `log(max(x, floor))`; entries below the floor get zero gradient and
    /// are counted in [`Graph::clamp_events`].
    pub fn log_clamped(&mut self, x: Var, floor: f64) -> Result<Var> {
        let clamped = self.value(x).data.iter().filter(|&&v| v < floor).count();
        self.clamp_events += clamped;
        self.unary("log_clamped", x, Op::LogClamped(x, floor), |v| v.max(floor).ln())
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.unary("leaky_relu", x, Op::LeakyRelu(x, slope), |v| if v >= 0.0 { v } else { slope * v })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, Op::Sigmoid(x), sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary("tanh", x, Op::Tanh(x), f64::tanh)
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary("softplus", x, Op::Softplus(x), softplus)
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        self.unary("affine", x, Op::Affine(x, scale), |v| scale * v + shift)
    }

    /// Adds a length-`n` bias to every row of a `[b, n]` tensor.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        let ok = matches!((sx, sb), ([_, n], [m]) if n == m);
        if !ok {
            return Err(TensorError::Shape {
                op: "add_bias",
                left: sx.to_vec(),
                right: sb.to_vec(),
            });
        }
        let cols = sb[0];
        let b = &self.value(bias).data;
        let tx = self.value(x);
        let data = tx
            .data
            .iter()
            .enumerate()
            .map(|(i, v)| v + b[i % cols])
            .collect();
        let value = Tensor {
            shape: tx.shape.clone(),
            data,
        };
        self.record("add_bias", value, Op::AddBias(x, bias), &[x, bias])
    }

    /// Softmax over the last axis (every row of a 2-D tensor, or a 1-D vector).
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let cols = match tx.shape.last() {
            Some(&c) if c > 0 => c,
            _ => return Err(TensorError::Empty { op: "softmax" }),
        };
        let mut data = tx.data.clone();
        for row in data.chunks_mut(cols) {
            softmax_in_place(row);
        }
        let value = Tensor {
            shape: tx.shape.clone(),
            data,
        };
        self.record("softmax", value, Op::Softmax(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        if tx.is_empty() {
            return Err(TensorError::Empty { op: "sum" });
        }
        let s = tx.data.iter().sum();
        self.record("sum", Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        if tx.is_empty() {
            return Err(TensorError::Empty { op: "mean" });
        }
        let s = tx.data.iter().sum::<f64>() / tx.len() as f64;
        self.record("mean", Tensor::scalar(s), Op::Mean(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        self.record("reshape", value, Op::Reshape(x), &[x])
    }

    /// Concatenates two `[b, _]` tensors column-wise.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (rows, ca, cb) = match (sa, sb) {
            ([ra, ca], [rb, cb]) if ra == rb => (*ra, *ca, *cb),
            _ => {
                return Err(TensorError::Shape {
                    op: "concat_cols",
                    left: sa.to_vec(),
                    right: sb.to_vec(),
                })
            }
        };
        let (ta, tb) = (self.value(a), self.value(b));
        let mut data = Vec::with_capacity(rows * (ca + cb));
        for r in 0..rows {
            data.extend_from_slice(&ta.data[r * ca..(r + 1) * ca]);
            data.extend_from_slice(&tb.data[r * cb..(r + 1) * cb]);
        }
        let value = Tensor {
            shape: vec![rows, ca + cb],
            data,
        };
        self.record("concat_cols", value, Op::ConcatCols(a, b), &[a, b])
    }

    /// Stacks `batch` copies of `x` along a new leading axis.
    pub fn repeat_batch(&mut self, x: Var, batch: usize) -> Result<Var> {
        let tx = self.value(x);
        let mut shape = vec![batch];
        shape.extend_from_slice(&tx.shape);
        let mut data = Vec::with_capacity(batch * tx.len());
        for _ in 0..batch {
            data.extend_from_slice(&tx.data);
        }
        self.record("repeat_batch", Tensor { shape, data }, Op::RepeatBatch(x), &[x])
    }

    /// `out[b, j] = sum_i weights[b, i] * components[b, i, j]`.
    pub fn mixture_sum(&mut self, components: Var, weights: Var) -> Result<Var> {
        let (sc, sw) = (self.shape(components), self.shape(weights));
        let (b, n, p) = match (sc, sw) {
            ([b, n, p], [b2, n2]) if b == b2 && n == n2 => (*b, *n, *p),
            _ => {
                return Err(TensorError::Shape {
                    op: "mixture_sum",
                    left: sc.to_vec(),
                    right: sw.to_vec(),
                })
            }
        };
        let (tc, tw) = (self.value(components), self.value(weights));
        let mut data = vec![0.0; b * p];
        for r in 0..b {
            let out = &mut data[r * p..(r + 1) * p];
            for i in 0..n {
                let w = tw.data[r * n + i];
                let comp = &tc.data[(r * n + i) * p..(r * n + i + 1) * p];
                for (o, c) in out.iter_mut().zip(comp) {
                    *o += w * c;
                }
            }
        }
        let value = Tensor {
            shape: vec![b, p],
            data,
        };
        self.record("mixture_sum", value, Op::MixtureSum(components, weights), &[components, weights])
    }

    /// Selects `x[r, index[r]]` for every row, giving a length-`b` vector.
    pub fn pick(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        let (rows, cols) = match tx.shape.as_slice() {
            [r, c] if *r == index.len() => (*r, *c),
            s => {
                return Err(TensorError::Shape {
                    op: "pick",
                    left: s.to_vec(),
                    right: vec![index.len()],
                })
            }
        };
        let mut data = Vec::with_capacity(rows);
        for (r, &i) in index.iter().enumerate() {
            if i >= cols {
                return Err(TensorError::Index {
                    op: "pick",
                    index: i,
                    extent: cols,
                });
            }
            data.push(tx.data[r * cols + i]);
        }
        self.record("pick", Tensor::vector(data), Op::Pick(x, index.to_vec()), &[x])
    }

    /// Inverted dropout. The keep mask is drawn from `rng` and enters the
    /// graph as a constant; `rate == 0` is the identity.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut Rng) -> Result<Var> {
        if rate <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - rate;
        let tx = self.value(x);
        let mask: Vec<f64> = (0..tx.len())
            .map(|_| if rng.uniform() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let mask = Tensor {
            shape: tx.shape.clone(),
            data: mask,
        };
        let m = self.constant(mask)?;
        self.mul(x, m)
    }

    pub fn activate(&mut self, x: Var, act: Activation) -> Result<Var> {
        match act {
            Activation::Identity => Ok(x),
            Activation::LeakyRelu(s) => self.leaky_relu(x, s),
            Activation::Sigmoid => self.sigmoid(x),
            Activation::Tanh => self.tanh(x),
        }
    }

    /// `activation(x · w + bias)`.
    pub fn dense(&mut self, x: Var, w: Var, bias: Var, act: Activation) -> Result<Var> {
        let h = self.matmul(x, w)?;
        let h = self.add_bias(h, bias)?;
        self.activate(h, act)
    }

    /// Reverse pass from a scalar loss. Gradients are added to whatever the
    /// nodes already hold, so repeated calls accumulate until
    /// [`Graph::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss);
        if shape.iter().product::<usize>() != 1 {
            return Err(TensorError::NonScalarLoss(shape.to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(shape.to_vec(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads);
            match &mut self.nodes[idx].grad {
                Some(acc) => acc.add_assign(&g),
                slot => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        let mut send = |v: Var, t: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&t),
                slot => *slot = Some(t),
            }
        };
        let zip_map = |a: &Tensor, f: &dyn Fn(f64, f64) -> f64| Tensor {
            shape: a.shape.clone(),
            data: a.data.iter().zip(&g.data).map(|(&x, &gv)| f(x, gv)).collect(),
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.shape[0], ta.shape[1]);
                let n = tb.shape[1];
                if self.requires_grad(*a) {
                    // g · bᵀ
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, &g.data, (n, 1), &tb.data, (1, n), &mut ga);
                    send(*a, Tensor { shape: vec![m, k], data: ga });
                }
                if self.requires_grad(*b) {
                    // aᵀ · g
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, &ta.data, (1, k), &g.data, (n, 1), &mut gb);
                    send(*b, Tensor { shape: vec![k, n], data: gb });
                }
            }
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                send(*a, zip_map(self.value(*b), &|bv, gv| bv * gv));
                send(*b, zip_map(self.value(*a), &|av, gv| av * gv));
            }
            Op::Neg(x) => send(*x, g.map(|v| -v)),
            Op::Exp(x) => send(*x, zip_map(y, &|yv, gv| yv * gv)),
            Op::Log(x) => send(*x, zip_map(self.value(*x), &|xv, gv| gv / xv)),
            Op::LogClamped(x, floor) => {
                let floor = *floor;
                send(*x, zip_map(self.value(*x), &|xv, gv| if xv < floor { 0.0 } else { gv / xv }))
            }
            Op::LeakyRelu(x, slope) => {
                let slope = *slope;
                send(*x, zip_map(self.value(*x), &|xv, gv| if xv >= 0.0 { gv } else { slope * gv }))
            }
            Op::Sigmoid(x) => send(*x, zip_map(y, &|yv, gv| gv * yv * (1.0 - yv))),
            Op::Tanh(x) => send(*x, zip_map(y, &|yv, gv| gv * (1.0 - yv * yv))),
            Op::Softplus(x) => send(*x, zip_map(self.value(*x), &|xv, gv| gv * sigmoid(xv))),
            Op::Affine(x, scale) => {
                let s = *scale;
                send(*x, g.map(|v| v * s))
            }
            Op::AddBias(x, b) => {
                send(*x, g.clone());
                let cols = self.shape(*b)[0];
                let mut gb = vec![0.0; cols];
                for row in g.data.chunks(cols) {
                    for (acc, v) in gb.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                send(*b, Tensor::vector(gb));
            }
            Op::Softmax(x) => {
                let cols = *y.shape.last().unwrap();
                let mut gx = Vec::with_capacity(y.len());
                for (yr, gr) in y.data.chunks(cols).zip(g.data.chunks(cols)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    gx.extend(yr.iter().zip(gr).map(|(yv, gv)| yv * (gv - dot)));
                }
                send(*x, Tensor { shape: y.shape.clone(), data: gx });
            }
            Op::Sum(x) => send(*x, Tensor::full(self.shape(*x).to_vec(), g.data[0])),
            Op::Mean(x) => {
                let n = self.value(*x).len() as f64;
                send(*x, Tensor::full(self.shape(*x).to_vec(), g.data[0] / n))
            }
            Op::Reshape(x) => send(
                *x,
                Tensor {
                    shape: self.shape(*x).to_vec(),
                    data: g.data.clone(),
                },
            ),
            Op::ConcatCols(a, b) => {
                let (ca, cb) = (self.shape(*a)[1], self.shape(*b)[1]);
                let rows = self.shape(*a)[0];
                let mut ga = Vec::with_capacity(rows * ca);
                let mut gb = Vec::with_capacity(rows * cb);
                for row in g.data.chunks(ca + cb) {
                    ga.extend_from_slice(&row[..ca]);
                    gb.extend_from_slice(&row[ca..]);
                }
                send(*a, Tensor { shape: vec![rows, ca], data: ga });
                send(*b, Tensor { shape: vec![rows, cb], data: gb });
            }
            Op::RepeatBatch(x) => {
                let inner = self.value(*x).len();
                let mut gx = vec![0.0; inner];
                if inner > 0 {
                    for chunk in g.data.chunks(inner) {
                        for (acc, v) in gx.iter_mut().zip(chunk) {
                            *acc += v;
                        }
                    }
                }
                send(*x, Tensor { shape: self.shape(*x).to_vec(), data: gx });
            }
            Op::MixtureSum(c, w) => {
                let (tc, tw) = (self.value(*c), self.value(*w));
                let (b, n, p) = (tc.shape[0], tc.shape[1], tc.shape[2]);
                let mut gc = vec![0.0; b * n * p];
                let mut gw = vec![0.0; b * n];
                for r in 0..b {
                    let gr = &g.data[r * p..(r + 1) * p];
                    for i in 0..n {
                        let off = (r * n + i) * p;
                        let wv = tw.data[r * n + i];
                        let mut dot = 0.0;
                        for j in 0..p {
                            gc[off + j] = wv * gr[j];
                            dot += gr[j] * tc.data[off + j];
                        }
                        gw[r * n + i] = dot;
                    }
                }
                send(*c, Tensor { shape: tc.shape.clone(), data: gc });
                send(*w, Tensor { shape: tw.shape.clone(), data: gw });
            }
            Op::Pick(x, index) => {
                let shape = self.shape(*x).to_vec();
                let cols = shape[1];
                let mut gx = vec![0.0; shape[0] * cols];
                for (r, &i) in index.iter().enumerate() {
                    gx[r * cols + i] = g.data[r];
                }
                send(*x, Tensor { shape, data: gx });
            }
        }
    }
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
    if x > 30.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Max-subtracted softmax of one row.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// `c = a · b` for row-major output; `a` is `m×k`, `b` is `k×n`, each given
/// with explicit (row, column) strides so transposes need no copies.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], sa: (usize, usize), b: &[f64], sb: (usize, usize), c: &mut [f64]) {
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    // SAFETY: the slices cover every index reachable through the given
    // extents and strides, which the callers derive from tensor shapes.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
