use std::borrow::Cow;

use super::{gemm, Tensor, TensorError};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddScalar(Var),
    Scale(Var, f64),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Log(Var),
    Square(Var),
    Powf(Var, f64),
    ClampMin(Var, f64),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    SumCols(Var),
    BroadcastRows(Var),
    BroadcastCols(Var),
    Transpose(Var),
    GatherRows(Var, Vec<usize>),
    ConcatRows(Var, Var),
    SliceRows(Var, usize),
    PairwiseSqDist(Var, Var),
}

struct Node<'a> {
    shape: Vec<usize>,
    value: Cow<'a, [f64]>,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Recorded computation. Nodes are appended in evaluation order, so the node
/// list is a topological order and backward is a single reverse sweep.
///
/// Leaves may borrow their values (`'a`), which lets parameter vectors enter
/// the graph without a copy.
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
    check_finite: bool,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn as_matrix(shape: &[usize]) -> Option<(usize, usize)> {
    match shape {
        [r, c] => Some((*r, *c)),
        _ => None,
    }
}

fn add_into(dst: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
    dst.get_or_insert_with(|| vec![0.0; len])
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            check_finite: false,
        }
    }

    /// Enables NaN/Inf detection after every primitive.
    pub fn with_finite_checks(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(
        &mut self,
        op_name: &'static str,
        shape: Vec<usize>,
        value: Cow<'a, [f64]>,
        op: Op,
        requires_grad: bool,
    ) -> Result<Var, TensorError> {
        debug_assert_eq!(numel(&shape), value.len());
        if self.check_finite && value.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: op_name });
        }
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn node(&self, v: Var) -> &Node<'a> {
        &self.nodes[v.0]
    }

    fn grad_flag(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.node(*v).requires_grad)
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push("constant", shape, Cow::Owned(t.into_data()), Op::Leaf, false)
            .expect("constant leaf")
    }

    /// Constant input borrowed from the caller.
    pub fn constant_ref(&mut self, shape: &[usize], data: &'a [f64]) -> Result<Var, TensorError> {
        self.leaf(shape, data, false)
    }

    /// Trainable leaf borrowed from the caller; gradients accumulate on it.
    pub fn param_ref(&mut self, shape: &[usize], data: &'a [f64]) -> Result<Var, TensorError> {
        self.leaf(shape, data, true)
    }

    /// Trainable leaf owning its value.
    pub fn param(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push("param", shape, Cow::Owned(t.into_data()), Op::Leaf, true)
            .expect("param leaf")
    }

    fn leaf(&mut self, shape: &[usize], data: &'a [f64], trainable: bool) -> Result<Var, TensorError> {
        if numel(shape) != data.len() {
            return Err(TensorError::Dimension {
                op: "leaf",
                lhs: shape.to_vec(),
                rhs: vec![data.len()],
            });
        }
        self.push(
            "leaf",
            shape.to_vec(),
            Cow::Borrowed(data),
            Op::Leaf,
            trainable,
        )
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn data(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    /// Detached copy of a node's value.
    pub fn value(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.to_vec()).expect("node shape is consistent")
    }

    /// Single value of a one-element node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        self.node(v).value[0]
    }

    /// Accumulated gradient of the last backward root(s) with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.node(v).grad.as_deref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    /// Clears every accumulated gradient.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (m, k, n) = match (as_matrix(sa), as_matrix(sb)) {
            (Some((m, k)), Some((k2, n))) if k == k2 => (m, k, n),
            _ => {
                return Err(TensorError::Dimension {
                    op: "matmul",
                    lhs: sa.to_vec(),
                    rhs: sb.to_vec(),
                })
            }
        };
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            (self.data(a), k, 1),
            (self.data(b), n, 1),
            &mut out,
            0.0,
        );
        let rg = self.grad_flag(&[a, b]);
        self.push("matmul", vec![m, n], Cow::Owned(out), Op::MatMul(a, b), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let (r, c) = as_matrix(self.shape(a)).ok_or_else(|| TensorError::Dimension {
            op: "transpose",
            lhs: self.shape(a).to_vec(),
            rhs: vec![],
        })?;
        let src = self.data(a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let rg = self.grad_flag(&[a]);
        self.push("transpose", vec![c, r], Cow::Owned(out), Op::Transpose(a), rg)
    }

    /// Squared Euclidean distances between the rows of `a` (m×d) and `b` (k×d).
    pub fn pairwise_sq_dist(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, d, k) = match (as_matrix(self.shape(a)), as_matrix(self.shape(b))) {
            (Some((m, d)), Some((k, d2))) if d == d2 => (m, d, k),
            _ => {
                return Err(TensorError::Dimension {
                    op: "pairwise_sq_dist",
                    lhs: self.shape(a).to_vec(),
                    rhs: self.shape(b).to_vec(),
                })
            }
        };
        let (da, db) = (self.data(a), self.data(b));
        let mut out = vec![0.0; m * k];
        for i in 0..m {
            let ai = &da[i * d..(i + 1) * d];
            for j in 0..k {
                let bj = &db[j * d..(j + 1) * d];
                out[i * k + j] = ai.iter().zip(bj).map(|(x, y)| (x - y) * (x - y)).sum();
            }
        }
        let rg = self.grad_flag(&[a, b]);
        self.push(
            "pairwise_sq_dist",
            vec![m, k],
            Cow::Owned(out),
            Op::PairwiseSqDist(a, b),
            rg,
        )
    }

    // ---- elementwise ----

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (la, lb) = (numel(&sa), numel(&sb));
        let (out_shape, out) = if sa == sb {
            let out = self
                .data(a)
                .iter()
                .zip(self.data(b))
                .map(|(x, y)| f(*x, *y))
                .collect::<Vec<_>>();
            (sa, out)
        } else if lb == 1 {
            let y = self.data(b)[0];
            (sa, self.data(a).iter().map(|x| f(*x, y)).collect())
        } else if la == 1 {
            let x = self.data(a)[0];
            (sb, self.data(b).iter().map(|y| f(x, *y)).collect())
        } else {
            return Err(TensorError::Dimension {
                op: name,
                lhs: sa,
                rhs: sb,
            });
        };
        let rg = self.grad_flag(&[a, b]);
        self.push(name, out_shape, Cow::Owned(out), op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if self.data(b).iter().any(|v| *v == 0.0) {
            return Err(TensorError::Domain {
                op: "div",
                detail: "division by zero".into(),
            });
        }
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    fn unary(
        &mut self,
        name: &'static str,
        a: Var,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<Var, TensorError> {
        let shape = self.shape(a).to_vec();
        let out: Vec<f64> = self.data(a).iter().map(|x| f(*x)).collect();
        let rg = self.grad_flag(&[a]);
        self.push(name, shape, Cow::Owned(out), op, rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var, TensorError> {
        self.unary("add_scalar", a, |x| x + c, Op::AddScalar(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, TensorError> {
        self.unary("scale", a, |x| x * c, Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var, TensorError> {
        self.scale(a, -1.0)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        // NaN passes through so divergence stays visible
        self.unary("relu", a, |x| if x <= 0.0 { 0.0 } else { x }, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var, TensorError> {
        self.unary(
            "leaky_relu",
            a,
            |x| if x > 0.0 { x } else { slope * x },
            Op::LeakyRelu(a, slope),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary("sigmoid", a, sigmoid, Op::Sigmoid(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var, TensorError> {
        if let Some(bad) = self.data(a).iter().find(|v| !(**v > 0.0)) {
            return Err(TensorError::Domain {
                op: "log",
                detail: format!("non-positive argument {bad}"),
            });
        }
        self.unary("log", a, f64::ln, Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary("square", a, |x| x * x, Op::Square(a))
    }

    /// `x^p`; non-integer exponents require strictly positive input.
    pub fn powf(&mut self, a: Var, p: f64) -> Result<Var, TensorError> {
        if p.fract() != 0.0 {
            if let Some(bad) = self.data(a).iter().find(|v| !(**v > 0.0)) {
                return Err(TensorError::Domain {
                    op: "powf",
                    detail: format!("non-positive base {bad} with fractional exponent {p}"),
                });
            }
        }
        self.unary("powf", a, |x| x.powf(p), Op::Powf(a, p))
    }

    /// `max(x, floor)`; the gradient is zero where the floor is active.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Result<Var, TensorError> {
        self.unary("clamp_min", a, |x| x.max(floor), Op::ClampMin(a, floor))
    }

    // ---- reductions ----

    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let s = self.data(a).iter().sum::<f64>();
        let rg = self.grad_flag(&[a]);
        self.push("sum", vec![], Cow::Owned(vec![s]), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, TensorError> {
        let n = self.data(a).len() as f64;
        let s = self.data(a).iter().sum::<f64>() / n;
        let rg = self.grad_flag(&[a]);
        self.push("mean", vec![], Cow::Owned(vec![s]), Op::Mean(a), rg)
    }

    /// Sums each row of an m×n matrix into an m×1 column.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let (m, n) = self.matrix_dims("sum_rows", a)?;
        let src = self.data(a);
        let out: Vec<f64> = (0..m).map(|i| src[i * n..(i + 1) * n].iter().sum()).collect();
        let rg = self.grad_flag(&[a]);
        self.push("sum_rows", vec![m, 1], Cow::Owned(out), Op::SumRows(a), rg)
    }

    /// Sums each column of an m×n matrix into a 1×n row.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var, TensorError> {
        let (m, n) = self.matrix_dims("sum_cols", a)?;
        let src = self.data(a);
        let mut out = vec![0.0; n];
        for i in 0..m {
            for (o, v) in out.iter_mut().zip(&src[i * n..(i + 1) * n]) {
                *o += v;
            }
        }
        let rg = self.grad_flag(&[a]);
        self.push("sum_cols", vec![1, n], Cow::Owned(out), Op::SumCols(a), rg)
    }

    fn matrix_dims(&self, op: &'static str, a: Var) -> Result<(usize, usize), TensorError> {
        as_matrix(self.shape(a)).ok_or_else(|| TensorError::Dimension {
            op,
            lhs: self.shape(a).to_vec(),
            rhs: vec![],
        })
    }

    // ---- shape plumbing ----

    /// Repeats a row vector (`[n]` or `[1, n]`) `m` times.
    pub fn broadcast_rows(&mut self, row: Var, m: usize) -> Result<Var, TensorError> {
        let n = match self.shape(row) {
            [n] | [1, n] => *n,
            other => {
                return Err(TensorError::Dimension {
                    op: "broadcast_rows",
                    lhs: other.to_vec(),
                    rhs: vec![1, 0],
                })
            }
        };
        let src = self.data(row);
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(src);
        }
        let rg = self.grad_flag(&[row]);
        self.push(
            "broadcast_rows",
            vec![m, n],
            Cow::Owned(out),
            Op::BroadcastRows(row),
            rg,
        )
    }

    /// Repeats a column vector (`[m, 1]`) `n` times.
    pub fn broadcast_cols(&mut self, col: Var, n: usize) -> Result<Var, TensorError> {
        let m = match self.shape(col) {
            [m, 1] => *m,
            other => {
                return Err(TensorError::Dimension {
                    op: "broadcast_cols",
                    lhs: other.to_vec(),
                    rhs: vec![0, 1],
                })
            }
        };
        let src = self.data(col);
        let mut out = Vec::with_capacity(m * n);
        for &v in src.iter().take(m) {
            out.extend(std::iter::repeat_n(v, n));
        }
        let rg = self.grad_flag(&[col]);
        self.push(
            "broadcast_cols",
            vec![m, n],
            Cow::Owned(out),
            Op::BroadcastCols(col),
            rg,
        )
    }

    /// Rows of `a` picked by index (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var, TensorError> {
        let (m, n) = self.matrix_dims("gather_rows", a)?;
        if let Some(bad) = indices.iter().find(|&&i| i >= m) {
            return Err(TensorError::Contract(format!(
                "gather_rows index {bad} out of range for {m} rows"
            )));
        }
        let src = self.data(a);
        let mut out = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            out.extend_from_slice(&src[i * n..(i + 1) * n]);
        }
        let rg = self.grad_flag(&[a]);
        self.push(
            "gather_rows",
            vec![indices.len(), n],
            Cow::Owned(out),
            Op::GatherRows(a, indices.to_vec()),
            rg,
        )
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let ((ma, na), (mb, nb)) = (
            self.matrix_dims("concat_rows", a)?,
            self.matrix_dims("concat_rows", b)?,
        );
        if na != nb {
            return Err(TensorError::Dimension {
                op: "concat_rows",
                lhs: vec![ma, na],
                rhs: vec![mb, nb],
            });
        }
        let mut out = Vec::with_capacity((ma + mb) * na);
        out.extend_from_slice(self.data(a));
        out.extend_from_slice(self.data(b));
        let rg = self.grad_flag(&[a, b]);
        self.push(
            "concat_rows",
            vec![ma + mb, na],
            Cow::Owned(out),
            Op::ConcatRows(a, b),
            rg,
        )
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        let (m, n) = self.matrix_dims("slice_rows", a)?;
        if start >= end || end > m {
            return Err(TensorError::Contract(format!(
                "slice_rows {start}..{end} invalid for {m} rows"
            )));
        }
        let out = self.data(a)[start * n..end * n].to_vec();
        let rg = self.grad_flag(&[a]);
        self.push(
            "slice_rows",
            vec![end - start, n],
            Cow::Owned(out),
            Op::SliceRows(a, start),
            rg,
        )
    }

    /// Value-identical node that blocks gradient flow.
    pub fn detach(&mut self, a: Var) -> Var {
        let shape = self.shape(a).to_vec();
        let value = self.data(a).to_vec();
        self.push("detach", shape, Cow::Owned(value), Op::Leaf, false)
            .expect("detach of finite node")
    }

    // ---- reverse pass ----

    /// Accumulates d(root)/d(node) into every node that requires a gradient.
    /// Repeated calls add up until [`Graph::zero_grad`].
    pub fn backward(&mut self, root: Var) -> Result<(), TensorError> {
        if numel(self.shape(root)) != 1 {
            return Err(TensorError::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.shape(root)
            )));
        }
        if root.0 >= self.nodes.len() {
            return Err(TensorError::Contract("backward root not on this graph".into()));
        }
        if !self.node(root).requires_grad {
            return Ok(());
        }
        let mut pass: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        pass[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = pass[i].take() else { continue };
            self.propagate(i, &g, &mut pass);
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], pass: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let rg = |v: &Var| self.nodes[v.0].requires_grad;
        let val = |v: &Var| -> &[f64] { &self.nodes[v.0].value };
        let len = |v: &Var| self.nodes[v.0].value.len();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = as_matrix(&self.nodes[a.0].shape).unwrap();
                let n = node.shape[1];
                if rg(a) {
                    // dA += G·Bᵀ
                    let dst = add_into(&mut pass[a.0], m * k);
                    gemm(m, n, k, (g, n, 1), (val(b), 1, n), dst, 1.0);
                }
                if rg(b) {
                    // dB += Aᵀ·G
                    let dst = add_into(&mut pass[b.0], k * n);
                    gemm(k, m, n, (val(a), 1, k), (g, n, 1), dst, 1.0);
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                for (v, s) in [(a, 1.0), (b, sign)] {
                    if rg(v) {
                        let n = len(v);
                        let dst = add_into(&mut pass[v.0], n);
                        if n == g.len() {
                            dst.iter_mut().zip(g).for_each(|(d, gi)| *d += s * gi);
                        } else {
                            dst[0] += s * g.iter().sum::<f64>();
                        }
                    }
                }
            }
            Op::Mul(a, b) | Op::Div(a, b) => {
                let is_div = matches!(node.op, Op::Div(..));
                let (xa, xb) = (val(a), val(b));
                let pick = |x: &[f64], idx: usize| if x.len() == 1 { x[0] } else { x[idx] };
                for (which, v) in [(0, a), (1, b)] {
                    if !rg(v) {
                        continue;
                    }
                    let n = len(v);
                    let dst = add_into(&mut pass[v.0], n);
                    for (idx, gi) in g.iter().enumerate() {
                        let (x, y) = (pick(xa, idx), pick(xb, idx));
                        let local = match (is_div, which) {
                            (false, 0) => y,
                            (false, _) => x,
                            (true, 0) => 1.0 / y,
                            (true, _) => -x / (y * y),
                        };
                        if n == 1 {
                            dst[0] += gi * local;
                        } else {
                            dst[idx] += gi * local;
                        }
                    }
                }
            }
            Op::AddScalar(a) => self.unary_back(a, g, pass, |_, _| 1.0),
            Op::Scale(a, c) => {
                let c = *c;
                self.unary_back(a, g, pass, move |_, _| c)
            }
            Op::Relu(a) => self.unary_back(a, g, pass, |x, _| if x > 0.0 { 1.0 } else { 0.0 }),
            Op::LeakyRelu(a, s) => {
                let s = *s;
                self.unary_back(a, g, pass, move |x, _| if x > 0.0 { 1.0 } else { s })
            }
            Op::Sigmoid(a) => self.unary_back_out(a, g, &node.value, pass, |y| y * (1.0 - y)),
            Op::Log(a) => self.unary_back(a, g, pass, |x, _| 1.0 / x),
            Op::Square(a) => self.unary_back(a, g, pass, |x, _| 2.0 * x),
            Op::Powf(a, p) => {
                let p = *p;
                self.unary_back(a, g, pass, move |x, _| p * x.powf(p - 1.0))
            }
            Op::ClampMin(a, f) => {
                let f = *f;
                self.unary_back(a, g, pass, move |x, _| if x > f { 1.0 } else { 0.0 })
            }
            Op::Sum(a) | Op::Mean(a) => {
                if rg(a) {
                    let n = len(a);
                    let scale = if matches!(node.op, Op::Mean(_)) {
                        1.0 / n as f64
                    } else {
                        1.0
                    };
                    let dst = add_into(&mut pass[a.0], n);
                    dst.iter_mut().for_each(|d| *d += g[0] * scale);
                }
            }
            Op::SumRows(a) => {
                if rg(a) {
                    let (m, n) = as_matrix(&self.nodes[a.0].shape).unwrap();
                    let dst = add_into(&mut pass[a.0], m * n);
                    for r in 0..m {
                        dst[r * n..(r + 1) * n].iter_mut().for_each(|d| *d += g[r]);
                    }
                }
            }
            Op::SumCols(a) => {
                if rg(a) {
                    let (m, n) = as_matrix(&self.nodes[a.0].shape).unwrap();
                    let dst = add_into(&mut pass[a.0], m * n);
                    for r in 0..m {
                        dst[r * n..(r + 1) * n]
                            .iter_mut()
                            .zip(g)
                            .for_each(|(d, gi)| *d += gi);
                    }
                }
            }
            Op::BroadcastRows(a) => {
                if rg(a) {
                    let n = len(a);
                    let m = node.shape[0];
                    let dst = add_into(&mut pass[a.0], n);
                    for r in 0..m {
                        dst.iter_mut()
                            .zip(&g[r * n..(r + 1) * n])
                            .for_each(|(d, gi)| *d += gi);
                    }
                }
            }
            Op::BroadcastCols(a) => {
                if rg(a) {
                    let m = len(a);
                    let n = node.shape[1];
                    let dst = add_into(&mut pass[a.0], m);
                    for r in 0..m {
                        dst[r] += g[r * n..(r + 1) * n].iter().sum::<f64>();
                    }
                }
            }
            Op::Transpose(a) => {
                if rg(a) {
                    let (r, c) = as_matrix(&self.nodes[a.0].shape).unwrap();
                    let dst = add_into(&mut pass[a.0], r * c);
                    for i in 0..r {
                        for j in 0..c {
                            dst[i * c + j] += g[j * r + i];
                        }
                    }
                }
            }
            Op::GatherRows(a, idx) => {
                if rg(a) {
                    let (m, n) = as_matrix(&self.nodes[a.0].shape).unwrap();
                    let dst = add_into(&mut pass[a.0], m * n);
                    for (out_r, &src_r) in idx.iter().enumerate() {
                        dst[src_r * n..(src_r + 1) * n]
                            .iter_mut()
                            .zip(&g[out_r * n..(out_r + 1) * n])
                            .for_each(|(d, gi)| *d += gi);
                    }
                }
            }
            Op::ConcatRows(a, b) => {
                let na = len(a);
                if rg(a) {
                    let dst = add_into(&mut pass[a.0], na);
                    dst.iter_mut().zip(&g[..na]).for_each(|(d, gi)| *d += gi);
                }
                if rg(b) {
                    let nb = len(b);
                    let dst = add_into(&mut pass[b.0], nb);
                    dst.iter_mut().zip(&g[na..]).for_each(|(d, gi)| *d += gi);
                }
            }
            Op::SliceRows(a, start) => {
                if rg(a) {
                    let n = node.shape[1];
                    let total = len(a);
                    let dst = add_into(&mut pass[a.0], total);
                    dst[start * n..start * n + g.len()]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(d, gi)| *d += gi);
                }
            }
            Op::PairwiseSqDist(a, b) => {
                let (m, d) = as_matrix(&self.nodes[a.0].shape).unwrap();
                let k = self.nodes[b.0].shape[0];
                let (xa, xb) = (val(a), val(b));
                let mut da = if rg(a) { Some(vec![0.0; m * d]) } else { None };
                let mut db = if rg(b) { Some(vec![0.0; k * d]) } else { None };
                for i in 0..m {
                    for j in 0..k {
                        let gij = 2.0 * g[i * k + j];
                        if gij == 0.0 {
                            continue;
                        }
                        for t in 0..d {
                            let diff = gij * (xa[i * d + t] - xb[j * d + t]);
                            if let Some(da) = da.as_mut() {
                                da[i * d + t] += diff;
                            }
                            if let Some(db) = db.as_mut() {
                                db[j * d + t] -= diff;
                            }
                        }
                    }
                }
                if let Some(da) = da {
                    let dst = add_into(&mut pass[a.0], m * d);
                    dst.iter_mut().zip(&da).for_each(|(x, y)| *x += y);
                }
                if let Some(db) = db {
                    let dst = add_into(&mut pass[b.0], k * d);
                    dst.iter_mut().zip(&db).for_each(|(x, y)| *x += y);
                }
            }
        }
    }

    fn unary_back(
        &self,
        a: &Var,
        g: &[f64],
        pass: &mut [Option<Vec<f64>>],
        local: impl Fn(f64, usize) -> f64,
    ) {
        if !self.nodes[a.0].requires_grad {
            return;
        }
        let x = &self.nodes[a.0].value;
        let dst = add_into(&mut pass[a.0], x.len());
        for (idx, ((d, gi), xi)) in dst.iter_mut().zip(g).zip(x.iter()).enumerate() {
            *d += gi * local(*xi, idx);
        }
    }

    fn unary_back_out(
        &self,
        a: &Var,
        g: &[f64],
        out: &[f64],
        pass: &mut [Option<Vec<f64>>],
        local: impl Fn(f64) -> f64,
    ) {
        if !self.nodes[a.0].requires_grad {
            return;
        }
        let dst = add_into(&mut pass[a.0], out.len());
        for ((d, gi), y) in dst.iter_mut().zip(g).zip(out) {
            *d += gi * local(*y);
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
