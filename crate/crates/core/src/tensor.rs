//! Dense `f64` tensors and a reverse-mode tape.
//!
//! A [`Tape`] records every operation of one forward pass as a node holding
//! its output value and the information its backward rule needs. Calling
//! [`Tape::backward`] on a scalar node walks the nodes once, in reverse
//! recording order, and accumulates gradients into every leaf that was
//! registered with [`Tape::param`]. The tape is dropped after the step.

use std::sync::atomic::{AtomicBool, Ordering};

use crate::error::{Error, Result};

static FINITE_CHECKS: AtomicBool = AtomicBool::new(cfg!(debug_assertions));

/// Enable or disable the NaN/Inf guard run on every op output.
///
/// On by default in debug and test builds, off in release builds.
pub fn set_finite_checks(enabled: bool) {
    FINITE_CHECKS.store(enabled, Ordering::Relaxed);
}

pub fn finite_checks_enabled() -> bool {
    FINITE_CHECKS.load(Ordering::Relaxed)
}

/// Dense row-major tensor with an optional gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&e| e == 0) {
            return Err(Error::Dimension(format!(
                "extents must be positive, got {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} holds {n} values but {} were given",
                data.len()
            )));
        }
        if finite_checks_enabled() && data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Tensor::new"));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), vec![0.0; n]).expect("zeros: invalid shape")
    }

    pub fn ones(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), vec![1.0; n]).expect("ones: invalid shape")
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n).map(&mut f).collect();
        Tensor::new(shape.to_vec(), data).expect("from_fn: invalid shape")
    }

    pub fn matrix(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged matrix rows".into()));
        }
        Tensor::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        Tensor::from_fn(&[n, n], |i| if i / n == i % n { 1.0 } else { 0.0 })
    }

    pub fn with_requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::Contract(format!(
                "item() on non-scalar tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn at2(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.shape[1] + j]
    }

    /// Same data under a new shape with the same element count.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape.to_vec(), self.data.clone())
    }

    fn accumulate_grad(&mut self, g: &[f64]) {
        match &mut self.grad {
            Some(buf) => buf.iter_mut().zip(g).for_each(|(b, x)| *b += x),
            None => self.grad = Some(g.to_vec()),
        }
    }
}

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum MatKind {
    /// a · b
    NN,
    /// a · bᵀ
    NT,
    /// aᵀ · b
    TN,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, kind: MatKind },
    Transpose(Var),
    SwapLast2(Var),
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulScalar(Var, f64),
    AddBroadcast(Var, Var),
    Sum(Var),
    Mean(Var),
    Tanh(Var),
    RowAffine { a: Var, scale: Vec<f64> },
    Mse { pred: Var, target: Vec<f64> },
    Expand { a: Var, width: usize, jacobian: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Dynamic record of one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    expand_fault: Option<f64>,
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

    /// Scales every `expand` jacobian during backward. Negative-control hook
    /// for the gradient checker; never set in training.
    #[doc(hidden)]
    pub fn inject_expand_fault(&mut self, scale: f64) {
        self.expand_fault = Some(scale);
    }

    /// Register a constant input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_unchecked(value.with_requires_grad(false), Op::Leaf, false)
    }

    /// Register a trainable leaf; its gradient is available after `backward`.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_unchecked(value.with_requires_grad(true), Op::Leaf, true)
    }

    /// Register a leaf keeping the tensor's own `requires_grad` flag.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        let rg = value.requires_grad();
        self.push_unchecked(value, Op::Leaf, rg)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push_unchecked(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(
        &mut self,
        name: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        op: Op,
        parents: &[Var],
    ) -> Result<Var> {
        if finite_checks_enabled() && data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(name));
        }
        let needs_grad = parents.iter().any(|&p| self.needs(p));
        let value = Tensor {
            shape,
            data,
            grad: None,
            requires_grad: false,
        };
        Ok(self.push_unchecked(value, op, needs_grad))
    }

    fn rank2(&self, v: Var) -> Result<(usize, usize)> {
        match self.shape(v) {
            &[m, k] => Ok((m, k)),
            other => Err(Error::Rank {
                expected: 2,
                got: other.to_vec(),
            }),
        }
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn matmul_kind(&mut self, a: Var, b: Var, kind: MatKind) -> Result<Var> {
        let (ar, ac) = self.rank2(a)?;
        let (br, bc) = self.rank2(b)?;
        let (m, k, n, k2) = match kind {
            MatKind::NN => (ar, ac, bc, br),
            MatKind::NT => (ar, ac, br, bc),
            MatKind::TN => (ac, ar, bc, br),
        };
        if k != k2 {
            let what = match kind {
                MatKind::NN => "matmul",
                MatKind::NT => "matmul_nt",
                MatKind::TN => "matmul_tn",
            };
            return Err(Error::Dimension(format!(
                "{what}: inner dimensions disagree for shapes {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            kind == MatKind::TN,
            self.value(b).data(),
            kind == MatKind::NT,
            &mut out,
            false,
        );
        self.push("matmul", vec![m, n], out, Op::MatMul { a, b, kind }, &[a, b])
    }

    /// `a · b` for `a: [m, k]`, `b: [k, p]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_kind(a, b, MatKind::NN)
    }

    /// `a · bᵀ` for `a: [m, k]`, `b: [p, k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_kind(a, b, MatKind::NT)
    }

    /// `aᵀ · b` for `a: [k, m]`, `b: [k, p]`.
    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_kind(a, b, MatKind::TN)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, k) = self.rank2(a)?;
        let out = transpose_block(self.value(a).data(), m, k);
        self.push("transpose", vec![k, m], out, Op::Transpose(a), &[a])
    }

    /// Transposes the two trailing axes of a rank-3 tensor `[b, m, k] -> [b, k, m]`.
    pub fn swap_last2(&mut self, a: Var) -> Result<Var> {
        let (b, m, k) = match self.shape(a) {
            &[b, m, k] => (b, m, k),
            other => {
                return Err(Error::Rank {
                    expected: 3,
                    got: other.to_vec(),
                })
            }
        };
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(src.len());
        for blk in src.chunks_exact(m * k) {
            out.extend(transpose_block(blk, m, k));
        }
        self.push("swap_last2", vec![b, k, m], out, Op::SwapLast2(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(a).len() || shape.iter().any(|&e| e == 0) {
            return Err(Error::Dimension(format!(
                "reshape: cannot view {:?} as {shape:?}",
                self.shape(a)
            )));
        }
        let data = self.value(a).data().to_vec();
        self.push("reshape", shape.to_vec(), data, Op::Reshape(a), &[a])
    }

    /// Collapse to `[rows, rest]`, keeping the leading axis.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let rows = shape[0];
        let rest = shape[1..].iter().product::<usize>().max(1);
        self.reshape(a, &[rows, rest])
    }

    fn zip(&mut self, a: Var, b: Var, name: &'static str, f: fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(a, b, name)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(name, shape, data, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn mul_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let data = self.value(a).data().iter().map(|x| x * s).collect();
        let shape = self.shape(a).to_vec();
        self.push("mul_scalar", shape, data, Op::MulScalar(a, s), &[a])
    }

    /// Adds `b` to every leading-axis slice of `a` (`a: [n, ...b.shape]`).
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != sb.len() + 1 || sa[1..] != *sb {
            return Err(Error::Dimension(format!(
                "add_broadcast: {sb:?} does not broadcast over {sa:?}"
            )));
        }
        let bd = self.value(b).data();
        let data = self
            .value(a)
            .data()
            .chunks_exact(bd.len())
            .flat_map(|blk| blk.iter().zip(bd).map(|(x, y)| x + y))
            .collect();
        let shape = sa.to_vec();
        self.push("add_broadcast", shape, data, Op::AddBroadcast(a, b), &[a, b])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push("sum", vec![1], vec![s], Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push("mean", vec![1], vec![s], Op::Mean(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let data = self.value(a).data().iter().map(|x| x.tanh()).collect();
        let shape = self.shape(a).to_vec();
        self.push("tanh", shape, data, Op::Tanh(a), &[a])
    }

    /// `out[i, j] = a[i, j] * scale[i] + shift[i]` with constant `scale`, `shift`.
    pub fn row_affine(&mut self, a: Var, scale: &[f64], shift: &[f64]) -> Result<Var> {
        let (rows, cols) = self.rank2(a)?;
        if scale.len() != rows || shift.len() != rows {
            return Err(Error::Dimension(format!(
                "row_affine: {rows} rows but {} scales and {} shifts",
                scale.len(),
                shift.len()
            )));
        }
        let data = self
            .value(a)
            .data()
            .chunks_exact(cols)
            .enumerate()
            .flat_map(|(i, row)| row.iter().map(move |x| x * scale[i] + shift[i]))
            .collect();
        self.push(
            "row_affine",
            vec![rows, cols],
            data,
            Op::RowAffine {
                a,
                scale: scale.to_vec(),
            },
            &[a],
        )
    }

    /// Mean squared error against a constant target of the same shape.
    pub fn mse(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        if self.shape(pred) != target.shape() {
            return Err(Error::Dimension(format!(
                "mse: prediction {:?} vs target {:?}",
                self.shape(pred),
                target.shape()
            )));
        }
        let p = self.value(pred).data();
        let n = p.len() as f64;
        let loss = p
            .iter()
            .zip(target.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / n;
        self.push(
            "mse",
            vec![1],
            vec![loss],
            Op::Mse {
                pred,
                target: target.data().to_vec(),
            },
            &[pred],
        )
    }

    /// Expands every element of `a` into `width` outputs via `f(x, values, derivs)`,
    /// which fills the outputs and their derivatives with respect to `x`.
    /// The output appends a trailing factor of `width` to the last axis.
    pub fn expand<F>(&mut self, a: Var, width: usize, f: F) -> Result<Var>
    where
        F: Fn(f64, &mut [f64], &mut [f64]),
    {
        let src = self.value(a).data();
        let mut out = vec![0.0; src.len() * width];
        let mut jac = vec![0.0; src.len() * width];
        for ((x, o), j) in src
            .iter()
            .zip(out.chunks_exact_mut(width))
            .zip(jac.chunks_exact_mut(width))
        {
            f(*x, o, j);
        }
        let mut shape = self.shape(a).to_vec();
        *shape.last_mut().unwrap() *= width;
        if !self.needs(a) {
            jac = Vec::new();
        }
        self.push(
            "expand",
            shape,
            out,
            Op::Expand {
                a,
                width,
                jacobian: jac,
            },
            &[a],
        )
    }

    /// Reverse sweep from a scalar root. Leaf gradients accumulate across calls.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).len() != 1 {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.shape(root)
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        adj[root.0] = Some(vec![1.0]);
        let mut leaf_grads = Vec::new();

        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => leaf_grads.push((i, g)),
                Op::MatMul { a, b, kind } => {
                    let (a, b, kind) = (*a, *b, *kind);
                    let (ad, bd) = (self.value(a).data(), self.value(b).data());
                    let (ar, ac) = (self.shape(a)[0], self.shape(a)[1]);
                    let (br, bc) = (self.shape(b)[0], self.shape(b)[1]);
                    let out_cols = node.value.shape()[1];
                    let out_rows = node.value.shape()[0];
                    if self.needs(a) {
                        let ga = slot(&mut adj, a, ar * ac);
                        match kind {
                            // C = A·B: dA = G·Bᵀ
                            MatKind::NN => gemm(ar, out_cols, ac, &g, false, bd, true, ga, true),
                            // C = A·Bᵀ: dA = G·B
                            MatKind::NT => gemm(ar, out_cols, ac, &g, false, bd, false, ga, true),
                            // C = Aᵀ·B: dA = B·Gᵀ
                            MatKind::TN => gemm(ar, bc, ac, bd, false, &g, true, ga, true),
                        }
                    }
                    if self.needs(b) {
                        let gb = slot(&mut adj, b, br * bc);
                        match kind {
                            // dB = Aᵀ·G
                            MatKind::NN => gemm(br, out_rows, bc, ad, true, &g, false, gb, true),
                            // dB = Gᵀ·A
                            MatKind::NT => gemm(br, out_rows, bc, &g, true, ad, false, gb, true),
                            // dB = A·G
                            MatKind::TN => gemm(br, ac, bc, ad, false, &g, false, gb, true),
                        }
                    }
                }
                Op::Transpose(a) => {
                    let a = *a;
                    if self.needs(a) {
                        let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                        let t = transpose_block(&g, k, m);
                        add_into(slot(&mut adj, a, m * k), &t);
                    }
                }
                Op::SwapLast2(a) => {
                    let a = *a;
                    if self.needs(a) {
                        let s = self.shape(a);
                        let (m, k) = (s[1], s[2]);
                        let ga = slot(&mut adj, a, g.len());
                        for (dst, blk) in ga.chunks_exact_mut(m * k).zip(g.chunks_exact(m * k)) {
                            add_into(dst, &transpose_block(blk, k, m));
                        }
                    }
                }
                Op::Reshape(a) => {
                    let a = *a;
                    if self.needs(a) {
                        add_into(slot(&mut adj, a, g.len()), &g);
                    }
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    for p in [a, b] {
                        if self.needs(p) {
                            add_into(slot(&mut adj, p, g.len()), &g);
                        }
                    }
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.needs(a) {
                        add_into(slot(&mut adj, a, g.len()), &g);
                    }
                    if self.needs(b) {
                        let gb = slot(&mut adj, b, g.len());
                        gb.iter_mut().zip(&g).for_each(|(d, x)| *d -= x);
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.needs(a) {
                        let bd = self.value(b).data();
                        let ga = slot(&mut adj, a, g.len());
                        for ((d, x), y) in ga.iter_mut().zip(&g).zip(bd) {
                            *d += x * y;
                        }
                    }
                    if self.needs(b) {
                        let ad = self.value(a).data();
                        let gb = slot(&mut adj, b, g.len());
                        for ((d, x), y) in gb.iter_mut().zip(&g).zip(ad) {
                            *d += x * y;
                        }
                    }
                }
                Op::MulScalar(a, s) => {
                    let (a, s) = (*a, *s);
                    if self.needs(a) {
                        let ga = slot(&mut adj, a, g.len());
                        ga.iter_mut().zip(&g).for_each(|(d, x)| *d += s * x);
                    }
                }
                Op::AddBroadcast(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.needs(a) {
                        add_into(slot(&mut adj, a, g.len()), &g);
                    }
                    if self.needs(b) {
                        let n = self.value(b).len();
                        let gb = slot(&mut adj, b, n);
                        for blk in g.chunks_exact(n) {
                            add_into(gb, blk);
                        }
                    }
                }
                Op::Sum(a) => {
                    let a = *a;
                    let n = self.value(a).len();
                    let ga = slot(&mut adj, a, n);
                    ga.iter_mut().for_each(|d| *d += g[0]);
                }
                Op::Mean(a) => {
                    let a = *a;
                    let n = self.value(a).len();
                    let ga = slot(&mut adj, a, n);
                    let s = g[0] / n as f64;
                    ga.iter_mut().for_each(|d| *d += s);
                }
                Op::Tanh(a) => {
                    let a = *a;
                    let y = node.value.data();
                    let ga = slot(&mut adj, a, g.len());
                    for ((d, x), t) in ga.iter_mut().zip(&g).zip(y) {
                        *d += x * (1.0 - t * t);
                    }
                }
                Op::RowAffine { a, scale } => {
                    let a = *a;
                    let cols = node.value.shape()[1];
                    let ga = slot(&mut adj, a, g.len());
                    for (i, (d, x)) in ga.chunks_exact_mut(cols).zip(g.chunks_exact(cols)).enumerate() {
                        d.iter_mut().zip(x).for_each(|(d, x)| *d += x * scale[i]);
                    }
                }
                Op::Mse { pred, target } => {
                    let pred = *pred;
                    let p = self.value(pred).data();
                    let s = 2.0 * g[0] / p.len() as f64;
                    let gp = slot(&mut adj, pred, p.len());
                    for ((d, x), y) in gp.iter_mut().zip(p).zip(target) {
                        *d += s * (x - y);
                    }
                }
                Op::Expand { a, width, jacobian } => {
                    let (a, width) = (*a, *width);
                    let fault = self.expand_fault.unwrap_or(1.0);
                    let n = self.value(a).len();
                    let ga = slot(&mut adj, a, n);
                    for ((d, gs), js) in ga
                        .iter_mut()
                        .zip(g.chunks_exact(width))
                        .zip(jacobian.chunks_exact(width))
                    {
                        *d += fault * gs.iter().zip(js).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
            }
        }

        for (i, g) in leaf_grads {
            if self.nodes[i].value.requires_grad {
                self.nodes[i].value.accumulate_grad(&g);
            }
        }
        Ok(())
    }
}

fn slot(adj: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    adj[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

/// Transpose a row-major `[m, k]` block into `[k, m]`.
fn transpose_block(src: &[f64], m: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        for j in 0..k {
            out[j * m + i] = src[i * k + j];
        }
    }
    out
}

/// `c (+)= op(a) · op(b)` where `op(a)` is `[m, k]` and `op(b)` is `[k, n]`;
/// `a_t`/`b_t` mark operands stored transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above bound every strided access within the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
