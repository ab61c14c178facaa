//! Tape-based reverse-mode automatic differentiation over `f64` arrays.
//!
//! A [`Tape`] is a single-use arena of computation nodes. Leaves hold inputs
//! and parameters; every operation appends a node recording its inputs and
//! output value. [`Tape::backward`] seeds the (scalar) loss with gradient 1
//! and sweeps the arena in reverse, accumulating vector-Jacobian products
//! into every node that (transitively) requires gradients.
//!
//! The op set is deliberately small: elementwise arithmetic, matrix products,
//! sigmoid/tanh/abs, 2-D convolution and transposed convolution (im2col),
//! concatenation, reshape, sum, and binary cross-entropy. Everything higher
//! level (dense layers, GRU cells, ODE integration) composes these.

use ndarray::{Array1, Array2, Array3, ArrayD, Ix1, Ix2, Ix3, IxDyn};

use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Prediction clamp for binary cross-entropy.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// `a + c·b`
    AddScaled(usize, usize, f64),
    Scale(usize, f64),
    Sum(usize),
    MatMul(usize, usize),
    MatVec(usize, usize),
    Sigmoid(usize),
    Tanh(usize),
    Abs(usize),
    Conv2d {
        input: usize,
        weight: usize,
        bias: usize,
        stride: usize,
        pad: usize,
    },
    ConvTranspose2d {
        input: usize,
        weight: usize,
        bias: usize,
        stride: usize,
        pad: usize,
    },
    Concat(Vec<usize>),
    Reshape(usize),
    /// Mean binary cross-entropy of clamped predictions against a constant
    /// `{0,1}` target (second index; never receives gradients).
    Bce(usize, usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddScaled(..) => "add_scaled",
            Op::Scale(..) => "scale",
            Op::Sum(..) => "sum",
            Op::MatMul(..) => "matmul",
            Op::MatVec(..) => "matvec",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Abs(..) => "abs",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "conv2d_transpose",
            Op::Concat(..) => "concat",
            Op::Reshape(..) => "reshape",
            Op::Bce(..) => "bce",
        }
    }
}

struct Node {
    data: ArrayD<f64>,
    op: Op,
    requires_grad: bool,
    label: Option<Box<str>>,
}

/// Single-use reverse-mode computation arena.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<ArrayD<f64>>>,
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

    fn push(&mut self, data: ArrayD<f64>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            data,
            op,
            requires_grad,
            label: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn req(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; receives no gradient.
    pub fn leaf(&mut self, data: impl Into<ArrayD<f64>>) -> Var {
        self.push(data.into(), Op::Leaf, false)
    }

    /// Differentiable input (parameter); gradient available after backward.
    pub fn leaf_grad(&mut self, data: impl Into<ArrayD<f64>>) -> Var {
        self.push(data.into(), Op::Leaf, true)
    }

    /// Attach a diagnostic label used in non-finite error reports.
    pub fn set_label(&mut self, v: Var, label: impl Into<String>) {
        self.nodes[v.0].label = Some(label.into().into_boxed_str());
    }

    pub fn value(&self, v: Var) -> &ArrayD<f64> {
        &self.nodes[v.0].data
    }

    /// Scalar value of a rank-0 or single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        let d = &self.nodes[v.0].data;
        debug_assert_eq!(d.len(), 1);
        *d.iter().next().expect("scalar node")
    }

    /// Gradient of the last backward pass, if the node required one.
    pub fn grad(&self, v: Var) -> Option<&ArrayD<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    fn binary_elementwise(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (da, db) = (&self.nodes[a.0].data, &self.nodes[b.0].data);
        if da.shape() != db.shape() {
            return Err(shape_err(op.name(), da.shape(), db.shape()));
        }
        let mut out = da.clone();
        out.zip_mut_with(db, |x, &y| *x = f(*x, y));
        let rg = self.req(a) || self.req(b);
        Ok(self.push(out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise(a, b, Op::Add(a.0, b.0), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise(a, b, Op::Sub(a.0, b.0), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise(a, b, Op::Mul(a.0, b.0), |x, y| x * y)
    }

    /// `a + c·b` fused (the RK4 workhorse).
    pub fn add_scaled(&mut self, a: Var, b: Var, c: f64) -> Result<Var> {
        self.binary_elementwise(a, b, Op::AddScaled(a.0, b.0, c), move |x, y| x + c * y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.nodes[a.0].data.mapv(|x| x * c);
        let rg = self.req(a);
        self.push(out, Op::Scale(a.0, c), rg)
    }

    /// Sum of all entries; rank-0 output.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].data.sum();
        let rg = self.req(a);
        self.push(ArrayD::from_elem(IxDyn(&[]), s), Op::Sum(a.0), rg)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let out = self.nodes[a.0].data.mapv(&f);
        let rg = self.req(a);
        self.push(out, op, rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a.0), |x| 1.0 / (1.0 + (-x).exp()))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a.0), f64::tanh)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Op::Abs(a.0), f64::abs)
    }

    /// `(m,k) · (k,n)` matrix product.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let da = as2(&self.nodes[a.0].data, "matmul lhs")?;
        let db = as2(&self.nodes[b.0].data, "matmul rhs")?;
        if da.ncols() != db.nrows() {
            return Err(shape_err("matmul", da.shape(), db.shape()));
        }
        let out = da.dot(&db).into_dyn();
        let rg = self.req(a) || self.req(b);
        Ok(self.push(out, Op::MatMul(a.0, b.0), rg))
    }

    /// `(m,k) · (k)` matrix-vector product.
    pub fn matvec(&mut self, a: Var, x: Var) -> Result<Var> {
        let da = as2(&self.nodes[a.0].data, "matvec lhs")?;
        let dx = as1(&self.nodes[x.0].data, "matvec rhs")?;
        if da.ncols() != dx.len() {
            return Err(shape_err("matvec", da.shape(), dx.shape()));
        }
        let out = da.dot(&dx).into_dyn();
        let rg = self.req(a) || self.req(x);
        Ok(self.push(out, Op::MatVec(a.0, x.0), rg))
    }

    /// 2-D convolution over `(C_in, H, W)` with weight `(C_out, C_in, kh, kw)`
    /// and per-output-channel bias, zero padding `pad`, square stride.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        let x = as3(&self.nodes[input.0].data, "conv2d input")?;
        let w = &self.nodes[weight.0].data;
        let b = as1(&self.nodes[bias.0].data, "conv2d bias")?;
        if w.ndim() != 4 || w.shape()[1] != x.shape()[0] || b.len() != w.shape()[0] {
            return Err(shape_err("conv2d", w.shape(), x.shape()));
        }
        let (c_out, c_in, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
        let (h, wd) = (x.shape()[1], x.shape()[2]);
        if h + 2 * pad < kh || wd + 2 * pad < kw {
            return Err(shape_err("conv2d", &[kh, kw], &[h, wd]));
        }
        let h_out = (h + 2 * pad - kh) / stride + 1;
        let w_out = (wd + 2 * pad - kw) / stride + 1;
        let col = im2col(&x, kh, kw, stride, pad, h_out, w_out);
        let w_mat = w
            .view()
            .into_shape_with_order((c_out, c_in * kh * kw))
            .expect("contiguous conv weight");
        let mut out_mat = w_mat.dot(&col);
        for (c, mut row) in out_mat.rows_mut().into_iter().enumerate() {
            row += b[c];
        }
        let out = out_mat
            .into_shape_clone((c_out, h_out, w_out))
            .expect("conv output reshape")
            .into_dyn();
        let rg = self.req(input) || self.req(weight) || self.req(bias);
        Ok(self.push(
            out,
            Op::Conv2d {
                input: input.0,
                weight: weight.0,
                bias: bias.0,
                stride,
                pad,
            },
            rg,
        ))
    }

    /// Transposed 2-D convolution (fractionally strided upsampling) over
    /// `(C_in, H, W)` with weight `(C_in, C_out, kh, kw)`; output spatial size
    /// is `(H−1)·stride − 2·pad + kh + out_pad`.
    pub fn conv2d_transpose(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        pad: usize,
        out_pad: usize,
    ) -> Result<Var> {
        let x = as3(&self.nodes[input.0].data, "conv2d_transpose input")?;
        let w = &self.nodes[weight.0].data;
        let b = as1(&self.nodes[bias.0].data, "conv2d_transpose bias")?;
        if w.ndim() != 4 || w.shape()[0] != x.shape()[0] || b.len() != w.shape()[1] {
            return Err(shape_err("conv2d_transpose", w.shape(), x.shape()));
        }
        let (c_in, c_out, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
        let (h, wd) = (x.shape()[1], x.shape()[2]);
        let h_out = (h - 1) * stride + kh + out_pad;
        let w_out = (wd - 1) * stride + kw + out_pad;
        if h_out < 2 * pad || w_out < 2 * pad {
            return Err(shape_err("conv2d_transpose", &[h_out, w_out], &[2 * pad, 2 * pad]));
        }
        let (h_out, w_out) = (h_out - 2 * pad, w_out - 2 * pad);
        let x_mat = x
            .into_shape_with_order((c_in, h * wd))
            .expect("contiguous input");
        let w_mat = w
            .view()
            .into_shape_with_order((c_in, c_out * kh * kw))
            .expect("contiguous weight");
        // cols[(c·kh + ki)·kw + kj, i·W + j] is the contribution of input
        // position (i, j) to output position (i·s − p + ki, j·s − p + kj).
        let cols = w_mat.t().dot(&x_mat);
        let mut out = Array3::zeros((c_out, h_out, w_out));
        col2im_accumulate(&cols.view(), &mut out, kh, kw, stride, pad, h, wd);
        for (c, mut plane) in out.outer_iter_mut().enumerate() {
            plane += b[c];
        }
        let rg = self.req(input) || self.req(weight) || self.req(bias);
        Ok(self.push(
            out.into_dyn(),
            Op::ConvTranspose2d {
                input: input.0,
                weight: weight.0,
                bias: bias.0,
                stride,
                pad,
            },
            rg,
        ))
    }

    /// Concatenate 1-D vectors in order.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument {
                context: "concat",
                detail: "no inputs".into(),
            });
        }
        let mut total = 0;
        for p in parts {
            total += as1(&self.nodes[p.0].data, "concat part")?.len();
        }
        let mut out = Array1::zeros(total);
        let mut off = 0;
        for p in parts {
            let d = &self.nodes[p.0].data;
            for (i, &v) in d.iter().enumerate() {
                out[off + i] = v;
            }
            off += d.len();
        }
        let rg = parts.iter().any(|&p| self.req(p));
        Ok(self.push(out.into_dyn(), Op::Concat(parts.iter().map(|p| p.0).collect()), rg))
    }

    /// View the same entries under a new shape (row-major order preserved).
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let d = &self.nodes[a.0].data;
        if shape.iter().product::<usize>() != d.len() {
            return Err(shape_err("reshape", shape, d.shape()));
        }
        let out = d
            .clone()
            .into_shape_with_order(IxDyn(shape))
            .expect("element count checked");
        let rg = self.req(a);
        Ok(self.push(out, Op::Reshape(a.0), rg))
    }

    /// Mean binary cross-entropy of `pred` (clamped to
    /// `[BCE_CLAMP, 1 − BCE_CLAMP]`) against a constant `{0,1}` target.
    pub fn bce(&mut self, pred: Var, target: Var) -> Result<Var> {
        let p = &self.nodes[pred.0].data;
        let t = &self.nodes[target.0].data;
        if p.shape() != t.shape() {
            return Err(shape_err("bce", p.shape(), t.shape()));
        }
        let n = p.len() as f64;
        let mut acc = 0.0;
        for (&pi, &ti) in p.iter().zip(t.iter()) {
            let pc = pi.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            acc -= ti * pc.ln() + (1.0 - ti) * (1.0 - pc).ln();
        }
        let rg = self.req(pred);
        Ok(self.push(
            ArrayD::from_elem(IxDyn(&[]), acc / n),
            Op::Bce(pred.0, target.0),
            rg,
        ))
    }

    /// Reverse sweep from a scalar loss. On a non-finite loss, reports the
    /// earliest non-finite node (by label or op name) instead of propagating
    /// garbage gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let ld = &self.nodes[loss.0].data;
        if ld.len() != 1 {
            return Err(Error::InvalidArgument {
                context: "backward",
                detail: format!("loss must be scalar, got shape {:?}", ld.shape()),
            });
        }
        if !ld.iter().all(|v| v.is_finite()) {
            return Err(self.diagnose_non_finite(loss));
        }
        let mut grads: Vec<Option<ArrayD<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(ArrayD::from_elem(self.nodes[loss.0].data.raw_dim(), 1.0));
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(mut g) = grads[id].take() else { continue };
            // Matrix products can yield column-major outputs for degenerate
            // shapes; the VJPs below reshape gradients freely, so normalize.
            if !g.is_standard_layout() {
                g = g.as_standard_layout().into_owned();
            }
            self.dispatch_vjp(id, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn diagnose_non_finite(&self, loss: Var) -> Error {
        for (id, node) in self.nodes.iter().enumerate().take(loss.0 + 1) {
            if !node.data.iter().all(|v| v.is_finite()) {
                let name = node
                    .label
                    .as_deref()
                    .map(str::to_owned)
                    .unwrap_or_else(|| format!("{} (node {id})", node.op.name()));
                return Error::NonFinite {
                    node: name,
                    detail: "first non-finite value on the tape".into(),
                };
            }
        }
        Error::NonFinite {
            node: "loss".into(),
            detail: "loss non-finite but all nodes finite (unexpected)".into(),
        }
    }

    fn dispatch_vjp(&self, id: usize, g: &ArrayD<f64>, grads: &mut [Option<ArrayD<f64>>]) -> Result<()> {
        let acc = |grads: &mut [Option<ArrayD<f64>>], nodes: &[Node], tgt: usize, delta: ArrayD<f64>| {
            if nodes[tgt].requires_grad {
                match &mut grads[tgt] {
                    Some(g) => *g += &delta,
                    slot => *slot = Some(delta),
                }
            }
        };
        let nodes = &self.nodes;
        match nodes[id].op.clone() {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(grads, nodes, a, g.clone());
                acc(grads, nodes, b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(grads, nodes, a, g.clone());
                acc(grads, nodes, b, g.mapv(|v| -v));
            }
            Op::Mul(a, b) => {
                acc(grads, nodes, a, g * &nodes[b].data);
                acc(grads, nodes, b, g * &nodes[a].data);
            }
            Op::AddScaled(a, b, c) => {
                acc(grads, nodes, a, g.clone());
                acc(grads, nodes, b, g.mapv(|v| v * c));
            }
            Op::Scale(a, c) => acc(grads, nodes, a, g.mapv(|v| v * c)),
            Op::Sum(a) => {
                let gv = *g.iter().next().expect("scalar grad");
                acc(grads, nodes, a, ArrayD::from_elem(nodes[a].data.raw_dim(), gv));
            }
            Op::MatMul(a, b) => {
                let gm = as2(g, "matmul grad")?;
                let da = as2(&nodes[a].data, "matmul lhs")?;
                let db = as2(&nodes[b].data, "matmul rhs")?;
                acc(grads, nodes, a, gm.dot(&db.t()).into_dyn());
                acc(grads, nodes, b, da.t().dot(&gm).into_dyn());
            }
            Op::MatVec(a, x) => {
                let gv = as1(g, "matvec grad")?;
                let da = as2(&nodes[a].data, "matvec lhs")?;
                let dx = as1(&nodes[x].data, "matvec rhs")?;
                // Outer product g ⊗ x for the matrix, Aᵀ·g for the vector.
                let mut ga = Array2::zeros((da.nrows(), da.ncols()));
                for i in 0..da.nrows() {
                    for j in 0..da.ncols() {
                        ga[(i, j)] = gv[i] * dx[j];
                    }
                }
                acc(grads, nodes, a, ga.into_dyn());
                acc(grads, nodes, x, da.t().dot(&gv).into_dyn());
            }
            Op::Sigmoid(a) => {
                let y = &nodes[id].data;
                acc(grads, nodes, a, g * &y.mapv(|s| s * (1.0 - s)));
            }
            Op::Tanh(a) => {
                let y = &nodes[id].data;
                acc(grads, nodes, a, g * &y.mapv(|t| 1.0 - t * t));
            }
            Op::Abs(a) => {
                let x = &nodes[a].data;
                acc(grads, nodes, a, g * &x.mapv(|v| if v >= 0.0 { 1.0 } else { -1.0 }));
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            } => {
                let x = as3(&nodes[input].data, "conv2d input")?;
                let w = &nodes[weight].data;
                let (c_out, c_in, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
                let g3 = as3(g, "conv2d grad")?;
                let (h_out, w_out) = (g3.shape()[1], g3.shape()[2]);
                let g_mat = g3
                    .into_shape_with_order((c_out, h_out * w_out))
                    .expect("contiguous grad");
                if nodes[bias].requires_grad {
                    let gb = Array1::from_iter(g_mat.rows().into_iter().map(|r| r.sum()));
                    acc(grads, nodes, bias, gb.into_dyn());
                }
                if nodes[weight].requires_grad {
                    let col = im2col(&x, kh, kw, stride, pad, h_out, w_out);
                    let gw = g_mat
                        .dot(&col.t())
                        .into_shape_clone((c_out, c_in, kh, kw))
                        .expect("weight grad reshape");
                    acc(grads, nodes, weight, gw.into_dyn());
                }
                if nodes[input].requires_grad {
                    let w_mat = w
                        .view()
                        .into_shape_with_order((c_out, c_in * kh * kw))
                        .expect("contiguous weight");
                    let gcol = w_mat.t().dot(&g_mat);
                    let mut gx = Array3::zeros((c_in, x.shape()[1], x.shape()[2]));
                    col2im_grad(&gcol.view(), &mut gx, kh, kw, stride, pad, h_out, w_out);
                    acc(grads, nodes, input, gx.into_dyn());
                }
            }
            Op::ConvTranspose2d {
                input,
                weight,
                bias,
                stride,
                pad,
            } => {
                let x = as3(&nodes[input].data, "conv2d_transpose input")?;
                let w = &nodes[weight].data;
                let (c_in, c_out, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
                let g3 = as3(g, "conv2d_transpose grad")?;
                let (h, wd) = (x.shape()[1], x.shape()[2]);
                // Gather the cols-shaped gradient back out of the scattered
                // output gradient, then reuse the matmul adjoints.
                let mut gcols = Array2::zeros((c_out * kh * kw, h * wd));
                im2col_from_output_grad(&g3, &mut gcols, kh, kw, stride, pad, h, wd);
                if nodes[bias].requires_grad {
                    let gb = Array1::from_iter(g3.outer_iter().map(|plane| plane.sum()));
                    acc(grads, nodes, bias, gb.into_dyn());
                }
                let x_mat = x.into_shape_with_order((c_in, h * wd)).expect("contiguous input");
                if nodes[weight].requires_grad {
                    let gw = x_mat
                        .dot(&gcols.t())
                        .into_shape_clone((c_in, c_out, kh, kw))
                        .expect("weight grad reshape");
                    acc(grads, nodes, weight, gw.into_dyn());
                }
                if nodes[input].requires_grad {
                    let w_mat = w
                        .view()
                        .into_shape_with_order((c_in, c_out * kh * kw))
                        .expect("contiguous weight");
                    let gx = w_mat
                        .dot(&gcols)
                        .into_shape_clone((c_in, h, wd))
                        .expect("input grad reshape");
                    acc(grads, nodes, input, gx.into_dyn());
                }
            }
            Op::Concat(parts) => {
                let gv = as1(g, "concat grad")?;
                let mut off = 0;
                for p in parts {
                    let len = nodes[p].data.len();
                    let slice = gv.slice(ndarray::s![off..off + len]).to_owned();
                    acc(grads, nodes, p, slice.into_dyn());
                    off += len;
                }
            }
            Op::Reshape(a) => {
                let back = g
                    .clone()
                    .into_shape_with_order(nodes[a].data.raw_dim())
                    .expect("reshape grad");
                acc(grads, nodes, a, back);
            }
            Op::Bce(pred, target) => {
                let gv = *g.iter().next().expect("scalar grad");
                let p = &nodes[pred].data;
                let t = &nodes[target].data;
                let n = p.len() as f64;
                let mut gp = p.clone();
                gp.zip_mut_with(t, |pi, &ti| {
                    let pc = pi.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                    // Clamped entries sit on a flat segment of the loss.
                    *pi = if *pi > BCE_CLAMP && *pi < 1.0 - BCE_CLAMP {
                        gv * (pc - ti) / (pc * (1.0 - pc) * n)
                    } else {
                        0.0
                    };
                });
                acc(grads, nodes, pred, gp);
            }
        }
        Ok(())
    }
}

fn shape_err(context: &'static str, expected: &[usize], got: &[usize]) -> Error {
    Error::ShapeMismatch {
        context,
        expected: format!("{expected:?}"),
        got: format!("{got:?}"),
    }
}

fn as1<'a>(d: &'a ArrayD<f64>, what: &'static str) -> Result<ndarray::ArrayView1<'a, f64>> {
    d.view().into_dimensionality::<Ix1>().map_err(|_| Error::ShapeMismatch {
        context: what,
        expected: "rank 1".into(),
        got: format!("{:?}", d.shape()),
    })
}

fn as2<'a>(d: &'a ArrayD<f64>, what: &'static str) -> Result<ndarray::ArrayView2<'a, f64>> {
    d.view().into_dimensionality::<Ix2>().map_err(|_| Error::ShapeMismatch {
        context: what,
        expected: "rank 2".into(),
        got: format!("{:?}", d.shape()),
    })
}

fn as3<'a>(d: &'a ArrayD<f64>, what: &'static str) -> Result<ndarray::ArrayView3<'a, f64>> {
    d.view().into_dimensionality::<Ix3>().map_err(|_| Error::ShapeMismatch {
        context: what,
        expected: "rank 3".into(),
        got: format!("{:?}", d.shape()),
    })
}

/// Unfold `(C, H, W)` into `(C·kh·kw, H_out·W_out)` patches (zero-padded).
fn im2col(
    x: &ndarray::ArrayView3<f64>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    h_out: usize,
    w_out: usize,
) -> Array2<f64> {
    let (c_in, h, w) = x.dim();
    let mut col = Array2::zeros((c_in * kh * kw, h_out * w_out));
    for c in 0..c_in {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                for oi in 0..h_out {
                    let ii = oi * stride + ki;
                    if ii < pad || ii - pad >= h {
                        continue;
                    }
                    for oj in 0..w_out {
                        let jj = oj * stride + kj;
                        if jj < pad || jj - pad >= w {
                            continue;
                        }
                        col[(row, oi * w_out + oj)] = x[(c, ii - pad, jj - pad)];
                    }
                }
            }
        }
    }
    col
}

/// Fold a cols gradient back onto the (unpadded) input, accumulating overlaps.
fn col2im_grad(
    gcol: &ndarray::ArrayView2<f64>,
    gx: &mut Array3<f64>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    h_out: usize,
    w_out: usize,
) {
    let (c_in, h, w) = gx.dim();
    for c in 0..c_in {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                for oi in 0..h_out {
                    let ii = oi * stride + ki;
                    if ii < pad || ii - pad >= h {
                        continue;
                    }
                    for oj in 0..w_out {
                        let jj = oj * stride + kj;
                        if jj < pad || jj - pad >= w {
                            continue;
                        }
                        gx[(c, ii - pad, jj - pad)] += gcol[(row, oi * w_out + oj)];
                    }
                }
            }
        }
    }
}

/// Scatter transposed-convolution cols into the output plane, accumulating.
/// `cols` is indexed `[(c·kh + ki)·kw + kj, i·w_in + j]`.
fn col2im_accumulate(
    cols: &ndarray::ArrayView2<f64>,
    out: &mut Array3<f64>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    h_in: usize,
    w_in: usize,
) {
    let (c_out, h_out, w_out) = out.dim();
    for c in 0..c_out {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                for i in 0..h_in {
                    let oi = i * stride + ki;
                    if oi < pad || oi - pad >= h_out {
                        continue;
                    }
                    for j in 0..w_in {
                        let oj = j * stride + kj;
                        if oj < pad || oj - pad >= w_out {
                            continue;
                        }
                        out[(c, oi - pad, oj - pad)] += cols[(row, i * w_in + j)];
                    }
                }
            }
        }
    }
}

/// Adjoint of [`col2im_accumulate`]: gather the output gradient back into
/// cols layout.
fn im2col_from_output_grad(
    g_out: &ndarray::ArrayView3<f64>,
    gcols: &mut Array2<f64>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    h_in: usize,
    w_in: usize,
) {
    let (c_out, h_out, w_out) = g_out.dim();
    for c in 0..c_out {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                for i in 0..h_in {
                    let oi = i * stride + ki;
                    if oi < pad || oi - pad >= h_out {
                        continue;
                    }
                    for j in 0..w_in {
                        let oj = j * stride + kj;
                        if oj < pad || oj - pad >= w_out {
                            continue;
                        }
                        gcols[(row, i * w_in + j)] = g_out[(c, oi - pad, oj - pad)];
                    }
                }
            }
        }
    }
}
