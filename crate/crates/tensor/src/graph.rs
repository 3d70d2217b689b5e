//! Dynamic computation graph with reverse-mode differentiation.
//!
//! A [`Graph`] is rebuilt for every forward pass. Nodes are appended in
//! construction order, which is also a valid topological order, and
//! [`Graph::backward`] walks them once in reverse.

use std::collections::HashMap;

use crate::error::{Result, TensorError};
use crate::kernels::{self, ConvGeom};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Bmm(Var, Var),
    Permute(Var, Vec<usize>),
    Reshape(Var),
    BroadcastTo(Var),
    Softmax(Var),
    LayerNorm(Var, Vec<f64>),
    Gelu(Var),
    LeakyRelu(Var, f64),
    Abs(Var),
    SumAll(Var),
    MeanAll(Var),
    SumLast(Var),
    RowNorm(Var),
    Concat(Vec<Var>, usize),
    Index(Var, usize, usize),
    Conv2d(Var, Var, ConvGeom),
    ConvTranspose2d(Var, Var, ConvGeom),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients of the non-parameter leaves created with `requires_grad = true`.
#[derive(Debug, Default)]
pub struct Grads {
    leaves: HashMap<Var, Tensor>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.leaves.get(&v)
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_unary(&mut self, x: Var, value: Tensor, op: Op) -> Var {
        let rg = self.rg(x);
        self.push(value, op, rg)
    }

    fn push_binary(&mut self, a: Var, b: Var, value: Tensor, op: Op) -> Var {
        let rg = self.rg(a) || self.rg(b);
        self.push(value, op, rg)
    }

    /// A constant or an input whose gradient can be read back from [`Grads`].
    pub fn input(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.input(value, false)
    }

    /// Record a parameter leaf; its gradient flows into the store on backward.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        self.push(p.value.clone(), Op::Param(id), p.requires_grad)
    }

    fn binary_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Vec<usize>> {
        kernels::broadcast_shape(self.shape(a), self.shape(b)).ok_or_else(|| {
            TensorError::shape(
                op,
                format!("cannot broadcast {:?} with {:?}", self.shape(a), self.shape(b)),
            )
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary_shape("add", a, b)?;
        let v = kernels::broadcast_binary(self.value(a), self.value(b), &out, |x, y| x + y);
        Ok(self.push_binary(a, b, v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary_shape("sub", a, b)?;
        let v = kernels::broadcast_binary(self.value(a), self.value(b), &out, |x, y| x - y);
        Ok(self.push_binary(a, b, v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary_shape("mul", a, b)?;
        let v = kernels::broadcast_binary(self.value(a), self.value(b), &out, |x, y| x * y);
        Ok(self.push_binary(a, b, v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x).map(|t| t * c);
        self.push_unary(x, v, Op::Scale(x, c))
    }

    /// `a: [.., m, k] @ b: [k, n] -> [.., m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(TensorError::shape(
                "matmul",
                format!("lhs {sa:?} is incompatible with rhs {sb:?} (rhs must be [k, n])"),
            ));
        }
        let (k, n) = (sb[0], sb[1]);
        let m = self.value(a).numel() / k;
        let mut out_shape = sa.to_vec();
        *out_shape.last_mut().unwrap() = n;
        let mut c = vec![0.0; m * n];
        kernels::gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut c, 0.0);
        let v = Tensor::from_parts(out_shape, c);
        Ok(self.push_binary(a, b, v, Op::MatMul(a, b)))
    }

    /// Batched `[B, m, k] @ [B, k, n] -> [B, m, n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(TensorError::shape(
                "bmm",
                format!("expected [B,m,k] @ [B,k,n], got {sa:?} @ {sb:?}"),
            ));
        }
        let (bt, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut c = vec![0.0; bt * m * n];
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        for i in 0..bt {
            kernels::gemm(
                m,
                k,
                n,
                &ad[i * m * k..],
                false,
                &bd[i * k * n..],
                false,
                &mut c[i * m * n..],
                0.0,
            );
        }
        let v = Tensor::from_parts(vec![bt, m, n], c);
        Ok(self.push_binary(a, b, v, Op::Bmm(a, b)))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let r = self.shape(x).len();
        let mut seen = vec![false; r];
        let valid = axes.len() == r
            && axes.iter().all(|&a| a < r && !std::mem::replace(&mut seen[a], true));
        if !valid {
            return Err(TensorError::shape(
                "permute",
                format!("{axes:?} is not a permutation of {} axes", r),
            ));
        }
        let v = kernels::permute(self.value(x), axes);
        Ok(self.push_unary(x, v, Op::Permute(x, axes.to_vec())))
    }

    /// Swap the last two axes.
    pub fn transpose_last(&mut self, x: Var) -> Result<Var> {
        let r = self.shape(x).len();
        if r < 2 {
            return Err(TensorError::shape("transpose_last", "rank must be at least 2"));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(x, &axes)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).reshaped(shape)?;
        Ok(self.push_unary(x, v, Op::Reshape(x)))
    }

    /// Broadcast `x` to `shape` (numpy rules, shape must be the broadcast result).
    pub fn broadcast_to(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        match kernels::broadcast_shape(self.shape(x), shape) {
            Some(s) if s == shape => {}
            _ => {
                return Err(TensorError::shape(
                    "broadcast_to",
                    format!("cannot broadcast {:?} to {shape:?}", self.shape(x)),
                ))
            }
        }
        let target = Tensor::zeros(shape);
        let v = kernels::broadcast_binary(self.value(x), &target, shape, |a, _| a);
        Ok(self.push_unary(x, v, Op::BroadcastTo(x)))
    }

    pub fn softmax_last(&mut self, x: Var) -> Var {
        let v = kernels::softmax_last(self.value(x));
        self.push_unary(x, v, Op::Softmax(x))
    }

    /// Normalization over the last axis without affine terms.
    pub fn layer_norm_last(&mut self, x: Var, eps: f64) -> Var {
        let (v, rstd) = kernels::layer_norm_last(self.value(x), eps);
        self.push_unary(x, v, Op::LayerNorm(x, rstd))
    }

    /// Exact GELU, `x * Phi(x)`.
    pub fn gelu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(kernels::gelu);
        self.push_unary(x, v, Op::Gelu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let v = self.value(x).map(|t| if t > 0.0 { t } else { slope * t });
        self.push_unary(x, v, Op::LeakyRelu(x, slope))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::abs);
        self.push_unary(x, v, Op::Abs(x))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        self.push_unary(x, v, Op::SumAll(x))
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let v = Tensor::scalar(t.sum() / t.numel() as f64);
        self.push_unary(x, v, Op::MeanAll(x))
    }

    fn reduced_last_shape(shape: &[usize]) -> Vec<usize> {
        if shape.len() == 1 {
            vec![1]
        } else {
            shape[..shape.len() - 1].to_vec()
        }
    }

    /// Sum over the last axis.
    pub fn sum_last(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let n = *t.shape().last().unwrap();
        let data = t.data().chunks(n).map(|r| r.iter().sum()).collect();
        let v = Tensor::from_parts(Self::reduced_last_shape(t.shape()), data);
        self.push_unary(x, v, Op::SumLast(x))
    }

    /// Euclidean norm over the last axis. The subgradient at zero is taken as 0.
    pub fn row_norm(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let n = *t.shape().last().unwrap();
        let data = t
            .data()
            .chunks(n)
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let v = Tensor::from_parts(Self::reduced_last_shape(t.shape()), data);
        self.push_unary(x, v, Op::RowNorm(x))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*xs.first().ok_or_else(|| TensorError::shape("concat", "no inputs"))?)
            .to_vec();
        if axis >= first.len() {
            return Err(TensorError::shape("concat", format!("axis {axis} out of range")));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::shape(
                    "concat",
                    format!("{s:?} does not match {first:?} off axis {axis}"),
                ));
            }
            total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = total;
        let (outer, _, inner) = outer_inner(&out_shape, axis);
        let mut data = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for &x in xs {
                let t = self.value(x);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let rg = xs.iter().any(|&x| self.rg(x));
        let v = Tensor::from_parts(out_shape, data);
        Ok(self.push(v, Op::Concat(xs.to_vec(), axis), rg))
    }

    /// Take position `index` along `axis`, dropping that axis.
    pub fn index(&mut self, x: Var, axis: usize, index: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || index >= s[axis] || s.len() < 2 {
            return Err(TensorError::shape(
                "index",
                format!("index {index} on axis {axis} of {s:?}"),
            ));
        }
        let (outer, len, inner) = outer_inner(&s, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            let base = (o * len + index) * inner;
            data.extend_from_slice(&src[base..base + inner]);
        }
        let mut out_shape = s;
        out_shape.remove(axis);
        let v = Tensor::from_parts(out_shape, data);
        Ok(self.push_unary(x, v, Op::Index(x, axis, index)))
    }

    fn conv_geom(
        &self,
        op: &'static str,
        x: Var,
        w: Var,
        stride: usize,
        transposed: bool,
    ) -> Result<ConvGeom> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 4 || sw.len() != 4 || stride == 0 {
            return Err(TensorError::shape(
                op,
                format!("expected 4D input and kernel with stride > 0, got {sx:?}, {sw:?}"),
            ));
        }
        let (c_in, c_out) = if transposed { (sw[0], sw[1]) } else { (sw[1], sw[0]) };
        if sx[1] != c_in {
            return Err(TensorError::shape(
                op,
                format!("input has {} channels, kernel expects {c_in}", sx[1]),
            ));
        }
        let (h, w_, kh, kw) = (sx[2], sx[3], sw[2], sw[3]);
        let (ho, wo) = if transposed {
            ((h - 1) * stride + kh, (w_ - 1) * stride + kw)
        } else {
            if h < kh || w_ < kw {
                return Err(TensorError::shape(op, format!("kernel {kh}x{kw} larger than {h}x{w_}")));
            }
            ((h - kh) / stride + 1, (w_ - kw) / stride + 1)
        };
        Ok(ConvGeom {
            batch: sx[0],
            c_in,
            c_out,
            h,
            w: w_,
            kh,
            kw,
            stride,
            ho,
            wo,
        })
    }

    /// Valid strided convolution, `x: [B, Ci, H, W]`, `w: [Co, Ci, k, k]`.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize) -> Result<Var> {
        let g = self.conv_geom("conv2d", x, w, stride, false)?;
        let y = kernels::conv2d(self.value(x).data(), self.value(w).data(), &g);
        let v = Tensor::from_parts(vec![g.batch, g.c_out, g.ho, g.wo], y);
        Ok(self.push_binary(x, w, v, Op::Conv2d(x, w, g)))
    }

    /// Transposed convolution, `x: [B, Ci, H, W]`, `w: [Ci, Co, k, k]`;
    /// output side is `(H - 1) * stride + k`, no padding.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, stride: usize) -> Result<Var> {
        let g = self.conv_geom("conv_transpose2d", x, w, stride, true)?;
        let y = kernels::conv_transpose2d(self.value(x).data(), self.value(w).data(), &g);
        let v = Tensor::from_parts(vec![g.batch, g.c_out, g.ho, g.wo], y);
        Ok(self.push_binary(x, w, v, Op::ConvTranspose2d(x, w, g)))
    }

    /// Reverse pass from a one-element `loss`.
    ///
    /// Parameter gradients are added to `store` (so repeated calls accumulate);
    /// gradients of `input(.., true)` leaves are returned.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<Grads> {
        if self.value(loss).numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::ones(self.shape(loss)));
        let mut out = Grads::default();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    out.leaves.insert(Var(i), g);
                }
                Op::Param(id) => store.accumulate_grad(*id, &g),
                op => {
                    for (input, gin) in self.op_backward(op, &node.value, &g) {
                        if !self.rg(input) {
                            continue;
                        }
                        match &mut grads[input.0] {
                            Some(acc) => acc.add_assign(&gin),
                            slot => *slot = Some(gin),
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Vector-Jacobian products of one op.
    fn op_backward(&self, op: &Op, out: &Tensor, g: &Tensor) -> Vec<(Var, Tensor)> {
        let val = |v: Var| self.value(v);
        match op {
            Op::Leaf | Op::Param(_) => unreachable!(),
            Op::Add(a, b) => vec![
                (*a, kernels::reduce_to(g, val(*a).shape())),
                (*b, kernels::reduce_to(g, val(*b).shape())),
            ],
            Op::Sub(a, b) => vec![
                (*a, kernels::reduce_to(g, val(*a).shape())),
                (*b, kernels::reduce_to(&g.map(|t| -t), val(*b).shape())),
            ],
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let mut res = Vec::with_capacity(2);
                if self.rg(*a) {
                    let ga = kernels::broadcast_binary(g, vb, g.shape(), |x, y| x * y);
                    res.push((*a, kernels::reduce_to(&ga, va.shape())));
                }
                if self.rg(*b) {
                    let gb = kernels::broadcast_binary(g, va, g.shape(), |x, y| x * y);
                    res.push((*b, kernels::reduce_to(&gb, vb.shape())));
                }
                res
            }
            Op::Scale(x, c) => vec![(*x, g.map(|t| t * c))],
            Op::MatMul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let (k, n) = (vb.shape()[0], vb.shape()[1]);
                let m = va.numel() / k;
                let mut res = Vec::with_capacity(2);
                if self.rg(*a) {
                    let mut ga = vec![0.0; m * k];
                    kernels::gemm(m, n, k, g.data(), false, vb.data(), true, &mut ga, 0.0);
                    res.push((*a, Tensor::from_parts(va.shape().to_vec(), ga)));
                }
                if self.rg(*b) {
                    let mut gb = vec![0.0; k * n];
                    kernels::gemm(k, m, n, va.data(), true, g.data(), false, &mut gb, 0.0);
                    res.push((*b, Tensor::from_parts(vec![k, n], gb)));
                }
                res
            }
            Op::Bmm(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let (bt, m, k, n) = (va.shape()[0], va.shape()[1], va.shape()[2], vb.shape()[2]);
                let mut ga = vec![0.0; bt * m * k];
                let mut gb = vec![0.0; bt * k * n];
                for i in 0..bt {
                    let gi = &g.data()[i * m * n..];
                    kernels::gemm(m, n, k, gi, false, &vb.data()[i * k * n..], true, &mut ga[i * m * k..], 0.0);
                    kernels::gemm(k, m, n, &va.data()[i * m * k..], true, gi, false, &mut gb[i * k * n..], 0.0);
                }
                vec![
                    (*a, Tensor::from_parts(va.shape().to_vec(), ga)),
                    (*b, Tensor::from_parts(vb.shape().to_vec(), gb)),
                ]
            }
            Op::Permute(x, axes) => {
                vec![(*x, kernels::permute(g, &kernels::inverse_permutation(axes)))]
            }
            Op::Reshape(x) => vec![(*x, Tensor::from_parts(val(*x).shape().to_vec(), g.data().to_vec()))],
            Op::BroadcastTo(x) => vec![(*x, kernels::reduce_to(g, val(*x).shape()))],
            Op::Softmax(x) => {
                let n = *out.shape().last().unwrap();
                let mut gx = Vec::with_capacity(out.numel());
                for (y, gy) in out.data().chunks(n).zip(g.data().chunks(n)) {
                    let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                    gx.extend(y.iter().zip(gy).map(|(yi, gi)| yi * (gi - dot)));
                }
                vec![(*x, Tensor::from_parts(out.shape().to_vec(), gx))]
            }
            Op::LayerNorm(x, rstd) => {
                let n = *out.shape().last().unwrap();
                let nf = n as f64;
                let mut gx = Vec::with_capacity(out.numel());
                for ((y, gy), r) in out.data().chunks(n).zip(g.data().chunks(n)).zip(rstd) {
                    let mg = gy.iter().sum::<f64>() / nf;
                    let mgy = y.iter().zip(gy).map(|(a, b)| a * b).sum::<f64>() / nf;
                    gx.extend(y.iter().zip(gy).map(|(yi, gi)| r * (gi - mg - yi * mgy)));
                }
                vec![(*x, Tensor::from_parts(out.shape().to_vec(), gx))]
            }
            Op::Gelu(x) => {
                let gx = val(*x).data().iter().zip(g.data()).map(|(&v, &gi)| gi * kernels::gelu_grad(v));
                vec![(*x, Tensor::from_parts(out.shape().to_vec(), gx.collect()))]
            }
            Op::LeakyRelu(x, slope) => {
                let gx = val(*x)
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &gi)| if v > 0.0 { gi } else { slope * gi });
                vec![(*x, Tensor::from_parts(out.shape().to_vec(), gx.collect()))]
            }
            Op::Abs(x) => {
                let gx = val(*x).data().iter().zip(g.data()).map(|(&v, &gi)| {
                    if v > 0.0 {
                        gi
                    } else if v < 0.0 {
                        -gi
                    } else {
                        0.0
                    }
                });
                vec![(*x, Tensor::from_parts(out.shape().to_vec(), gx.collect()))]
            }
            Op::SumAll(x) => vec![(*x, Tensor::full(val(*x).shape(), g.item()))],
            Op::MeanAll(x) => {
                let t = val(*x);
                vec![(*x, Tensor::full(t.shape(), g.item() / t.numel() as f64))]
            }
            Op::SumLast(x) => {
                let t = val(*x);
                let n = *t.shape().last().unwrap();
                let gx = g.data().iter().flat_map(|&gi| std::iter::repeat_n(gi, n)).collect();
                vec![(*x, Tensor::from_parts(t.shape().to_vec(), gx))]
            }
            Op::RowNorm(x) => {
                let t = val(*x);
                let n = *t.shape().last().unwrap();
                let mut gx = Vec::with_capacity(t.numel());
                for ((row, &norm), &gi) in t.data().chunks(n).zip(out.data()).zip(g.data()) {
                    if norm > 0.0 {
                        gx.extend(row.iter().map(|v| gi * v / norm));
                    } else {
                        gx.extend(std::iter::repeat_n(0.0, n));
                    }
                }
                vec![(*x, Tensor::from_parts(t.shape().to_vec(), gx))]
            }
            Op::Concat(xs, axis) => {
                let (outer, _, inner) = outer_inner(out.shape(), *axis);
                let mut parts: Vec<Vec<f64>> = xs.iter().map(|&x| Vec::with_capacity(val(x).numel())).collect();
                let mut off = 0;
                for _ in 0..outer {
                    for (p, &x) in parts.iter_mut().zip(xs) {
                        let chunk = val(x).shape()[*axis] * inner;
                        p.extend_from_slice(&g.data()[off..off + chunk]);
                        off += chunk;
                    }
                }
                xs.iter()
                    .zip(parts)
                    .map(|(&x, p)| (x, Tensor::from_parts(val(x).shape().to_vec(), p)))
                    .collect()
            }
            Op::Index(x, axis, index) => {
                let s = val(*x).shape();
                let (outer, len, inner) = outer_inner(s, *axis);
                let mut gx = vec![0.0; val(*x).numel()];
                for o in 0..outer {
                    let base = (o * len + index) * inner;
                    gx[base..base + inner].copy_from_slice(&g.data()[o * inner..(o + 1) * inner]);
                }
                vec![(*x, Tensor::from_parts(s.to_vec(), gx))]
            }
            Op::Conv2d(x, w, geom) => {
                let (vx, vw) = (val(*x), val(*w));
                let (gx, gw) = kernels::conv2d_backward(vx.data(), vw.data(), g.data(), geom);
                vec![
                    (*x, Tensor::from_parts(vx.shape().to_vec(), gx)),
                    (*w, Tensor::from_parts(vw.shape().to_vec(), gw)),
                ]
            }
            Op::ConvTranspose2d(x, w, geom) => {
                let (vx, vw) = (val(*x), val(*w));
                let (gx, gw) = kernels::conv_transpose2d_backward(vx.data(), vw.data(), g.data(), geom);
                vec![
                    (*x, Tensor::from_parts(vx.shape().to_vec(), gx)),
                    (*w, Tensor::from_parts(vw.shape().to_vec(), gw)),
                ]
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn identity_matmul_returns_vector() {
        let mut g = Graph::new();
        let id = g.constant(t(&[1, 1], &[1.0]));
        let v = g.constant(t(&[3, 1], &[4.0, -2.0, 0.5]));
        let y = g.matmul(v, id).unwrap();
        assert_eq!(g.value(y).data(), &[4.0, -2.0, 0.5]);
    }

    #[test]
    fn layer_norm_of_constant_is_zero() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[2, 5], 3.7));
        let y = g.layer_norm_last(x, 1e-5);
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gelu_zero_and_uniform_softmax() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::scalar(0.0));
        let y = g.gelu(z);
        assert_eq!(g.value(y).item(), 0.0);
        let u = g.constant(Tensor::full(&[4], 1.3));
        let s = g.softmax_last(u);
        assert_eq!(g.value(s).data(), &[0.25; 4]);
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[4, 2]));
        let err = g.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("matmul"), "{err}");
        assert!(err.to_string().contains("[2, 3]"), "{err}");
        let err = g.add(a, b).unwrap_err();
        assert!(err.to_string().contains("add"), "{err}");
    }

    #[test]
    fn sum_gives_unit_gradient() {
        let mut store = ParamStore::new();
        let w = store.insert("w", t(&[2, 2], &[1.0, -2.0, 3.0, 0.5])).unwrap();
        let mut g = Graph::new();
        let wv = g.param(&store, w);
        let loss = g.sum_all(wv);
        g.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(w).grad.as_ref().unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn squared_norm_gradient_and_accumulation() {
        let mut store = ParamStore::new();
        let w = store.insert("w", t(&[2], &[1.0, 2.0])).unwrap();
        let mut g = Graph::new();
        let wv = g.param(&store, w);
        let sq = g.mul(wv, wv).unwrap();
        let loss = g.sum_all(sq);
        g.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(w).grad.as_ref().unwrap().data(), &[2.0, 4.0]);
        g.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(w).grad.as_ref().unwrap().data(), &[4.0, 8.0]);
    }

    #[test]
    fn non_scalar_loss_is_contract_error() {
        let mut store = ParamStore::new();
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[3]), true);
        assert!(matches!(g.backward(x, &mut store), Err(TensorError::Contract(_))));
    }

    #[test]
    fn frozen_params_receive_no_gradient() {
        let mut store = ParamStore::new();
        let w = store.insert("w", t(&[2], &[1.0, 2.0])).unwrap();
        store.set_requires_grad(&[w], false);
        let mut g = Graph::new();
        let wv = g.param(&store, w);
        let loss = g.sum_all(wv);
        g.backward(loss, &mut store).unwrap();
        assert!(store.get(w).grad.is_none());
    }

    #[test]
    fn index_and_concat_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 1, 4]));
        let b = g.constant(Tensor::ones(&[2, 3, 4]));
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.shape(c), &[2, 4, 4]);
        let first = g.index(c, 1, 0).unwrap();
        assert_eq!(g.shape(first), &[2, 4]);
        assert!(g.value(first).data().iter().all(|&v| v == 0.0));
        let second = g.index(c, 1, 1).unwrap();
        assert!(g.value(second).data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn transposed_conv_output_size() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::ones(&[1, 4, 2, 2]));
        let w = g.constant(Tensor::ones(&[4, 2, 2, 2]));
        let y = g.conv_transpose2d(x, w, 2).unwrap();
        assert_eq!(g.shape(y), &[1, 2, 4, 4]);
        let w3 = g.constant(Tensor::ones(&[4, 2, 3, 3]));
        let y3 = g.conv_transpose2d(x, w3, 2).unwrap();
        assert_eq!(g.shape(y3), &[1, 2, 5, 5]);
    }
}
