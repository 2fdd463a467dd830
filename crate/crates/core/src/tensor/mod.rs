//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! A [`Tape`] owns every tensor created on it (define-by-run). Operations
//! append nodes; [`Tensor::backward`] replays the tape in reverse and
//! accumulates gradients into every node that requires them. Tensors are
//! immutable after construction; only gradient buffers mutate. A tape and
//! its tensors belong to one thread; independent tapes may run on
//! independent threads.

mod kernels;

use alloc::rc::Rc;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::{Ref, RefCell};

use crate::error::{CoreError, Result};
use crate::mathx;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    Var,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Relu { x: usize },
    Sigmoid { x: usize },
    Log { x: usize },
    Clamp { x: usize, lo: f64, hi: f64 },
    AddScalar { x: usize },
    MulScalar { x: usize, c: f64 },
    Binary { kind: BinKind, lhs: usize, rhs: usize },
    Conv2d { input: usize, kernel: usize, bias: usize, stride: usize, padding: usize },
    Linear { input: usize, weight: usize, bias: usize },
    Gap { x: usize },
    ChannelScale { features: usize, weights: usize },
    Concat { parts: Vec<usize>, axis: usize },
    PoolMax2 { x: usize, argmax: Vec<usize> },
    Upsample2 { x: usize },
    Reduce { x: usize, kind: ReduceKind, axes: Vec<usize> },
    Reshape { x: usize },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

#[derive(Debug, Default)]
struct Graph {
    nodes: Vec<Node>,
    epoch: u64,
}

/// Shared handle to a computation tape.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    inner: Rc<RefCell<Graph>>,
}

/// Handle to one value on a tape.
#[derive(Debug, Clone)]
pub struct Tensor {
    tape: Tape,
    id: usize,
    epoch: u64,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, op: Op) -> Tensor {
        let mut g = self.inner.borrow_mut();
        let id = g.nodes.len();
        let epoch = g.epoch;
        g.nodes.push(Node { shape, data, grad: None, requires_grad, op });
        Tensor { tape: self.clone(), id, epoch }
    }

    /// New leaf tensor. `requires_grad` marks it as a gradient target.
    pub fn leaf(&self, data: Vec<f64>, shape: &[usize], requires_grad: bool) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(CoreError::LengthMismatch { expected: numel, got: data.len() });
        }
        Ok(self.push(shape.to_vec(), data, requires_grad, Op::Leaf))
    }

    pub fn constant(&self, data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        self.leaf(data, shape, false)
    }

    pub fn scalar(&self, value: f64) -> Tensor {
        self.push(Vec::new(), vec![value], false, Op::Leaf)
    }

    pub fn zeros(&self, shape: &[usize], requires_grad: bool) -> Tensor {
        let numel: usize = shape.iter().product();
        self.push(shape.to_vec(), vec![0.0; numel], requires_grad, Op::Leaf)
    }

    /// Number of nodes currently recorded.
    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drop every node and cached intermediate. Outstanding tensor handles
    /// become invalid and report [`CoreError::TapeCleared`] on use.
    pub fn clear(&self) {
        let mut g = self.inner.borrow_mut();
        g.nodes.clear();
        g.epoch += 1;
    }

    /// Reset the accumulated gradient of every node.
    pub fn zero_grads(&self) {
        let mut g = self.inner.borrow_mut();
        for node in &mut g.nodes {
            node.grad = None;
        }
    }

    fn same_tape(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }
}

impl Tensor {
    fn graph(&self) -> Ref<'_, Graph> {
        self.tape.inner.borrow()
    }

    fn check_live(&self, g: &Graph) -> Result<()> {
        if self.epoch != g.epoch {
            return Err(CoreError::TapeCleared);
        }
        Ok(())
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph().nodes[self.id].shape.clone()
    }

    pub fn rank(&self) -> usize {
        self.graph().nodes[self.id].shape.len()
    }

    pub fn numel(&self) -> usize {
        self.graph().nodes[self.id].data.len()
    }

    /// Copy of the forward value.
    pub fn data(&self) -> Vec<f64> {
        self.graph().nodes[self.id].data.clone()
    }

    /// Run `f` over the forward value without copying.
    pub fn with_data<R>(&self, f: impl FnOnce(&[f64]) -> R) -> R {
        f(&self.graph().nodes[self.id].data)
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        let g = self.graph();
        let n = &g.nodes[self.id];
        if n.data.len() != 1 {
            return Err(CoreError::NotScalar { numel: n.data.len() });
        }
        Ok(n.data[0])
    }

    pub fn requires_grad(&self) -> bool {
        self.graph().nodes[self.id].requires_grad
    }

    /// Copy of the accumulated gradient, if any backward pass reached this node.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.graph().nodes[self.id].grad.clone()
    }

    fn unary_check(&self, _op: &'static str) -> Result<(Vec<usize>, bool)> {
        let g = self.graph();
        self.check_live(&g)?;
        let n = &g.nodes[self.id];
        Ok((n.shape.clone(), n.requires_grad))
    }

    fn pair_check(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if !self.tape.same_tape(&other.tape) {
            return Err(CoreError::TapeMismatch { op });
        }
        let g = self.graph();
        self.check_live(&g)?;
        other.check_live(&g)?;
        Ok(())
    }

    // ── Elementwise ────────────────────────────────────────────────────

    pub fn relu(&self) -> Result<Tensor> {
        let (shape, rq) = self.unary_check("relu")?;
        let data = self.with_data(|d| d.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect());
        Ok(self.tape.push(shape, data, rq, Op::Relu { x: self.id }))
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        let (shape, rq) = self.unary_check("sigmoid")?;
        let data = self.with_data(|d| d.iter().map(|&v| mathx::sigmoid(v)).collect());
        Ok(self.tape.push(shape, data, rq, Op::Sigmoid { x: self.id }))
    }

    /// Natural log. Errors on any non-positive element.
    pub fn log(&self) -> Result<Tensor> {
        let (shape, rq) = self.unary_check("log")?;
        let data: Vec<f64> = self.with_data(|d| {
            for (i, &v) in d.iter().enumerate() {
                if v <= 0.0 {
                    return Err(CoreError::NonPositiveLog { index: i, value: v });
                }
            }
            Ok(d.iter().map(|&v| mathx::ln(v)).collect())
        })?;
        Ok(self.tape.push(shape, data, rq, Op::Log { x: self.id }))
    }

    /// Clamp to [lo, hi]; gradient is zero outside the band.
    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Tensor> {
        if !(lo <= hi) {
            return Err(CoreError::InvalidArg {
                op: "clamp",
                detail: alloc::format!("lo {lo} > hi {hi}"),
            });
        }
        let (shape, rq) = self.unary_check("clamp")?;
        let data = self.with_data(|d| d.iter().map(|&v| v.clamp(lo, hi)).collect());
        Ok(self.tape.push(shape, data, rq, Op::Clamp { x: self.id, lo, hi }))
    }

    pub fn add_scalar(&self, c: f64) -> Result<Tensor> {
        let (shape, rq) = self.unary_check("add_scalar")?;
        let data = self.with_data(|d| d.iter().map(|&v| v + c).collect());
        Ok(self.tape.push(shape, data, rq, Op::AddScalar { x: self.id }))
    }

    pub fn mul_scalar(&self, c: f64) -> Result<Tensor> {
        let (shape, rq) = self.unary_check("mul_scalar")?;
        let data = self.with_data(|d| d.iter().map(|&v| v * c).collect());
        Ok(self.tape.push(shape, data, rq, Op::MulScalar { x: self.id, c }))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinKind::Add, "add")
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinKind::Sub, "sub")
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinKind::Mul, "mul")
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinKind::Div, "div")
    }

    fn binary(&self, other: &Tensor, kind: BinKind, op: &'static str) -> Result<Tensor> {
        self.pair_check(other, op)?;
        let g = self.graph();
        let (a, b) = (&g.nodes[self.id], &g.nodes[other.id]);
        let out_shape = broadcast_shape(op, &a.shape, &b.shape)?;
        let data = kernels::binary_forward(kind, &out_shape, &a.shape, &a.data, &b.shape, &b.data);
        let rq = a.requires_grad || b.requires_grad;
        drop(g);
        Ok(self.tape.push(out_shape, data, rq, Op::Binary { kind, lhs: self.id, rhs: other.id }))
    }

    // ── Neural-network primitives ─────────────────────────────────────

    /// 2-D cross-correlation over `[N,C,H,W]` with kernel `[K,C,kh,kw]` and
    /// bias `[K]`.
    pub fn conv2d(&self, kernel: &Tensor, bias: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
        self.pair_check(kernel, "conv2d")?;
        self.pair_check(bias, "conv2d")?;
        if stride == 0 {
            return Err(CoreError::InvalidArg { op: "conv2d", detail: "stride must be positive".to_string() });
        }
        let g = self.graph();
        let (x, k, b) = (&g.nodes[self.id], &g.nodes[kernel.id], &g.nodes[bias.id]);
        if x.shape.len() != 4 {
            return Err(CoreError::RankMismatch { op: "conv2d", expected: 4, got: x.shape.len() });
        }
        if k.shape.len() != 4 {
            return Err(CoreError::RankMismatch { op: "conv2d", expected: 4, got: k.shape.len() });
        }
        if b.shape.len() != 1 {
            return Err(CoreError::RankMismatch { op: "conv2d", expected: 1, got: b.shape.len() });
        }
        if x.shape[1] != k.shape[1] {
            return Err(CoreError::DimMismatch { op: "conv2d", axis: 1, left: x.shape[1], right: k.shape[1] });
        }
        if b.shape[0] != k.shape[0] {
            return Err(CoreError::DimMismatch { op: "conv2d", axis: 0, left: b.shape[0], right: k.shape[0] });
        }
        let (h, w) = (x.shape[2], x.shape[3]);
        let (kh, kw) = (k.shape[2], k.shape[3]);
        if kh > h + 2 * padding {
            return Err(CoreError::KernelTooLarge { axis: 2, kernel: kh, padded: h + 2 * padding });
        }
        if kw > w + 2 * padding {
            return Err(CoreError::KernelTooLarge { axis: 3, kernel: kw, padded: w + 2 * padding });
        }
        let (out_shape, data) =
            kernels::conv2d_forward(&x.shape, &x.data, &k.shape, &k.data, &b.data, stride, padding);
        let rq = x.requires_grad || k.requires_grad || b.requires_grad;
        drop(g);
        Ok(self.tape.push(
            out_shape,
            data,
            rq,
            Op::Conv2d { input: self.id, kernel: kernel.id, bias: bias.id, stride, padding },
        ))
    }

    /// `input [N,D] x weight [O,D]^T + bias [O]`.
    pub fn linear(&self, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
        self.pair_check(weight, "linear")?;
        self.pair_check(bias, "linear")?;
        let g = self.graph();
        let (x, w, b) = (&g.nodes[self.id], &g.nodes[weight.id], &g.nodes[bias.id]);
        if x.shape.len() != 2 {
            return Err(CoreError::RankMismatch { op: "linear", expected: 2, got: x.shape.len() });
        }
        if w.shape.len() != 2 {
            return Err(CoreError::RankMismatch { op: "linear", expected: 2, got: w.shape.len() });
        }
        if b.shape.len() != 1 {
            return Err(CoreError::RankMismatch { op: "linear", expected: 1, got: b.shape.len() });
        }
        if x.shape[1] != w.shape[1] {
            return Err(CoreError::DimMismatch { op: "linear", axis: 1, left: x.shape[1], right: w.shape[1] });
        }
        if b.shape[0] != w.shape[0] {
            return Err(CoreError::DimMismatch { op: "linear", axis: 0, left: b.shape[0], right: w.shape[0] });
        }
        let (n, d, o) = (x.shape[0], x.shape[1], w.shape[0]);
        let mut data = vec![0.0; n * o];
        for i in 0..n {
            let row = &x.data[i * d..(i + 1) * d];
            for j in 0..o {
                let wr = &w.data[j * d..(j + 1) * d];
                let mut acc = b.data[j];
                for (xv, wv) in row.iter().zip(wr) {
                    acc += xv * wv;
                }
                data[i * o + j] = acc;
            }
        }
        let rq = x.requires_grad || w.requires_grad || b.requires_grad;
        drop(g);
        Ok(self.tape.push(
            vec![n, o],
            data,
            rq,
            Op::Linear { input: self.id, weight: weight.id, bias: bias.id },
        ))
    }

    /// Global average pool `[N,C,H,W] -> [N,C]`.
    pub fn gap(&self) -> Result<Tensor> {
        let g = self.graph();
        self.check_live(&g)?;
        let x = &g.nodes[self.id];
        if x.shape.len() != 4 {
            return Err(CoreError::RankMismatch { op: "global_average_pool", expected: 4, got: x.shape.len() });
        }
        let (n, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
        let plane = h * w;
        let mut data = vec![0.0; n * c];
        for i in 0..n * c {
            let s: f64 = x.data[i * plane..(i + 1) * plane].iter().sum();
            data[i] = s / plane as f64;
        }
        let rq = x.requires_grad;
        drop(g);
        Ok(self.tape.push(vec![n, c], data, rq, Op::Gap { x: self.id }))
    }

    /// Per-channel scaling: `out[n,c,h,w] = weights[n,c] * self[n,c,h,w]`.
    pub fn channel_scale(&self, weights: &Tensor) -> Result<Tensor> {
        self.pair_check(weights, "channel_scale")?;
        let g = self.graph();
        let (x, wt) = (&g.nodes[self.id], &g.nodes[weights.id]);
        if x.shape.len() != 4 {
            return Err(CoreError::RankMismatch { op: "channel_scale", expected: 4, got: x.shape.len() });
        }
        if wt.shape.len() != 2 {
            return Err(CoreError::RankMismatch { op: "channel_scale", expected: 2, got: wt.shape.len() });
        }
        for axis in 0..2 {
            if x.shape[axis] != wt.shape[axis] {
                return Err(CoreError::DimMismatch {
                    op: "channel_scale",
                    axis,
                    left: x.shape[axis],
                    right: wt.shape[axis],
                });
            }
        }
        let plane = x.shape[2] * x.shape[3];
        let mut data = vec![0.0; x.data.len()];
        for i in 0..wt.data.len() {
            let s = wt.data[i];
            let src = &x.data[i * plane..(i + 1) * plane];
            let dst = &mut data[i * plane..(i + 1) * plane];
            for (d, v) in dst.iter_mut().zip(src) {
                *d = s * v;
            }
        }
        let shape = x.shape.clone();
        let rq = x.requires_grad || wt.requires_grad;
        drop(g);
        Ok(self.tape.push(shape, data, rq, Op::ChannelScale { features: self.id, weights: weights.id }))
    }

    /// Concatenate along `axis`; all other dimensions must agree.
    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = *parts.first().ok_or(CoreError::EmptyInput { op: "concat" })?;
        for p in &parts[1..] {
            first.pair_check(p, "concat")?;
        }
        let g = first.graph();
        first.check_live(&g)?;
        let rank = g.nodes[first.id].shape.len();
        if axis >= rank {
            return Err(CoreError::AxisOutOfRange { axis, rank });
        }
        let base = g.nodes[first.id].shape.clone();
        let mut axis_total = 0;
        let mut rq = false;
        for p in parts {
            let n = &g.nodes[p.id];
            if n.shape.len() != rank {
                return Err(CoreError::RankMismatch { op: "concat", expected: rank, got: n.shape.len() });
            }
            for (ax, (&l, &r)) in base.iter().zip(&n.shape).enumerate() {
                if ax != axis && l != r {
                    return Err(CoreError::DimMismatch { op: "concat", axis: ax, left: l, right: r });
                }
            }
            axis_total += n.shape[axis];
            rq |= n.requires_grad;
        }
        let mut out_shape = base;
        out_shape[axis] = axis_total;
        let outer: usize = out_shape[..axis].iter().product();
        let inner: usize = out_shape[axis + 1..].iter().product();
        let mut data = vec![0.0; outer * axis_total * inner];
        let mut offset = 0;
        for p in parts {
            let n = &g.nodes[p.id];
            let pa = n.shape[axis];
            for o in 0..outer {
                let src = &n.data[o * pa * inner..(o + 1) * pa * inner];
                let dst_start = (o * axis_total + offset) * inner;
                data[dst_start..dst_start + pa * inner].copy_from_slice(src);
            }
            offset += pa;
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        drop(g);
        Ok(first.tape.push(out_shape, data, rq, Op::Concat { parts: ids, axis }))
    }

    /// 2x2 max pool with stride 2. Ties route the gradient to the first
    /// occurrence in row-major order.
    pub fn pool_max2(&self) -> Result<Tensor> {
        let g = self.graph();
        self.check_live(&g)?;
        let x = &g.nodes[self.id];
        if x.shape.len() != 4 {
            return Err(CoreError::RankMismatch { op: "pool_max2", expected: 4, got: x.shape.len() });
        }
        let (h, w) = (x.shape[2], x.shape[3]);
        if h % 2 != 0 {
            return Err(CoreError::OddSpatialDim { axis: 2, size: h });
        }
        if w % 2 != 0 {
            return Err(CoreError::OddSpatialDim { axis: 3, size: w });
        }
        let (out_shape, data, argmax) = kernels::pool_max2_forward(&x.shape, &x.data);
        let rq = x.requires_grad;
        drop(g);
        Ok(self.tape.push(out_shape, data, rq, Op::PoolMax2 { x: self.id, argmax }))
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample_nearest2(&self) -> Result<Tensor> {
        let g = self.graph();
        self.check_live(&g)?;
        let x = &g.nodes[self.id];
        if x.shape.len() != 4 {
            return Err(CoreError::RankMismatch { op: "upsample_nearest2", expected: 4, got: x.shape.len() });
        }
        let (out_shape, data) = kernels::upsample2_forward(&x.shape, &x.data);
        let rq = x.requires_grad;
        drop(g);
        Ok(self.tape.push(out_shape, data, rq, Op::Upsample2 { x: self.id }))
    }

    // ── Reductions ─────────────────────────────────────────────────────

    pub fn reduce(&self, kind: ReduceKind, axes: &[usize]) -> Result<Tensor> {
        let g = self.graph();
        self.check_live(&g)?;
        let x = &g.nodes[self.id];
        let rank = x.shape.len();
        let mut ax: Vec<usize> = axes.to_vec();
        ax.sort_unstable();
        ax.dedup();
        for &a in &ax {
            if a >= rank {
                return Err(CoreError::AxisOutOfRange { axis: a, rank });
            }
        }
        let (out_shape, data) = kernels::reduce_forward(kind, &x.shape, &x.data, &ax);
        let rq = x.requires_grad;
        drop(g);
        Ok(self.tape.push(out_shape, data, rq, Op::Reduce { x: self.id, kind, axes: ax }))
    }

    pub fn sum_axes(&self, axes: &[usize]) -> Result<Tensor> {
        self.reduce(ReduceKind::Sum, axes)
    }

    pub fn mean_axes(&self, axes: &[usize]) -> Result<Tensor> {
        self.reduce(ReduceKind::Mean, axes)
    }

    fn all_axes(&self) -> Vec<usize> {
        (0..self.rank()).collect()
    }

    pub fn sum_all(&self) -> Result<Tensor> {
        self.reduce(ReduceKind::Sum, &self.all_axes())
    }

    pub fn mean_all(&self) -> Result<Tensor> {
        self.reduce(ReduceKind::Mean, &self.all_axes())
    }

    pub fn var_all(&self) -> Result<Tensor> {
        self.reduce(ReduceKind::Var, &self.all_axes())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let (old_shape, rq) = self.unary_check("reshape")?;
        let old: usize = old_shape.iter().product();
        let new: usize = shape.iter().product();
        if old != new {
            return Err(CoreError::LengthMismatch { expected: old, got: new });
        }
        let data = self.data();
        Ok(self.tape.push(shape.to_vec(), data, rq, Op::Reshape { x: self.id }))
    }

    // ── Backward ───────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Gradients accumulate across calls
    /// until [`Tape::zero_grads`].
    pub fn backward(&self) -> Result<()> {
        let mut g = self.tape.inner.borrow_mut();
        if self.epoch != g.epoch {
            return Err(CoreError::TapeCleared);
        }
        let loss_id = self.id;
        if g.nodes[loss_id].data.len() != 1 {
            return Err(CoreError::NotScalar { numel: g.nodes[loss_id].data.len() });
        }
        if !g.nodes[loss_id].requires_grad {
            return Ok(());
        }
        let mut local: Vec<Option<Vec<f64>>> = vec![None; loss_id + 1];
        local[loss_id] = Some(vec![1.0]);
        let graph = &mut *g;
        for id in (0..=loss_id).rev() {
            let Some(gout) = local[id].take() else { continue };
            propagate(&graph.nodes, id, &gout, &mut local);
            let node = &mut graph.nodes[id];
            match node.grad {
                Some(ref mut buf) => {
                    for (b, v) in buf.iter_mut().zip(&gout) {
                        *b += v;
                    }
                }
                None => node.grad = Some(gout),
            }
        }
        Ok(())
    }
}

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        if da != db && da != 1 && db != 1 {
            return Err(CoreError::BroadcastMismatch { op, axis: i, left: da, right: db });
        }
        out[i] = da.max(db);
    }
    Ok(out)
}

fn ensure_buf<'a>(local: &'a mut [Option<Vec<f64>>], id: usize, numel: usize) -> &'a mut Vec<f64> {
    local[id].get_or_insert_with(|| vec![0.0; numel])
}

fn propagate(nodes: &[Node], id: usize, gout: &[f64], local: &mut [Option<Vec<f64>>]) {
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Relu { x } => {
            if nodes[*x].requires_grad {
                let xd = &nodes[*x].data;
                let buf = ensure_buf(local, *x, xd.len());
                for i in 0..xd.len() {
                    if xd[i] > 0.0 {
                        buf[i] += gout[i];
                    }
                }
            }
        }
        Op::Sigmoid { x } => {
            if nodes[*x].requires_grad {
                let y = &nodes[id].data;
                let buf = ensure_buf(local, *x, y.len());
                for i in 0..y.len() {
                    buf[i] += gout[i] * y[i] * (1.0 - y[i]);
                }
            }
        }
        Op::Log { x } => {
            if nodes[*x].requires_grad {
                let xd = &nodes[*x].data;
                let buf = ensure_buf(local, *x, xd.len());
                for i in 0..xd.len() {
                    buf[i] += gout[i] / xd[i];
                }
            }
        }
        Op::Clamp { x, lo, hi } => {
            if nodes[*x].requires_grad {
                let xd = &nodes[*x].data;
                let buf = ensure_buf(local, *x, xd.len());
                for i in 0..xd.len() {
                    if xd[i] >= *lo && xd[i] <= *hi {
                        buf[i] += gout[i];
                    }
                }
            }
        }
        Op::AddScalar { x } => {
            if nodes[*x].requires_grad {
                let buf = ensure_buf(local, *x, gout.len());
                for i in 0..gout.len() {
                    buf[i] += gout[i];
                }
            }
        }
        Op::MulScalar { x, c } => {
            if nodes[*x].requires_grad {
                let buf = ensure_buf(local, *x, gout.len());
                for i in 0..gout.len() {
                    buf[i] += gout[i] * c;
                }
            }
        }
        Op::Binary { kind, lhs, rhs } => {
            let out_shape = &nodes[id].shape;
            let (a, b) = (&nodes[*lhs], &nodes[*rhs]);
            if a.requires_grad {
                let mut ga = vec![0.0; a.data.len()];
                kernels::binary_backward_lhs(*kind, out_shape, &a.shape, &a.data, &b.shape, &b.data, gout, &mut ga);
                let buf = ensure_buf(local, *lhs, a.data.len());
                for (o, v) in buf.iter_mut().zip(&ga) {
                    *o += v;
                }
            }
            if b.requires_grad {
                let mut gb = vec![0.0; b.data.len()];
                kernels::binary_backward_rhs(*kind, out_shape, &a.shape, &a.data, &b.shape, &b.data, gout, &mut gb);
                let buf = ensure_buf(local, *rhs, b.data.len());
                for (o, v) in buf.iter_mut().zip(&gb) {
                    *o += v;
                }
            }
        }
        Op::Conv2d { input, kernel, bias, stride, padding } => {
            let (x, k) = (&nodes[*input], &nodes[*kernel]);
            if x.requires_grad {
                let mut gx = vec![0.0; x.data.len()];
                kernels::conv2d_backward_input(&x.shape, &k.shape, &k.data, gout, *stride, *padding, &mut gx);
                let buf = ensure_buf(local, *input, x.data.len());
                for (o, v) in buf.iter_mut().zip(&gx) {
                    *o += v;
                }
            }
            if k.requires_grad {
                let mut gk = vec![0.0; k.data.len()];
                kernels::conv2d_backward_kernel(&x.shape, &x.data, &k.shape, gout, *stride, *padding, &mut gk);
                let buf = ensure_buf(local, *kernel, k.data.len());
                for (o, v) in buf.iter_mut().zip(&gk) {
                    *o += v;
                }
            }
            if nodes[*bias].requires_grad {
                let kout = k.shape[0];
                let plane = nodes[id].shape[2] * nodes[id].shape[3];
                let batches = nodes[id].shape[0];
                let buf = ensure_buf(local, *bias, kout);
                for n in 0..batches {
                    for kk in 0..kout {
                        let start = (n * kout + kk) * plane;
                        let s: f64 = gout[start..start + plane].iter().sum();
                        buf[kk] += s;
                    }
                }
            }
        }
        Op::Linear { input, weight, bias } => {
            let (x, w) = (&nodes[*input], &nodes[*weight]);
            let (n, d, o) = (x.shape[0], x.shape[1], w.shape[0]);
            if x.requires_grad {
                let buf = ensure_buf(local, *input, n * d);
                for i in 0..n {
                    for j in 0..o {
                        let gv = gout[i * o + j];
                        let wr = &w.data[j * d..(j + 1) * d];
                        let dst = &mut buf[i * d..(i + 1) * d];
                        for (bv, wv) in dst.iter_mut().zip(wr) {
                            *bv += gv * wv;
                        }
                    }
                }
            }
            if w.requires_grad {
                let buf = ensure_buf(local, *weight, o * d);
                for i in 0..n {
                    let row = &x.data[i * d..(i + 1) * d];
                    for j in 0..o {
                        let gv = gout[i * o + j];
                        let dst = &mut buf[j * d..(j + 1) * d];
                        for (bv, xv) in dst.iter_mut().zip(row) {
                            *bv += gv * xv;
                        }
                    }
                }
            }
            if nodes[*bias].requires_grad {
                let buf = ensure_buf(local, *bias, o);
                for i in 0..n {
                    for j in 0..o {
                        buf[j] += gout[i * o + j];
                    }
                }
            }
        }
        Op::Gap { x } => {
            if nodes[*x].requires_grad {
                let shape = &nodes[*x].shape;
                let plane = shape[2] * shape[3];
                let scale = 1.0 / plane as f64;
                let buf = ensure_buf(local, *x, nodes[*x].data.len());
                for (i, &gv) in gout.iter().enumerate() {
                    let dst = &mut buf[i * plane..(i + 1) * plane];
                    for v in dst {
                        *v += gv * scale;
                    }
                }
            }
        }
        Op::ChannelScale { features, weights } => {
            let (x, wt) = (&nodes[*features], &nodes[*weights]);
            let plane = x.shape[2] * x.shape[3];
            if x.requires_grad {
                let buf = ensure_buf(local, *features, x.data.len());
                for i in 0..wt.data.len() {
                    let s = wt.data[i];
                    let go = &gout[i * plane..(i + 1) * plane];
                    let dst = &mut buf[i * plane..(i + 1) * plane];
                    for (b, g) in dst.iter_mut().zip(go) {
                        *b += s * g;
                    }
                }
            }
            if wt.requires_grad {
                let buf = ensure_buf(local, *weights, wt.data.len());
                for i in 0..wt.data.len() {
                    let go = &gout[i * plane..(i + 1) * plane];
                    let xs = &x.data[i * plane..(i + 1) * plane];
                    let mut acc = 0.0;
                    for (g, v) in go.iter().zip(xs) {
                        acc += g * v;
                    }
                    buf[i] += acc;
                }
            }
        }
        Op::Concat { parts, axis } => {
            let out_shape = &nodes[id].shape;
            let outer: usize = out_shape[..*axis].iter().product();
            let inner: usize = out_shape[*axis + 1..].iter().product();
            let axis_total = out_shape[*axis];
            let mut offset = 0;
            for &pid in parts {
                let pa = nodes[pid].shape[*axis];
                if nodes[pid].requires_grad {
                    let buf = ensure_buf(local, pid, nodes[pid].data.len());
                    for o in 0..outer {
                        let src_start = (o * axis_total + offset) * inner;
                        let dst = &mut buf[o * pa * inner..(o + 1) * pa * inner];
                        for (b, g) in dst.iter_mut().zip(&gout[src_start..src_start + pa * inner]) {
                            *b += g;
                        }
                    }
                }
                offset += pa;
            }
        }
        Op::PoolMax2 { x, argmax } => {
            if nodes[*x].requires_grad {
                let buf = ensure_buf(local, *x, nodes[*x].data.len());
                for (i, &src) in argmax.iter().enumerate() {
                    buf[src] += gout[i];
                }
            }
        }
        Op::Upsample2 { x } => {
            if nodes[*x].requires_grad {
                let in_shape = &nodes[*x].shape;
                let buf = ensure_buf(local, *x, nodes[*x].data.len());
                kernels::upsample2_backward(in_shape, gout, buf);
            }
        }
        Op::Reduce { x, kind, axes } => {
            if nodes[*x].requires_grad {
                let xn = &nodes[*x];
                let buf = ensure_buf(local, *x, xn.data.len());
                kernels::reduce_backward(*kind, &xn.shape, &xn.data, axes, gout, buf);
            }
        }
        Op::Reshape { x } => {
            if nodes[*x].requires_grad {
                let buf = ensure_buf(local, *x, gout.len());
                for (b, g) in buf.iter_mut().zip(gout) {
                    *b += g;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaf_length_validation() {
        let tape = Tape::new();
        let err = tape.leaf(vec![1.0, 2.0], &[3], false).unwrap_err();
        assert_eq!(err, CoreError::LengthMismatch { expected: 3, got: 2 });
    }

    #[test]
    fn backward_requires_scalar() {
        let tape = Tape::new();
        let x = tape.leaf(vec![1.0, 2.0], &[2], true).unwrap();
        assert!(matches!(x.backward(), Err(CoreError::NotScalar { numel: 2 })));
    }

    #[test]
    fn sum_backward_is_ones() {
        let tape = Tape::new();
        let x = tape.leaf(vec![1.0, -2.0, 3.0], &[3], true).unwrap();
        let s = x.sum_all().unwrap();
        s.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_sum_backward() {
        let tape = Tape::new();
        let x = tape.leaf(vec![1.0, -2.0, 0.5], &[3], true).unwrap();
        let s = x.mul(&x).unwrap().sum_all().unwrap();
        s.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, -4.0, 1.0]);
    }

    #[test]
    fn gradient_accumulates_across_backward_calls() {
        let tape = Tape::new();
        let x = tape.leaf(vec![1.0, 2.0], &[2], true).unwrap();
        let s = x.sum_all().unwrap();
        s.backward().unwrap();
        s.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0]);
        tape.zero_grads();
        assert!(x.grad().is_none());
    }

    #[test]
    fn cleared_tape_invalidates_handles() {
        let tape = Tape::new();
        let x = tape.leaf(vec![1.0], &[1], true).unwrap();
        tape.clear();
        assert!(matches!(x.relu(), Err(CoreError::TapeCleared)));
        assert_eq!(tape.len(), 0);
    }

    #[test]
    fn cross_tape_ops_rejected() {
        let t1 = Tape::new();
        let t2 = Tape::new();
        let a = t1.leaf(vec![1.0], &[1], false).unwrap();
        let b = t2.leaf(vec![1.0], &[1], false).unwrap();
        assert!(matches!(a.add(&b), Err(CoreError::TapeMismatch { .. })));
    }

    #[test]
    fn relu_and_sigmoid_values() {
        let tape = Tape::new();
        let x = tape.leaf(vec![-1.0, 0.0, 2.0], &[3], false).unwrap();
        assert_eq!(x.relu().unwrap().data(), vec![0.0, 0.0, 2.0]);
        let z = tape.leaf(vec![0.0], &[1], false).unwrap();
        assert_eq!(z.sigmoid().unwrap().data(), vec![0.5]);
    }

    #[test]
    fn log_rejects_nonpositive() {
        let tape = Tape::new();
        let x = tape.leaf(vec![1.0, 0.0], &[2], false).unwrap();
        assert!(matches!(x.log(), Err(CoreError::NonPositiveLog { index: 1, .. })));
    }

    #[test]
    fn broadcast_scalar_against_matrix() {
        let tape = Tape::new();
        let x = tape.leaf(vec![1.0, 2.0, 3.0, 4.0], &[2, 2], true).unwrap();
        let s = tape.scalar(10.0);
        let y = x.mul(&s).unwrap();
        assert_eq!(y.data(), vec![10.0, 20.0, 30.0, 40.0]);
        y.sum_all().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![10.0; 4]);
    }

    #[test]
    fn broadcast_mismatch_names_axis() {
        let tape = Tape::new();
        let a = tape.leaf(vec![0.0; 6], &[2, 3], false).unwrap();
        let b = tape.leaf(vec![0.0; 4], &[2, 2], false).unwrap();
        match a.add(&b) {
            Err(CoreError::BroadcastMismatch { axis, left, right, .. }) => {
                assert_eq!((axis, left, right), (1, 3, 2));
            }
            other => panic!("expected broadcast error, got {other:?}"),
        }
    }

    #[test]
    fn pool_rejects_odd_dims() {
        let tape = Tape::new();
        let x = tape.leaf(vec![0.0; 9], &[1, 1, 3, 3], false).unwrap();
        assert!(matches!(x.pool_max2(), Err(CoreError::OddSpatialDim { axis: 2, size: 3 })));
    }

    #[test]
    fn pool_and_upsample_examples() {
        let tape = Tape::new();
        let x = tape.leaf(vec![1.0, 2.0, 3.0, 4.0], &[1, 1, 2, 2], false).unwrap();
        assert_eq!(x.pool_max2().unwrap().data(), vec![4.0]);
        let y = tape.leaf(vec![5.0], &[1, 1, 1, 1], false).unwrap();
        assert_eq!(y.upsample_nearest2().unwrap().data(), vec![5.0; 4]);
    }

    #[test]
    fn mean_and_var_population() {
        let tape = Tape::new();
        let x = tape.leaf(vec![1.0, 2.0, 3.0, 4.0], &[4], false).unwrap();
        assert_eq!(x.mean_all().unwrap().item().unwrap(), 2.5);
        assert_eq!(x.var_all().unwrap().item().unwrap(), 1.25);
    }

    #[test]
    fn concat_on_last_axis() {
        let tape = Tape::new();
        let a = tape.leaf(vec![1.0, 2.0], &[1, 2], false).unwrap();
        let b = tape.leaf(vec![3.0], &[1, 1], false).unwrap();
        let c = Tensor::concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.shape(), vec![1, 3]);
        assert_eq!(c.data(), vec![1.0, 2.0, 3.0]);
        let single = Tensor::concat(&[&a], 1).unwrap();
        assert_eq!(single.data(), a.data());
    }

    #[test]
    fn backward_is_deterministic() {
        let tape = Tape::new();
        let x = tape.leaf(vec![0.3, -0.4, 0.9, 0.1], &[2, 2], true).unwrap();
        let loss = x.sigmoid().unwrap().mul(&x).unwrap().sum_all().unwrap();
        loss.backward().unwrap();
        let g1 = x.grad().unwrap();
        tape.zero_grads();
        loss.backward().unwrap();
        let g2 = x.grad().unwrap();
        let bits1: Vec<u64> = g1.iter().map(|v| v.to_bits()).collect();
        let bits2: Vec<u64> = g2.iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits1, bits2);
    }
}
