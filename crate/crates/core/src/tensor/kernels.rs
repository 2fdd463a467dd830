//! Numeric kernels behind the tensor ops. Everything operates on flat
//! row-major buffers; shape checks happen in the caller.

use alloc::vec;
use alloc::vec::Vec;

use super::{BinKind, ReduceKind};

#[inline]
fn apply(kind: BinKind, a: f64, b: f64) -> f64 {
    match kind {
        BinKind::Add => a + b,
        BinKind::Sub => a - b,
        BinKind::Mul => a * b,
        BinKind::Div => a / b,
    }
}

/// Row-major strides with 0 for broadcast (size-1) axes, right-aligned to
/// `out_shape`.
fn broadcast_strides(out_shape: &[usize], shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let offset = rank - shape.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[offset + i] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

struct BroadcastIter {
    out_shape: Vec<usize>,
    idx: Vec<usize>,
    sa: Vec<usize>,
    sb: Vec<usize>,
    oa: usize,
    ob: usize,
    remaining: usize,
}

impl BroadcastIter {
    fn new(out_shape: &[usize], a_shape: &[usize], b_shape: &[usize]) -> Self {
        let numel: usize = out_shape.iter().product();
        BroadcastIter {
            out_shape: out_shape.to_vec(),
            idx: vec![0; out_shape.len()],
            sa: broadcast_strides(out_shape, a_shape),
            sb: broadcast_strides(out_shape, b_shape),
            oa: 0,
            ob: 0,
            remaining: numel,
        }
    }

    #[inline]
    fn step(&mut self) {
        for ax in (0..self.out_shape.len()).rev() {
            self.idx[ax] += 1;
            self.oa += self.sa[ax];
            self.ob += self.sb[ax];
            if self.idx[ax] < self.out_shape[ax] {
                return;
            }
            self.oa -= self.sa[ax] * self.out_shape[ax];
            self.ob -= self.sb[ax] * self.out_shape[ax];
            self.idx[ax] = 0;
        }
    }
}

pub fn binary_forward(
    kind: BinKind,
    out_shape: &[usize],
    a_shape: &[usize],
    a: &[f64],
    b_shape: &[usize],
    b: &[f64],
) -> Vec<f64> {
    if a_shape == b_shape {
        return a.iter().zip(b).map(|(&x, &y)| apply(kind, x, y)).collect();
    }
    let numel: usize = out_shape.iter().product();
    let mut out = Vec::with_capacity(numel);
    let mut it = BroadcastIter::new(out_shape, a_shape, b_shape);
    while it.remaining > 0 {
        out.push(apply(kind, a[it.oa], b[it.ob]));
        it.remaining -= 1;
        if it.remaining > 0 {
            it.step();
        }
    }
    out
}

pub fn binary_backward_lhs(
    kind: BinKind,
    out_shape: &[usize],
    a_shape: &[usize],
    a: &[f64],
    b_shape: &[usize],
    b: &[f64],
    gout: &[f64],
    ga: &mut [f64],
) {
    let same = a_shape == b_shape;
    let mut it = BroadcastIter::new(out_shape, a_shape, b_shape);
    for (i, &g) in gout.iter().enumerate() {
        let (oa, ob) = if same { (i, i) } else { (it.oa, it.ob) };
        match kind {
            BinKind::Add | BinKind::Sub => ga[oa] += g,
            BinKind::Mul => ga[oa] += g * b[ob],
            BinKind::Div => ga[oa] += g / b[ob],
        }
        if !same && i + 1 < gout.len() {
            it.step();
        }
    }
}

pub fn binary_backward_rhs(
    kind: BinKind,
    out_shape: &[usize],
    a_shape: &[usize],
    a: &[f64],
    b_shape: &[usize],
    b: &[f64],
    gout: &[f64],
    gb: &mut [f64],
) {
    let same = a_shape == b_shape;
    let mut it = BroadcastIter::new(out_shape, a_shape, b_shape);
    for (i, &g) in gout.iter().enumerate() {
        let (oa, ob) = if same { (i, i) } else { (it.oa, it.ob) };
        match kind {
            BinKind::Add => gb[ob] += g,
            BinKind::Sub => gb[ob] -= g,
            BinKind::Mul => gb[ob] += g * a[oa],
            BinKind::Div => gb[ob] -= g * a[oa] / (b[ob] * b[ob]),
        }
        if !same && i + 1 < gout.len() {
            it.step();
        }
    }
}

// ── Convolution ─────────────────────────────────────────────────────────

fn pad_input(shape: &[usize], data: &[f64], padding: usize) -> (usize, usize, Vec<f64>) {
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let (hp, wp) = (h + 2 * padding, w + 2 * padding);
    if padding == 0 {
        return (hp, wp, data.to_vec());
    }
    let mut out = vec![0.0; n * c * hp * wp];
    for img in 0..n * c {
        for y in 0..h {
            let src = &data[(img * h + y) * w..(img * h + y + 1) * w];
            let dst_start = (img * hp + y + padding) * wp + padding;
            out[dst_start..dst_start + w].copy_from_slice(src);
        }
    }
    (hp, wp, out)
}

pub fn conv2d_forward(
    x_shape: &[usize],
    x: &[f64],
    k_shape: &[usize],
    kern: &[f64],
    bias: &[f64],
    stride: usize,
    padding: usize,
) -> (Vec<usize>, Vec<f64>) {
    let (n, c, _, _) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let (kout, _, kh, kw) = (k_shape[0], k_shape[1], k_shape[2], k_shape[3]);
    let (hp, wp, xp) = pad_input(x_shape, x, padding);
    let ho = (hp - kh) / stride + 1;
    let wo = (wp - kw) / stride + 1;
    let mut out = vec![0.0; n * kout * ho * wo];
    for bn in 0..n {
        for ko in 0..kout {
            let out_base = (bn * kout + ko) * ho * wo;
            out[out_base..out_base + ho * wo].fill(bias[ko]);
            for ci in 0..c {
                let in_base = (bn * c + ci) * hp * wp;
                for ki in 0..kh {
                    for kj in 0..kw {
                        let wv = kern[((ko * c + ci) * kh + ki) * kw + kj];
                        for y in 0..ho {
                            let row = in_base + (y * stride + ki) * wp + kj;
                            let dst = &mut out[out_base + y * wo..out_base + (y + 1) * wo];
                            if stride == 1 {
                                let src = &xp[row..row + wo];
                                for (d, s) in dst.iter_mut().zip(src) {
                                    *d += wv * s;
                                }
                            } else {
                                for (xo, d) in dst.iter_mut().enumerate() {
                                    *d += wv * xp[row + xo * stride];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (vec![n, kout, ho, wo], out)
}

pub fn conv2d_backward_input(
    x_shape: &[usize],
    k_shape: &[usize],
    kern: &[f64],
    gout: &[f64],
    stride: usize,
    padding: usize,
    gx: &mut [f64],
) {
    let (n, c, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let (kout, _, kh, kw) = (k_shape[0], k_shape[1], k_shape[2], k_shape[3]);
    let (hp, wp) = (h + 2 * padding, w + 2 * padding);
    let ho = (hp - kh) / stride + 1;
    let wo = (wp - kw) / stride + 1;
    let mut gpad = vec![0.0; n * c * hp * wp];
    for bn in 0..n {
        for ko in 0..kout {
            let out_base = (bn * kout + ko) * ho * wo;
            for ci in 0..c {
                let in_base = (bn * c + ci) * hp * wp;
                for ki in 0..kh {
                    for kj in 0..kw {
                        let wv = kern[((ko * c + ci) * kh + ki) * kw + kj];
                        for y in 0..ho {
                            let row = in_base + (y * stride + ki) * wp + kj;
                            let src = &gout[out_base + y * wo..out_base + (y + 1) * wo];
                            if stride == 1 {
                                let dst = &mut gpad[row..row + wo];
                                for (d, g) in dst.iter_mut().zip(src) {
                                    *d += wv * g;
                                }
                            } else {
                                for (xo, g) in src.iter().enumerate() {
                                    gpad[row + xo * stride] += wv * g;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    // crop padding back off
    if padding == 0 {
        gx.copy_from_slice(&gpad);
    } else {
        for img in 0..n * c {
            for y in 0..h {
                let src_start = (img * hp + y + padding) * wp + padding;
                let dst = &mut gx[(img * h + y) * w..(img * h + y + 1) * w];
                for (d, s) in dst.iter_mut().zip(&gpad[src_start..src_start + w]) {
                    *d += s;
                }
            }
        }
    }
}

pub fn conv2d_backward_kernel(
    x_shape: &[usize],
    x: &[f64],
    k_shape: &[usize],
    gout: &[f64],
    stride: usize,
    padding: usize,
    gk: &mut [f64],
) {
    let (n, c, _, _) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let (kout, _, kh, kw) = (k_shape[0], k_shape[1], k_shape[2], k_shape[3]);
    let (hp, wp, xp) = pad_input(x_shape, x, padding);
    let ho = (hp - kh) / stride + 1;
    let wo = (wp - kw) / stride + 1;
    for bn in 0..n {
        for ko in 0..kout {
            let out_base = (bn * kout + ko) * ho * wo;
            for ci in 0..c {
                let in_base = (bn * c + ci) * hp * wp;
                for ki in 0..kh {
                    for kj in 0..kw {
                        let mut acc = 0.0;
                        for y in 0..ho {
                            let row = in_base + (y * stride + ki) * wp + kj;
                            let go = &gout[out_base + y * wo..out_base + (y + 1) * wo];
                            if stride == 1 {
                                let src = &xp[row..row + wo];
                                for (g, s) in go.iter().zip(src) {
                                    acc += g * s;
                                }
                            } else {
                                for (xo, g) in go.iter().enumerate() {
                                    acc += g * xp[row + xo * stride];
                                }
                            }
                        }
                        gk[((ko * c + ci) * kh + ki) * kw + kj] += acc;
                    }
                }
            }
        }
    }
}

// ── Pooling / upsampling ────────────────────────────────────────────────

pub fn pool_max2_forward(shape: &[usize], x: &[f64]) -> (Vec<usize>, Vec<f64>, Vec<usize>) {
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut argmax = Vec::with_capacity(n * c * ho * wo);
    for img in 0..n * c {
        let base = img * h * w;
        for y in 0..ho {
            for xo in 0..wo {
                let i00 = base + (2 * y) * w + 2 * xo;
                // row-major scan; strict > keeps the first occurrence on ties
                let mut best = i00;
                let mut val = x[i00];
                for &cand in &[i00 + 1, i00 + w, i00 + w + 1] {
                    if x[cand] > val {
                        val = x[cand];
                        best = cand;
                    }
                }
                out.push(val);
                argmax.push(best);
            }
        }
    }
    (vec![n, c, ho, wo], out, argmax)
}

pub fn upsample2_forward(shape: &[usize], x: &[f64]) -> (Vec<usize>, Vec<f64>) {
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = vec![0.0; n * c * ho * wo];
    for img in 0..n * c {
        let in_base = img * h * w;
        let out_base = img * ho * wo;
        for y in 0..ho {
            let src_row = in_base + (y / 2) * w;
            let dst_row = out_base + y * wo;
            for xo in 0..wo {
                out[dst_row + xo] = x[src_row + xo / 2];
            }
        }
    }
    (vec![n, c, ho, wo], out)
}

pub fn upsample2_backward(in_shape: &[usize], gout: &[f64], gx: &mut [f64]) {
    let (n, c, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let (ho, wo) = (2 * h, 2 * w);
    for img in 0..n * c {
        let in_base = img * h * w;
        let out_base = img * ho * wo;
        for y in 0..ho {
            let dst_row = in_base + (y / 2) * w;
            let src_row = out_base + y * wo;
            for xo in 0..wo {
                gx[dst_row + xo / 2] += gout[src_row + xo];
            }
        }
    }
}

// ── Reductions ──────────────────────────────────────────────────────────

fn reduce_layout(shape: &[usize], axes: &[usize]) -> (Vec<usize>, usize, Vec<usize>) {
    let rank = shape.len();
    let mut reduced = vec![false; rank];
    for &a in axes {
        reduced[a] = true;
    }
    let kept_shape: Vec<usize> =
        shape.iter().enumerate().filter(|(i, _)| !reduced[*i]).map(|(_, &d)| d).collect();
    let count: usize = axes.iter().map(|&a| shape[a]).product();
    // stride of each input axis inside the kept (output) index space
    let mut kept_strides = vec![0usize; rank];
    let mut acc = 1;
    for i in (0..rank).rev() {
        if !reduced[i] {
            kept_strides[i] = acc;
            acc *= shape[i];
        }
    }
    (kept_shape, count, kept_strides)
}

fn for_each_mapped(shape: &[usize], kept_strides: &[usize], mut f: impl FnMut(usize, usize)) {
    let rank = shape.len();
    let numel: usize = shape.iter().product();
    let mut idx = vec![0usize; rank];
    let mut kept = 0usize;
    for flat in 0..numel {
        f(flat, kept);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            kept += kept_strides[ax];
            if idx[ax] < shape[ax] {
                break;
            }
            kept -= kept_strides[ax] * shape[ax];
            idx[ax] = 0;
        }
    }
}

pub fn reduce_forward(kind: ReduceKind, shape: &[usize], x: &[f64], axes: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let (kept_shape, count, kept_strides) = reduce_layout(shape, axes);
    let out_numel: usize = kept_shape.iter().product();
    let mut sums = vec![0.0; out_numel];
    for_each_mapped(shape, &kept_strides, |flat, kept| sums[kept] += x[flat]);
    match kind {
        ReduceKind::Sum => (kept_shape, sums),
        ReduceKind::Mean => {
            for v in &mut sums {
                *v /= count as f64;
            }
            (kept_shape, sums)
        }
        ReduceKind::Var => {
            for v in &mut sums {
                *v /= count as f64;
            }
            let mut out = vec![0.0; out_numel];
            for_each_mapped(shape, &kept_strides, |flat, kept| {
                let d = x[flat] - sums[kept];
                out[kept] += d * d;
            });
            for v in &mut out {
                *v /= count as f64;
            }
            (kept_shape, out)
        }
    }
}

pub fn reduce_backward(
    kind: ReduceKind,
    shape: &[usize],
    x: &[f64],
    axes: &[usize],
    gout: &[f64],
    gx: &mut [f64],
) {
    let (_, count, kept_strides) = reduce_layout(shape, axes);
    match kind {
        ReduceKind::Sum => {
            for_each_mapped(shape, &kept_strides, |flat, kept| gx[flat] += gout[kept]);
        }
        ReduceKind::Mean => {
            let scale = 1.0 / count as f64;
            for_each_mapped(shape, &kept_strides, |flat, kept| gx[flat] += gout[kept] * scale);
        }
        ReduceKind::Var => {
            let out_numel = gout.len();
            let mut means = vec![0.0; out_numel];
            for_each_mapped(shape, &kept_strides, |flat, kept| means[kept] += x[flat]);
            for v in &mut means {
                *v /= count as f64;
            }
            let scale = 2.0 / count as f64;
            for_each_mapped(shape, &kept_strides, |flat, kept| {
                gx[flat] += gout[kept] * scale * (x[flat] - means[kept]);
            });
        }
    }
}
