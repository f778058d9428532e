//! Numeric kernels for each primitive: forward evaluation and vector-Jacobian products.

use super::{BinaryOp, NodeId, Op, Unary};
use crate::tensor::{numel, Element, Tensor};

/// `rhs` broadcasts onto `lhs` if equal, single-element, or a trailing suffix.
pub(super) fn broadcastable(lhs: &[usize], rhs: &[usize]) -> bool {
    lhs == rhs || numel(rhs) == 1 || (rhs.len() <= lhs.len() && lhs.ends_with(rhs))
}

fn lit<T: Element>(v: f64) -> T {
    T::lit(v)
}

const ATAN2_DELTA: f64 = 1e-12;

fn atan2_unsigned<T: Element>(y: T, x: T) -> T {
    let pi = lit::<T>(std::f64::consts::PI);
    let mut th = y.atan2(x);
    if th < T::zero() {
        th = th + pi;
    }
    if th >= pi {
        th = th - pi;
    }
    th
}

fn tent_offset<T: Element>(x: T, center: f64, period: f64) -> T {
    let p = lit::<T>(period);
    let d = x - lit(center);
    d - p * (d / p).round()
}

fn unary_value<T: Element>(f: Unary, x: T) -> T {
    match f {
        Unary::Square => x * x,
        Unary::Sqrt => x.sqrt(),
        Unary::Recip => x.recip(),
        Unary::Tanh => x.tanh(),
        Unary::Silu => x / (T::one() + (-x).exp()),
        Unary::Offset(c) => x + lit(c),
        Unary::ClampMax(c) => x.min(lit(c)),
        Unary::Tent {
            center,
            half_width,
            period,
        } => {
            let d = tent_offset(x, center, period).abs();
            (T::one() - d / lit(half_width)).max(T::zero())
        }
    }
}

/// Derivative given input `x` and output `y`.
fn unary_deriv<T: Element>(f: Unary, x: T, y: T) -> T {
    match f {
        Unary::Square => x + x,
        Unary::Sqrt => lit::<T>(0.5) / y,
        Unary::Recip => -(y * y),
        Unary::Tanh => T::one() - y * y,
        Unary::Silu => {
            let s = T::one() / (T::one() + (-x).exp());
            s + x * s * (T::one() - s)
        }
        Unary::Offset(_) => T::one(),
        Unary::ClampMax(c) => {
            if x < lit(c) {
                T::one()
            } else {
                T::zero()
            }
        }
        Unary::Tent {
            center,
            half_width,
            period,
        } => {
            let d = tent_offset(x, center, period);
            let w = lit::<T>(half_width);
            if d.abs() >= w || d == T::zero() {
                T::zero()
            } else if d > T::zero() {
                -T::one() / w
            } else {
                T::one() / w
            }
        }
    }
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Splits `shape` around `axis` into (outer, axis_len, inner).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    )
}

fn last_two(shape: &[usize]) -> (usize, usize, usize) {
    let r = shape.len();
    (numel(&shape[..r - 2]), shape[r - 2], shape[r - 1])
}

struct ResizeTap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn resize_taps(input: usize, output: usize) -> Vec<ResizeTap> {
    let ratio = input as f64 / output as f64;
    (0..output)
        .map(|i| {
            let src = ((i as f64 + 0.5) * ratio - 0.5).clamp(0.0, (input - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(input - 1);
            ResizeTap {
                lo,
                hi,
                frac: src - lo as f64,
            }
        })
        .collect()
}

fn permute_index_map(in_shape: &[usize], axes: &[usize]) -> Vec<usize> {
    // For each output linear index, the matching input linear index.
    let in_strides = strides(in_shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n = numel(in_shape);
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; out_shape.len()];
    let mut src = 0usize;
    for _ in 0..n {
        map.push(src);
        for d in (0..out_shape.len()).rev() {
            idx[d] += 1;
            src += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            src -= src_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    map
}

pub(super) fn matmul_into<T: Element>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    // Four output rows at a time share each load of a `b` row. Every output
    // element still accumulates over `p` in increasing order.
    let mut i = 0;
    while i + 4 <= m {
        let (r0, rest) = out[i * n..(i + 4) * n].split_at_mut(n);
        let (r1, rest) = rest.split_at_mut(n);
        let (r2, r3) = rest.split_at_mut(n);
        let (r0, r1, r2, r3) = (&mut r0[..n], &mut r1[..n], &mut r2[..n], &mut r3[..n]);
        for p in 0..k {
            let (a0, a1, a2, a3) = (a[i * k + p], a[(i + 1) * k + p], a[(i + 2) * k + p], a[(i + 3) * k + p]);
            let br = &b[p * n..(p + 1) * n];
            for j in 0..n {
                let bv = br[j];
                r0[j] = r0[j] + a0 * bv;
                r1[j] = r1[j] + a1 * bv;
                r2[j] = r2[j] + a2 * bv;
                r3[j] = r3[j] + a3 * bv;
            }
        }
        i += 4;
    }
    for i in i..m {
        let row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            for (o, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o = *o + av * bv;
            }
        }
    }
}

pub(super) fn forward<T: Element>(op: &Op<T>, shape: &[usize], vals: &[Tensor<T>]) -> Tensor<T> {
    let v = |id: &NodeId| &vals[id.0];
    let data: Vec<T> = match op {
        Op::Input { .. } => unreachable!("inputs are bound by the caller"),
        Op::Binary { op, lhs, rhs } => {
            let (l, r) = (v(lhs).data(), v(rhs).data());
            let rn = r.len();
            match op {
                BinaryOp::Add => l.iter().enumerate().map(|(i, &a)| a + r[i % rn]).collect(),
                BinaryOp::Sub => l.iter().enumerate().map(|(i, &a)| a - r[i % rn]).collect(),
                BinaryOp::Mul => l.iter().enumerate().map(|(i, &a)| a * r[i % rn]).collect(),
                BinaryOp::Atan2Unsigned => {
                    l.iter().zip(r).map(|(&y, &x)| atan2_unsigned(y, x)).collect()
                }
            }
        }
        Op::Scale { x, factor } => v(x).data().iter().map(|&a| a * *factor).collect(),
        Op::Unary { x, f } => v(x).data().iter().map(|&a| unary_value(*f, a)).collect(),
        Op::MatMul { a, b } => {
            let (sa, sb) = (v(a).shape(), v(b).shape());
            let (m, k, n) = (sa[0], sa[1], sb[1]);
            let mut out = vec![T::zero(); m * n];
            matmul_into(v(a).data(), v(b).data(), &mut out, m, k, n);
            out
        }
        Op::Conv2d { x, kernel, stride } => {
            let (batch, h, w) = last_two(v(x).shape());
            let (kh, kw) = (kernel.shape()[0], kernel.shape()[1]);
            let (oh, ow) = (shape[shape.len() - 2], shape[shape.len() - 1]);
            let (xd, kd) = (v(x).data(), kernel.data());
            let mut out = Vec::with_capacity(batch * oh * ow);
            for bi in 0..batch {
                let plane = &xd[bi * h * w..(bi + 1) * h * w];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let (y0, x0) = (oy * stride[0], ox * stride[1]);
                        let mut acc = T::zero();
                        for ky in 0..kh {
                            let row = &plane[(y0 + ky) * w + x0..(y0 + ky) * w + x0 + kw];
                            for (kv, xv) in kd[ky * kw..(ky + 1) * kw].iter().zip(row) {
                                acc = acc + *kv * *xv;
                            }
                        }
                        out.push(acc);
                    }
                }
            }
            out
        }
        Op::Sum { x } => vec![v(x).sum()],
        Op::Mean { x } => vec![v(x).mean()],
        Op::SumAxis { x, axis } => {
            let (outer, len, inner) = split_axis(v(x).shape(), *axis);
            let xd = v(x).data();
            let mut out = vec![T::zero(); outer * inner];
            for o in 0..outer {
                let dst = &mut out[o * inner..(o + 1) * inner];
                for a in 0..len {
                    let src = &xd[(o * len + a) * inner..(o * len + a + 1) * inner];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d = *d + *s;
                    }
                }
            }
            out
        }
        Op::Slice {
            x,
            axis,
            start,
            len,
        } => {
            let (outer, full, inner) = split_axis(v(x).shape(), *axis);
            let xd = v(x).data();
            let mut out = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = (o * full + start) * inner;
                out.extend_from_slice(&xd[base..base + len * inner]);
            }
            out
        }
        Op::Concat { parts, axis } => {
            let (outer, _, inner) = split_axis(shape, *axis);
            let mut out = Vec::with_capacity(numel(shape));
            for o in 0..outer {
                for p in parts {
                    let pl = v(p).shape()[*axis] * inner;
                    out.extend_from_slice(&v(p).data()[o * pl..(o + 1) * pl]);
                }
            }
            out
        }
        Op::Resize { x, height, width } => {
            let (batch, h, w) = last_two(v(x).shape());
            let (ty, tx) = (resize_taps(h, *height), resize_taps(w, *width));
            let xd = v(x).data();
            let mut out = Vec::with_capacity(batch * height * width);
            for bi in 0..batch {
                let plane = &xd[bi * h * w..(bi + 1) * h * w];
                for a in &ty {
                    let fy = lit::<T>(a.frac);
                    for b in &tx {
                        let fx = lit::<T>(b.frac);
                        let top = plane[a.lo * w + b.lo] * (T::one() - fx) + plane[a.lo * w + b.hi] * fx;
                        let bot = plane[a.hi * w + b.lo] * (T::one() - fx) + plane[a.hi * w + b.hi] * fx;
                        out.push(top * (T::one() - fy) + bot * fy);
                    }
                }
            }
            out
        }
        Op::Reshape { x } => v(x).data().to_vec(),
        Op::Permute { x, axes } => {
            let xd = v(x).data();
            permute_index_map(v(x).shape(), axes)
                .into_iter()
                .map(|i| xd[i])
                .collect()
        }
    };
    Tensor::new(shape.to_vec(), data).expect("shape inferred at build time")
}

/// Vector-Jacobian products of `op` for each operand that needs a gradient.
pub(super) fn backward<T: Element>(
    op: &Op<T>,
    up: &Tensor<T>,
    out: &Tensor<T>,
    vals: &[Tensor<T>],
    needs: impl Fn(NodeId) -> bool,
) -> Vec<(NodeId, Tensor<T>)> {
    let v = |id: &NodeId| &vals[id.0];
    let g = up.data();
    let mut res = Vec::new();
    let mut emit = |id: NodeId, shape: &[usize], data: Vec<T>| {
        res.push((id, Tensor::new(shape.to_vec(), data).expect("gradient shape")));
    };
    match op {
        Op::Input { .. } => {}
        Op::Binary { op, lhs, rhs } => {
            let (l, r) = (v(lhs), v(rhs));
            let rn = r.len();
            match op {
                BinaryOp::Add | BinaryOp::Sub => {
                    if needs(*lhs) {
                        emit(*lhs, l.shape(), g.to_vec());
                    }
                    if needs(*rhs) {
                        let mut gr = vec![T::zero(); rn];
                        for (i, &gi) in g.iter().enumerate() {
                            gr[i % rn] = gr[i % rn] + gi;
                        }
                        if *op == BinaryOp::Sub {
                            gr.iter_mut().for_each(|x| *x = -*x);
                        }
                        emit(*rhs, r.shape(), gr);
                    }
                }
                BinaryOp::Mul => {
                    let (ld, rd) = (l.data(), r.data());
                    if needs(*lhs) {
                        let gl = g.iter().enumerate().map(|(i, &gi)| gi * rd[i % rn]).collect();
                        emit(*lhs, l.shape(), gl);
                    }
                    if needs(*rhs) {
                        let mut gr = vec![T::zero(); rn];
                        for (i, (&gi, &li)) in g.iter().zip(ld).enumerate() {
                            gr[i % rn] = gr[i % rn] + gi * li;
                        }
                        emit(*rhs, r.shape(), gr);
                    }
                }
                BinaryOp::Atan2Unsigned => {
                    let delta = lit::<T>(ATAN2_DELTA);
                    let (yd, xd) = (l.data(), r.data());
                    let denom = |i: usize| xd[i] * xd[i] + yd[i] * yd[i] + delta;
                    if needs(*lhs) {
                        let gy = (0..g.len()).map(|i| g[i] * xd[i] / denom(i)).collect();
                        emit(*lhs, l.shape(), gy);
                    }
                    if needs(*rhs) {
                        let gx = (0..g.len()).map(|i| -g[i] * yd[i] / denom(i)).collect();
                        emit(*rhs, r.shape(), gx);
                    }
                }
            }
        }
        Op::Scale { x, factor } => {
            emit(*x, v(x).shape(), g.iter().map(|&gi| gi * *factor).collect());
        }
        Op::Unary { x, f } => {
            let xd = v(x).data();
            let od = out.data();
            let gx = (0..g.len())
                .map(|i| g[i] * unary_deriv(*f, xd[i], od[i]))
                .collect();
            emit(*x, v(x).shape(), gx);
        }
        Op::MatMul { a, b } => {
            let (av, bv) = (v(a), v(b));
            let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
            let (ad, bd) = (av.data(), bv.data());
            if needs(*a) {
                // g · bᵀ, accumulated row-wise so the inner loop vectorizes.
                let mut bt = vec![T::zero(); n * k];
                for p in 0..k {
                    for j in 0..n {
                        bt[j * k + p] = bd[p * n + j];
                    }
                }
                let mut ga = vec![T::zero(); m * k];
                matmul_into(g, &bt, &mut ga, m, n, k);
                emit(*a, av.shape(), ga);
            }
            if needs(*b) {
                // aᵀ · g
                let mut at = vec![T::zero(); k * m];
                for i in 0..m {
                    for p in 0..k {
                        at[p * m + i] = ad[i * k + p];
                    }
                }
                let mut gb = vec![T::zero(); k * n];
                matmul_into(&at, g, &mut gb, k, m, n);
                emit(*b, bv.shape(), gb);
            }
        }
        Op::Conv2d { x, kernel, stride } => {
            let xs = v(x).shape();
            let (batch, h, w) = last_two(xs);
            let (kh, kw) = (kernel.shape()[0], kernel.shape()[1]);
            let os = out.shape();
            let (oh, ow) = (os[os.len() - 2], os[os.len() - 1]);
            let kd = kernel.data();
            let mut gx = vec![T::zero(); numel(xs)];
            for bi in 0..batch {
                let plane = &mut gx[bi * h * w..(bi + 1) * h * w];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let gv = g[(bi * oh + oy) * ow + ox];
                        let (y0, x0) = (oy * stride[0], ox * stride[1]);
                        for ky in 0..kh {
                            let row = &mut plane[(y0 + ky) * w + x0..(y0 + ky) * w + x0 + kw];
                            for (dst, kv) in row.iter_mut().zip(&kd[ky * kw..(ky + 1) * kw]) {
                                *dst = *dst + gv * *kv;
                            }
                        }
                    }
                }
            }
            emit(*x, xs, gx);
        }
        Op::Sum { x } => emit(*x, v(x).shape(), vec![g[0]; v(x).len()]),
        Op::Mean { x } => {
            let n = lit::<T>(v(x).len().max(1) as f64);
            emit(*x, v(x).shape(), vec![g[0] / n; v(x).len()]);
        }
        Op::SumAxis { x, axis } => {
            let xs = v(x).shape();
            let (outer, len, inner) = split_axis(xs, *axis);
            let mut gx = Vec::with_capacity(numel(xs));
            for o in 0..outer {
                for _ in 0..len {
                    gx.extend_from_slice(&g[o * inner..(o + 1) * inner]);
                }
            }
            emit(*x, xs, gx);
        }
        Op::Slice {
            x,
            axis,
            start,
            len,
        } => {
            let xs = v(x).shape();
            let (outer, full, inner) = split_axis(xs, *axis);
            let mut gx = vec![T::zero(); numel(xs)];
            for o in 0..outer {
                let base = (o * full + start) * inner;
                gx[base..base + len * inner]
                    .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            emit(*x, xs, gx);
        }
        Op::Concat { parts, axis } => {
            let (outer, total, inner) = split_axis(out.shape(), *axis);
            let mut offset = 0;
            for p in parts {
                let ps = v(p).shape();
                let pl = ps[*axis];
                if needs(*p) {
                    let mut gp = Vec::with_capacity(numel(ps));
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        gp.extend_from_slice(&g[base..base + pl * inner]);
                    }
                    emit(*p, ps, gp);
                }
                offset += pl;
            }
        }
        Op::Resize { x, height, width } => {
            let xs = v(x).shape();
            let (batch, h, w) = last_two(xs);
            let (ty, tx) = (resize_taps(h, *height), resize_taps(w, *width));
            let mut gx = vec![T::zero(); numel(xs)];
            let mut k = 0;
            for bi in 0..batch {
                let plane = &mut gx[bi * h * w..(bi + 1) * h * w];
                for a in &ty {
                    let fy = lit::<T>(a.frac);
                    for b in &tx {
                        let fx = lit::<T>(b.frac);
                        let gv = g[k];
                        k += 1;
                        let top = gv * (T::one() - fy);
                        let bot = gv * fy;
                        plane[a.lo * w + b.lo] = plane[a.lo * w + b.lo] + top * (T::one() - fx);
                        plane[a.lo * w + b.hi] = plane[a.lo * w + b.hi] + top * fx;
                        plane[a.hi * w + b.lo] = plane[a.hi * w + b.lo] + bot * (T::one() - fx);
                        plane[a.hi * w + b.hi] = plane[a.hi * w + b.hi] + bot * fx;
                    }
                }
            }
            emit(*x, xs, gx);
        }
        Op::Reshape { x } => emit(*x, v(x).shape(), g.to_vec()),
        Op::Permute { x, axes } => {
            let xs = v(x).shape();
            let mut gx = vec![T::zero(); numel(xs)];
            for (o, src) in permute_index_map(xs, axes).into_iter().enumerate() {
                gx[src] = g[o];
            }
            emit(*x, xs, gx);
        }
    }
    res
}
