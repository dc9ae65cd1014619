//! Backward rules. Each rule maps the output gradient to one optional
//! gradient per parent, skipping parents that do not track gradients.

use super::nn::{for_each_tap, pool_cell, BilinearTap};
use super::ops::{matmul_raw, transpose_raw};
use super::Tensor;
use crate::real::Real;

pub(crate) enum Op<T: Real> {
    Add,
    Sub,
    Mul,
    Scale(T),
    AddScalar,
    AddRow {
        cols: usize,
    },
    Relu,
    Sqrt,
    Clamp {
        lo: T,
        hi: T,
    },
    SumAll,
    MeanAll,
    MatMul {
        m: usize,
        k: usize,
        n: usize,
    },
    Transpose {
        rows: usize,
        cols: usize,
    },
    Reshape,
    Slice {
        outer: usize,
        axis_len: usize,
        inner: usize,
        start: usize,
        len: usize,
    },
    Concat {
        outer: usize,
        inner: usize,
        lens: Vec<usize>,
    },
    MeanAxes {
        index: Vec<usize>,
        count: usize,
    },
    VarAxes {
        index: Vec<usize>,
        count: usize,
        centered: Vec<T>,
    },
    Softmax {
        cols: usize,
    },
    LayerNorm {
        cols: usize,
        x_hat: Vec<T>,
        inv_std: Vec<T>,
    },
    Conv1x1 {
        cin: usize,
        cout: usize,
        hw: usize,
    },
    Conv3x3 {
        cin: usize,
        cout: usize,
        h: usize,
        w: usize,
    },
    AvgPool {
        c: usize,
        h: usize,
        w: usize,
        out_h: usize,
        out_w: usize,
    },
    MaxPool {
        argmax: Vec<usize>,
    },
    Upsample2 {
        c: usize,
        h: usize,
        w: usize,
    },
    Bilinear {
        c: usize,
        h: usize,
        w: usize,
        ty: Vec<BilinearTap>,
        tx: Vec<BilinearTap>,
    },
    /// `out[k] = in[index[k]]` where `index` is a permutation.
    Gather {
        index: Vec<usize>,
    },
}

fn wants<T: Real>(parents: &[Tensor<T>], i: usize) -> bool {
    parents[i].tracks_grad()
}

fn map<T: Real>(g: &[T], f: impl Fn(usize, T) -> T) -> Vec<T> {
    g.iter().enumerate().map(|(i, &v)| f(i, v)).collect()
}

impl<T: Real> Op<T> {
    pub(crate) fn backward(
        &self,
        g: &[T],
        parents: &[Tensor<T>],
        out: &[T],
    ) -> Vec<Option<Vec<T>>> {
        let p0 = || parents[0].data();
        match self {
            Op::Add => vec![Some(g.to_vec()), Some(g.to_vec())],
            Op::Sub => vec![Some(g.to_vec()), Some(g.iter().map(|&v| -v).collect())],
            Op::Mul => {
                let a = parents[0].data();
                let b = parents[1].data();
                vec![
                    wants(parents, 0).then(|| map(g, |i, v| v * b[i])),
                    wants(parents, 1).then(|| map(g, |i, v| v * a[i])),
                ]
            }
            Op::Scale(s) => vec![Some(g.iter().map(|&v| v * *s).collect())],
            Op::AddScalar => vec![Some(g.to_vec())],
            Op::AddRow { cols } => {
                let mut gr = vec![T::zero(); *cols];
                for (i, &v) in g.iter().enumerate() {
                    gr[i % cols] = gr[i % cols] + v;
                }
                vec![Some(g.to_vec()), Some(gr)]
            }
            Op::Relu => {
                let x = p0();
                vec![Some(map(g, |i, v| if x[i] > T::zero() { v } else { T::zero() }))]
            }
            Op::Sqrt => {
                let half = T::lit(0.5);
                vec![Some(map(g, |i, v| {
                    if out[i] > T::zero() {
                        v * half / out[i]
                    } else {
                        T::zero()
                    }
                }))]
            }
            Op::Clamp { lo, hi } => {
                let x = p0();
                vec![Some(map(g, |i, v| {
                    if x[i] > *lo && x[i] < *hi {
                        v
                    } else {
                        T::zero()
                    }
                }))]
            }
            Op::SumAll => vec![Some(vec![g[0]; parents[0].numel()])],
            Op::MeanAll => {
                let n = parents[0].numel();
                vec![Some(vec![g[0] / T::lit(n as f64); n])]
            }
            Op::MatMul { m, k, n } => {
                let a = parents[0].data();
                let b = parents[1].data();
                let ga = wants(parents, 0).then(|| {
                    let bt = transpose_raw(b, *k, *n);
                    matmul_raw(g, &bt, *m, *n, *k)
                });
                let gb = wants(parents, 1).then(|| {
                    let at = transpose_raw(a, *m, *k);
                    matmul_raw(&at, g, *k, *m, *n)
                });
                vec![ga, gb]
            }
            Op::Transpose { rows, cols } => vec![Some(transpose_raw(g, *cols, *rows))],
            Op::Reshape => vec![Some(g.to_vec())],
            Op::Slice {
                outer,
                axis_len,
                inner,
                start,
                len,
            } => {
                let mut gi = vec![T::zero(); outer * axis_len * inner];
                let chunk = len * inner;
                for o in 0..*outer {
                    let base = (o * axis_len + start) * inner;
                    gi[base..base + chunk].copy_from_slice(&g[o * chunk..(o + 1) * chunk]);
                }
                vec![Some(gi)]
            }
            Op::Concat { outer, inner, lens } => {
                let total: usize = lens.iter().sum();
                let mut offset = 0;
                let mut grads = Vec::with_capacity(lens.len());
                for (p, &len) in lens.iter().enumerate() {
                    if wants(parents, p) {
                        let chunk = len * inner;
                        let mut gp = Vec::with_capacity(outer * chunk);
                        for o in 0..*outer {
                            let base = (o * total + offset) * inner;
                            gp.extend_from_slice(&g[base..base + chunk]);
                        }
                        grads.push(Some(gp));
                    } else {
                        grads.push(None);
                    }
                    offset += len;
                }
                grads
            }
            Op::MeanAxes { index, count } => {
                let n = T::lit(*count as f64);
                vec![Some(index.iter().map(|&o| g[o] / n).collect())]
            }
            Op::VarAxes {
                index,
                count,
                centered,
            } => {
                let scale = T::lit(2.0 / *count as f64);
                vec![Some(
                    index
                        .iter()
                        .zip(centered)
                        .map(|(&o, &c)| g[o] * scale * c)
                        .collect(),
                )]
            }
            Op::Softmax { cols } => {
                let mut gi = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks(*cols).zip(out.chunks(*cols)) {
                    let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    gi.extend(gr.iter().zip(yr).map(|(&a, &y)| y * (a - dot)));
                }
                vec![Some(gi)]
            }
            Op::LayerNorm {
                cols,
                x_hat,
                inv_std,
            } => {
                let gamma = parents[1].data();
                let n = T::lit(*cols as f64);
                let mut gx = Vec::with_capacity(g.len());
                let mut gg = vec![T::zero(); *cols];
                let mut gb = vec![T::zero(); *cols];
                for ((gr, xr), &inv) in g.chunks(*cols).zip(x_hat.chunks(*cols)).zip(inv_std) {
                    let mut sum_d = T::zero();
                    let mut sum_dx = T::zero();
                    for c in 0..*cols {
                        let d = gr[c] * gamma[c];
                        sum_d = sum_d + d;
                        sum_dx = sum_dx + d * xr[c];
                        gg[c] = gg[c] + gr[c] * xr[c];
                        gb[c] = gb[c] + gr[c];
                    }
                    for c in 0..*cols {
                        let d = gr[c] * gamma[c];
                        gx.push(inv / n * (n * d - sum_d - xr[c] * sum_dx));
                    }
                }
                vec![Some(gx), Some(gg), Some(gb)]
            }
            Op::Conv1x1 { cin, cout, hw } => {
                let x = parents[0].data();
                let wt = parents[1].data();
                let gx = wants(parents, 0).then(|| {
                    let wtt = transpose_raw(wt, *cout, *cin);
                    matmul_raw(&wtt, g, *cin, *cout, *hw)
                });
                let gw = wants(parents, 1).then(|| {
                    let xt = transpose_raw(x, *cin, *hw);
                    matmul_raw(g, &xt, *cout, *hw, *cin)
                });
                let gb = wants(parents, 2)
                    .then(|| g.chunks(*hw).map(|plane| plane.iter().copied().sum()).collect());
                vec![gx, gw, gb]
            }
            Op::Conv3x3 { cin, cout, h, w } => conv3x3_backward(g, parents, *cin, *cout, *h, *w),
            Op::AvgPool {
                c,
                h,
                w,
                out_h,
                out_w,
            } => {
                let mut gi = vec![T::zero(); c * h * w];
                for ch in 0..*c {
                    for i in 0..*out_h {
                        let (r0, r1) = pool_cell(i, *h, *out_h);
                        for j in 0..*out_w {
                            let (c0, c1) = pool_cell(j, *w, *out_w);
                            let share = g[(ch * out_h + i) * out_w + j]
                                / T::lit(((r1 - r0) * (c1 - c0)) as f64);
                            for r in r0..r1 {
                                for col in c0..c1 {
                                    let idx = ch * h * w + r * w + col;
                                    gi[idx] = gi[idx] + share;
                                }
                            }
                        }
                    }
                }
                vec![Some(gi)]
            }
            Op::MaxPool { argmax } => {
                let mut gi = vec![T::zero(); parents[0].numel()];
                for (&src, &v) in argmax.iter().zip(g) {
                    gi[src] = gi[src] + v;
                }
                vec![Some(gi)]
            }
            Op::Upsample2 { c, h, w } => {
                let (oh, ow) = (2 * h, 2 * w);
                let mut gi = vec![T::zero(); c * h * w];
                for ch in 0..*c {
                    for y in 0..oh {
                        for x in 0..ow {
                            let idx = ch * h * w + (y / 2) * w + x / 2;
                            gi[idx] = gi[idx] + g[(ch * oh + y) * ow + x];
                        }
                    }
                }
                vec![Some(gi)]
            }
            Op::Bilinear { c, h, w, ty, tx } => {
                let (oh, ow) = (ty.len(), tx.len());
                let mut gi = vec![T::zero(); c * h * w];
                for ch in 0..*c {
                    let base = ch * h * w;
                    for (i, a) in ty.iter().enumerate() {
                        for (j, b) in tx.iter().enumerate() {
                            let v = g[(ch * oh + i) * ow + j];
                            for (row, wy) in [(a.lo, a.w_lo), (a.hi, a.w_hi)] {
                                for (col, wx) in [(b.lo, b.w_lo), (b.hi, b.w_hi)] {
                                    let idx = base + row * w + col;
                                    gi[idx] = gi[idx] + T::lit(wy * wx) * v;
                                }
                            }
                        }
                    }
                }
                vec![Some(gi)]
            }
            Op::Gather { index } => {
                let mut gi = vec![T::zero(); parents[0].numel()];
                for (&src, &v) in index.iter().zip(g) {
                    gi[src] = gi[src] + v;
                }
                vec![Some(gi)]
            }
        }
    }
}

fn conv3x3_backward<T: Real>(
    g: &[T],
    parents: &[Tensor<T>],
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
) -> Vec<Option<Vec<T>>> {
    let x = parents[0].data();
    let wt = parents[1].data();
    let hw = h * w;
    let mut gx = wants(parents, 0).then(|| vec![T::zero(); cin * hw]);
    let mut gw = wants(parents, 1).then(|| vec![T::zero(); cout * cin * 9]);
    for co in 0..cout {
        let gplane = &g[co * hw..(co + 1) * hw];
        for ci in 0..cin {
            let src = &x[ci * hw..(ci + 1) * hw];
            for ky in 0..3 {
                for kx in 0..3 {
                    let widx = ((co * cin + ci) * 3 + ky) * 3 + kx;
                    let wv = wt[widx];
                    let mut acc = T::zero();
                    for_each_tap(h, w, ky, kx, |y, sy, x0, x1, sx0| {
                        let gs = &gplane[y * w + x0..y * w + x1];
                        let s0 = sy * w + sx0;
                        if gw.is_some() {
                            for (&gv, &xv) in gs.iter().zip(&src[s0..s0 + (x1 - x0)]) {
                                acc = acc + gv * xv;
                            }
                        }
                        if let Some(gx) = gx.as_mut() {
                            let dst = &mut gx[ci * hw + s0..ci * hw + s0 + (x1 - x0)];
                            for (d, &gv) in dst.iter_mut().zip(gs) {
                                *d = *d + wv * gv;
                            }
                        }
                    });
                    if let Some(gw) = gw.as_mut() {
                        gw[widx] = acc;
                    }
                }
            }
        }
    }
    let gb = wants(parents, 2).then(|| g.chunks(hw).map(|p| p.iter().copied().sum()).collect());
    vec![gx, gw, gb]
}
