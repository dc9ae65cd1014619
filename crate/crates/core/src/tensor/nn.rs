//! Network primitives. Spatial ops take a single `[C, H, W]` feature map.

use super::grad::Op;
use super::Tensor;
use crate::error::{Error, Result};
use crate::real::Real;

/// One output sample of 1-D linear interpolation: `w_lo * src[lo] + w_hi * src[hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BilinearTap {
    pub lo: usize,
    pub hi: usize,
    pub w_lo: f64,
    pub w_hi: f64,
}

/// Align-corners sampling positions for resizing `src` samples onto `dst`.
///
/// Output index `i` reads source coordinate `i * (src - 1) / (dst - 1)`, so
/// both end points map onto each other and `src == dst` is the identity.
pub fn bilinear_taps(src: usize, dst: usize) -> Vec<BilinearTap> {
    (0..dst)
        .map(|i| {
            let pos = if dst == 1 || src == 1 {
                0.0
            } else {
                (i * (src - 1)) as f64 / (dst - 1) as f64
            };
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            let frac = if hi == lo { 0.0 } else { pos - lo as f64 };
            BilinearTap {
                lo,
                hi,
                w_lo: 1.0 - frac,
                w_hi: frac,
            }
        })
        .collect()
}

/// Half-open source range of adaptive pooling cell `i`.
pub(crate) fn pool_cell(i: usize, input: usize, output: usize) -> (usize, usize) {
    (i * input / output, (i + 1) * input / output)
}

fn chw(t: &Tensor<impl Real>, op: &'static str) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(Error::shape(op, format!("expected [C, H, W], got {s:?}"))),
    }
}

impl<T: Real> Tensor<T> {
    /// Softmax over the last dimension, stabilised by subtracting the row maximum.
    /// NaN inputs propagate to NaN outputs.
    pub fn softmax_lastdim(&self) -> Result<Tensor<T>> {
        let cols = match self.shape().last() {
            Some(&c) if c >= 1 => c,
            _ => {
                return Err(Error::shape(
                    "softmax_lastdim",
                    format!("empty last dimension in {:?}", self.shape()),
                ))
            }
        };
        let mut data = Vec::with_capacity(self.numel());
        for row in self.data().chunks(cols) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let max = if row.iter().any(|v| v.is_nan()) {
                T::nan()
            } else {
                max
            };
            let start = data.len();
            let mut sum = T::zero();
            for &v in row {
                let e = (v - max).exp();
                sum = sum + e;
                data.push(e);
            }
            data[start..].iter_mut().for_each(|e| *e = *e / sum);
        }
        Ok(Tensor::from_op(
            data,
            self.shape().to_vec(),
            Op::Softmax { cols },
            &[self],
        ))
    }

    /// Per-token normalization over the last (channel) dimension followed by
    /// the affine map `gamma * x_hat + beta`.
    pub fn layer_norm(&self, gamma: &Tensor<T>, beta: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
        let cols = *self.shape().last().unwrap_or(&0);
        if cols == 0 || gamma.shape() != [cols] || beta.shape() != [cols] {
            return Err(Error::shape(
                "layer_norm",
                format!(
                    "input {:?}, gamma {:?}, beta {:?}",
                    self.shape(),
                    gamma.shape(),
                    beta.shape()
                ),
            ));
        }
        let n = T::lit(cols as f64);
        let rows = self.numel() / cols;
        let mut x_hat = Vec::with_capacity(self.numel());
        let mut inv_std = Vec::with_capacity(rows);
        for row in self.data().chunks(cols) {
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let inv = T::one() / (var + eps).sqrt();
            inv_std.push(inv);
            x_hat.extend(row.iter().map(|&v| (v - mean) * inv));
        }
        let (g, b) = (gamma.data(), beta.data());
        let data = x_hat
            .iter()
            .enumerate()
            .map(|(i, &xh)| g[i % cols] * xh + b[i % cols])
            .collect();
        Ok(Tensor::from_op(
            data,
            self.shape().to_vec(),
            Op::LayerNorm {
                cols,
                x_hat,
                inv_std,
            },
            &[self, gamma, beta],
        ))
    }

    /// Pointwise convolution: weight `[C_out, C_in]`, bias `[C_out]`.
    pub fn conv2d_1x1(&self, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
        let (cin, h, w) = chw(self, "conv2d_1x1")?;
        let cout = match *weight.shape() {
            [co, ci] if ci == cin && bias.shape() == [co] => co,
            _ => {
                return Err(Error::shape(
                    "conv2d_1x1",
                    format!(
                        "input {:?}, weight {:?}, bias {:?}",
                        self.shape(),
                        weight.shape(),
                        bias.shape()
                    ),
                ))
            }
        };
        let hw = h * w;
        let mut data = super::ops::matmul_raw(weight.data(), self.data(), cout, cin, hw);
        for (co, plane) in data.chunks_mut(hw).enumerate() {
            let b = bias.data()[co];
            plane.iter_mut().for_each(|v| *v = *v + b);
        }
        Ok(Tensor::from_op(
            data,
            vec![cout, h, w],
            Op::Conv1x1 { cin, cout, hw },
            &[self, weight, bias],
        ))
    }

    /// 3x3 convolution with zero padding 1 (spatial size preserved):
    /// weight `[C_out, C_in, 3, 3]`, bias `[C_out]`.
    pub fn conv2d_3x3(&self, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
        let (cin, h, w) = chw(self, "conv2d_3x3")?;
        let cout = match *weight.shape() {
            [co, ci, 3, 3] if ci == cin && bias.shape() == [co] => co,
            _ => {
                return Err(Error::shape(
                    "conv2d_3x3",
                    format!(
                        "input {:?}, weight {:?}, bias {:?}",
                        self.shape(),
                        weight.shape(),
                        bias.shape()
                    ),
                ))
            }
        };
        let x = self.data();
        let wt = weight.data();
        let mut out = vec![T::zero(); cout * h * w];
        for co in 0..cout {
            let plane = &mut out[co * h * w..(co + 1) * h * w];
            plane.iter_mut().for_each(|v| *v = bias.data()[co]);
            for ci in 0..cin {
                let src = &x[ci * h * w..(ci + 1) * h * w];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let wv = wt[((co * cin + ci) * 3 + ky) * 3 + kx];
                        if wv == T::zero() {
                            continue;
                        }
                        for_each_tap(h, w, ky, kx, |y, sy, x0, x1, sx0| {
                            let dst = &mut plane[y * w + x0..y * w + x1];
                            let s = &src[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                            for (d, &v) in dst.iter_mut().zip(s) {
                                *d = *d + wv * v;
                            }
                        });
                    }
                }
            }
        }
        Ok(Tensor::from_op(
            out,
            vec![cout, h, w],
            Op::Conv3x3 { cin, cout, h, w },
            &[self, weight, bias],
        ))
    }

    /// Average pooling onto an `out_h x out_w` grid; cell `(i, j)` covers rows
    /// `floor(i*H/out_h) .. floor((i+1)*H/out_h)` and likewise for columns.
    pub fn avgpool_adaptive(&self, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
        let (c, h, w) = chw(self, "avgpool_adaptive")?;
        if out_h == 0 || out_w == 0 || h < out_h || w < out_w {
            return Err(Error::shape(
                "avgpool_adaptive",
                format!("input {h}x{w} is smaller than output grid {out_h}x{out_w}"),
            ));
        }
        let x = self.data();
        let mut out = Vec::with_capacity(c * out_h * out_w);
        for ch in 0..c {
            let plane = &x[ch * h * w..(ch + 1) * h * w];
            for i in 0..out_h {
                let (r0, r1) = pool_cell(i, h, out_h);
                for j in 0..out_w {
                    let (c0, c1) = pool_cell(j, w, out_w);
                    let mut s = T::zero();
                    for r in r0..r1 {
                        s = s + plane[r * w + c0..r * w + c1].iter().copied().sum::<T>();
                    }
                    out.push(s / T::lit(((r1 - r0) * (c1 - c0)) as f64));
                }
            }
        }
        Ok(Tensor::from_op(
            out,
            vec![c, out_h, out_w],
            Op::AvgPool {
                c,
                h,
                w,
                out_h,
                out_w,
            },
            &[self],
        ))
    }

    /// 2x2 max pooling with stride 2 (odd trailing rows/columns dropped).
    pub fn maxpool2x2(&self) -> Result<Tensor<T>> {
        let (c, h, w) = chw(self, "maxpool2x2")?;
        let (oh, ow) = (h / 2, w / 2);
        if oh == 0 || ow == 0 {
            return Err(Error::shape("maxpool2x2", format!("input {h}x{w} too small")));
        }
        let x = self.data();
        let mut out = Vec::with_capacity(c * oh * ow);
        let mut argmax = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = ch * h * w + 2 * i * w + 2 * j;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = ch * h * w + (2 * i + dy) * w + 2 * j + dx;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        Ok(Tensor::from_op(
            out,
            vec![c, oh, ow],
            Op::MaxPool { argmax },
            &[self],
        ))
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample_nearest_2x(&self) -> Result<Tensor<T>> {
        let (c, h, w) = chw(self, "upsample_nearest_2x")?;
        let x = self.data();
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for y in 0..oh {
                let row = &x[ch * h * w + (y / 2) * w..ch * h * w + (y / 2 + 1) * w];
                for xx in 0..ow {
                    out.push(row[xx / 2]);
                }
            }
        }
        Ok(Tensor::from_op(
            out,
            vec![c, oh, ow],
            Op::Upsample2 { c, h, w },
            &[self],
        ))
    }

    /// Bilinear resize with align-corners coordinate mapping (see [`bilinear_taps`]).
    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
        let (c, h, w) = chw(self, "resize_bilinear")?;
        if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
            return Err(Error::shape(
                "resize_bilinear",
                format!("{h}x{w} -> {out_h}x{out_w}"),
            ));
        }
        let ty = bilinear_taps(h, out_h);
        let tx = bilinear_taps(w, out_w);
        let x = self.data();
        let mut out = Vec::with_capacity(c * out_h * out_w);
        for ch in 0..c {
            let plane = &x[ch * h * w..(ch + 1) * h * w];
            for a in &ty {
                for b in &tx {
                    let v = T::lit(a.w_lo * b.w_lo) * plane[a.lo * w + b.lo]
                        + T::lit(a.w_lo * b.w_hi) * plane[a.lo * w + b.hi]
                        + T::lit(a.w_hi * b.w_lo) * plane[a.hi * w + b.lo]
                        + T::lit(a.w_hi * b.w_hi) * plane[a.hi * w + b.hi];
                    out.push(v);
                }
            }
        }
        Ok(Tensor::from_op(
            out,
            vec![c, out_h, out_w],
            Op::Bilinear { c, h, w, ty, tx },
            &[self],
        ))
    }

    /// Splits a `[C, H, W]` image into non-overlapping `m x m` patches, giving
    /// `[L, m*m*C]` rows in row-major grid order. Within a patch values are
    /// row-major with the channel index fastest.
    pub fn patchify(&self, m: usize) -> Result<Tensor<T>> {
        let (c, h, w) = chw(self, "patchify")?;
        if m == 0 || h % m != 0 || w % m != 0 || h == 0 || w == 0 {
            return Err(Error::shape(
                "patchify",
                format!("image {h}x{w} is not divisible by patch size {m}"),
            ));
        }
        let index = patch_index(c, h, w, m);
        let x = self.data();
        let data = index.iter().map(|&i| x[i]).collect();
        let l = (h / m) * (w / m);
        Ok(Tensor::from_op(
            data,
            vec![l, m * m * c],
            Op::Gather { index },
            &[self],
        ))
    }
}

/// For output position `k` of [`Tensor::patchify`], the source flat index.
fn patch_index(c: usize, h: usize, w: usize, m: usize) -> Vec<usize> {
    let (hp, wp) = (h / m, w / m);
    let mut index = Vec::with_capacity(c * h * w);
    for gy in 0..hp {
        for gx in 0..wp {
            for py in 0..m {
                for px in 0..m {
                    for ch in 0..c {
                        index.push(ch * h * w + (gy * m + py) * w + gx * m + px);
                    }
                }
            }
        }
    }
    index
}

/// Visits the valid output rows of one 3x3 kernel tap: `f(y, src_y, x0, x1, src_x0)`
/// covers output columns `x0..x1` reading source columns from `src_x0`.
pub(crate) fn for_each_tap(
    h: usize,
    w: usize,
    ky: usize,
    kx: usize,
    mut f: impl FnMut(usize, usize, usize, usize, usize),
) {
    let (x0, x1) = match kx {
        0 => (1, w),
        1 => (0, w),
        _ => (0, w.saturating_sub(1)),
    };
    if x0 >= x1 {
        return;
    }
    let sx0 = x0 + kx - 1;
    for y in 0..h {
        let sy = y + ky;
        if sy < 1 || sy > h {
            continue;
        }
        f(y, sy - 1, x0, x1, sx0);
    }
}
