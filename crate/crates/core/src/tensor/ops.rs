use super::grad::Op;
use super::{numel, Tensor};
use crate::error::{Error, Result};
use crate::real::Real;

impl<T: Real> Tensor<T> {
    fn same_shape(&self, other: &Tensor<T>, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        Ok(())
    }

    fn zip_with(&self, other: &Tensor<T>, f: impl Fn(T, T) -> T) -> Vec<T> {
        self.data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| f(a, b))
            .collect()
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.same_shape(other, "add")?;
        let data = self.zip_with(other, |a, b| a + b);
        Ok(Tensor::from_op(data, self.shape().to_vec(), Op::Add, &[self, other]))
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.same_shape(other, "sub")?;
        let data = self.zip_with(other, |a, b| a - b);
        Ok(Tensor::from_op(data, self.shape().to_vec(), Op::Sub, &[self, other]))
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.same_shape(other, "mul")?;
        let data = self.zip_with(other, |a, b| a * b);
        Ok(Tensor::from_op(data, self.shape().to_vec(), Op::Mul, &[self, other]))
    }

    pub fn scale(&self, factor: T) -> Tensor<T> {
        let data = self.data().iter().map(|&v| v * factor).collect();
        Tensor::from_op(data, self.shape().to_vec(), Op::Scale(factor), &[self])
    }

    pub fn add_scalar(&self, value: T) -> Tensor<T> {
        let data = self.data().iter().map(|&v| v + value).collect();
        Tensor::from_op(data, self.shape().to_vec(), Op::AddScalar, &[self])
    }

    /// Adds a `[C]` vector to every row of a `[..., C]` tensor.
    pub fn add_row(&self, row: &Tensor<T>) -> Result<Tensor<T>> {
        let cols = *self.shape().last().unwrap_or(&1);
        if row.shape() != [cols] {
            return Err(Error::shape(
                "add_row",
                format!("row {:?} vs tensor {:?}", row.shape(), self.shape()),
            ));
        }
        let r = row.data();
        let data = self
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + r[i % cols])
            .collect();
        Ok(Tensor::from_op(
            data,
            self.shape().to_vec(),
            Op::AddRow { cols },
            &[self, row],
        ))
    }

    pub fn relu(&self) -> Tensor<T> {
        let data = self.data().iter().map(|&v| v.max(T::zero())).collect();
        Tensor::from_op(data, self.shape().to_vec(), Op::Relu, &[self])
    }

    /// Square root; the gradient at exactly zero is taken as zero.
    pub fn sqrt(&self) -> Tensor<T> {
        let data = self.data().iter().map(|&v| v.sqrt()).collect();
        Tensor::from_op(data, self.shape().to_vec(), Op::Sqrt, &[self])
    }

    /// Clamps into `[lo, hi]`; gradient passes only where the input is strictly inside.
    pub fn clamp(&self, lo: T, hi: T) -> Tensor<T> {
        let data = self.data().iter().map(|&v| v.max(lo).min(hi)).collect();
        Tensor::from_op(data, self.shape().to_vec(), Op::Clamp { lo, hi }, &[self])
    }

    pub fn sum_all(&self) -> Tensor<T> {
        let s = self.data().iter().copied().sum();
        Tensor::from_op(vec![s], Vec::new(), Op::SumAll, &[self])
    }

    pub fn mean_all(&self) -> Tensor<T> {
        let n = T::lit(self.numel() as f64);
        let s: T = self.data().iter().copied().sum();
        Tensor::from_op(vec![s / n], Vec::new(), Op::MeanAll, &[self])
    }

    /// Matrix product of `[M, K]` and `[K, N]`.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (m, k, n) = match (self.shape(), other.shape()) {
            (&[m, k], &[k2, n]) if k == k2 => (m, k, n),
            (a, b) => {
                return Err(Error::shape(
                    "matmul",
                    format!("cannot multiply {a:?} by {b:?}"),
                ))
            }
        };
        let data = matmul_raw(self.data(), other.data(), m, k, n);
        Ok(Tensor::from_op(
            data,
            vec![m, n],
            Op::MatMul { m, k, n },
            &[self, other],
        ))
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&self) -> Result<Tensor<T>> {
        let &[rows, cols] = self.shape() else {
            return Err(Error::shape(
                "transpose",
                format!("expected 2-D, got {:?}", self.shape()),
            ));
        };
        let data = transpose_raw(self.data(), rows, cols);
        Ok(Tensor::from_op(
            data,
            vec![cols, rows],
            Op::Transpose { rows, cols },
            &[self],
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != self.numel() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape()),
            ));
        }
        Ok(Tensor::from_op(
            self.data().to_vec(),
            shape.to_vec(),
            Op::Reshape,
            &[self],
        ))
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        let shape = self.shape();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::shape(
                "slice",
                format!("axis {axis} range {start}..{} out of {shape:?}", start + len),
            ));
        }
        let outer = numel(&shape[..axis]);
        let inner = numel(&shape[axis + 1..]);
        let axis_len = shape[axis];
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * axis_len + start) * inner;
            data.extend_from_slice(&self.data()[base..base + len * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        Ok(Tensor::from_op(
            data,
            out_shape,
            Op::Slice {
                outer,
                axis_len,
                inner,
                start,
                len,
            },
            &[self],
        ))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(parts: &[Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = first.shape();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {axis} for {base:?}")));
        }
        for p in parts {
            let s = p.shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", format!("{base:?} vs {s:?}")));
            }
        }
        let outer = numel(&base[..axis]);
        let inner = numel(&base[axis + 1..]);
        let lens: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = lens.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &len) in parts.iter().zip(&lens) {
                let chunk = len * inner;
                data.extend_from_slice(&p.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base.to_vec();
        shape[axis] = total;
        let refs: Vec<&Tensor<T>> = parts.iter().collect();
        Ok(Tensor::from_op(
            data,
            shape,
            Op::Concat { outer, inner, lens },
            &refs,
        ))
    }

    pub fn concat_lastdim(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
        let axis = parts
            .first()
            .map(|p| p.ndim().saturating_sub(1))
            .unwrap_or(0);
        Self::concat(parts, axis)
    }

    /// Mean over `axes`, which are removed from the shape.
    pub fn mean_axes(&self, axes: &[usize]) -> Result<Tensor<T>> {
        let (index, out_shape, count) = self.reduction_map(axes, "mean_axes")?;
        let mut sums = vec![T::zero(); numel(&out_shape)];
        for (&v, &o) in self.data().iter().zip(&index) {
            sums[o] = sums[o] + v;
        }
        let n = T::lit(count as f64);
        let data = sums.into_iter().map(|s| s / n).collect();
        Ok(Tensor::from_op(
            data,
            out_shape,
            Op::MeanAxes { index, count },
            &[self],
        ))
    }

    /// Population variance over `axes`, which are removed from the shape.
    pub fn var_axes(&self, axes: &[usize]) -> Result<Tensor<T>> {
        let (index, out_shape, count) = self.reduction_map(axes, "var_axes")?;
        let n = T::lit(count as f64);
        let mut means = vec![T::zero(); numel(&out_shape)];
        for (&v, &o) in self.data().iter().zip(&index) {
            means[o] = means[o] + v;
        }
        means.iter_mut().for_each(|m| *m = *m / n);
        let centered: Vec<T> = self
            .data()
            .iter()
            .zip(&index)
            .map(|(&v, &o)| v - means[o])
            .collect();
        let mut vars = vec![T::zero(); means.len()];
        for (&c, &o) in centered.iter().zip(&index) {
            vars[o] = vars[o] + c * c;
        }
        let data = vars.into_iter().map(|s| s / n).collect();
        Ok(Tensor::from_op(
            data,
            out_shape,
            Op::VarAxes {
                index,
                count,
                centered,
            },
            &[self],
        ))
    }

    /// For each input element, the flat index of its reduced output cell.
    fn reduction_map(
        &self,
        axes: &[usize],
        op: &'static str,
    ) -> Result<(Vec<usize>, Vec<usize>, usize)> {
        let shape = self.shape();
        if axes.is_empty() || axes.iter().any(|&a| a >= shape.len()) {
            return Err(Error::shape(op, format!("axes {axes:?} for {shape:?}")));
        }
        let reduced: Vec<bool> = (0..shape.len()).map(|d| axes.contains(&d)).collect();
        let out_shape: Vec<usize> = shape
            .iter()
            .zip(&reduced)
            .filter(|(_, &r)| !r)
            .map(|(&s, _)| s)
            .collect();
        let count: usize = shape
            .iter()
            .zip(&reduced)
            .filter(|(_, &r)| r)
            .map(|(&s, _)| s)
            .product();
        let mut index = Vec::with_capacity(self.numel());
        let mut coord = vec![0usize; shape.len()];
        for _ in 0..self.numel() {
            let mut o = 0;
            for d in 0..shape.len() {
                if !reduced[d] {
                    o = o * shape[d] + coord[d];
                }
            }
            index.push(o);
            for d in (0..shape.len()).rev() {
                coord[d] += 1;
                if coord[d] < shape[d] {
                    break;
                }
                coord[d] = 0;
            }
        }
        Ok((index, out_shape, count))
    }
}

pub(crate) fn matmul_raw<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
    out
}

pub(crate) fn transpose_raw<T: Real>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}
