//! Dense row-major `f64` tensors and the numeric kernels behind the tape.
//!
//! Kernels here are plain functions over values; [`crate::tape::Tape`]
//! records them and supplies derivatives.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense tensor. A shape of `[]` denotes a scalar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!("zero-sized dimension in {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::ShapeMismatch {
                op: "tensor",
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        let n = data.len();
        Tensor {
            shape: vec![n],
            data,
        }
    }

    /// Builds a matrix from rows of equal length.
    pub fn matrix(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::invalid("ragged matrix rows"));
        }
        Tensor::new(vec![r, c], rows.concat())
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Tensor::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Entries drawn i.i.d. from `N(0, std^2)`.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(Error::NotScalar {
                op: "item",
                shape: self.shape.clone(),
            })
        }
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        same_shape("dot", self, other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: self.shape.clone(),
                right: shape.to_vec(),
            });
        }
        Tensor::new(shape.to_vec(), self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        same_shape(op, self, other)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| v * c)
    }

    /// `self += c * other`
    pub fn axpy(&mut self, c: f64, other: &Tensor) -> Result<()> {
        same_shape("axpy", self, other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
        Ok(())
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let (n, k, m) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let orow = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[p * m..(p + 1) * m];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor {
            shape: vec![n, m],
            data: out,
        })
    }

    pub fn transpose(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::invalid(format!(
                "transpose needs a matrix, got {:?}",
                self.shape
            )));
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Tensor {
            shape: vec![c, r],
            data: out,
        })
    }

    /// Softmax along the last axis with max subtraction.
    pub fn softmax_last(&self) -> Tensor {
        let c = self.cols();
        let mut data = self.data.clone();
        for row in data.chunks_mut(c) {
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        Tensor {
            shape: self.shape.clone(),
            data,
        }
    }

    /// Sum along the last axis keeping a trailing unit dimension.
    pub fn sum_last(&self) -> Tensor {
        let c = self.cols();
        let data: Vec<f64> = self.data.chunks(c).map(|r| r.iter().sum()).collect();
        let mut shape = self.shape.clone();
        if let Some(last) = shape.last_mut() {
            *last = 1;
        } else {
            shape.push(1);
        }
        Tensor { shape, data }
    }

    /// Repeats a trailing unit dimension `width` times.
    pub fn broadcast_last(&self, width: usize) -> Result<Tensor> {
        if self.cols() != 1 {
            return Err(Error::invalid(format!(
                "broadcast_last needs trailing dim 1, got {:?}",
                self.shape
            )));
        }
        let mut shape = self.shape.clone();
        if let Some(last) = shape.last_mut() {
            *last = width;
        } else {
            shape.push(width);
        }
        let data = self
            .data
            .iter()
            .flat_map(|&v| std::iter::repeat(v).take(width))
            .collect();
        Ok(Tensor { shape, data })
    }

    /// Column sums of an `[n, d]` matrix as a `[d]` vector.
    pub fn sum_rows(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::invalid(format!(
                "sum_rows needs a matrix, got {:?}",
                self.shape
            )));
        }
        let d = self.shape[1];
        let mut out = vec![0.0; d];
        for row in self.data.chunks(d) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        Ok(Tensor::vector(out))
    }

    /// Stacks a length-`d` tensor into `n` identical rows.
    pub fn broadcast_rows(&self, n: usize) -> Tensor {
        let d = self.numel();
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            data.extend_from_slice(&self.data);
        }
        Tensor {
            shape: vec![n, d],
            data,
        }
    }

    /// Row lookup into an `[n, d]` table.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::invalid("gather_rows needs a matrix table"));
        }
        let (n, d) = (self.shape[0], self.shape[1]);
        if indices.is_empty() {
            return Err(Error::Empty("gather_rows"));
        }
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= n {
                return Err(Error::invalid(format!("row index {i} out of range {n}")));
            }
            data.extend_from_slice(&self.data[i * d..(i + 1) * d]);
        }
        Ok(Tensor {
            shape: vec![indices.len(), d],
            data,
        })
    }

    /// Inverse of [`Tensor::gather_rows`]: accumulates rows into an `[n, d]` zero table.
    pub fn scatter_rows(&self, indices: &[usize], n: usize) -> Result<Tensor> {
        let d = self.cols();
        if self.rank() != 2 || self.shape[0] != indices.len() {
            return Err(Error::invalid("scatter_rows shape/index mismatch"));
        }
        let mut out = vec![0.0; n * d];
        for (r, &i) in indices.iter().enumerate() {
            if i >= n {
                return Err(Error::invalid(format!("row index {i} out of range {n}")));
            }
            for j in 0..d {
                out[i * d + j] += self.data[r * d + j];
            }
        }
        Ok(Tensor {
            shape: vec![n, d],
            data: out,
        })
    }

    /// `[outer, dim, inner]` factorisation around `axis`.
    fn split_axis(&self, axis: usize) -> Result<(usize, usize, usize)> {
        if axis >= self.rank() {
            return Err(Error::invalid(format!(
                "axis {axis} out of range for {:?}",
                self.shape
            )));
        }
        let outer = self.shape[..axis].iter().product();
        let inner = self.shape[axis + 1..].iter().product();
        Ok((outer, self.shape[axis], inner))
    }

    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        let (outer, dim, inner) = self.split_axis(axis)?;
        if len == 0 || start + len > dim {
            return Err(Error::invalid(format!(
                "slice [{start}, {}) out of range {dim} on axis {axis}",
                start + len
            )));
        }
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * dim * inner;
            data.extend_from_slice(&self.data[base + start * inner..base + (start + len) * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Ok(Tensor { shape, data })
    }

    /// Embeds `self` at offset `start` of a zero tensor whose `axis` has size `total`.
    pub fn pad(&self, axis: usize, start: usize, total: usize) -> Result<Tensor> {
        let (outer, dim, inner) = self.split_axis(axis)?;
        if start + dim > total {
            return Err(Error::invalid("pad target too small"));
        }
        let mut data = vec![0.0; outer * total * inner];
        for o in 0..outer {
            let src = &self.data[o * dim * inner..(o + 1) * dim * inner];
            let base = o * total * inner + start * inner;
            data[base..base + dim * inner].copy_from_slice(src);
        }
        let mut shape = self.shape.clone();
        shape[axis] = total;
        Ok(Tensor { shape, data })
    }

    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts.first().ok_or(Error::Empty("concat"))?;
        let rank = first.rank();
        for p in parts {
            let compatible = p.rank() == rank
                && axis < rank
                && p.shape
                    .iter()
                    .zip(&first.shape)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    left: first.shape.clone(),
                    right: p.shape.clone(),
                });
            }
        }
        let outer: usize = first.shape[..axis].iter().product();
        let inner: usize = first.shape[axis + 1..].iter().product();
        let total: usize = parts.iter().map(|p| p.shape[axis]).sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let chunk = p.shape[axis] * inner;
                data.extend_from_slice(&p.data[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = total;
        Ok(Tensor { shape, data })
    }
}

pub(crate) fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::ShapeMismatch {
            op,
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    Ok(())
}
