//! Dense row-major tensors and the forward kernels shared by the tape.
//!
//! Storage is `f64`. Every reduction (dot products, means, variances) is
//! accumulated in `f64`, and every kernel rejects non-finite results.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default epsilon added to the variance inside [`layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::InvalidShape {
                shape,
                reason: "extents must be positive",
            });
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::InvalidShape {
                shape,
                reason: "element count does not match data length",
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        assert!(
            !shape.is_empty() && shape.iter().all(|&e| e > 0),
            "extents must be positive"
        );
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Builds a matrix from nested rows; all rows must share a length.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::ShapeMismatch {
                    op: "from_rows",
                    left: vec![cols],
                    right: vec![r.len()],
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
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

    /// Size of the last axis.
    pub fn last_dim(&self) -> usize {
        *self.shape.last().expect("shape is never empty")
    }

    /// Number of rows when viewed as `[numel / last_dim, last_dim]`.
    pub fn rows(&self) -> usize {
        self.numel() / self.last_dim()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.last_dim();
        &self.data[i * d..(i + 1) * d]
    }

    /// Extents of a rank-2 tensor.
    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            _ => Err(Error::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: vec![0, 0],
            }),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() || shape.contains(&0) {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: self.shape,
                right: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub(crate) fn checked(self, op: &'static str) -> Result<Self> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(Error::NonFinite { op })
        }
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.dims2("transpose")?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Self {
            shape: vec![c, r],
            data: out,
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        same_shape("add", self, other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Self::new(self.shape.clone(), data)?.checked("add")
    }

    pub fn scale(&self, c: f64) -> Result<Self> {
        let data = self.data.iter().map(|v| v * c).collect();
        Self::new(self.shape.clone(), data)?.checked("scale")
    }

    /// Euclidean norm over all elements.
    pub fn norm(&self) -> f64 {
        libm::sqrt(dot(&self.data, &self.data))
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

/// Dot product of two equal-length slices.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Matrix product `a[m×k] × b[k×n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2("matmul")?;
    let (k2, n) = b.dims2("matmul")?;
    if k != k2 {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let mut out = vec![0.0; m * n];
    matmul_into(&a.data, &b.data, &mut out, m, k, n);
    Tensor::new(vec![m, n], out)?.checked("matmul")
}

/// `out[m×n] += a[m×k] × b[k×n]`, all row-major.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m×n] += a[m×k] × b[n×k]ᵀ`.
pub(crate) fn matmul_bt_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `out[k×n] += a[m×k]ᵀ × b[m×n]`.
pub(crate) fn matmul_at_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    let mask = vec![true; x.numel()];
    softmax_rows_masked(x, &mask)
}

/// Row-wise softmax over the entries where `mask` is true; masked entries
/// get probability exactly zero. Every row needs at least one live entry.
pub fn softmax_rows_masked(x: &Tensor, mask: &[bool]) -> Result<Tensor> {
    if mask.len() != x.numel() {
        return Err(Error::ShapeMismatch {
            op: "softmax_rows",
            left: x.shape.clone(),
            right: vec![mask.len()],
        });
    }
    let n = x.last_dim();
    let mut out = vec![0.0; x.numel()];
    for r in 0..x.rows() {
        let row = &x.data[r * n..(r + 1) * n];
        let live = &mask[r * n..(r + 1) * n];
        let max = row
            .iter()
            .zip(live)
            .filter(|(_, &m)| m)
            .map(|(v, _)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::AllMasked);
        }
        let orow = &mut out[r * n..(r + 1) * n];
        let mut sum = 0.0;
        for j in 0..n {
            if live[j] {
                let e = libm::exp(row[j] - max);
                orow[j] = e;
                sum += e;
            }
        }
        for o in orow.iter_mut() {
            *o /= sum;
        }
    }
    Tensor::new(x.shape.clone(), out)?.checked("softmax_rows")
}

/// Per-row statistics saved by [`layer_norm`] for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct NormStats {
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Normalizes the last axis to zero mean and unit variance, then applies
/// `gain` and `shift`.
pub fn layer_norm(x: &Tensor, gain: &Tensor, shift: &Tensor, eps: f64) -> Result<Tensor> {
    layer_norm_with_stats(x, gain, shift, eps).map(|(t, _)| t)
}

pub(crate) fn layer_norm_with_stats(
    x: &Tensor,
    gain: &Tensor,
    shift: &Tensor,
    eps: f64,
) -> Result<(Tensor, NormStats)> {
    if !(eps > 0.0) {
        return Err(Error::invalid("layer_norm eps must be positive"));
    }
    let d = x.last_dim();
    if gain.shape != [d] || shift.shape != [d] {
        return Err(Error::ShapeMismatch {
            op: "layer_norm",
            left: x.shape.clone(),
            right: gain.shape.clone(),
        });
    }
    let rows = x.rows();
    let mut out = vec![0.0; x.numel()];
    let mut stats = NormStats {
        mean: Vec::with_capacity(rows),
        inv_std: Vec::with_capacity(rows),
    };
    for r in 0..rows {
        let row = &x.data[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv_std = 1.0 / libm::sqrt(var + eps);
        for j in 0..d {
            out[r * d + j] = (row[j] - mean) * inv_std * gain.data[j] + shift.data[j];
        }
        stats.mean.push(mean);
        stats.inv_std.push(inv_std);
    }
    let t = Tensor::new(x.shape.clone(), out)?.checked("layer_norm")?;
    Ok((t, stats))
}

/// Mean of the rows of `x[L×d]` whose mask entry is true.
pub fn mean_pool(x: &Tensor, mask: &[bool]) -> Result<Tensor> {
    let (l, d) = x.dims2("mean_pool")?;
    if mask.len() != l {
        return Err(Error::ShapeMismatch {
            op: "mean_pool",
            left: x.shape.clone(),
            right: vec![mask.len()],
        });
    }
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::AllMasked);
    }
    let mut out = vec![0.0; d];
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        for (o, v) in out.iter_mut().zip(x.row(i)) {
            *o += v;
        }
    }
    for o in &mut out {
        *o /= count as f64;
    }
    Tensor::new(vec![d], out)?.checked("mean_pool")
}

/// Scales a vector to unit Euclidean norm.
pub fn l2_normalize(v: &Tensor) -> Result<Tensor> {
    let n = v.norm();
    if n == 0.0 {
        return Err(Error::ZeroNorm);
    }
    v.scale(1.0 / n)
}

/// In-place unit normalization of a plain slice.
pub fn normalize_slice(v: &mut [f64]) -> Result<()> {
    let n = libm::sqrt(dot(v, v));
    if n == 0.0 || !n.is_finite() {
        return Err(Error::ZeroNorm);
    }
    for x in v {
        *x /= n;
    }
    Ok(())
}

/// Cosine similarity of two equal-length slices.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / libm::sqrt(dot(a, a) * dot(b, b))
}

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * core::f64::consts::FRAC_1_SQRT_2))
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * core::f64::consts::FRAC_1_SQRT_2));
    let pdf = libm::exp(-0.5 * x * x) / libm::sqrt(2.0 * core::f64::consts::PI);
    cdf + x * pdf
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn matmul_identity_and_orthogonal() {
        let a = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        assert_eq!(matmul(&Tensor::identity(2), &a).unwrap(), a);
        let r = Tensor::from_rows(&[&[1.0, 0.0]]).unwrap();
        let c = Tensor::from_rows(&[&[0.0], &[1.0]]).unwrap();
        assert_eq!(matmul(&r, &c).unwrap().data(), &[0.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = SeededRng::new(3);
        let a: Vec<f64> = (0..12).map(|_| rng.normal()).collect();
        let b: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
        let ta = Tensor::matrix(3, 4, a.clone()).unwrap();
        let tb = Tensor::matrix(4, 2, b.clone()).unwrap();
        let got = matmul(&ta, &tb).unwrap();
        let mut want = vec![0.0; 6];
        for i in 0..3 {
            for j in 0..2 {
                for p in 0..4 {
                    want[i * 2 + j] += a[i * 4 + p] * b[p * 2 + j];
                }
            }
        }
        assert!(close(got.data(), &want, 1e-6));
    }

    #[test]
    fn matmul_rejects_inner_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        assert!(matches!(matmul(&a, &b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_rows(&Tensor::from_rows(&[&[0.0, 0.0]]).unwrap()).unwrap();
        assert!(close(s.data(), &[0.5, 0.5], 1e-12));
        let s = softmax_rows(&Tensor::from_rows(&[&[1000.0, 1000.0]]).unwrap()).unwrap();
        assert!(close(s.data(), &[0.5, 0.5], 1e-12));
        let s = softmax_rows(&Tensor::from_rows(&[&[0.0, libm::log(3.0)]]).unwrap()).unwrap();
        assert!(close(s.data(), &[0.25, 0.75], 1e-12));
    }

    #[test]
    fn layer_norm_examples() {
        let one = Tensor::filled(&[3], 1.0);
        let zero = Tensor::zeros(&[3]);
        let c = Tensor::filled(&[1, 3], 4.2);
        let out = layer_norm(&c, &one, &zero, LAYER_NORM_EPS).unwrap();
        assert!(out.data().iter().all(|v| *v == 0.0));

        let x = Tensor::from_rows(&[&[1.0, 3.0]]).unwrap();
        let out = layer_norm(&x, &Tensor::filled(&[2], 1.0), &Tensor::zeros(&[2]), 1e-12).unwrap();
        assert!(close(out.data(), &[-1.0, 1.0], 1e-9));

        let shift = Tensor::vector(vec![0.5, -2.0]).unwrap();
        let out = layer_norm(&x, &Tensor::zeros(&[2]), &shift, LAYER_NORM_EPS).unwrap();
        assert_eq!(out.data(), &[0.5, -2.0]);
    }

    #[test]
    fn layer_norm_moments() {
        let mut rng = SeededRng::new(11);
        let data: Vec<f64> = (0..40).map(|_| 3.0 * rng.normal() + 1.5).collect();
        let x = Tensor::matrix(5, 8, data).unwrap();
        let out = layer_norm(&x, &Tensor::filled(&[8], 1.0), &Tensor::zeros(&[8]), LAYER_NORM_EPS)
            .unwrap();
        for r in 0..5 {
            let row = out.row(r);
            let mean = row.iter().sum::<f64>() / 8.0;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 8.0;
            assert!(mean.abs() <= 1e-5);
            assert!((var - 1.0).abs() <= 1e-3);
        }
    }

    #[test]
    fn mean_pool_examples() {
        let x = Tensor::from_rows(&[&[1.0, 1.0], &[3.0, 3.0], &[9.0, 9.0]]).unwrap();
        assert_eq!(mean_pool(&x, &[true, false, false]).unwrap().data(), &[1.0, 1.0]);
        assert_eq!(mean_pool(&x, &[true, true, false]).unwrap().data(), &[2.0, 2.0]);
        assert_eq!(mean_pool(&x, &[false; 3]), Err(Error::AllMasked));
    }

    #[test]
    fn l2_normalize_examples() {
        let v = Tensor::vector(vec![3.0, 4.0]).unwrap();
        let u = l2_normalize(&v).unwrap();
        assert!(close(u.data(), &[0.6, 0.8], 1e-12));
        assert!(close(l2_normalize(&u).unwrap().data(), u.data(), 1e-15));
        assert_eq!(l2_normalize(&Tensor::zeros(&[2])), Err(Error::ZeroNorm));
    }

    #[test]
    fn new_rejects_bad_shapes() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
    }

    #[test]
    fn overflow_is_an_error() {
        let a = Tensor::vector(vec![1e308, 1e308]).unwrap();
        assert_eq!(a.add(&a), Err(Error::NonFinite { op: "add" }));
    }
}
