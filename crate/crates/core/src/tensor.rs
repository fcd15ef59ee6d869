//! Dense row-major `f64` tensors and the few matrix kernels the engine needs.
//!
//! The first dimension of every batch tensor is the sample index; the rest is
//! the per-sample shape (`[features]` for dense activations, `[channels, h, w]`
//! for convolutional ones).

use std::ops::Range;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::shape(format!("zero-sized dimension in {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(format!("shape {shape:?} needs {expected} values, got {}", data.len())));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![value; shape.iter().product()] }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    /// Builds a tensor without validating; callers guarantee the invariant.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Size of the leading (sample) dimension.
    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// Number of values per sample.
    pub fn sample_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let n = self.sample_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.sample_len();
        &mut self.data[i * n..(i + 1) * n]
    }

    /// Copies samples `range` into a new batch tensor.
    pub fn rows(&self, range: Range<usize>) -> Tensor {
        let n = self.sample_len();
        let mut shape = self.shape.clone();
        shape[0] = range.len();
        Tensor::from_parts(shape, self.data[range.start * n..range.end * n].to_vec())
    }

    /// Gathers the given samples, in order, into a new batch tensor.
    pub fn select_rows(&self, indices: &[usize]) -> Tensor {
        let n = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Tensor::from_parts(shape, data)
    }

    /// Stacks batch tensors with equal per-sample shape along the sample axis.
    pub fn concat_rows(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::shape("concatenating zero tensors"))?;
        let mut shape = first.shape.clone();
        let mut data = Vec::with_capacity(parts.iter().map(Tensor::len).sum());
        let mut batch = 0;
        for p in parts {
            if p.shape[1..] != first.shape[1..] {
                return Err(Error::shape(format!("cannot stack {:?} with {:?}", p.shape, first.shape)));
            }
            batch += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        shape[0] = batch;
        Ok(Tensor::from_parts(shape, data))
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape(format!("cannot reshape {:?} into {shape:?}", self.shape)));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&x| f(x)).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Channel count and spatial size per channel, for a batch tensor.
    pub(crate) fn channel_layout(&self) -> (usize, usize) {
        channel_layout(&self.shape[1..])
    }

    /// Sets every element of the listed channels to zero, in every sample.
    pub fn zero_channels(&mut self, channels: &[usize]) {
        let (c, s) = self.channel_layout();
        let n = c * s;
        for sample in self.data.chunks_mut(n) {
            for &ch in channels {
                sample[ch * s..(ch + 1) * s].fill(0.0);
            }
        }
    }
}

/// `(channels, spatial)` for a per-sample shape: `[c]` has spatial size 1,
/// `[c, h, w]` has spatial size `h * w`.
pub(crate) fn channel_layout(sample_shape: &[usize]) -> (usize, usize) {
    match sample_shape.split_first() {
        Some((&c, rest)) => (c, rest.iter().product()),
        None => (1, 1),
    }
}

/// `c[m×n] = alpha * a[m×k] · b[k×n] + beta * c`, with explicit row/column
/// strides so transposed operands need no copies.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    beta: f64,
    c: &mut [f64],
    c_cols: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= (m - 1) * c_cols + n);
    if k == 0 {
        for row in c.chunks_mut(c_cols).take(m) {
            for v in &mut row[..n] {
                *v *= beta;
            }
        }
        return;
    }
    // SAFETY: the caller-provided strides address only elements inside the
    // slices (checked by the debug assertions below and by construction at
    // every call site); the output does not alias the inputs.
    debug_assert!(a.len() > (m - 1) * a_strides.0 + (k - 1) * a_strides.1);
    debug_assert!(b.len() > (k - 1) * b_strides.0 + (n - 1) * b_strides.1);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            c_cols as isize,
            1,
        );
    }
}

pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_shape() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn gemm_matches_naive_with_transposes() {
        let a: Vec<f64> = (0..6).map(|x| x as f64).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|x| (x as f64) * 0.5 - 1.0).collect(); // 4x3, used as 3x4 transposed
        let mut c = vec![0.0; 8];
        gemm(2, 3, 4, 1.0, &a, (3, 1), &b, (1, 3), 0.0, &mut c, 4);
        for i in 0..2 {
            for j in 0..4 {
                let expect: f64 = (0..3).map(|k| a[i * 3 + k] * b[j * 3 + k]).sum();
                assert!((c[i * 4 + j] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_channels_clears_whole_maps() {
        let mut t = Tensor::filled(&[2, 3, 2, 2], 1.0);
        t.zero_channels(&[1]);
        for s in 0..2 {
            let x = t.sample(s);
            assert!(x[4..8].iter().all(|&v| v == 0.0));
            assert!(x[0..4].iter().all(|&v| v == 1.0));
        }
    }
}
