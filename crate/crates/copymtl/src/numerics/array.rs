//! Dense row-major `f64` arrays. The shapes used by the model are only
//! vectors `[n]` and matrices `[r, c]`, so the helpers stay deliberately
//! small instead of growing into a general tensor library.

use crate::error::{Error, Result};

/// A dense array of 64-bit floats in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseArray {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl DenseArray {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != values.len() {
            return Err(Error::invalid(format!(
                "shape {:?} wants {} values, got {}",
                shape,
                expect,
                values.len()
            )));
        }
        Ok(DenseArray { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        DenseArray {
            shape,
            values: vec![0.0; len],
        }
    }

    pub fn scalar(v: f64) -> Self {
        DenseArray {
            shape: vec![1],
            values: vec![v],
        }
    }

    pub fn vector(values: Vec<f64>) -> Self {
        DenseArray {
            shape: vec![values.len()],
            values,
        }
    }

    /// Matrix from row slices; all rows must have the same length.
    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        DenseArray::new(vec![rows, cols], values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Number of rows when viewed as a matrix (`[r, c]`).
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Number of columns when viewed as a matrix (`[r, c]`).
    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn at(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn at2(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols() + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.values[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.values[r * c..(r + 1) * c]
    }

    /// The single value of a `[1]`-shaped array.
    pub fn scalar_value(&self) -> f64 {
        debug_assert_eq!(self.len(), 1, "scalar_value on non-scalar");
        self.values[0]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, v: f64) {
        self.values.iter_mut().for_each(|x| *x = v);
    }

    pub fn add_assign(&mut self, other: &DenseArray) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }
}

/// Numerically stable softmax of a logit slice (max subtraction).
pub fn softmax_slice(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::invalid("softmax of empty input"));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    Ok(out)
}

/// Stable log(sum(exp(x))) over a slice.
pub fn logsumexp_slice(logits: &[f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = logits.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// SELU constants, as published with the activation.
pub const SELU_ALPHA: f64 = 1.6732632423543772;
pub const SELU_LAMBDA: f64 = 1.0507009873554805;

pub fn selu_scalar(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA * x
    } else {
        SELU_LAMBDA * SELU_ALPHA * (x.exp() - 1.0)
    }
}

pub fn selu_grad_scalar(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA
    } else {
        SELU_LAMBDA * SELU_ALPHA * x.exp()
    }
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_mismatch_rejected() {
        assert!(DenseArray::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(DenseArray::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn softmax_symmetry() {
        let p = softmax_slice(&[0.0, 0.0, 0.0]).unwrap();
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_shift_invariance() {
        let a = softmax_slice(&[1.0, 2.0, 3.0]).unwrap();
        let b = softmax_slice(&[11.0, 12.0, 13.0]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_two_logits() {
        // direct evaluation of e^x / sum e^x for [1, 2]
        let p = softmax_slice(&[1.0, 2.0]).unwrap();
        assert!((p[0] - 0.26894).abs() < 1e-5);
        assert!((p[1] - 0.73106).abs() < 1e-5);
        assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_empty_errors() {
        assert!(softmax_slice(&[]).is_err());
    }

    #[test]
    fn logsumexp_no_overflow_for_huge_logits() {
        let v = logsumexp_slice(&[1e6, 1e6 - 1.0, -1e6]);
        assert!(v.is_finite());
        assert!((v - (1e6 + (1.0 + (-1.0f64).exp()).ln())).abs() < 1e-6);
    }

    #[test]
    fn selu_fixed_points() {
        assert_eq!(selu_scalar(0.0), 0.0);
        // lambda * 1 with the published constant
        assert!((selu_scalar(1.0) - 1.05070).abs() < 1e-5);
        // asymptote -lambda*alpha
        assert!((selu_scalar(-20.0) - (-1.75809)).abs() < 1e-5);
    }
}
