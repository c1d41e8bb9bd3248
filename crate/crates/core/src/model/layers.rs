use crate::error::{Error, Result};

use super::{cast, ConvParams, Scalar};

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Valid (stride 1, no padding) convolution followed by ReLU.
///
/// `out[t, f] = max(0, b[f] + Σ_j Σ_c x[t + j, c] · W[j, c, f])` for
/// `t in 0..=L-w`.
pub fn conv_relu_forward<T: Scalar>(x: &Matrix<T>, bank: &ConvParams<T>) -> Result<Matrix<T>> {
    let (len, dim, w, n) = (x.rows, x.cols, bank.width, bank.filters);
    if dim != bank.in_dim {
        return Err(Error::Shape(format!(
            "input has {dim} channels, filters expect {}",
            bank.in_dim
        )));
    }
    if w == 0 || w > len {
        return Err(Error::InvalidConfig(format!(
            "filter width {w} does not fit a sequence of length {len}"
        )));
    }
    let steps = len - w + 1;
    let mut out = Vec::with_capacity(steps * n);
    for t in 0..steps {
        let start = out.len();
        out.extend_from_slice(&bank.bias);
        let acc = &mut out[start..];
        for j in 0..w {
            let xrow = x.row(t + j);
            let wblock = &bank.weight[j * dim * n..(j + 1) * dim * n];
            for (c, &xv) in xrow.iter().enumerate() {
                if xv == T::zero() {
                    continue;
                }
                let wrow = &wblock[c * n..(c + 1) * n];
                for (a, &wv) in acc.iter_mut().zip(wrow) {
                    *a = *a + xv * wv;
                }
            }
        }
        for a in acc.iter_mut() {
            *a = a.max(T::zero());
        }
    }
    Matrix::new(steps, n, out)
}

/// Column maxima and the first row attaining each.
#[derive(Clone, Debug, PartialEq)]
pub struct Pooled<T> {
    pub values: Vec<T>,
    pub argmax: Vec<usize>,
}

pub fn max_pool_over_time<T: Scalar>(h: &Matrix<T>) -> Result<Pooled<T>> {
    if h.rows == 0 {
        return Err(Error::Shape("max pooling over an empty sequence".into()));
    }
    let mut values = h.row(0).to_vec();
    let mut argmax = vec![0; h.cols];
    for t in 1..h.rows {
        for (f, &v) in h.row(t).iter().enumerate() {
            if v > values[f] {
                values[f] = v;
                argmax[f] = t;
            }
        }
    }
    Ok(Pooled { values, argmax })
}

/// Numerically stable softmax (max subtracted before exponentiation).
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Probability floor applied before the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Mean of `-ln p[gold]` over rows.
pub fn cross_entropy<T: Scalar>(probs: &Matrix<T>, labels: &[usize]) -> Result<T> {
    if probs.rows != labels.len() || labels.is_empty() {
        return Err(Error::Shape(format!(
            "{} probability rows for {} labels",
            probs.rows,
            labels.len()
        )));
    }
    let floor = cast::<T>(PROB_FLOOR);
    let mut total = T::zero();
    for (r, &y) in labels.iter().enumerate() {
        if y >= probs.cols {
            return Err(Error::InvalidArgument(format!(
                "label {y} out of range for {} classes",
                probs.cols
            )));
        }
        total = total - probs.get(r, y).max(floor).ln();
    }
    Ok(total / cast(labels.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bank(width: usize, in_dim: usize, filters: usize, weight: Vec<f64>, bias: Vec<f64>) -> ConvParams<f64> {
        ConvParams {
            width,
            in_dim,
            filters,
            weight,
            bias,
        }
    }

    #[test]
    fn conv_hand_example() {
        let x = Matrix::new(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let out = conv_relu_forward(&x, &bank(2, 1, 1, vec![1.0, -1.0], vec![0.0])).unwrap();
        // pre-activations 1-2 = -1 and 2-3 = -1
        assert_eq!(out.data, vec![0.0, 0.0]);
        let flipped = conv_relu_forward(&x, &bank(2, 1, 1, vec![-1.0, 1.0], vec![0.0])).unwrap();
        assert_eq!(flipped.data, vec![1.0, 1.0]);
    }

    #[test]
    fn conv_bias_only() {
        let x = Matrix::new(4, 2, vec![0.3, -1.0, 2.0, 0.5, 1.0, 1.0, -3.0, 0.1]).unwrap();
        let out = conv_relu_forward(&x, &bank(2, 2, 3, vec![0.0; 12], vec![5.0; 3])).unwrap();
        assert_eq!((out.rows, out.cols), (3, 3));
        assert!(out.data.iter().all(|&v| v == 5.0));
    }

    #[test]
    fn conv_relu_clamps_large_negative_bias() {
        let x = Matrix::new(4, 2, vec![0.3, -1.0, 2.0, 0.5, 1.0, 1.0, -3.0, 0.1]).unwrap();
        let w: Vec<f64> = (0..12).map(|i| i as f64 * 0.1 - 0.5).collect();
        let out = conv_relu_forward(&x, &bank(2, 2, 3, w, vec![-1e6; 3])).unwrap();
        assert!(out.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_rejects_wide_filter() {
        let x = Matrix::new(2, 1, vec![1.0, 2.0]).unwrap();
        assert!(conv_relu_forward(&x, &bank(3, 1, 1, vec![0.0; 3], vec![0.0])).is_err());
    }

    #[test]
    fn pool_columnwise() {
        let h = Matrix::from_rows(&[vec![1.0, -2.0], vec![3.0, 0.0], vec![2.0, 5.0]]).unwrap();
        let p = max_pool_over_time(&h).unwrap();
        assert_eq!(p.values, vec![3.0, 5.0]);
        assert_eq!(p.argmax, vec![1, 2]);
    }

    #[test]
    fn pool_single_row_and_ties() {
        let h = Matrix::from_rows(&[vec![7.0, 8.0]]).unwrap();
        assert_eq!(max_pool_over_time(&h).unwrap().values, vec![7.0, 8.0]);
        let tie = Matrix::from_rows(&[vec![2.0, 0.0], vec![2.0, 0.0]]).unwrap();
        let p = max_pool_over_time(&tie).unwrap();
        assert_eq!(p.values, vec![2.0, 0.0]);
        assert_eq!(p.argmax, vec![0, 0]);
        assert!(max_pool_over_time(&Matrix::<f64>::zeros(0, 2)).is_err());
    }

    #[test]
    fn softmax_of_ln2_and_zero() {
        let p = softmax(&[2f64.ln(), 0.0]);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let p = softmax(&[1000.0f32, 1000.0, -1000.0]);
        assert!((p[0] - 0.5).abs() < 1e-6 && p[2] == 0.0);
    }

    #[test]
    fn cross_entropy_examples() {
        let uniform = Matrix::new(1, 5, vec![0.2f64; 5]).unwrap();
        assert!((cross_entropy(&uniform, &[3]).unwrap() - 5f64.ln()).abs() < 1e-12);

        let perfect = Matrix::new(1, 2, vec![1.0f64, 0.0]).unwrap();
        assert_eq!(cross_entropy(&perfect, &[0]).unwrap(), 0.0);

        let two = Matrix::new(2, 2, vec![0.5f64, 0.5, 0.75, 0.25]).unwrap();
        let ce = cross_entropy(&two, &[0, 1]).unwrap();
        assert!((ce - (2f64.ln() + 4f64.ln()) / 2.0).abs() < 1e-12);
        assert!((ce - 1.0397).abs() < 1e-4);
    }

    #[test]
    fn cross_entropy_clamps_zero_probability() {
        let p = Matrix::new(1, 2, vec![1.0f64, 0.0]).unwrap();
        let ce = cross_entropy(&p, &[1]).unwrap();
        assert!((ce - (-(1e-12f64).ln())).abs() < 1e-9);
    }
}
