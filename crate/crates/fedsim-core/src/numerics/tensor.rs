//! Dense row-major f64 tensors and the plain (non-differentiated) ops on them.

use crate::error::{Error, Result};

/// A dense tensor of 64-bit floats stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build a tensor from a shape and row-major data.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeMismatch {
                context: "Tensor::new",
                expected: shape.clone(),
                got: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    /// A 2-d tensor from nested rows; rows must be equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::invalid("ragged rows in Tensor::from_rows"));
            }
            data.extend_from_slice(row);
        }
        Tensor::new(vec![r, c], data)
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of rows when viewed as a matrix (1 for vectors).
    pub fn rows(&self) -> usize {
        if self.shape.len() <= 1 {
            1
        } else {
            self.shape[0]
        }
    }

    /// Number of columns when viewed as a matrix (the full length for vectors).
    pub fn cols(&self) -> usize {
        if self.shape.len() <= 1 {
            self.data.len()
        } else {
            self.shape[1]
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    /// Single scalar value; errors if the tensor holds more than one element.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::ShapeMismatch {
                context: "Tensor::item",
                expected: vec![1],
                got: self.shape.clone(),
            });
        }
        Ok(self.data[0])
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Errors if any entry is NaN or infinite.
    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(context.to_string()))
        }
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }
}

/// Standard matrix product of two 2-d tensors.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::ShapeMismatch {
            context: "matmul",
            expected: a.shape().to_vec(),
            got: b.shape().to_vec(),
        });
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a.data()[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data()[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// Row-wise softmax with max subtraction.
pub fn softmax(v: &Tensor) -> Result<Tensor> {
    if v.is_empty() {
        return Err(Error::invalid("softmax of empty tensor"));
    }
    let (r, c) = (v.rows(), v.cols());
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let row = &v.data()[i * c..(i + 1) * c];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let orow = &mut out[i * c..(i + 1) * c];
        let mut sum = 0.0;
        for j in 0..c {
            let e = (row[j] - max).exp();
            orow[j] = e;
            sum += e;
        }
        for x in orow.iter_mut() {
            *x /= sum;
        }
    }
    Tensor::new(v.shape().to_vec(), out)
}

/// Elementwise logistic sigmoid, overflow-safe on both tails.
pub fn sigmoid(v: &Tensor) -> Tensor {
    let data = v.data().iter().map(|&x| sigmoid_scalar(x)).collect();
    Tensor {
        shape: v.shape().to_vec(),
        data,
    }
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Floor applied to denominator entries inside KL before the log.
pub const KL_CLAMP: f64 = 1e-12;

fn check_distribution(p: &Tensor, what: &str) -> Result<()> {
    if p.data().iter().any(|&x| x < 0.0) {
        return Err(Error::NotADistribution(format!("{what} has negative entries")));
    }
    let sum: f64 = p.data().iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::NotADistribution(format!("{what} sums to {sum}")));
    }
    Ok(())
}

/// Kullback-Leibler divergence between two probability vectors.
///
/// Uses the 0 * ln(0/q) = 0 convention and clamps q below at `KL_CLAMP`.
pub fn kl_divergence(p: &Tensor, q: &Tensor) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::ShapeMismatch {
            context: "kl_divergence",
            expected: p.shape().to_vec(),
            got: q.shape().to_vec(),
        });
    }
    check_distribution(p, "p")?;
    check_distribution(q, "q")?;
    let mut sum = 0.0;
    for (&pi, &qi) in p.data().iter().zip(q.data()) {
        if pi > 0.0 {
            sum += pi * (pi / qi.max(KL_CLAMP)).ln();
        }
    }
    Ok(sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn matmul_identity() {
        let a = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![3.0], vec![4.0]]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[3.0, 4.0]);
    }

    #[test]
    fn matmul_hand_computed() {
        // 1*5+2*6 = 17, 3*5+4*6 = 39
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![5.0], vec![6.0]]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![2, 2]);
        assert!(matmul(&a, &b).is_err());
    }

    #[test]
    fn softmax_symmetry() {
        let v = Tensor::new(vec![3], vec![0.0, 0.0, 0.0]).unwrap();
        let s = softmax(&v).unwrap();
        for &x in s.data() {
            assert_abs_diff_eq!(x, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn softmax_large_inputs_stable() {
        let v = Tensor::new(vec![2], vec![1000.0, 0.0]).unwrap();
        let s = softmax(&v).unwrap();
        assert!((s.data()[0] - 1.0).abs() < 1e-12);
        assert!(s.data()[1].abs() < 1e-12);
        assert!(s.data().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn softmax_formula_oracle() {
        // e^{x_i} / sum e^{x_j} for [1,2,3], computed in 50-digit precision.
        let v = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let s = softmax(&v).unwrap();
        let expected = [
            0.09003057317038046,
            0.24472847105479765,
            0.6652409557748219,
        ];
        for (got, want) in s.data().iter().zip(expected) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-15);
        }
    }

    #[test]
    fn softmax_empty_errors() {
        let v = Tensor::zeros(vec![0]);
        assert!(softmax(&v).is_err());
    }

    #[test]
    fn sigmoid_values() {
        let v = Tensor::new(vec![3], vec![0.0, 1e9, 1.0]).unwrap();
        let s = sigmoid(&v);
        assert_eq!(s.data()[0], 0.5);
        assert!((s.data()[1] - 1.0).abs() < 1e-12);
        assert_abs_diff_eq!(s.data()[2], 0.7310585786300049, epsilon = 1e-15);
        // negative tail must not overflow
        let neg = sigmoid(&Tensor::scalar(-1e9));
        assert!(neg.data()[0] >= 0.0 && neg.data()[0] < 1e-12);
    }

    #[test]
    fn kl_identity_is_zero() {
        let p = Tensor::new(vec![3], vec![0.2, 0.5, 0.3]).unwrap();
        assert_abs_diff_eq!(kl_divergence(&p, &p).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn kl_closed_forms() {
        let p = Tensor::new(vec![2], vec![1.0, 0.0]).unwrap();
        let q = Tensor::new(vec![2], vec![0.5, 0.5]).unwrap();
        assert_abs_diff_eq!(
            kl_divergence(&p, &q).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-15
        );
        // 0.5 ln(0.5/0.9) + 0.5 ln(0.5/0.1) = ln(5/3)
        let p = Tensor::new(vec![2], vec![0.5, 0.5]).unwrap();
        let q = Tensor::new(vec![2], vec![0.9, 0.1]).unwrap();
        assert_abs_diff_eq!(
            kl_divergence(&p, &q).unwrap(),
            0.5108256237659907,
            epsilon = 1e-15
        );
    }

    #[test]
    fn kl_rejects_bad_inputs() {
        let p = Tensor::new(vec![2], vec![0.5, 0.5]).unwrap();
        let q3 = Tensor::new(vec![3], vec![0.2, 0.4, 0.4]).unwrap();
        assert!(kl_divergence(&p, &q3).is_err());
        let not_dist = Tensor::new(vec![2], vec![0.9, 0.9]).unwrap();
        assert!(kl_divergence(&p, &not_dist).is_err());
    }

    #[test]
    fn tensor_shape_invariant() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }
}
