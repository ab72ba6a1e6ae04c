//! Dense row-major f64 arrays (rank 0, 1, or 2) and the value-level kernels
//! shared by the tape ops and the tests.

use super::NumError;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Row-major dense array. A scalar has `shape == []`, a vector `[n]`, a
/// matrix `[rows, cols]`. Serializes to plain JSON (shape + data) so model
/// checkpoints and datasets stay diffable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Array {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Array {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NumError> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(NumError::invalid(
                "Array::new",
                format!("shape {:?} holds {} elements, got {}", shape, expect, data.len()),
            ));
        }
        Ok(Array { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Array { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn scalar(v: f64) -> Self {
        Array { shape: vec![], data: vec![v] }
    }

    pub fn vector(v: Vec<f64>) -> Self {
        Array { shape: vec![v.len()], data: v }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NumError> {
        if rows.is_empty() {
            return Err(NumError::invalid("Array::from_rows", "no rows"));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(NumError::invalid("Array::from_rows", "ragged rows"));
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            data.extend_from_slice(r);
        }
        Ok(Array { shape: vec![rows.len(), cols], data })
    }

    /// Uniform on [-scale, scale]; the usual fan-in init is
    /// `scale = 1/sqrt(fan_in)`.
    pub fn uniform<R: Rng>(shape: &[usize], scale: f64, rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-scale..=scale)).collect();
        Array { shape: shape.to_vec(), data }
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

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    pub fn scalar_value(&self) -> Result<f64, NumError> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(NumError::NotScalar { op: "scalar_value", shape: self.shape.clone() })
        }
    }

    /// Rows of a matrix, or 1 for a vector/scalar treated as a single row.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => 1,
        }
    }

    /// Columns of a matrix, or the full length for a vector.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[1],
            1 => self.shape[0],
            _ => 1,
        }
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Max |a - b| over all elements; shapes must match exactly.
    pub fn max_abs_diff(&self, other: &Array) -> Result<f64, NumError> {
        if self.shape != other.shape {
            return Err(NumError::shape(
                "max_abs_diff",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

fn dims2(a: &Array, op: &'static str) -> Result<(usize, usize), NumError> {
    match a.shape().len() {
        2 => Ok((a.shape()[0], a.shape()[1])),
        1 => Ok((1, a.shape()[0])),
        _ => Err(NumError::invalid(op, format!("rank {} unsupported", a.shape().len()))),
    }
}

/// `a @ b` for 2-D (vectors promote to a single row).
pub fn matmul(a: &Array, b: &Array) -> Result<Array, NumError> {
    let (m, k) = dims2(a, "matmul")?;
    let (k2, n) = dims2(b, "matmul")?;
    if k != k2 {
        return Err(NumError::shape(
            "matmul",
            format!("{:?} @ {:?}: inner dims {} vs {}", a.shape(), b.shape(), k, k2),
        ));
    }
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
    Array::new(vec![m, n], out)
}

/// `a @ b^T`; avoids materializing the transpose on the attention hot path.
pub fn matmul_nt(a: &Array, b: &Array) -> Result<Array, NumError> {
    let (m, k) = dims2(a, "matmul_nt")?;
    let (n, k2) = dims2(b, "matmul_nt")?;
    if k != k2 {
        return Err(NumError::shape(
            "matmul_nt",
            format!("{:?} @ {:?}^T: inner dims {} vs {}", a.shape(), b.shape(), k, k2),
        ));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a.data()[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b.data()[j * k..(j + 1) * k];
            out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    Array::new(vec![m, n], out)
}

/// `a^T @ b`; only needed by backward passes.
pub(crate) fn matmul_tn(a: &Array, b: &Array) -> Result<Array, NumError> {
    let (m, k) = dims2(a, "matmul_tn")?;
    let (m2, n) = dims2(b, "matmul_tn")?;
    if m != m2 {
        return Err(NumError::shape(
            "matmul_tn",
            format!("{:?}^T @ {:?}: inner dims {} vs {}", a.shape(), b.shape(), m, m2),
        ));
    }
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let arow = &a.data()[i * k..(i + 1) * k];
        let brow = &b.data()[i * n..(i + 1) * n];
        for p in 0..k {
            let av = arow[p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    Array::new(vec![k, n], out)
}

/// Row-wise softmax with max-subtraction. `-inf` entries (masked positions)
/// get probability exactly 0; a row that is entirely `-inf` is an error
/// because nothing is attendable.
pub fn softmax_rows(x: &Array) -> Result<Array, NumError> {
    if x.is_empty() || x.shape().is_empty() {
        return Err(NumError::invalid("softmax_rows", "empty or scalar input"));
    }
    let (rows, cols) = dims2(x, "softmax_rows")?;
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        let row = &x.data()[r * cols..(r + 1) * cols];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(NumError::AllMasked { row: r });
        }
        let mut sum = 0.0;
        for (j, &v) in row.iter().enumerate() {
            // exp(-inf - max) underflows to exactly 0 as required.
            let e = (v - max).exp();
            out[r * cols + j] = e;
            sum += e;
        }
        for j in 0..cols {
            out[r * cols + j] /= sum;
        }
    }
    Array::new(x.shape().to_vec(), out)
}

/// Numerically stable log-softmax of a single row of logits.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

/// Mean negative log-likelihood of `targets` under row-wise softmax of
/// `logits` (`[T, classes]`, one target per row).
pub fn cross_entropy(logits: &Array, targets: &[usize]) -> Result<f64, NumError> {
    let (rows, cols) = dims2(logits, "cross_entropy")?;
    if rows != targets.len() {
        return Err(NumError::shape(
            "cross_entropy",
            format!("{} logit rows vs {} targets", rows, targets.len()),
        ));
    }
    if rows == 0 {
        return Err(NumError::invalid("cross_entropy", "no rows"));
    }
    let mut total = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        if t >= cols {
            return Err(NumError::TargetOutOfRange { index: t, classes: cols });
        }
        let ls = log_softmax(logits.row(r));
        total -= ls[t];
    }
    Ok(total / rows as f64)
}

/// Mean squared error over all elements; shapes must match exactly.
pub fn mse(pred: &Array, target: &Array) -> Result<f64, NumError> {
    if pred.shape() != target.shape() {
        return Err(NumError::shape(
            "mse",
            format!("{:?} vs {:?}", pred.shape(), target.shape()),
        ));
    }
    if pred.is_empty() {
        return Err(NumError::invalid("mse", "empty input"));
    }
    let n = pred.len() as f64;
    Ok(pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_matches_hand_computed_row() {
        let x = Array::from_rows(&[vec![0.3, -1.2, 2.0]]).unwrap();
        let y = softmax_rows(&x).unwrap();
        // Independent scalar computation, max-subtracted exp/normalize.
        let raw = [0.3f64, -1.2, 2.0];
        let m = 2.0;
        let exps: Vec<f64> = raw.iter().map(|v| (v - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        for j in 0..3 {
            assert!((y.at(0, j) - exps[j] / z).abs() < 1e-9, "col {}", j);
        }
        let row_sum: f64 = y.row(0).iter().sum();
        assert!((row_sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_masked_entry_gets_zero_probability() {
        let x = Array::from_rows(&[vec![1.0, f64::NEG_INFINITY, 0.5]]).unwrap();
        let y = softmax_rows(&x).unwrap();
        assert_eq!(y.at(0, 1), 0.0);
        assert!((y.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_rejects_fully_masked_row() {
        let x = Array::from_rows(&[vec![f64::NEG_INFINITY, f64::NEG_INFINITY]]).unwrap();
        assert!(matches!(softmax_rows(&x), Err(NumError::AllMasked { row: 0 })));
    }

    #[test]
    fn softmax_rejects_empty() {
        let x = Array::new(vec![0, 3], vec![]).unwrap();
        assert!(softmax_rows(&x).is_err());
        assert!(softmax_rows(&Array::scalar(1.0)).is_err());
    }

    #[test]
    fn softmax_extreme_logits_stay_finite() {
        let x = Array::from_rows(&[vec![1000.0, -1000.0, 999.0]]).unwrap();
        let y = softmax_rows(&x).unwrap();
        assert!(y.is_finite());
        assert!((y.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_matches_scalar_oracle() {
        // Fixed 3x5 logits; oracle below recomputes with explicit loops.
        let logits = Array::from_rows(&[
            vec![0.1, -0.4, 2.2, 0.0, -1.5],
            vec![1.0, 1.0, 1.0, 1.0, 1.0],
            vec![-0.3, 0.9, -2.0, 0.4, 0.2],
        ])
        .unwrap();
        let targets = [2usize, 0, 3];
        let got = cross_entropy(&logits, &targets).unwrap();

        let mut expect = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = logits.row(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            expect -= row[t] - m - z.ln();
        }
        expect /= targets.len() as f64;
        assert!((got - expect).abs() < 1e-9);
    }

    #[test]
    fn cross_entropy_uniform_logits_is_log_classes() {
        let logits = Array::from_rows(&[vec![0.0; 4], vec![0.0; 4]]).unwrap();
        let got = cross_entropy(&logits, &[1, 3]).unwrap();
        assert!((got - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_out_of_range_target() {
        let logits = Array::from_rows(&[vec![0.0, 0.0]]).unwrap();
        assert!(matches!(
            cross_entropy(&logits, &[2]),
            Err(NumError::TargetOutOfRange { index: 2, classes: 2 })
        ));
    }

    #[test]
    fn mse_identical_inputs_is_zero() {
        let a = Array::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]).unwrap();
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn mse_matches_hand_computation() {
        let a = Array::vector(vec![1.0, 2.0, 3.0]);
        let b = Array::vector(vec![0.0, 2.0, 5.0]);
        // (1 + 0 + 4) / 3
        assert!((mse(&a, &b).unwrap() - 5.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn mse_rejects_shape_mismatch() {
        let a = Array::vector(vec![1.0, 2.0]);
        let b = Array::vector(vec![1.0, 2.0, 3.0]);
        assert!(mse(&a, &b).is_err());
    }

    #[test]
    fn matmul_2x3_3x2() {
        let a = Array::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let b = Array::from_rows(&[vec![7.0, 8.0], vec![9.0, 10.0], vec![11.0, 12.0]]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 2]);
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn matmul_nt_agrees_with_explicit_transpose() {
        let a = Array::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let b = Array::from_rows(&[vec![0.5, -1.0], vec![2.0, 0.25]]).unwrap();
        let bt = Array::from_rows(&[vec![0.5, 2.0], vec![-1.0, 0.25]]).unwrap();
        let got = matmul_nt(&a, &b).unwrap();
        let expect = matmul(&a, &bt).unwrap();
        assert_eq!(got, expect);
    }

    #[test]
    fn log_softmax_sums_to_one_in_prob_space() {
        let ls = log_softmax(&[0.7f64.ln(), 0.2f64.ln(), 0.1f64.ln()]);
        assert!((ls.iter().map(|v| v.exp()).sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((ls[0] - 0.7f64.ln()).abs() < 1e-12);
    }
}
