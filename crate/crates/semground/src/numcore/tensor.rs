use super::NumError;

/// Probability floor applied by [`cross_entropy`] before taking the log, so a
/// numerically zero probability early in training never yields an infinite
/// loss.
pub const PROB_FLOOR: f64 = 1e-12;

/// Dense row-major matrix of `f64` values.
///
/// Construction validates that the data length matches `rows * cols` and that
/// every entry is finite; the public kernels preserve both invariants.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2 {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumError> {
        if data.len() != rows * cols {
            return Err(NumError::LengthMismatch {
                op: "Tensor2::new",
                expected: rows * cols,
                actual: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(NumError::NonFinite {
                context: "Tensor2::new".to_string(),
                index,
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a tensor by evaluating `f(row, col)` for every entry.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self { rows, cols, data }
    }

    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(v.is_finite());
        self.data[i * self.cols + j] = v;
    }

    /// Adds `other` elementwise into `self`.
    pub fn add_assign(&mut self, other: &Tensor2) -> Result<(), NumError> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(NumError::ShapeMismatch {
                op: "Tensor2::add_assign",
                left: "self",
                left_rows: self.rows,
                left_cols: self.cols,
                right: "other",
                right_rows: other.rows,
                right_cols: other.cols,
            });
        }
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
        Ok(())
    }

    /// Index of the first non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }
}

/// `W · X + b` with the bias broadcast across columns.
///
/// `W` is `p×d`, `X` is `d×n`, `b` has length `p`; the result is `p×n`.
pub fn affine(w: &Tensor2, b: &[f64], x: &Tensor2) -> Result<Tensor2, NumError> {
    if w.cols() != x.rows() {
        return Err(NumError::ShapeMismatch {
            op: "affine",
            left: "W",
            left_rows: w.rows(),
            left_cols: w.cols(),
            right: "X",
            right_rows: x.rows(),
            right_cols: x.cols(),
        });
    }
    if b.len() != w.rows() {
        return Err(NumError::LengthMismatch {
            op: "affine: bias",
            expected: w.rows(),
            actual: b.len(),
        });
    }
    let (p, n) = (w.rows(), x.cols());
    let mut out = vec![0.0; p * n];
    for i in 0..p {
        let out_row = &mut out[i * n..(i + 1) * n];
        out_row.fill(b[i]);
        for (k, &wv) in w.row(i).iter().enumerate() {
            let x_row = x.row(k);
            for j in 0..n {
                out_row[j] += wv * x_row[j];
            }
        }
    }
    Ok(Tensor2::from_raw(p, n, out))
}

/// `W · x + b` for a flat input vector; the matrix-vector case of [`affine`].
pub fn matvec(w: &Tensor2, b: &[f64], x: &[f64]) -> Result<Vec<f64>, NumError> {
    if x.len() != w.cols() {
        return Err(NumError::LengthMismatch {
            op: "matvec: input",
            expected: w.cols(),
            actual: x.len(),
        });
    }
    if b.len() != w.rows() {
        return Err(NumError::LengthMismatch {
            op: "matvec: bias",
            expected: w.rows(),
            actual: b.len(),
        });
    }
    let mut out = Vec::with_capacity(w.rows());
    for i in 0..w.rows() {
        let mut acc = b[i];
        for (wv, xv) in w.row(i).iter().zip(x.iter()) {
            acc += wv * xv;
        }
        out.push(acc);
    }
    Ok(out)
}

/// Elementwise `max(x, 0)`.
pub fn relu(x: &Tensor2) -> Tensor2 {
    let data = x.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor2::from_raw(x.rows(), x.cols(), data)
}

/// Numerically stable softmax: the maximum is subtracted before
/// exponentiation, so arbitrarily large logits from ReLU stacks stay in
/// range. The output sums to 1 and every entry is strictly positive.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    debug_assert!(!z.is_empty());
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

/// `-ln p[target]`, with the selected probability clamped at [`PROB_FLOOR`].
pub fn cross_entropy(p: &[f64], target: usize) -> Result<f64, NumError> {
    if target >= p.len() {
        return Err(NumError::IndexOutOfRange {
            op: "cross_entropy",
            index: target,
            len: p.len(),
        });
    }
    Ok(-(p[target].max(PROB_FLOOR)).ln())
}
