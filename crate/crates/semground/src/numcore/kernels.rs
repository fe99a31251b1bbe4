//! Hand-derived backward kernels for the layer compositions used by the
//! grounding model. Each function takes the values cached by the matching
//! forward call and the gradient flowing in from downstream, and returns the
//! gradients the chain rule assigns to parameters and inputs.

use super::tensor::{Tensor2, };
use super::NumError;

/// Scales column `j` of `x` by `weights[j]`.
pub fn col_scale(x: &Tensor2, weights: &[f64]) -> Result<Tensor2, NumError> {
    if weights.len() != x.cols() {
        return Err(NumError::LengthMismatch {
            op: "col_scale: weights",
            expected: x.cols(),
            actual: weights.len(),
        });
    }
    let mut out = x.clone();
    for i in 0..out.rows() {
        let base = i * out.cols();
        let row = &mut out.data_mut()[base..base + weights.len()];
        for (v, w) in row.iter_mut().zip(weights.iter()) {
            *v *= w;
        }
    }
    Ok(out)
}

/// Gradient of [`col_scale`] with respect to the column weights:
/// `d_weights[j] = sum_i x[i,j] * d_out[i,j]`. The gradient with respect to
/// `x` is never needed by the model (feature grids are inputs) and is not
/// computed.
pub fn col_scale_backward(x: &Tensor2, d_out: &Tensor2) -> Result<Vec<f64>, NumError> {
    if x.rows() != d_out.rows() || x.cols() != d_out.cols() {
        return Err(NumError::ShapeMismatch {
            op: "col_scale_backward",
            left: "x",
            left_rows: x.rows(),
            left_cols: x.cols(),
            right: "d_out",
            right_rows: d_out.rows(),
            right_cols: d_out.cols(),
        });
    }
    let mut d_weights = vec![0.0; x.cols()];
    for i in 0..x.rows() {
        let xr = x.row(i);
        let dr = d_out.row(i);
        for j in 0..x.cols() {
            d_weights[j] += xr[j] * dr[j];
        }
    }
    Ok(d_weights)
}

/// Parameter gradients for `Y = W·X + b` given `d_out = dL/dY`:
/// `dW = d_out · Xᵀ` and `db[i] = sum_j d_out[i,j]`.
pub fn affine_backward_params(
    x: &Tensor2,
    d_out: &Tensor2,
) -> Result<(Tensor2, Vec<f64>), NumError> {
    if x.cols() != d_out.cols() {
        return Err(NumError::ShapeMismatch {
            op: "affine_backward_params",
            left: "X",
            left_rows: x.rows(),
            left_cols: x.cols(),
            right: "d_out",
            right_rows: d_out.rows(),
            right_cols: d_out.cols(),
        });
    }
    let (p, d, n) = (d_out.rows(), x.rows(), x.cols());
    let mut d_w = vec![0.0; p * d];
    let mut d_b = vec![0.0; p];
    for i in 0..p {
        let dr = d_out.row(i);
        d_b[i] = dr.iter().sum();
        let w_row = &mut d_w[i * d..(i + 1) * d];
        for k in 0..d {
            let xr = x.row(k);
            let mut acc = 0.0;
            for j in 0..n {
                acc += dr[j] * xr[j];
            }
            w_row[k] = acc;
        }
    }
    Ok((Tensor2::from_raw(p, d, d_w), d_b))
}

/// Input gradient for `Y = W·X + b` given `d_out = dL/dY`: `dX = Wᵀ · d_out`.
pub fn affine_backward_input(w: &Tensor2, d_out: &Tensor2) -> Result<Tensor2, NumError> {
    if w.rows() != d_out.rows() {
        return Err(NumError::ShapeMismatch {
            op: "affine_backward_input",
            left: "W",
            left_rows: w.rows(),
            left_cols: w.cols(),
            right: "d_out",
            right_rows: d_out.rows(),
            right_cols: d_out.cols(),
        });
    }
    let (p, d, n) = (w.rows(), w.cols(), d_out.cols());
    let mut d_x = vec![0.0; d * n];
    for i in 0..p {
        let dr = d_out.row(i);
        for (k, &wv) in w.row(i).iter().enumerate() {
            let xr = &mut d_x[k * n..(k + 1) * n];
            for j in 0..n {
                xr[j] += wv * dr[j];
            }
        }
    }
    Ok(Tensor2::from_raw(d, n, d_x))
}

/// Full backward for `Y = W·X + b`; returns `(dW, db, dX)`.
pub fn affine_backward(
    w: &Tensor2,
    x: &Tensor2,
    d_out: &Tensor2,
) -> Result<(Tensor2, Vec<f64>, Tensor2), NumError> {
    let (d_w, d_b) = affine_backward_params(x, d_out)?;
    let d_x = affine_backward_input(w, d_out)?;
    Ok((d_w, d_b, d_x))
}

/// Parameter gradients for the matrix-vector case `y = W·x + b`:
/// `dW = d_out ⊗ x` and `db = d_out`; also returns `dx = Wᵀ · d_out`.
pub fn matvec_backward(
    w: &Tensor2,
    x: &[f64],
    d_out: &[f64],
) -> Result<(Tensor2, Vec<f64>, Vec<f64>), NumError> {
    if x.len() != w.cols() {
        return Err(NumError::LengthMismatch {
            op: "matvec_backward: input",
            expected: w.cols(),
            actual: x.len(),
        });
    }
    if d_out.len() != w.rows() {
        return Err(NumError::LengthMismatch {
            op: "matvec_backward: d_out",
            expected: w.rows(),
            actual: d_out.len(),
        });
    }
    let (p, d) = (w.rows(), w.cols());
    let mut d_w = vec![0.0; p * d];
    let mut d_x = vec![0.0; d];
    for i in 0..p {
        let g = d_out[i];
        let row = &mut d_w[i * d..(i + 1) * d];
        for (k, &xv) in x.iter().enumerate() {
            row[k] = g * xv;
        }
        for (k, &wv) in w.row(i).iter().enumerate() {
            d_x[k] += wv * g;
        }
    }
    Ok((Tensor2::from_raw(p, d, d_w), d_out.to_vec(), d_x))
}

/// Backward through `h = relu(u)`, masking by the cached activation:
/// entries where `h > 0` (equivalently `u > 0`) pass the gradient,
/// everything else blocks it. The subgradient at exactly zero is taken as 0.
pub fn relu_backward(activated: &Tensor2, d_out: &Tensor2) -> Result<Tensor2, NumError> {
    if activated.rows() != d_out.rows() || activated.cols() != d_out.cols() {
        return Err(NumError::ShapeMismatch {
            op: "relu_backward",
            left: "activated",
            left_rows: activated.rows(),
            left_cols: activated.cols(),
            right: "d_out",
            right_rows: d_out.rows(),
            right_cols: d_out.cols(),
        });
    }
    let data = activated
        .data()
        .iter()
        .zip(d_out.data().iter())
        .map(|(&h, &g)| if h > 0.0 { g } else { 0.0 })
        .collect();
    Ok(Tensor2::from_raw(d_out.rows(), d_out.cols(), data))
}

/// Backward through `y = softmax(z)` for a downstream gradient `d_y`:
/// `dz_j = y_j * (dy_j - sum_k dy_k * y_k)`.
pub fn softmax_backward(y: &[f64], d_y: &[f64]) -> Result<Vec<f64>, NumError> {
    if y.len() != d_y.len() {
        return Err(NumError::LengthMismatch {
            op: "softmax_backward",
            expected: y.len(),
            actual: d_y.len(),
        });
    }
    let dot: f64 = y.iter().zip(d_y.iter()).map(|(a, b)| a * b).sum();
    Ok(y.iter().zip(d_y.iter()).map(|(&yi, &gi)| yi * (gi - dot)).collect())
}

/// Combined backward through softmax followed by cross-entropy against a
/// one-hot target: `dz = probs - onehot(target)`.
pub fn softmax_cross_entropy_backward(probs: &[f64], target: usize) -> Result<Vec<f64>, NumError> {
    if target >= probs.len() {
        return Err(NumError::IndexOutOfRange {
            op: "softmax_cross_entropy_backward",
            index: target,
            len: probs.len(),
        });
    }
    let mut d = probs.to_vec();
    d[target] -= 1.0;
    Ok(d)
}
