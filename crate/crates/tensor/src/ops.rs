//! Eager tensor kernels.
//!
//! Every op validates shapes and returns a fresh [`Tensor`]. The [`crate::Tape`]
//! calls these same functions for its forward pass, so traced and untraced
//! computations cannot drift apart numerically.
//!
//! Row-wise ops (`softmax`, `log_softmax`, `layer_norm`) treat a 1-D tensor as
//! a single row and apply along the last axis of a 2-D tensor.

use crate::tensor::debug_check_finite;
use crate::{Tensor, TensorError, LAYER_NORM_EPS};

const GELU_COEF: f64 = 0.044715;

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), TensorError> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn zip_map(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor, TensorError> {
    same_shape(op, a, b)?;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    let out = Tensor::from_vec(a.shape(), data)?;
    debug_check_finite(op, &out);
    Ok(out)
}

/// Elementwise sum of two same-shape tensors.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    zip_map("add", a, b, |x, y| x + y)
}

/// Elementwise difference of two same-shape tensors.
pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    zip_map("sub", a, b, |x, y| x - y)
}

/// Elementwise product of two same-shape tensors.
pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    zip_map("mul", a, b, |x, y| x * y)
}

/// Elementwise minimum of two same-shape tensors.
pub fn minimum(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    zip_map("minimum", a, b, |x, y| x.min(y))
}

/// Adds a 1-D row vector to every row of a matrix (bias broadcast).
pub fn add_row(a: &Tensor, row: &Tensor) -> Result<Tensor, TensorError> {
    if row.shape().len() != 1 || row.cols() != a.cols() {
        return Err(TensorError::ShapeMismatch {
            op: "add_row",
            lhs: a.shape().to_vec(),
            rhs: row.shape().to_vec(),
        });
    }
    let n = a.rows();
    let m = a.cols();
    let mut data = a.data().to_vec();
    let r = row.data();
    for i in 0..n {
        for j in 0..m {
            data[i * m + j] += r[j];
        }
    }
    let out = Tensor::from_vec(a.shape(), data)?;
    debug_check_finite("add_row", &out);
    Ok(out)
}

/// Multiplies every element by a constant.
pub fn scale(a: &Tensor, c: f64) -> Result<Tensor, TensorError> {
    let out = Tensor::from_vec(a.shape(), a.data().iter().map(|&x| x * c).collect())?;
    debug_check_finite("scale", &out);
    Ok(out)
}

/// Adds a constant to every element.
pub fn add_scalar(a: &Tensor, c: f64) -> Result<Tensor, TensorError> {
    let out = Tensor::from_vec(a.shape(), a.data().iter().map(|&x| x + c).collect())?;
    debug_check_finite("add_scalar", &out);
    Ok(out)
}

/// Elementwise exponential.
pub fn exp(a: &Tensor) -> Result<Tensor, TensorError> {
    let out = Tensor::from_vec(a.shape(), a.data().iter().map(|&x| x.exp()).collect())?;
    debug_check_finite("exp", &out);
    Ok(out)
}

/// Clamps every element into `[lo, hi]`.
pub fn clamp(a: &Tensor, lo: f64, hi: f64) -> Result<Tensor, TensorError> {
    if !(lo <= hi) {
        return Err(TensorError::InvalidArgument {
            op: "clamp",
            message: format!("lo {lo} must not exceed hi {hi}"),
        });
    }
    let out = Tensor::from_vec(
        a.shape(),
        a.data().iter().map(|&x| x.clamp(lo, hi)).collect(),
    )?;
    debug_check_finite("clamp", &out);
    Ok(out)
}

/// Gaussian error linear unit (tanh approximation).
pub fn gelu(a: &Tensor) -> Result<Tensor, TensorError> {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let out = Tensor::from_vec(
        a.shape(),
        a.data()
            .iter()
            .map(|&x| {
                let u = c * (x + GELU_COEF * x * x * x);
                0.5 * x * (1.0 + u.tanh())
            })
            .collect(),
    )?;
    debug_check_finite("gelu", &out);
    Ok(out)
}

/// Derivative of [`gelu`] at each input element (used by the tape).
pub(crate) fn gelu_derivative(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let u = c * (x + GELU_COEF * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * GELU_COEF * x * x)
}

/// Matrix product of `[n,k] x [k,m] -> [n,m]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    if a.shape().len() != 2 || b.shape().len() != 2 {
        return Err(TensorError::UnsupportedShape {
            op: "matmul",
            expected: "two rank-2 tensors",
            shape: if a.shape().len() != 2 {
                a.shape().to_vec()
            } else {
                b.shape().to_vec()
            },
        });
    }
    if a.cols() != b.rows() {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    let mut data = vec![0.0; n * m];
    let ad = a.data();
    let bd = b.data();
    // i-k-j loop order keeps both B and C accesses sequential.
    for i in 0..n {
        let crow = &mut data[i * m..(i + 1) * m];
        for kk in 0..k {
            let aik = ad[i * k + kk];
            if aik == 0.0 {
                continue;
            }
            let brow = &bd[kk * m..(kk + 1) * m];
            for j in 0..m {
                crow[j] += aik * brow[j];
            }
        }
    }
    let out = Tensor::from_vec(&[n, m], data)?;
    debug_check_finite("matmul", &out);
    Ok(out)
}

/// Transpose of a rank-2 tensor.
pub fn transpose(a: &Tensor) -> Result<Tensor, TensorError> {
    if a.shape().len() != 2 {
        return Err(TensorError::UnsupportedShape {
            op: "transpose",
            expected: "a rank-2 tensor",
            shape: a.shape().to_vec(),
        });
    }
    let (n, m) = (a.rows(), a.cols());
    let mut data = vec![0.0; n * m];
    let ad = a.data();
    for i in 0..n {
        for j in 0..m {
            data[j * n + i] = ad[i * m + j];
        }
    }
    Tensor::from_vec(&[m, n], data)
}

/// Picks whole rows of a `[r,d]` table: output row `i` is `table[ids[i]]`.
pub fn gather_rows(table: &Tensor, ids: &[usize]) -> Result<Tensor, TensorError> {
    if table.shape().len() != 2 {
        return Err(TensorError::UnsupportedShape {
            op: "gather_rows",
            expected: "a rank-2 table",
            shape: table.shape().to_vec(),
        });
    }
    let (r, d) = (table.rows(), table.cols());
    let mut data = Vec::with_capacity(ids.len() * d);
    for &id in ids {
        if id >= r {
            return Err(TensorError::IndexOutOfBounds {
                op: "gather_rows",
                index: id,
                len: r,
            });
        }
        data.extend_from_slice(&table.data()[id * d..(id + 1) * d]);
    }
    Tensor::from_vec(&[ids.len(), d], data)
}

/// Picks one element per row: output `i` is `mat[i, ids[i]]`.
pub fn select_cols(mat: &Tensor, ids: &[usize]) -> Result<Tensor, TensorError> {
    if mat.shape().len() != 2 {
        return Err(TensorError::UnsupportedShape {
            op: "select_cols",
            expected: "a rank-2 tensor",
            shape: mat.shape().to_vec(),
        });
    }
    let (n, m) = (mat.rows(), mat.cols());
    if ids.len() != n {
        return Err(TensorError::InvalidArgument {
            op: "select_cols",
            message: format!("{} indices for {} rows", ids.len(), n),
        });
    }
    let mut data = Vec::with_capacity(n);
    for (i, &id) in ids.iter().enumerate() {
        if id >= m {
            return Err(TensorError::IndexOutOfBounds {
                op: "select_cols",
                index: id,
                len: m,
            });
        }
        data.push(mat.data()[i * m + id]);
    }
    Tensor::from_vec(&[n], data)
}

fn rowwise(
    op: &'static str,
    a: &Tensor,
    f: impl Fn(&[f64], &mut [f64]),
) -> Result<Tensor, TensorError> {
    if a.shape().is_empty() || a.shape().len() > 2 {
        return Err(TensorError::UnsupportedShape {
            op,
            expected: "a rank-1 or rank-2 tensor",
            shape: a.shape().to_vec(),
        });
    }
    let (n, m) = (a.rows(), a.cols());
    let mut data = vec![0.0; n * m];
    for i in 0..n {
        f(&a.data()[i * m..(i + 1) * m], &mut data[i * m..(i + 1) * m]);
    }
    let out = Tensor::from_vec(a.shape(), data)?;
    debug_check_finite(op, &out);
    Ok(out)
}

/// Softmax along the last axis.
pub fn softmax(a: &Tensor) -> Result<Tensor, TensorError> {
    rowwise("softmax", a, |row, out| {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (o, &x) in out.iter_mut().zip(row) {
            *o = (x - max).exp();
            sum += *o;
        }
        for o in out.iter_mut() {
            *o /= sum;
        }
    })
}

/// Log-softmax along the last axis.
pub fn log_softmax(a: &Tensor) -> Result<Tensor, TensorError> {
    rowwise("log_softmax", a, |row, out| {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
        for (o, &x) in out.iter_mut().zip(row) {
            *o = x - max - log_sum;
        }
    })
}

/// Layer normalization along the last axis with learned scale and shift.
///
/// Variance is floored by [`LAYER_NORM_EPS`], so a zero-variance row maps to
/// all zeros (before scale/shift).
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<Tensor, TensorError> {
    Ok(layer_norm_full(x, gamma, beta)?.0)
}

/// [`layer_norm`] that also returns per-row `(mean, rstd)`, which the tape
/// caches for the backward pass.
pub fn layer_norm_full(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
) -> Result<(Tensor, Vec<f64>, Vec<f64>), TensorError> {
    let m = x.cols();
    for (name, t) in [("gamma", gamma), ("beta", beta)] {
        if t.shape().len() != 1 || t.cols() != m {
            return Err(TensorError::InvalidArgument {
                op: "layer_norm",
                message: format!(
                    "{name} must be a 1-D tensor of length {m}, got shape {:?}",
                    t.shape()
                ),
            });
        }
    }
    let n = x.rows();
    let mut means = Vec::with_capacity(n);
    let mut rstds = Vec::with_capacity(n);
    let mut data = vec![0.0; n * m];
    let g = gamma.data();
    let b = beta.data();
    for i in 0..n {
        let row = &x.data()[i * m..(i + 1) * m];
        let mean = row.iter().sum::<f64>() / m as f64;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
        let rstd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        means.push(mean);
        rstds.push(rstd);
        let out = &mut data[i * m..(i + 1) * m];
        for j in 0..m {
            out[j] = (row[j] - mean) * rstd * g[j] + b[j];
        }
    }
    let out = Tensor::from_vec(x.shape(), data)?;
    debug_check_finite("layer_norm", &out);
    Ok((out, means, rstds))
}

/// Concatenates matrices with equal row counts along the column axis.
pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor, TensorError> {
    if parts.is_empty() {
        return Err(TensorError::InvalidArgument {
            op: "concat_cols",
            message: "no tensors to concatenate".into(),
        });
    }
    let n = parts[0].rows();
    for p in parts {
        if p.shape().len() != 2 || p.rows() != n {
            return Err(TensorError::ShapeMismatch {
                op: "concat_cols",
                lhs: parts[0].shape().to_vec(),
                rhs: p.shape().to_vec(),
            });
        }
    }
    let m_total: usize = parts.iter().map(|p| p.cols()).sum();
    let mut data = Vec::with_capacity(n * m_total);
    for i in 0..n {
        for p in parts {
            let m = p.cols();
            data.extend_from_slice(&p.data()[i * m..(i + 1) * m]);
        }
    }
    Tensor::from_vec(&[n, m_total], data)
}

/// Column slice `[n, m] -> [n, len]` starting at `start`.
pub fn slice_cols(a: &Tensor, start: usize, len: usize) -> Result<Tensor, TensorError> {
    if a.shape().len() != 2 {
        return Err(TensorError::UnsupportedShape {
            op: "slice_cols",
            expected: "a rank-2 tensor",
            shape: a.shape().to_vec(),
        });
    }
    let (n, m) = (a.rows(), a.cols());
    if start + len > m {
        return Err(TensorError::IndexOutOfBounds {
            op: "slice_cols",
            index: start + len,
            len: m,
        });
    }
    let mut data = Vec::with_capacity(n * len);
    for i in 0..n {
        data.extend_from_slice(&a.data()[i * m + start..i * m + start + len]);
    }
    Tensor::from_vec(&[n, len], data)
}

/// Row slice `[n, m] -> [len, m]` starting at `start`.
pub fn slice_rows(a: &Tensor, start: usize, len: usize) -> Result<Tensor, TensorError> {
    if a.shape().len() != 2 {
        return Err(TensorError::UnsupportedShape {
            op: "slice_rows",
            expected: "a rank-2 tensor",
            shape: a.shape().to_vec(),
        });
    }
    let (n, m) = (a.rows(), a.cols());
    if start + len > n {
        return Err(TensorError::IndexOutOfBounds {
            op: "slice_rows",
            index: start + len,
            len: n,
        });
    }
    let data = a.data()[start * m..(start + len) * m].to_vec();
    Tensor::from_vec(&[len, m], data)
}

/// Sum of all elements, as a scalar tensor.
pub fn reduce_sum(a: &Tensor) -> Result<Tensor, TensorError> {
    let s: f64 = a.data().iter().sum();
    let out = Tensor::scalar(s);
    debug_check_finite("reduce_sum", &out);
    Ok(out)
}

/// Mean of all elements, as a scalar tensor.
pub fn reduce_mean(a: &Tensor) -> Result<Tensor, TensorError> {
    if a.is_empty() {
        return Err(TensorError::InvalidArgument {
            op: "reduce_mean",
            message: "mean of an empty tensor".into(),
        });
    }
    let s: f64 = a.data().iter().sum();
    let out = Tensor::scalar(s / a.len() as f64);
    debug_check_finite("reduce_mean", &out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::from_vec(&[rows, cols], data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_hand_case() {
        // [[1,2],[3,4]] x [[5,6],[7,8]] = [[19,22],[43,50]]
        let a = t2(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = t2(2, 2, &[5.0, 6.0, 7.0, 8.0]);
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_rejects_bad_inner_dim() {
        let a = t2(2, 3, &[0.0; 6]);
        let b = t2(2, 2, &[0.0; 4]);
        assert!(matches!(
            matmul(&a, &b),
            Err(TensorError::ShapeMismatch { op: "matmul", .. })
        ));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let a = t2(2, 3, &[1.0, 2.0, 3.0, -1.0, 0.0, 1.0]);
        let s = softmax(&a).unwrap();
        for i in 0..2 {
            let sum: f64 = s.data()[i * 3..(i + 1) * 3].iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn log_softmax_matches_softmax_log() {
        let a = t2(1, 4, &[0.5, -1.0, 2.0, 0.0]);
        let ls = log_softmax(&a).unwrap();
        let s = softmax(&a).unwrap();
        for (l, p) in ls.data().iter().zip(s.data()) {
            assert!((l.exp() - p).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_zero_variance_row_is_zeros() {
        let x = t2(1, 4, &[3.0, 3.0, 3.0, 3.0]);
        let gamma = Tensor::from_vec(&[4], vec![1.0; 4]).unwrap();
        let beta = Tensor::from_vec(&[4], vec![0.0; 4]).unwrap();
        let y = layer_norm(&x, &gamma, &beta).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn layer_norm_normalizes() {
        let x = t2(1, 2, &[1.0, 3.0]);
        let gamma = Tensor::from_vec(&[2], vec![1.0, 1.0]).unwrap();
        let beta = Tensor::from_vec(&[2], vec![0.0, 0.0]).unwrap();
        let y = layer_norm(&x, &gamma, &beta).unwrap();
        // mean 2, var 1 -> normalized to (-1, 1) up to the eps floor.
        assert!((y.data()[0] + 1.0).abs() < 1e-5);
        assert!((y.data()[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn gather_and_select() {
        let table = t2(3, 2, &[0.0, 1.0, 10.0, 11.0, 20.0, 21.0]);
        let g = gather_rows(&table, &[2, 0, 2]).unwrap();
        assert_eq!(g.data(), &[20.0, 21.0, 0.0, 1.0, 20.0, 21.0]);
        let picked = select_cols(&g, &[1, 0, 1]).unwrap();
        assert_eq!(picked.data(), &[21.0, 0.0, 21.0]);
        assert!(gather_rows(&table, &[3]).is_err());
    }

    #[test]
    fn concat_and_slice_round_trip() {
        let a = t2(2, 2, &[1.0, 2.0, 5.0, 6.0]);
        let b = t2(2, 1, &[3.0, 7.0]);
        let c = concat_cols(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[2, 3]);
        assert_eq!(c.data(), &[1.0, 2.0, 3.0, 5.0, 6.0, 7.0]);
        let back = slice_cols(&c, 0, 2).unwrap();
        assert_eq!(back.data(), a.data());
        let rows = slice_rows(&c, 1, 1).unwrap();
        assert_eq!(rows.data(), &[5.0, 6.0, 7.0]);
    }

    #[test]
    fn reductions() {
        let a = t2(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(reduce_sum(&a).unwrap().item().unwrap(), 10.0);
        assert_eq!(reduce_mean(&a).unwrap().item().unwrap(), 2.5);
    }

    #[test]
    fn minimum_and_clamp() {
        let a = Tensor::from_vec(&[3], vec![0.5, 2.0, -1.0]).unwrap();
        let b = Tensor::from_vec(&[3], vec![1.0, 1.0, 1.0]).unwrap();
        assert_eq!(minimum(&a, &b).unwrap().data(), &[0.5, 1.0, -1.0]);
        assert_eq!(clamp(&a, 0.0, 1.0).unwrap().data(), &[0.5, 1.0, 0.0]);
        assert!(clamp(&a, 1.0, 0.0).is_err());
    }
}
