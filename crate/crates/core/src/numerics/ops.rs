//! Forward kernels shared by the graph and by callers that do not need gradients.

use super::{Mask, NumericsError, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// `c += a · b` for row-major `a: m×k`, `b: k×n`.
pub(crate) fn gemm_nn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &aip) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (cj, bj) in crow.iter_mut().zip(brow) {
                *cj += aip * bj;
            }
        }
    }
}

/// `c += a · bᵀ` for `a: m×k`, `b: n×k`.
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `c += aᵀ · b` for `a: m×k`, `b: m×n`, giving `c: k×n`.
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &aip) in arow.iter().enumerate() {
            let crow = &mut c[p * n..(p + 1) * n];
            for (cj, bj) in crow.iter_mut().zip(brow) {
                *cj += aip * bj;
            }
        }
    }
}

/// Four-lane dot product with a fixed summation order.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn expect_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize), NumericsError> {
    if t.rank() != 2 {
        return Err(NumericsError::ShapeMismatch {
            op,
            left: t.shape().to_vec(),
            right: vec![],
        });
    }
    Ok((t.shape()[0], t.shape()[1]))
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    let (m, k) = expect_matrix("matmul", a)?;
    let (k2, n) = expect_matrix("matmul", b)?;
    if k != k2 {
        return Err(NumericsError::ShapeMismatch {
            op: "matmul",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let mut out = vec![0.0; m * n];
    gemm_nn(a.data(), b.data(), &mut out, m, k, n);
    Ok(Tensor::matrix(m, n, out))
}

/// `a · bᵀ` without materializing the transpose.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    let (m, k) = expect_matrix("matmul_nt", a)?;
    let (n, k2) = expect_matrix("matmul_nt", b)?;
    if k != k2 {
        return Err(NumericsError::ShapeMismatch {
            op: "matmul_nt",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let mut out = vec![0.0; m * n];
    gemm_nt(a.data(), b.data(), &mut out, m, k, n);
    Ok(Tensor::matrix(m, n, out))
}

/// Row-wise softmax with optional keep-mask. Masked entries come out exactly zero.
pub fn softmax_rows(x: &Tensor, mask: Option<&Mask>) -> Result<Tensor, NumericsError> {
    let (m, n) = expect_matrix("softmax_rows", x)?;
    if let Some(mask) = mask {
        if mask.rows() != m || mask.cols() != n {
            return Err(NumericsError::ShapeMismatch {
                op: "softmax_rows",
                left: vec![m, n],
                right: vec![mask.rows(), mask.cols()],
            });
        }
    }
    let data = x.data();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &data[i * n..(i + 1) * n];
        let keep = |j: usize| mask.is_none_or(|mk| mk.keeps(i, j));
        let mut max = f64::NEG_INFINITY;
        for (j, &v) in row.iter().enumerate() {
            if keep(j) {
                if v.is_nan() || v == f64::INFINITY {
                    return Err(NumericsError::NonFinite { op: "softmax_rows" });
                }
                max = max.max(v);
            }
        }
        if max == f64::NEG_INFINITY {
            return Err(NumericsError::AllMaskedRow { row: i });
        }
        let orow = &mut out[i * n..(i + 1) * n];
        let mut sum = 0.0;
        for j in 0..n {
            if keep(j) {
                let e = (row[j] - max).exp();
                orow[j] = e;
                sum += e;
            }
        }
        let inv = 1.0 / sum;
        for v in orow.iter_mut() {
            *v *= inv;
        }
    }
    Ok(Tensor::matrix(m, n, out))
}

/// Normalized values and reciprocal standard deviations per row.
pub(crate) fn layer_norm_stats(x: &[f64], rows: usize, d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xhat = vec![0.0; rows * d];
    let mut rstd = vec![0.0; rows];
    for i in 0..rows {
        let row = &x[i * d..(i + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        rstd[i] = r;
        for (o, v) in xhat[i * d..(i + 1) * d].iter_mut().zip(row) {
            *o = (v - mean) * r;
        }
    }
    (xhat, rstd)
}

/// Normalizes each vector along the last dimension, then applies `gain` and `bias`.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<Tensor, NumericsError> {
    let d = x.cols();
    if gain.len() != d || bias.len() != d || x.rank() == 0 {
        return Err(NumericsError::ShapeMismatch {
            op: "layer_norm",
            left: x.shape().to_vec(),
            right: gain.shape().to_vec(),
        });
    }
    let rows = x.rows();
    let (mut y, _) = layer_norm_stats(x.data(), rows, d);
    let (g, b) = (gain.data(), bias.data());
    for i in 0..rows {
        for j in 0..d {
            let v = &mut y[i * d + j];
            *v = *v * g[j] + b[j];
        }
    }
    Tensor::new(x.shape().to_vec(), y)
}

/// Row-wise probabilities for cross-entropy, shared by the graph op.
pub(crate) fn log_softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
    let log_z = max + sum.ln();
    for (o, v) in out.iter_mut().zip(row) {
        *o = v - log_z;
    }
}

/// Mean negative log-likelihood over the positions where `loss_mask` is set.
pub fn masked_cross_entropy(
    logits: &Tensor,
    targets: &[usize],
    loss_mask: &[bool],
) -> Result<f64, NumericsError> {
    let (t, v) = expect_matrix("masked_cross_entropy", logits)?;
    if targets.len() != t || loss_mask.len() != t {
        return Err(NumericsError::ShapeMismatch {
            op: "masked_cross_entropy",
            left: vec![t, v],
            right: vec![targets.len(), loss_mask.len()],
        });
    }
    let count = loss_mask.iter().filter(|m| **m).count();
    if count == 0 {
        return Err(NumericsError::EmptyTarget);
    }
    let mut total = 0.0;
    let mut scratch = vec![0.0; v];
    for i in 0..t {
        if !loss_mask[i] {
            continue;
        }
        if targets[i] >= v {
            return Err(NumericsError::TargetOutOfRange {
                target: targets[i],
                vocab: v,
            });
        }
        log_softmax_row(logits.row(i), &mut scratch);
        total -= scratch[targets[i]];
    }
    Ok(total / count as f64)
}
