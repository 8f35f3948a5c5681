//! Dual-branch (slow/fast) logit merging and relevance block sums.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Places slow-branch logits at every `rate`-th fast frame (zeros between)
/// and adds the fast-branch logits.
pub fn slowfast_merge(slow: &Tensor, fast: &Tensor, rate: usize) -> Result<Tensor> {
    if slow.rank() != 2 || fast.rank() != 2 || slow.shape()[1] != fast.shape()[1] {
        return Err(Error::ShapeMismatch(format!(
            "slow {:?} and fast {:?} must both be [frames, classes]",
            slow.shape(),
            fast.shape()
        )));
    }
    let (m, n) = (slow.shape()[0], fast.shape()[0]);
    if rate == 0 || n != m * rate {
        return Err(Error::RateMismatch(format!(
            "{n} fast frames != {m} slow frames x rate {rate}"
        )));
    }
    let mut merged = fast.clone();
    let k = fast.shape()[1];
    for t in 0..m {
        let dst = &mut merged.data_mut()[t * rate * k..(t * rate + 1) * k];
        for (d, s) in dst.iter_mut().zip(slow.row(t)) {
            *d += s;
        }
    }
    Ok(merged)
}

/// Sums every `rate x rate` block of a square matrix.
pub fn block_sum(matrix: &[Vec<f64>], rate: usize) -> Result<Vec<Vec<f64>>> {
    let n = matrix.len();
    if matrix.iter().any(|row| row.len() != n) {
        return Err(Error::ShapeMismatch("block sums need a square matrix".into()));
    }
    if rate == 0 || n % rate != 0 {
        return Err(Error::RateMismatch(format!("rate {rate} does not divide {n}")));
    }
    let m = n / rate;
    let mut out = vec![vec![0.0f64; m]; m];
    for (i, row) in matrix.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            out[i / rate][j / rate] += v;
        }
    }
    Ok(out)
}
