use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Row-wise softmax, computed with the row maximum subtracted.
pub fn softmax_rows<T: Scalar>(logits: &Matrix<T>) -> Matrix<T> {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    out
}

/// Mean cross-entropy of `softmax(logits)` against integer labels, with its
/// gradient `(softmax − onehot) / N`.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Matrix<T>,
    labels: &[usize],
) -> Result<(T, Matrix<T>)> {
    let (n, classes) = logits.shape();
    if labels.len() != n {
        return Err(Error::shape("softmax_cross_entropy", n, labels.len()));
    }
    if n == 0 {
        return Err(Error::Domain("softmax_cross_entropy: empty batch".into()));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    let inv_n = T::one() / T::of_usize(n);
    let mut grad = softmax_rows(logits);
    let mut loss = T::zero();
    for (r, &label) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        loss += lse - row[label];
        let g = grad.row_mut(r);
        g[label] -= T::one();
        g.iter_mut().for_each(|v| *v *= inv_n);
    }
    Ok((loss * inv_n, grad))
}
