use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Elementwise `max(0, x)`.
pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes `output_grad` where the input was positive; the subgradient at 0 is 0.
pub fn relu_backward<T: Real>(input: &Tensor<T>, output_grad: &Tensor<T>) -> Result<Tensor<T>> {
    input.check_same_shape("relu_backward", output_grad)?;
    let data =
        input.data().iter().zip(output_grad.data()).map(|(&x, &g)| if x > T::zero() { g } else { T::zero() }).collect();
    Tensor::from_vec(input.shape(), data)
}

/// Row-wise softmax of an `N x K` logit matrix.
pub fn softmax_rows<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, k] = *logits.shape() else {
        return Err(Error::shape("softmax", format!("expected N x K logits, got {:?}", logits.shape())));
    };
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks_exact(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
        let total: T = exps.iter().copied().sum();
        out.extend(exps.into_iter().map(|e| e / total));
    }
    Tensor::from_vec(logits.shape(), out)
}
