use crate::tensor::{Real, Tensor};

/// `lambda * sum |w|` over all `params`, with the subgradient `lambda * sign(w)` (0 at 0).
pub fn l1_penalty<T: Real>(params: &[&Tensor<T>], lambda: T) -> (T, Vec<Tensor<T>>) {
    let mut total = T::zero();
    let grads = params
        .iter()
        .map(|p| {
            total = total + p.data().iter().map(|v| v.abs()).sum::<T>();
            p.map(|v| {
                if v > T::zero() {
                    lambda
                } else if v < T::zero() {
                    -lambda
                } else {
                    T::zero()
                }
            })
        })
        .collect();
    (lambda * total, grads)
}
