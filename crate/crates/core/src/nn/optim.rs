use crate::error::Result;
use crate::tensor::{Real, Tensor};

/// Returns `params - learning_rate * grads`.
pub fn sgd_step<T: Real>(params: &Tensor<T>, grads: &Tensor<T>, learning_rate: T) -> Result<Tensor<T>> {
    let mut out = params.clone();
    sgd_step_in_place(&mut out, grads, learning_rate)?;
    Ok(out)
}

pub fn sgd_step_in_place<T: Real>(params: &mut Tensor<T>, grads: &Tensor<T>, learning_rate: T) -> Result<()> {
    params.axpy(-learning_rate, grads)
}
