//! Fully connected layer `y = x W + b` with `W` stored as `in x out`.

use crate::error::{Error, Result};
use crate::nn::LayerGradients;
use crate::tensor::{Real, Tensor};

fn dims<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let [fan_in, fan_out] = *weights.shape() else {
        return Err(Error::shape("dense", format!("weights must be in x out, got {:?}", weights.shape())));
    };
    let n = match *input.shape() {
        [i] if i == fan_in => 1,
        [n, i] if i == fan_in => n,
        ref s => {
            return Err(Error::shape("dense", format!("input {s:?} incompatible with weights {fan_in}x{fan_out}")))
        }
    };
    if bias.shape() != [fan_out] {
        return Err(Error::shape("dense", format!("bias must be [{fan_out}], got {:?}", bias.shape())));
    }
    Ok((n, fan_in, fan_out))
}

/// Affine map of a flat vector (`[in]`) or a batch of rows (`[N, in]`).
pub fn dense<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, fan_in, fan_out) = dims(input, weights, bias)?;
    let mut out: Vec<T> = bias.data().iter().copied().cycle().take(n * fan_out).collect();
    T::gemm(n, fan_in, fan_out, T::one(), input.data(), false, weights.data(), false, T::one(), &mut out);
    let shape = if input.rank() == 1 { vec![fan_out] } else { vec![n, fan_out] };
    Tensor::from_vec(&shape, out)
}

/// Gradients w.r.t. the input, `"weights"` and `"bias"`.
pub fn dense_backward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    output_grad: &Tensor<T>,
) -> Result<LayerGradients<T>> {
    let fan_out = weights.shape().get(1).copied().unwrap_or(0);
    let (n, fan_in, fan_out) = dims(input, weights, &Tensor::zeros(&[fan_out.max(1)]))?;
    if output_grad.len() != n * fan_out {
        return Err(Error::shape(
            "dense_backward",
            format!("output grad {:?} for {n} rows of width {fan_out}", output_grad.shape()),
        ));
    }
    let mut dx = vec![T::zero(); n * fan_in];
    T::gemm(n, fan_out, fan_in, T::one(), output_grad.data(), false, weights.data(), true, T::zero(), &mut dx);
    let mut dw = vec![T::zero(); fan_in * fan_out];
    T::gemm(fan_in, n, fan_out, T::one(), input.data(), true, output_grad.data(), false, T::zero(), &mut dw);
    let mut db = vec![T::zero(); fan_out];
    for row in output_grad.data().chunks_exact(fan_out) {
        for (b, &g) in db.iter_mut().zip(row) {
            *b = *b + g;
        }
    }
    let mut grads = LayerGradients::new(Tensor::from_vec(input.shape(), dx)?);
    grads.insert("weights", Tensor::from_vec(weights.shape(), dw)?);
    grads.insert("bias", Tensor::from_vec(&[fan_out], db)?);
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testing::{assert_grad_matches, random_tensor};

    #[test]
    fn identity_weights_zero_bias_is_identity() {
        let mut w = Tensor::<f64>::zeros(&[3, 3]);
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        let x = random_tensor(&[3], 1);
        assert_eq!(dense(&x, &w, &Tensor::zeros(&[3])).unwrap(), x);
    }

    #[test]
    fn zero_input_gives_bias() {
        let w = random_tensor(&[4, 2], 2);
        let b = random_tensor(&[2], 3);
        let y = dense(&Tensor::zeros(&[5, 4]), &w, &b).unwrap();
        for row in y.data().chunks_exact(2) {
            assert_eq!(row, b.data());
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let w = Tensor::<f32>::zeros(&[4, 2]);
        assert!(dense(&Tensor::zeros(&[3]), &w, &Tensor::zeros(&[2])).is_err());
        assert!(dense(&Tensor::zeros(&[4]), &w, &Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        for seed in 0..20u64 {
            let x = random_tensor(&[3, 5], seed);
            let w = random_tensor(&[5, 4], seed + 1);
            let b = random_tensor(&[4], seed + 2);
            let r = random_tensor(&[3, 4], seed + 3);
            let loss = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| -> f64 {
                dense(x, w, b).unwrap().data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
            };
            let g = dense_backward(&x, &w, &r).unwrap();
            assert_grad_matches("dense input", &x, &g.input_grad, |t| loss(t, &w, &b));
            assert_grad_matches("dense weights", &w, g.param("weights"), |t| loss(&x, t, &b));
            assert_grad_matches("dense bias", &b, g.param("bias"), |t| loss(&x, &w, t));
        }
    }
}
