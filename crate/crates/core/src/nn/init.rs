use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Glorot-uniform initialization on `[-b, b]` with `b = sqrt(6 / (fan_in + fan_out))`.
///
/// Deterministic for a fixed `seed`.
pub fn xavier_init<T: Real>(shape: &[usize], fan_in: usize, fan_out: usize, seed: u64) -> Result<Tensor<T>> {
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::InvalidArgument(format!("xavier fans must be positive, got {fan_in}/{fan_out}")));
    }
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = shape.iter().product();
    let data = (0..len).map(|_| T::from_f64_lossy(rng.gen_range(-bound..=bound))).collect();
    Tensor::from_vec(shape, data)
}
