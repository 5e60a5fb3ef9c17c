//! Non-overlapping max pooling (window `k`, stride `k`).
//!
//! Spatial dims must be divisible by the window; ties resolve to the first
//! element in row-major window order.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub struct MaxPoolOutput<T: Real> {
    pub output: Tensor<T>,
    /// Flat index into the input of each output element's maximum.
    pub argmax: Vec<usize>,
}

fn dims(shape: &[usize], window: usize) -> Result<(usize, usize, usize, usize, bool)> {
    let (n, h, w, c, batched) = match *shape {
        [h, w, c] => (1, h, w, c, false),
        [n, h, w, c] => (n, h, w, c, true),
        _ => return Err(Error::shape("maxpool", format!("input must be HxWxC or NxHxWxC, got {shape:?}"))),
    };
    if window == 0 {
        return Err(Error::InvalidArgument("pool window must be positive".into()));
    }
    if h % window != 0 || w % window != 0 {
        return Err(Error::shape("maxpool", format!("spatial size {h}x{w} not divisible by window {window}")));
    }
    Ok((n, h, w, c, batched))
}

pub fn maxpool_with_indices<T: Real>(input: &Tensor<T>, window: usize) -> Result<MaxPoolOutput<T>> {
    let (n, h, w, c, batched) = dims(input.shape(), window)?;
    let (oh, ow) = (h / window, w / window);
    let x = input.data();
    let mut out = Vec::with_capacity(n * oh * ow * c);
    let mut argmax = Vec::with_capacity(n * oh * ow * c);
    for s in 0..n {
        let base = s * h * w * c;
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best = base + ((oy * window) * w + ox * window) * c + ch;
                    for dy in 0..window {
                        for dx in 0..window {
                            let idx = base + ((oy * window + dy) * w + ox * window + dx) * c + ch;
                            if x[idx] > x[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
    }
    let shape = if batched { vec![n, oh, ow, c] } else { vec![oh, ow, c] };
    Ok(MaxPoolOutput { output: Tensor::from_vec(&shape, out)?, argmax })
}

pub fn maxpool<T: Real>(input: &Tensor<T>, window: usize) -> Result<Tensor<T>> {
    Ok(maxpool_with_indices(input, window)?.output)
}

pub fn maxpool2x2<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    maxpool(input, 2)
}

/// Routes `output_grad` to the recorded argmax positions of an input with `input_shape`.
pub fn maxpool_backward_from_indices<T: Real>(
    input_shape: &[usize],
    argmax: &[usize],
    output_grad: &Tensor<T>,
) -> Result<Tensor<T>> {
    if argmax.len() != output_grad.len() {
        return Err(Error::shape(
            "maxpool_backward",
            format!("{} argmax entries for output grad of {} values", argmax.len(), output_grad.len()),
        ));
    }
    let mut grad = Tensor::zeros(input_shape);
    for (&idx, &g) in argmax.iter().zip(output_grad.data()) {
        grad[idx] = grad[idx] + g;
    }
    Ok(grad)
}

pub fn maxpool_backward<T: Real>(input: &Tensor<T>, output_grad: &Tensor<T>, window: usize) -> Result<Tensor<T>> {
    let fwd = maxpool_with_indices(input, window)?;
    if fwd.output.shape() != output_grad.shape() {
        return Err(Error::shape(
            "maxpool_backward",
            format!("output grad {:?}, expected {:?}", output_grad.shape(), fwd.output.shape()),
        ));
    }
    maxpool_backward_from_indices(input.shape(), &fwd.argmax, output_grad)
}

pub fn maxpool2x2_backward<T: Real>(input: &Tensor<T>, output_grad: &Tensor<T>) -> Result<Tensor<T>> {
    maxpool_backward(input, output_grad, 2)
}
