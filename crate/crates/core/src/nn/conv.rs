//! 2-D convolution over channel-last images via im2col + GEMM.
//!
//! Inputs are `H x W x C` or batched `N x H x W x C`; kernels are `KH x KW x C x D`.
//! Stride is always 1.

use crate::error::{Error, Result};
use crate::nn::LayerGradients;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding that keeps the spatial size (odd kernels only).
    Same,
    /// No padding; each spatial dim shrinks by `kernel - 1`.
    Valid,
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    kh: usize,
    kw: usize,
    d: usize,
    pad_y: usize,
    pad_x: usize,
    out_h: usize,
    out_w: usize,
    batched: bool,
}

impl Geometry {
    fn new<T: Real>(input: &Tensor<T>, kernels: &Tensor<T>, padding: Padding) -> Result<Self> {
        let (n, h, w, c, batched) = match *input.shape() {
            [h, w, c] => (1, h, w, c, false),
            [n, h, w, c] => (n, h, w, c, true),
            ref s => return Err(Error::shape("conv2d", format!("input must be HxWxC or NxHxWxC, got {s:?}"))),
        };
        let [kh, kw, kc, d] = *kernels.shape() else {
            return Err(Error::shape("conv2d", format!("kernels must be KHxKWxCxD, got {:?}", kernels.shape())));
        };
        if kc != c {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "input has {c} channels but kernels expect {kc} (input {:?}, kernels {:?})",
                    input.shape(),
                    kernels.shape()
                ),
            ));
        }
        let (pad_y, pad_x, out_h, out_w) = match padding {
            Padding::Same => {
                if kh % 2 == 0 || kw % 2 == 0 {
                    return Err(Error::shape("conv2d", format!("same padding needs odd kernel, got {kh}x{kw}")));
                }
                ((kh - 1) / 2, (kw - 1) / 2, h, w)
            }
            Padding::Valid => {
                if h < kh || w < kw {
                    return Err(Error::shape(
                        "conv2d",
                        format!("valid padding: input {h}x{w} smaller than kernel {kh}x{kw}"),
                    ));
                }
                (0, 0, h - kh + 1, w - kw + 1)
            }
        };
        Ok(Self { n, h, w, c, kh, kw, d, pad_y, pad_x, out_h, out_w, batched })
    }

    fn patch_len(&self) -> usize {
        self.kh * self.kw * self.c
    }

    fn out_pixels(&self) -> usize {
        self.out_h * self.out_w
    }

    fn output_shape(&self) -> Vec<usize> {
        if self.batched {
            vec![self.n, self.out_h, self.out_w, self.d]
        } else {
            vec![self.out_h, self.out_w, self.d]
        }
    }

    /// Unfolds one image into an `(out_h*out_w) x (kh*kw*c)` matrix.
    fn im2col<T: Real>(&self, image: &[T], col: &mut [T]) {
        let k = self.patch_len();
        for oy in 0..self.out_h {
            for ox in 0..self.out_w {
                let row = &mut col[(oy * self.out_w + ox) * k..][..k];
                for ky in 0..self.kh {
                    let iy = (oy + ky) as isize - self.pad_y as isize;
                    for kx in 0..self.kw {
                        let ix = (ox + kx) as isize - self.pad_x as isize;
                        let dst = &mut row[(ky * self.kw + kx) * self.c..][..self.c];
                        if iy < 0 || ix < 0 || iy >= self.h as isize || ix >= self.w as isize {
                            dst.fill(T::zero());
                        } else {
                            let src = (iy as usize * self.w + ix as usize) * self.c;
                            dst.copy_from_slice(&image[src..src + self.c]);
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds an unfolded gradient back onto image positions.
    fn col2im<T: Real>(&self, col: &[T], image_grad: &mut [T]) {
        let k = self.patch_len();
        for oy in 0..self.out_h {
            for ox in 0..self.out_w {
                let row = &col[(oy * self.out_w + ox) * k..][..k];
                for ky in 0..self.kh {
                    let iy = (oy + ky) as isize - self.pad_y as isize;
                    if iy < 0 || iy >= self.h as isize {
                        continue;
                    }
                    for kx in 0..self.kw {
                        let ix = (ox + kx) as isize - self.pad_x as isize;
                        if ix < 0 || ix >= self.w as isize {
                            continue;
                        }
                        let src = &row[(ky * self.kw + kx) * self.c..][..self.c];
                        let dst = (iy as usize * self.w + ix as usize) * self.c;
                        for (g, &v) in image_grad[dst..dst + self.c].iter_mut().zip(src) {
                            *g = *g + v;
                        }
                    }
                }
            }
        }
    }
}

fn check_bias<T: Real>(bias: Option<&Tensor<T>>, d: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.shape() != [d] {
            return Err(Error::shape("conv2d", format!("bias must be [{d}], got {:?}", b.shape())));
        }
    }
    Ok(())
}

/// Convolves `input` with `kernels`, adding an optional per-output-channel `bias`.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    padding: Padding,
) -> Result<Tensor<T>> {
    let g = Geometry::new(input, kernels, padding)?;
    check_bias(bias, g.d)?;
    let in_len = g.h * g.w * g.c;
    let out_len = g.out_pixels() * g.d;
    let mut out = vec![T::zero(); g.n * out_len];
    let mut col = vec![T::zero(); g.out_pixels() * g.patch_len()];
    for s in 0..g.n {
        g.im2col(&input.data()[s * in_len..][..in_len], &mut col);
        let dst = &mut out[s * out_len..][..out_len];
        if let Some(b) = bias {
            for px in dst.chunks_exact_mut(g.d) {
                px.copy_from_slice(b.data());
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        T::gemm(g.out_pixels(), g.patch_len(), g.d, T::one(), &col, false, kernels.data(), false, beta, dst);
    }
    Tensor::from_vec(&g.output_shape(), out)
}

/// Gradients of a scalar loss w.r.t. the input, `kernels` and bias of [`conv2d`].
///
/// The returned map holds `"kernels"` and `"bias"`.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    output_grad: &Tensor<T>,
    padding: Padding,
) -> Result<LayerGradients<T>> {
    let g = Geometry::new(input, kernels, padding)?;
    if output_grad.shape() != g.output_shape().as_slice() {
        return Err(Error::shape(
            "conv2d_backward",
            format!("output grad {:?}, expected {:?}", output_grad.shape(), g.output_shape()),
        ));
    }
    let in_len = g.h * g.w * g.c;
    let out_len = g.out_pixels() * g.d;
    let k = g.patch_len();
    let mut input_grad = vec![T::zero(); g.n * in_len];
    let mut kernel_grad = vec![T::zero(); k * g.d];
    let mut bias_grad = vec![T::zero(); g.d];
    let mut col = vec![T::zero(); g.out_pixels() * k];
    let mut dcol = vec![T::zero(); g.out_pixels() * k];
    for s in 0..g.n {
        let og = &output_grad.data()[s * out_len..][..out_len];
        for px in og.chunks_exact(g.d) {
            for (b, &v) in bias_grad.iter_mut().zip(px) {
                *b = *b + v;
            }
        }
        g.im2col(&input.data()[s * in_len..][..in_len], &mut col);
        // dK (k x d) += col^T (k x P) * og (P x d)
        T::gemm(k, g.out_pixels(), g.d, T::one(), &col, true, og, false, T::one(), &mut kernel_grad);
        // dcol (P x k) = og (P x d) * K^T (d x k)
        T::gemm(g.out_pixels(), g.d, k, T::one(), og, false, kernels.data(), true, T::zero(), &mut dcol);
        g.col2im(&dcol, &mut input_grad[s * in_len..][..in_len]);
    }
    let mut grads = LayerGradients::new(Tensor::from_vec(input.shape(), input_grad)?);
    grads.insert("kernels", Tensor::from_vec(kernels.shape(), kernel_grad)?);
    grads.insert("bias", Tensor::from_vec(&[g.d], bias_grad)?);
    Ok(grads)
}
