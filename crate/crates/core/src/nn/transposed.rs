//! Transposed convolution with kernel size equal to stride (non-overlapping
//! upsampling). The U-Net uses the 2x2 / stride-2 case.

use crate::error::{shape_err, Result};
use crate::nn::conv::ConvGrads;
use crate::nn::gemm::{gemm, Mat};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

fn check(input: Shape4, weight: Shape4, bias_len: usize) -> Result<(usize, Shape4)> {
    if weight.h != weight.w || weight.h == 0 {
        return Err(shape_err(format!("transposed conv needs a square kernel, got {weight}")));
    }
    if weight.n != input.c {
        return Err(shape_err(format!(
            "transposed conv weight {weight} expects {} input channels, input is {input}",
            weight.n
        )));
    }
    if bias_len != weight.c {
        return Err(shape_err(format!(
            "bias has {bias_len} entries for {} output channels",
            weight.c
        )));
    }
    let k = weight.h;
    Ok((k, Shape4::new(input.n, weight.c, input.h * k, input.w * k)))
}

/// Upsample by `k` with a `k x k` kernel and stride `k`.
///
/// `weight` is laid out (in_c, out_c, k, k), i.e. the same layout as the
/// forward convolution it is the adjoint of.
pub fn transposed_conv2d<T: Scalar>(input: &Tensor4<T>, weight: &Tensor4<T>, bias: &[T]) -> Result<Tensor4<T>> {
    let (k, out_shape) = check(input.shape(), weight.shape(), bias.len())?;
    let sh = input.shape();
    let (ic, oc, hw) = (sh.c, weight.shape().c, sh.plane());
    let kk = k * k;
    let wm = Mat::row_major(weight.data(), ic, oc * kk);
    let mut cols = vec![T::zero(); oc * kk * hw];
    let mut out = Tensor4::zeros(out_shape);
    let ow = out_shape.w;
    for n in 0..sh.n {
        // (oc*kk x hw) = W^T (oc*kk x ic) * X (ic x hw)
        gemm(T::one(), wm.t(), Mat::row_major(input.sample(n), ic, hw), T::zero(), &mut cols);
        for o in 0..oc {
            let plane = out.plane_mut(n, o);
            for dy in 0..k {
                for dx in 0..k {
                    let src = &cols[(o * kk + dy * k + dx) * hw..][..hw];
                    for y in 0..sh.h {
                        let row = &mut plane[(y * k + dy) * ow..][..ow];
                        for x in 0..sh.w {
                            row[x * k + dx] = src[y * sh.w + x] + bias[o];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradient pass of [`transposed_conv2d`].
pub fn transposed_conv2d_backward<T: Scalar>(
    input: &Tensor4<T>,
    weight: &Tensor4<T>,
    grad_out: &Tensor4<T>,
) -> Result<ConvGrads<T>> {
    let (k, out_shape) = check(input.shape(), weight.shape(), weight.shape().c)?;
    grad_out.expect_shape(out_shape)?;
    let sh = input.shape();
    let (ic, oc, hw) = (sh.c, weight.shape().c, sh.plane());
    let kk = k * k;
    let wm = Mat::row_major(weight.data(), ic, oc * kk);
    let mut grad_input = Tensor4::zeros(sh);
    let mut grad_weight = Tensor4::zeros(weight.shape());
    let mut grad_bias = vec![T::zero(); oc];
    let mut dcols = vec![T::zero(); oc * kk * hw];
    let ow = out_shape.w;
    for n in 0..sh.n {
        for o in 0..oc {
            let plane = grad_out.plane(n, o);
            grad_bias[o] += plane.iter().copied().sum::<T>();
            for dy in 0..k {
                for dx in 0..k {
                    let dst = &mut dcols[(o * kk + dy * k + dx) * hw..][..hw];
                    for y in 0..sh.h {
                        let row = &plane[(y * k + dy) * ow..][..ow];
                        for x in 0..sh.w {
                            dst[y * sh.w + x] = row[x * k + dx];
                        }
                    }
                }
            }
        }
        let d = Mat::row_major(&dcols, oc * kk, hw);
        let in_sample = sh.sample();
        let gx = &mut grad_input.data_mut()[n * in_sample..(n + 1) * in_sample];
        gemm(T::one(), wm, d, T::zero(), gx);
        gemm(
            T::one(),
            Mat::row_major(input.sample(n), ic, hw),
            d.t(),
            T::one(),
            grad_weight.data_mut(),
        );
    }
    Ok(ConvGrads {
        input: grad_input,
        weight: grad_weight,
        bias: grad_bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pixel_broadcasts_to_block() {
        let x = Tensor4::from_vec(Shape4::new(1, 1, 1, 1), vec![3.25f64]).unwrap();
        let w = Tensor4::full(Shape4::new(1, 1, 2, 2), 1.0);
        let y = transposed_conv2d(&x, &w, &[0.0]).unwrap();
        assert_eq!(y.shape(), Shape4::new(1, 1, 2, 2));
        assert_eq!(y.data(), &[3.25; 4]);
    }

    #[test]
    fn doubles_spatial_dims_and_sets_channels() {
        let x = Tensor4::<f32>::zeros(Shape4::new(2, 4, 3, 5));
        let w = Tensor4::<f32>::zeros(Shape4::new(4, 2, 2, 2));
        let y = transposed_conv2d(&x, &w, &[0.5, 0.25]).unwrap();
        assert_eq!(y.shape(), Shape4::new(2, 2, 6, 10));
        assert_eq!(y.plane(1, 1)[0], 0.25);
    }

    #[test]
    fn kernel_positions_map_to_block_offsets() {
        let x = Tensor4::from_vec(Shape4::new(1, 1, 1, 2), vec![1.0f64, 10.0]).unwrap();
        let w = Tensor4::from_vec(Shape4::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = transposed_conv2d(&x, &w, &[0.0]).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 10.0, 20.0, 3.0, 4.0, 30.0, 40.0]);
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let x = Tensor4::<f32>::zeros(Shape4::new(1, 3, 2, 2));
        let w = Tensor4::<f32>::zeros(Shape4::new(4, 2, 2, 2));
        assert!(transposed_conv2d(&x, &w, &[0.0; 2]).is_err());
    }
}
