//! Direct 2D convolution (cross-correlation) and its gradient, via im2col.

use crate::error::{shape_err, Result};
use crate::nn::gemm::{gemm, Mat};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

/// Gradients of a convolution-like layer.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Tensor4<T>,
    pub weight: Tensor4<T>,
    pub bias: Vec<T>,
}

/// Output spatial extent: `floor((size + 2p - k) / s) + 1`.
pub fn conv_out_size(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Below this output plane size the col2im route is cheaper than building
/// the flipped kernel.
const FLIP_MIN_PLANE: usize = 256;

struct Geometry {
    in_shape: Shape4,
    out_c: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn new(input: Shape4, weight: Shape4, bias_len: usize, stride: usize, pad: usize) -> Result<Self> {
        if weight.h != weight.w {
            return Err(shape_err(format!("non-square kernel {weight}")));
        }
        if weight.c != input.c {
            return Err(shape_err(format!(
                "conv weight {weight} expects {} input channels, input is {input}",
                weight.c
            )));
        }
        if bias_len != weight.n {
            return Err(shape_err(format!(
                "bias has {bias_len} entries for {} output channels",
                weight.n
            )));
        }
        let k = weight.h;
        let oh = conv_out_size(input.h, k, stride, pad);
        let ow = conv_out_size(input.w, k, stride, pad);
        match (oh, ow) {
            (Some(oh), Some(ow)) => Ok(Self {
                in_shape: input,
                out_c: weight.n,
                k,
                stride,
                pad,
                oh,
                ow,
            }),
            _ => Err(shape_err(format!(
                "kernel {k} stride {stride} padding {pad} does not fit input {input}"
            ))),
        }
    }

    fn out_shape(&self) -> Shape4 {
        Shape4::new(self.in_shape.n, self.out_c, self.oh, self.ow)
    }

    fn col_rows(&self) -> usize {
        self.in_shape.c * self.k * self.k
    }

    fn col_cols(&self) -> usize {
        self.oh * self.ow
    }

    /// 1x1, stride 1, no padding: the column matrix is the input plane stack.
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    /// Valid output columns `[lo, hi)` for kernel column `kx` (stride 1).
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        let w = self.in_shape.w as isize;
        let off = kx as isize - self.pad as isize;
        let lo = (-off).clamp(0, self.ow as isize) as usize;
        let hi = (w - off).clamp(0, self.ow as isize) as usize;
        (lo, hi.max(lo))
    }

    fn im2col<T: Scalar>(&self, sample: &[T], col: &mut [T]) {
        let (h, w) = (self.in_shape.h as isize, self.in_shape.w as isize);
        let (oh, ow) = (self.oh, self.ow);
        let plane = (h * w) as usize;
        let mut row = 0;
        for c in 0..self.in_shape.c {
            let src = &sample[c * plane..(c + 1) * plane];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let dst = &mut col[row * oh * ow..(row + 1) * oh * ow];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                        if iy < 0 || iy >= h {
                            out_row.fill(T::zero());
                            continue;
                        }
                        let src_row = &src[(iy * w) as usize..((iy + 1) * w) as usize];
                        if self.stride == 1 {
                            let (lo, hi) = self.valid_cols(kx);
                            out_row[..lo].fill(T::zero());
                            out_row[hi..].fill(T::zero());
                            let start = (lo + kx) - self.pad;
                            out_row[lo..hi].copy_from_slice(&src_row[start..start + (hi - lo)]);
                            continue;
                        }
                        for (ox, v) in out_row.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            *v = if ix < 0 || ix >= w {
                                T::zero()
                            } else {
                                src_row[ix as usize]
                            };
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// Stride 1 with `k = 2p + 1`: the input gradient is itself a
    /// convolution of the output gradient with the flipped, transposed kernel.
    fn is_same(&self) -> bool {
        self.stride == 1 && self.k % 2 == 1 && 2 * self.pad + 1 == self.k
    }

    fn col2im_add<T: Scalar>(&self, col: &[T], sample: &mut [T]) {
        let (h, w) = (self.in_shape.h as isize, self.in_shape.w as isize);
        let (oh, ow) = (self.oh, self.ow);
        let plane = (h * w) as usize;
        let mut row = 0;
        for c in 0..self.in_shape.c {
            let dst = &mut sample[c * plane..(c + 1) * plane];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let src = &col[row * oh * ow..(row + 1) * oh * ow];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h {
                            continue;
                        }
                        let dst_row = &mut dst[(iy * w) as usize..((iy + 1) * w) as usize];
                        for (ox, &g) in src[oy * ow..(oy + 1) * ow].iter().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < w {
                                dst_row[ix as usize] += g;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// 2D convolution. `weight` is laid out (out_c, in_c, k, k).
pub fn conv2d<T: Scalar>(
    input: &Tensor4<T>,
    weight: &Tensor4<T>,
    bias: &[T],
    stride: usize,
    padding: usize,
) -> Result<Tensor4<T>> {
    let g = Geometry::new(input.shape(), weight.shape(), bias.len(), stride, padding)?;
    let out_shape = g.out_shape();
    let mut out = Tensor4::zeros(out_shape);
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let w = Mat::row_major(weight.data(), g.out_c, rows);
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); rows * cols]
    };
    for n in 0..out_shape.n {
        let dst = &mut out.data_mut()[n * out_shape.sample()..(n + 1) * out_shape.sample()];
        for (oc, chunk) in dst.chunks_mut(cols).enumerate() {
            chunk.fill(bias[oc]);
        }
        let src = if g.is_pointwise() {
            input.sample(n)
        } else {
            g.im2col(input.sample(n), &mut col);
            &col
        };
        gemm(T::one(), w, Mat::row_major(src, rows, cols), T::one(), dst);
    }
    Ok(out)
}

/// Gradient pass of [`conv2d`] given the upstream gradient.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor4<T>,
    weight: &Tensor4<T>,
    stride: usize,
    padding: usize,
    grad_out: &Tensor4<T>,
) -> Result<ConvGrads<T>> {
    let g = Geometry::new(input.shape(), weight.shape(), weight.shape().n, stride, padding)?;
    grad_out.expect_shape(g.out_shape())?;
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let mut grad_input = Tensor4::zeros(input.shape());
    let mut grad_weight = Tensor4::zeros(weight.shape());
    let mut grad_bias = vec![T::zero(); g.out_c];
    let w = Mat::row_major(weight.data(), g.out_c, rows);
    let mut col = vec![T::zero(); rows * cols];
    let flipped = (g.is_same() && !g.is_pointwise() && cols >= FLIP_MIN_PLANE).then(|| flip_transpose(weight));
    let mut dcol = if flipped.is_some() || g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); rows * cols]
    };
    let out_sample = g.out_shape().sample();
    for n in 0..input.shape().n {
        let dy = &grad_out.data()[n * out_sample..(n + 1) * out_sample];
        for (oc, chunk) in dy.chunks(cols).enumerate() {
            grad_bias[oc] += chunk.iter().copied().sum::<T>();
        }
        let dy = Mat::row_major(dy, g.out_c, cols);
        let in_sample = input.shape().sample();
        let dx = &mut grad_input.data_mut()[n * in_sample..(n + 1) * in_sample];
        if g.is_pointwise() {
            gemm(T::one(), dy, Mat::row_major(input.sample(n), rows, cols).t(), T::one(), grad_weight.data_mut());
            gemm(T::one(), w.t(), dy, T::zero(), dx);
        } else {
            g.im2col(input.sample(n), &mut col);
            gemm(T::one(), dy, Mat::row_major(&col, rows, cols).t(), T::one(), grad_weight.data_mut());
            if let Some(flipped) = &flipped {
                let gsample = Tensor4::from_vec(
                    Shape4::new(1, g.out_c, g.oh, g.ow),
                    grad_out.data()[n * out_sample..(n + 1) * out_sample].to_vec(),
                )?;
                let zero_bias = vec![T::zero(); input.shape().c];
                let back = conv2d(&gsample, flipped, &zero_bias, 1, g.pad)?;
                dx.copy_from_slice(back.data());
            } else {
                gemm(T::one(), w.t(), dy, T::zero(), &mut dcol);
                g.col2im_add(&dcol, dx);
            }
        }
    }
    Ok(ConvGrads {
        input: grad_input,
        weight: grad_weight,
        bias: grad_bias,
    })
}

/// (out, in, k, k) -> (in, out, k, k) with both spatial axes reversed.
fn flip_transpose<T: Scalar>(weight: &Tensor4<T>) -> Tensor4<T> {
    let s = weight.shape();
    Tensor4::from_fn(Shape4::new(s.c, s.n, s.h, s.w), |i, o, y, x| {
        weight.at(o, i, s.h - 1 - y, s.w - 1 - x)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_ones_center_is_nine() {
        let x = Tensor4::<f64>::full(Shape4::new(1, 1, 3, 3), 1.0);
        let k = Tensor4::<f64>::full(Shape4::new(1, 1, 3, 3), 1.0);
        let y = conv2d(&x, &k, &[0.0], 1, 1).unwrap();
        assert_eq!(y.shape(), Shape4::new(1, 1, 3, 3));
        assert_eq!(y.at(0, 0, 1, 1), 9.0);
        assert_eq!(y.at(0, 0, 0, 0), 4.0);
    }

    #[test]
    fn hand_convolution_two_by_two() {
        let x = Tensor4::from_vec(Shape4::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let k = Tensor4::from_vec(Shape4::new(1, 1, 2, 2), vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let y = conv2d(&x, &k, &[0.0f64], 1, 0).unwrap();
        assert_eq!(y.shape(), Shape4::new(1, 1, 1, 1));
        assert_eq!(y.data(), &[5.0]);
    }

    #[test]
    fn output_size_formula() {
        assert_eq!(conv_out_size(8, 3, 1, 1), Some(8));
        assert_eq!(conv_out_size(8, 3, 2, 1), Some(4));
        assert_eq!(conv_out_size(7, 3, 2, 0), Some(3));
        assert_eq!(conv_out_size(2, 3, 1, 0), None);
        let x = Tensor4::<f32>::zeros(Shape4::new(2, 3, 9, 7));
        let k = Tensor4::<f32>::zeros(Shape4::new(4, 3, 3, 3));
        let y = conv2d(&x, &k, &[0.0; 4], 2, 1).unwrap();
        assert_eq!(y.shape(), Shape4::new(2, 4, 5, 4));
    }

    #[test]
    fn channel_and_bias_mismatch_are_errors() {
        let x = Tensor4::<f32>::zeros(Shape4::new(1, 2, 4, 4));
        let k = Tensor4::<f32>::zeros(Shape4::new(1, 3, 3, 3));
        assert!(conv2d(&x, &k, &[0.0], 1, 1).is_err());
        let k = Tensor4::<f32>::zeros(Shape4::new(1, 2, 3, 3));
        assert!(conv2d(&x, &k, &[0.0, 0.0], 1, 1).is_err());
    }

    #[test]
    fn bias_is_added_per_output_channel() {
        let x = Tensor4::<f32>::zeros(Shape4::new(1, 1, 2, 2));
        let k = Tensor4::<f32>::zeros(Shape4::new(2, 1, 1, 1));
        let y = conv2d(&x, &k, &[1.5, -2.0], 1, 0).unwrap();
        assert_eq!(y.plane(0, 0), &[1.5; 4]);
        assert_eq!(y.plane(0, 1), &[-2.0; 4]);
    }
}
