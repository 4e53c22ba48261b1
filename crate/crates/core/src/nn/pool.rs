use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

/// Result of a 2x2 max pool: pooled values plus, for every output cell, the
/// flat index of the winning input element.
#[derive(Debug, Clone)]
pub struct Pooled<T> {
    pub output: Tensor4<T>,
    pub argmax: Vec<usize>,
}

/// 2x2 max pooling with stride 2. Ties go to the first element of the
/// window in row-major order.
pub fn maxpool2x2<T: Scalar>(input: &Tensor4<T>) -> Result<Pooled<T>> {
    let sh = input.shape();
    if sh.h % 2 != 0 || sh.w % 2 != 0 {
        return Err(shape_err(format!("max pool needs even spatial dims, got {sh}")));
    }
    let out_shape = Shape4::new(sh.n, sh.c, sh.h / 2, sh.w / 2);
    let mut out = Vec::with_capacity(out_shape.len());
    let mut argmax = Vec::with_capacity(out_shape.len());
    let data = input.data();
    for n in 0..sh.n {
        for c in 0..sh.c {
            let base = (n * sh.c + c) * sh.plane();
            for oy in 0..out_shape.h {
                for ox in 0..out_shape.w {
                    let top = base + 2 * oy * sh.w + 2 * ox;
                    let mut best = top;
                    for cand in [top + 1, top + sh.w, top + sh.w + 1] {
                        if data[cand] > data[best] {
                            best = cand;
                        }
                    }
                    out.push(data[best]);
                    argmax.push(best);
                }
            }
        }
    }
    Ok(Pooled {
        output: Tensor4::from_vec(out_shape, out)?,
        argmax,
    })
}

/// Route the upstream gradient to the argmax positions.
pub fn maxpool2x2_backward<T: Scalar>(input_shape: Shape4, argmax: &[usize], grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    if grad_out.shape().len() != argmax.len() {
        return Err(shape_err("pool gradient does not match recorded argmax"));
    }
    let mut grad = Tensor4::zeros(input_shape);
    let g = grad.data_mut();
    for (&idx, &v) in argmax.iter().zip(grad_out.data()) {
        g[idx] += v;
    }
    Ok(grad)
}
