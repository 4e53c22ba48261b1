use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    let one = T::one();
    let s = if x >= T::zero() {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    };
    // keep the map strictly inside (0, 1) even where the scalar saturates
    s.max(T::min_positive_value()).min(one - T::epsilon())
}

impl Activation {
    pub fn forward<T: Scalar>(self, input: &Tensor4<T>) -> Tensor4<T> {
        match self {
            Activation::Relu => input.map(|v| v.max(T::zero())),
            Activation::Sigmoid => input.map(sigmoid),
        }
    }

    /// Gradient pass. ReLU uses its output (`y > 0` iff `x > 0`); sigmoid
    /// uses `y (1 - y)`.
    pub fn backward<T: Scalar>(self, output: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        grad_out.expect_shape(output.shape())?;
        let mut g = grad_out.clone();
        match self {
            Activation::Relu => {
                for (d, &y) in g.data_mut().iter_mut().zip(output.data()) {
                    if y <= T::zero() {
                        *d = T::zero();
                    }
                }
            }
            Activation::Sigmoid => {
                for (d, &y) in g.data_mut().iter_mut().zip(output.data()) {
                    *d = (*d * y * (T::one() - y)).flush_subnormal();
                }
            }
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape4;

    #[test]
    fn relu_and_sigmoid_values() {
        let x = Tensor4::from_vec(Shape4::new(1, 1, 1, 3), vec![-2.0f64, 3.0, 0.0]).unwrap();
        assert_eq!(Activation::Relu.forward(&x).data(), &[0.0, 3.0, 0.0]);
        let s = Activation::Sigmoid.forward(&x);
        assert_eq!(s.data()[2], 0.5);
        assert!((s.data()[1] - 1.0 / (1.0 + (-3.0f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_stays_open_interval_at_extremes() {
        let x = Tensor4::from_vec(Shape4::new(1, 1, 1, 4), vec![-1e4f32, -90.0, 90.0, 1e4]).unwrap();
        for &v in Activation::Sigmoid.forward(&x).data() {
            assert!(v > 0.0 && v < 1.0, "{v}");
        }
    }
}
