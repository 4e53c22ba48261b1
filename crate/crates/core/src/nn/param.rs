use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

/// A named trainable array.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub dims: Vec<usize>,
    pub value: Vec<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, value: Vec<T>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), value.len());
        Self {
            name: name.into(),
            dims,
            value,
        }
    }

    pub fn zeros(name: impl Into<String>, dims: Vec<usize>) -> Self {
        let len = dims.iter().product();
        Self::new(name, dims, vec![T::zero(); len])
    }

    /// Normal init with std `sqrt(2 / fan_in)`.
    pub fn he_normal<R: Rng + ?Sized>(name: impl Into<String>, dims: Vec<usize>, fan_in: usize, rng: &mut R) -> Self {
        let std = (2.0 / fan_in.max(1) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let len = dims.iter().product();
        let value = (0..len).map(|_| T::lit(normal.sample(rng))).collect();
        Self::new(name, dims, value)
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    /// View a rank-4 parameter as a tensor (copies).
    pub fn as_tensor(&self) -> Tensor4<T> {
        let d = &self.dims;
        assert_eq!(d.len(), 4, "`{}` is not rank 4", self.name);
        Tensor4::from_vec(Shape4::new(d[0], d[1], d[2], d[3]), self.value.clone())
            .expect("param dims match value count")
    }
}
