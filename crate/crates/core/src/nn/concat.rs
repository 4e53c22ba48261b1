use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

/// Channel concatenation, `a`'s channels first.
pub fn concat_channels<T: Scalar>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if (sa.n, sa.h, sa.w) != (sb.n, sb.h, sb.w) {
        return Err(shape_err(format!("cannot concatenate {sa} with {sb}")));
    }
    let shape = Shape4::new(sa.n, sa.c + sb.c, sa.h, sa.w);
    let mut data = Vec::with_capacity(shape.len());
    for n in 0..sa.n {
        data.extend_from_slice(a.sample(n));
        data.extend_from_slice(b.sample(n));
    }
    Tensor4::from_vec(shape, data)
}

/// Gradient pass of [`concat_channels`]: split back into the two operands.
pub fn split_channels<T: Scalar>(grad: &Tensor4<T>, a_channels: usize) -> Result<(Tensor4<T>, Tensor4<T>)> {
    let s = grad.shape();
    if a_channels > s.c {
        return Err(shape_err(format!("cannot split {a_channels} channels from {s}")));
    }
    let sa = Shape4::new(s.n, a_channels, s.h, s.w);
    let sb = Shape4::new(s.n, s.c - a_channels, s.h, s.w);
    let mut da = Vec::with_capacity(sa.len());
    let mut db = Vec::with_capacity(sb.len());
    for n in 0..s.n {
        let (x, y) = grad.sample(n).split_at(sa.sample());
        da.extend_from_slice(x);
        db.extend_from_slice(y);
    }
    Ok((Tensor4::from_vec(sa, da)?, Tensor4::from_vec(sb, db)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_arithmetic_and_order() {
        let a = Tensor4::from_fn(Shape4::new(2, 2, 4, 4), |n, c, y, x| (n * 100 + c * 10 + y + x) as f32);
        let b = Tensor4::full(Shape4::new(2, 3, 4, 4), -1.0f32);
        let out = concat_channels(&a, &b).unwrap();
        assert_eq!(out.shape(), Shape4::new(2, 5, 4, 4));
        assert_eq!(out.plane(1, 0), a.plane(1, 0));
        assert_eq!(out.plane(1, 1), a.plane(1, 1));
        assert_eq!(out.plane(1, 2), b.plane(1, 0));
    }

    #[test]
    fn split_recovers_operands_exactly() {
        let a = Tensor4::from_fn(Shape4::new(2, 2, 3, 3), |n, c, y, x| (n + c * 3 + y * 5 + x * 7) as f64);
        let b = Tensor4::from_fn(Shape4::new(2, 1, 3, 3), |n, _, y, x| -((n + y + x) as f64));
        let (da, db) = split_channels(&concat_channels(&a, &b).unwrap(), 2).unwrap();
        assert_eq!(da, a);
        assert_eq!(db, b);
    }

    #[test]
    fn spatial_mismatch_rejected() {
        let a = Tensor4::<f32>::zeros(Shape4::new(1, 1, 4, 4));
        let b = Tensor4::<f32>::zeros(Shape4::new(1, 1, 4, 2));
        assert!(concat_channels(&a, &b).is_err());
    }
}
