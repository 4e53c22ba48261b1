//! Soft Dice loss.
//!
//! ```text
//! loss = 1 - (2 * sum(p * t) + eps) / (sum(p) + sum(t) + eps)
//! ```
//!
//! The smoothing term makes the loss 0 when both operands are empty.

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

pub const DICE_SMOOTHING: f64 = 1e-6;

struct DiceTerms<T> {
    intersection: T,
    total: T,
    eps: T,
}

fn terms<T: Scalar>(pred: &Tensor4<T>, target: &Tensor4<T>) -> Result<DiceTerms<T>> {
    target.expect_shape(pred.shape())?;
    let mut intersection = T::zero();
    let mut total = T::zero();
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        intersection += p * t;
        total += p + t;
    }
    Ok(DiceTerms {
        intersection,
        total,
        eps: T::lit(DICE_SMOOTHING),
    })
}

pub fn dice_loss<T: Scalar>(pred: &Tensor4<T>, target: &Tensor4<T>) -> Result<T> {
    let d = terms(pred, target)?;
    let two = T::lit(2.0);
    Ok(T::one() - (two * d.intersection + d.eps) / (d.total + d.eps))
}

/// Loss value and its gradient with respect to `pred`.
pub fn dice_loss_with_grad<T: Scalar>(pred: &Tensor4<T>, target: &Tensor4<T>) -> Result<(T, Tensor4<T>)> {
    let d = terms(pred, target)?;
    let two = T::lit(2.0);
    let num = two * d.intersection + d.eps;
    let den = d.total + d.eps;
    let den2 = den * den;
    let mut grad = Tensor4::zeros(pred.shape());
    for (g, &t) in grad.data_mut().iter_mut().zip(target.data()) {
        *g = (num - two * t * den) / den2;
    }
    Ok((T::one() - num / den, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape4;

    fn s() -> Shape4 {
        Shape4::new(1, 1, 4, 4)
    }

    #[test]
    fn perfect_overlap_is_zero() {
        let t = Tensor4::full(s(), 1.0f64);
        assert_eq!(dice_loss(&t, &t).unwrap(), 0.0);
    }

    #[test]
    fn disjoint_is_one_within_eps() {
        let p = Tensor4::full(s(), 0.0f64);
        let t = Tensor4::full(s(), 1.0f64);
        assert!((dice_loss(&p, &t).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn half_prediction_against_full_target() {
        let p = Tensor4::full(s(), 0.5f64);
        let t = Tensor4::full(s(), 1.0f64);
        assert!((dice_loss(&p, &t).unwrap() - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn both_empty_is_zero() {
        let z = Tensor4::full(s(), 0.0f64);
        assert_eq!(dice_loss(&z, &z).unwrap(), 0.0);
    }

    #[test]
    fn grad_value_matches_plain_loss() {
        let p = Tensor4::from_fn(s(), |_, _, y, x| ((y * 4 + x) as f64 + 0.5) / 16.0);
        let t = Tensor4::from_fn(s(), |_, _, y, _| if y < 2 { 1.0 } else { 0.0 });
        let (l, _) = dice_loss_with_grad(&p, &t).unwrap();
        assert_eq!(l, dice_loss(&p, &t).unwrap());
    }
}
