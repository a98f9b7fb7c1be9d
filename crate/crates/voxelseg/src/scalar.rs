//! Scalar abstraction and the handful of activation functions the fields use.

use std::fmt::{Debug, Display};

/// Floating-point scalar for all differentiable math. Everything numeric in
/// the crate is generic over this so the same code path trains in f32 and
/// verifies gradients in f64.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + num_traits::NumAssign
    + std::iter::Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }
    fn to64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// softplus(x) = ln(1 + e^x), computed without overflow for large |x|.
pub fn softplus<S: Scalar>(x: S) -> S {
    if x > S::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// d/dx softplus(x) = sigmoid(x).
pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// Index of the maximal entry, ties broken by lowest index.
pub fn argmax_lowest<S: PartialOrd + Copy>(v: &[S]) -> usize {
    debug_assert!(!v.is_empty());
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// In-place softmax with max subtraction.
pub fn softmax_in_place<S: Scalar>(v: &mut [S]) {
    let m = v.iter().cloned().fold(S::neg_infinity(), S::max);
    let mut sum = S::zero();
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_matches_scalar_oracle() {
        assert!((softplus(0.0f64) - std::f64::consts::LN_2).abs() < 1e-15);
        // Large-argument oracle: ln(1 + e^10) = 10 + ln(1 + e^-10).
        assert!((softplus(10.0f64) - 10.000045398899218).abs() < 1e-12);
        assert_eq!(softplus(-800.0f64), 0.0);
        assert!((softplus(800.0f64) - 800.0).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_is_softplus_derivative() {
        for &x in &[-3.0f64, -0.5, 0.0, 0.7, 4.0] {
            let h = 1e-6;
            let fd = (softplus(x + h) - softplus(x - h)) / (2.0 * h);
            assert!((sigmoid(x) - fd).abs() < 1e-9);
        }
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax_lowest(&[0.2, 0.7, 0.1]), 1);
        assert_eq!(argmax_lowest(&[0.5, 0.5]), 0);
        assert_eq!(argmax_lowest(&[1.0, 2.0, 2.0, 1.0]), 1);
    }

    #[test]
    fn softmax_normalizes() {
        let mut v = [2.0f64, -1.0, 0.5, 2.0];
        softmax_in_place(&mut v);
        let s: f64 = v.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(v.iter().all(|&p| p > 0.0));
        assert_eq!(v[0], v[3]);
    }
}
