//! Scalar abstraction shared by every numeric routine in the crate.
//!
//! All trainable models are generic over [`Scalar`], which is implemented for
//! `f32` and `f64`. Gradient checking is only meaningful at 64-bit precision.

use std::fmt::{Debug, Display};
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// floating point: f32 or f64
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Debug
    + Display
    + Default
    + FromStr
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` constant into this scalar type.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant representable")
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Numerically stable `ln σ(x)`.
pub fn log_sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn relu<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

#[inline]
pub fn leaky_relu<T: Scalar>(x: T, slope: T) -> T {
    if x > T::zero() {
        x
    } else {
        slope * x
    }
}

#[inline]
pub fn leaky_relu_grad<T: Scalar>(x: T, slope: T) -> T {
    if x > T::zero() {
        T::one()
    } else {
        slope
    }
}

/// Max-shifted softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits
        .iter()
        .copied()
        .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
    let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum = exps.iter().copied().fold(T::zero(), |a, b| a + b);
    exps.into_iter().map(|e| e / sum).collect()
}

/// Backward pass of softmax: given probabilities and upstream gradient,
/// returns the gradient with respect to the logits.
pub fn softmax_backward<T: Scalar>(probs: &[T], upstream: &[T]) -> Vec<T> {
    let inner = probs
        .iter()
        .zip(upstream)
        .fold(T::zero(), |acc, (&p, &g)| acc + p * g);
    probs
        .iter()
        .zip(upstream)
        .map(|(&p, &g)| p * (g - inner))
        .collect()
}

/// Shortest decimal that parses back to the same value.
pub fn fmt_scalar<T: Scalar>(x: T) -> String {
    format!("{x}")
}

pub fn parse_scalar<T: Scalar>(s: &str) -> Option<T> {
    s.trim().parse::<T>().ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sigmoid_matches_naive_in_safe_range() {
        for &x in &[-20.0f64, -3.0, -0.5, 0.0, 0.25, 4.0, 30.0] {
            let naive = (1.0 / (1.0 + (-x).exp())).ln();
            assert!((log_sigmoid(x) - naive).abs() < 1e-12, "x={x}");
        }
        assert!(log_sigmoid(-800.0f64).is_finite());
    }

    #[test]
    fn softmax_sums_to_one_and_backward_matches_fd() {
        let logits = [0.3f64, -1.2, 2.0, 0.0];
        let p = softmax(&logits);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let up = [0.7, -0.1, 0.4, 1.3];
        let g = softmax_backward(&p, &up);
        let eps = 1e-6;
        for i in 0..4 {
            let mut a = logits;
            let mut b = logits;
            a[i] += eps;
            b[i] -= eps;
            let fa: f64 = softmax(&a).iter().zip(&up).map(|(x, y)| x * y).sum();
            let fb: f64 = softmax(&b).iter().zip(&up).map(|(x, y)| x * y).sum();
            assert!(((fa - fb) / (2.0 * eps) - g[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn scalar_text_roundtrip() {
        for &x in &[0.1f64, 1.0 / 3.0, -2.5e-17, 123456.789] {
            assert_eq!(parse_scalar::<f64>(&fmt_scalar(x)), Some(x));
        }
        let y = 0.1f32 / 3.0;
        assert_eq!(parse_scalar::<f32>(&fmt_scalar(y)), Some(y));
    }
}
