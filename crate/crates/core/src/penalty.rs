//! One-sided smooth penalty `beta_delta` and its derivative.
//!
//! ```text
//! beta_delta(r)  = (1/delta) * {  0          r >= 0
//!                                 -r^2       -1/2 <= r <= 0
//!                                 r + 1/4    r <= -1/2 }
//! beta'_delta(r) = (1/delta) * {  0  |  -2r  |  1 }
//! ```
//!
//! Both functions are continuous across the seams at `r = 0` and
//! `r = -1/2`, so the branch chosen exactly at a seam does not affect the
//! value.

use crate::error::{invalid, Result};
use crate::grid::Field;
use crate::scalar::Real;

/// Validated penalty parameter `delta > 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PenaltyParams<T> {
    delta: T,
}

impl<T: Real> PenaltyParams<T> {
    pub fn new(delta: T) -> Result<Self> {
        if delta.is_finite() && delta > T::zero() {
            Ok(Self { delta })
        } else {
            Err(invalid("delta", format!("must be positive and finite, got {delta}")))
        }
    }

    pub fn delta(&self) -> T {
        self.delta
    }

    #[inline]
    pub fn value(&self, r: T) -> T {
        beta_unchecked(r, self.delta)
    }

    #[inline]
    pub fn derivative(&self, r: T) -> T {
        beta_prime_unchecked(r, self.delta)
    }

    /// `beta_delta(y - phi)` nodewise.
    pub fn apply(&self, y: &Field<T>, phi: &Field<T>) -> Result<Field<T>> {
        y.zip_map(phi, |a, b| self.value(a - b))
    }

    /// `beta'_delta(y - phi)` nodewise.
    pub fn apply_derivative(&self, y: &Field<T>, phi: &Field<T>) -> Result<Field<T>> {
        y.zip_map(phi, |a, b| self.derivative(a - b))
    }
}

pub fn beta<T: Real>(r: T, delta: T) -> Result<T> {
    Ok(PenaltyParams::new(delta)?.value(r))
}

pub fn beta_prime<T: Real>(r: T, delta: T) -> Result<T> {
    Ok(PenaltyParams::new(delta)?.derivative(r))
}

#[inline]
fn beta_unchecked<T: Real>(r: T, delta: T) -> T {
    let half = T::lit(0.5);
    if r >= T::zero() {
        T::zero()
    } else if r >= -half {
        -(r * r) / delta
    } else {
        (r + T::lit(0.25)) / delta
    }
}

#[inline]
fn beta_prime_unchecked<T: Real>(r: T, delta: T) -> T {
    let half = T::lit(0.5);
    if r >= T::zero() {
        T::zero()
    } else if r >= -half {
        -(r + r) / delta
    } else {
        T::one() / delta
    }
}
