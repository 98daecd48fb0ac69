//! Anscombe variance-stabilizing transform and its exact unbiased inverse.

use crate::error::{Error, Result};
use crate::grid::ImageGrid;

/// `2√(3/8)`, the image of zero counts.
pub fn anscombe_of_zero() -> f64 {
    2.0 * (3.0f64 / 8.0).sqrt()
}

#[inline]
pub fn anscombe_value(y: f64) -> f64 {
    2.0 * (y + 0.375).sqrt()
}

/// Closed-form approximation of the exact unbiased inverse, before clamping.
#[inline]
pub fn exact_unbiased_inverse_value(z: f64) -> f64 {
    let s = 1.5f64.sqrt();
    let zi = 1.0 / z;
    0.25 * z * z - 0.125 + 0.25 * s * zi - 1.375 * zi * zi + 0.625 * s * zi * zi * zi
}

/// Derivative of [`exact_unbiased_inverse_value`] with respect to `z`.
#[inline]
pub fn exact_unbiased_inverse_derivative(z: f64) -> f64 {
    let s = 1.5f64.sqrt();
    let zi = 1.0 / z;
    0.5 * z - 0.25 * s * zi * zi + 2.75 * zi * zi * zi - 1.875 * s * zi * zi * zi * zi
}

/// Exact unbiased inverse with the Anscombe range enforced: zero at or below
/// the image of zero counts, where the closed form stops being monotone.
#[inline]
pub fn inverse_clamped_value(z: f64) -> f64 {
    if z <= anscombe_of_zero() {
        0.0
    } else {
        exact_unbiased_inverse_value(z).max(0.0)
    }
}

/// Derivative of [`inverse_clamped_value`]; zero where either clamp is active.
#[inline]
pub fn inverse_clamped_derivative(z: f64) -> f64 {
    if z <= anscombe_of_zero() || exact_unbiased_inverse_value(z) <= 0.0 {
        0.0
    } else {
        exact_unbiased_inverse_derivative(z)
    }
}

/// Naive inverse `(z/2)² − 3/8`, biased at low counts.
#[inline]
pub fn algebraic_inverse_value(z: f64) -> f64 {
    0.25 * z * z - 0.375
}

/// Element-wise `y ↦ 2√(y + 3/8)`.
pub fn anscombe(y: &ImageGrid) -> Result<ImageGrid> {
    if let Some(i) = y.as_slice().iter().position(|&v| v < -0.375) {
        return Err(Error::invalid(format!(
            "anscombe input {} below -3/8 at ({}, {})",
            y.as_slice()[i],
            i / y.width(),
            i % y.width()
        )));
    }
    Ok(y.map(anscombe_value))
}

/// Element-wise exact unbiased inverse, clamped below at zero.
/// Inputs in `(0, 2√(3/8)]` map to zero.
pub fn exact_unbiased_inverse(z: &ImageGrid) -> Result<ImageGrid> {
    if let Some(i) = z.as_slice().iter().position(|&v| !(v > 0.0)) {
        return Err(Error::invalid(format!(
            "inverse anscombe input {} not positive at ({}, {})",
            z.as_slice()[i],
            i / z.width(),
            i % z.width()
        )));
    }
    Ok(z.map(inverse_clamped_value))
}

/// Vector-Jacobian product of [`exact_unbiased_inverse`]; zero where the clamp is active.
pub fn exact_unbiased_inverse_vjp(z: &ImageGrid, upstream: &ImageGrid) -> Result<ImageGrid> {
    z.check_same(upstream)?;
    Ok(ImageGrid::from_raw(
        z.height(),
        z.width(),
        z.as_slice()
            .iter()
            .zip(upstream.as_slice())
            .map(|(&v, &q)| q * inverse_clamped_derivative(v))
            .collect(),
    ))
}
