//! Scalar abstraction shared by the numerical kernels.
//!
//! Geometry, quadrature, ODE stepping and the distance estimators are written
//! against [`Real`] so they can run in `f32` for quick sweeps or `f64` for the
//! reference runs. The stochastic simulators are pinned to `f64` (see the
//! aliases at the crate root).

use std::fmt::Debug;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point scalar: `f32` or `f64`.
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Default + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// `(3 / 4π)^{1/3}`: radius of a sphere of unit volume.
pub fn sigma<T: Real>() -> T {
    (T::lit(3.0) / (T::lit(4.0) * T::PI())).cbrt()
}

/// Radius of a sphere of volume `v`.
#[inline]
pub fn radius_of_volume<T: Real>(v: T) -> T {
    sigma::<T>() * v.cbrt()
}

/// `π σ²`, the angular integral of the collision kernel times the squared
/// radius prefactor. The marginal equation's rate constant is `U` times this.
pub fn kernel_constant<T: Real>() -> T {
    let s = sigma::<T>();
    T::PI() * s * s
}

/// Relative closeness test used throughout the tests and checks.
pub fn rel_close<T: Real>(a: T, b: T, rtol: T) -> bool {
    let scale = a.abs().max(b.abs()).max(T::min_positive_value());
    (a - b).abs() <= rtol * scale
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigma_is_unit_volume_radius() {
        let s: f64 = sigma();
        assert!((4.0 / 3.0 * std::f64::consts::PI * s.powi(3) - 1.0).abs() < 1e-14);
        let s32: f32 = sigma();
        assert!((s32 as f64 - s).abs() < 1e-6);
    }

    #[test]
    fn kernel_constant_value() {
        let k: f64 = kernel_constant();
        assert!((k - std::f64::consts::PI * (3.0 / (4.0 * std::f64::consts::PI)).powf(2.0 / 3.0)).abs() < 1e-14);
    }
}
