//! Minimal 3-vector and segment geometry.

use std::ops::{Add, AddAssign, Div, Index, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

use crate::num::Real;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vector3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Vector3<T> {
    pub const fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn e1() -> Self {
        Self::new(T::one(), T::zero(), T::zero())
    }

    pub fn from_array(a: [T; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    #[inline]
    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn norm_sq(self) -> T {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> T {
        self.norm_sq().sqrt()
    }

    /// Squared norm of the components orthogonal to `e1`.
    #[inline]
    pub fn transverse_sq(self) -> T {
        self.y * self.y + self.z * self.z
    }

    /// Unit vector `(cos θ, sin θ cos φ, sin θ sin φ)`.
    pub fn from_angles(theta: T, azimuth: T) -> Self {
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = azimuth.sin_cos();
        Self::new(ct, st * cp, st * sp)
    }
}

impl<T: Real> Add for Vector3<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Real> AddAssign for Vector3<T> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Real> Sub for Vector3<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Real> SubAssign for Vector3<T> {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl<T: Real> Mul<T> for Vector3<T> {
    type Output = Self;
    #[inline]
    fn mul(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}

impl<T: Real> Div<T> for Vector3<T> {
    type Output = Self;
    #[inline]
    fn div(self, s: T) -> Self {
        Self::new(self.x / s, self.y / s, self.z / s)
    }
}

impl<T: Real> Neg for Vector3<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

impl<T> Index<usize> for Vector3<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vector3 index {i} out of range"),
        }
    }
}

/// Squared distance from `p` to the closed segment `[a, b]`.
pub fn point_segment_dist_sq<T: Real>(p: Vector3<T>, a: Vector3<T>, b: Vector3<T>) -> T {
    let ab = b - a;
    let len_sq = ab.norm_sq();
    if len_sq == T::zero() {
        return (p - a).norm_sq();
    }
    let s = ((p - a).dot(ab) / len_sq).max(T::zero()).min(T::one());
    (p - (a + ab * s)).norm_sq()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_distance() {
        let a = Vector3::<f64>::zero();
        let b = Vector3::new(2.0, 0.0, 0.0);
        assert_eq!(point_segment_dist_sq(Vector3::new(1.0, 1.0, 0.0), a, b), 1.0);
        assert_eq!(point_segment_dist_sq(Vector3::new(-1.0, 0.0, 0.0), a, b), 1.0);
        assert_eq!(point_segment_dist_sq(Vector3::new(3.0, 0.0, 2.0), a, b), 5.0);
        assert_eq!(point_segment_dist_sq(Vector3::new(3.0, 0.0, 0.0), a, a), 9.0);
    }

    #[test]
    fn angles_are_unit() {
        let n = Vector3::<f64>::from_angles(0.3, 1.7);
        assert!((n.norm() - 1.0).abs() < 1e-15);
        let n = Vector3::<f64>::from_angles(std::f64::consts::FRAC_PI_2, 0.0);
        assert!(n.x.abs() < 1e-15 && (n.y - 1.0).abs() < 1e-15 && n.z == 0.0);
    }
}
