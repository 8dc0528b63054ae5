//! 2D spatial transforms mapping fixed-image physical points (mm) to
//! moving-image physical points.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// A fixed → moving point mapping, expressed as a displacement so that the
/// identity is exactly zero.
pub trait Transform2<T: Real> {
    /// `y - x` for the moving point `y` that fixed point `x` maps to.
    fn displacement(&self, x: [T; 2]) -> [T; 2];

    fn map(&self, x: [T; 2]) -> [T; 2] {
        let d = self.displacement(x);
        [x[0] + d[0], x[1] + d[1]]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Identity;

impl<T: Real> Transform2<T> for Identity {
    fn displacement(&self, _x: [T; 2]) -> [T; 2] {
        [T::zero(); 2]
    }
}

/// `y = M (x - c) + c + t` with a fixed rotation center `c`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine2<T> {
    /// Row-major `[a11, a12, a21, a22]`.
    pub matrix: [T; 4],
    pub translation: [T; 2],
    pub center: [T; 2],
}

pub const AFFINE_PARAMS: usize = 6;

impl<T: Real> Affine2<T> {
    pub fn identity(center: [T; 2]) -> Self {
        Self {
            matrix: [T::one(), T::zero(), T::zero(), T::one()],
            translation: [T::zero(); 2],
            center,
        }
    }

    pub fn translation(t: [T; 2], center: [T; 2]) -> Self {
        Self {
            translation: t,
            ..Self::identity(center)
        }
    }

    /// Rotation by `angle_deg` (counter-clockwise in x-right/y-down pixel
    /// axes means clockwise on screen) with isotropic `scale`.
    pub fn similarity(angle_deg: T, scale: T, t: [T; 2], center: [T; 2]) -> Self {
        let (s, c) = angle_deg.to_radians().sin_cos();
        Self {
            matrix: [scale * c, -scale * s, scale * s, scale * c],
            translation: t,
            center,
        }
    }

    pub fn determinant(&self) -> T {
        let m = self.matrix;
        m[0] * m[3] - m[1] * m[2]
    }

    pub fn check_invertible(&self) -> Result<()> {
        let det = self.determinant();
        if !det.is_finite() || det.abs() <= T::lit(1e-12) {
            return Err(Error::SingularAffine(det.f64()));
        }
        Ok(())
    }

    /// Angle of the closest similarity, in degrees.
    pub fn rotation_deg(&self) -> T {
        let m = self.matrix;
        (m[2] - m[1]).atan2(m[0] + m[3]).to_degrees()
    }

    /// Optimizer parameter vector `[a11, a12, a21, a22, tx, ty]`.
    pub fn params(&self) -> [T; AFFINE_PARAMS] {
        let m = self.matrix;
        [m[0], m[1], m[2], m[3], self.translation[0], self.translation[1]]
    }

    pub fn with_params(&self, p: &[T]) -> Self {
        Self {
            matrix: [p[0], p[1], p[2], p[3]],
            translation: [p[4], p[5]],
            center: self.center,
        }
    }

    pub fn inverse(&self) -> Result<Self> {
        self.check_invertible()?;
        let m = self.matrix;
        let det = self.determinant();
        let inv = [m[3] / det, -m[1] / det, -m[2] / det, m[0] / det];
        // x = M^-1 (y - c - t) + c; express around the same center.
        let t = self.translation;
        let it = [
            -(inv[0] * t[0] + inv[1] * t[1]),
            -(inv[2] * t[0] + inv[3] * t[1]),
        ];
        Ok(Self {
            matrix: inv,
            translation: it,
            center: self.center,
        })
    }

    pub fn cast<U: Real>(&self) -> Affine2<U> {
        Affine2 {
            matrix: self.matrix.map(|v| U::lit(v.f64())),
            translation: self.translation.map(|v| U::lit(v.f64())),
            center: self.center.map(|v| U::lit(v.f64())),
        }
    }
}

impl<T: Real> Transform2<T> for Affine2<T> {
    #[inline]
    fn displacement(&self, x: [T; 2]) -> [T; 2] {
        let m = self.matrix;
        let r = [x[0] - self.center[0], x[1] - self.center[1]];
        // (M - I) r + t, exact zero for the identity.
        [
            (m[0] - T::one()) * r[0] + m[1] * r[1] + self.translation[0],
            m[2] * r[0] + (m[3] - T::one()) * r[1] + self.translation[1],
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_has_zero_displacement() {
        let a = Affine2::<f64>::identity([3.3, 7.1]);
        assert_eq!(a.displacement([0.1, 0.7]), [0.0, 0.0]);
        assert_eq!(a.map([0.1, 0.7]), [0.1, 0.7]);
    }

    #[test]
    fn inverse_round_trips() {
        let a = Affine2::similarity(12.0f64, 1.07, [3.0, -4.0], [50.0, 40.0]);
        let inv = a.inverse().unwrap();
        for p in [[0.0, 0.0], [13.0, 77.0], [-5.0, 2.5]] {
            let q = inv.map(a.map(p));
            assert!((q[0] - p[0]).abs() < 1e-12 && (q[1] - p[1]).abs() < 1e-12);
        }
        assert!((a.rotation_deg() - 12.0).abs() < 1e-12);
    }

    #[test]
    fn singular_rejected() {
        let mut a = Affine2::<f64>::identity([0.0, 0.0]);
        a.matrix = [1.0, 2.0, 2.0, 4.0];
        assert!(matches!(a.check_invertible(), Err(Error::SingularAffine(_))));
    }
}
