//! Per-parameter scales: RMS displacement of the fixed image's four corners
//! under a unit change of each parameter.

use super::bspline::BSplineField2;
use super::transform::{Affine2, Transform2, AFFINE_PARAMS};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransformKind {
    Affine,
    BSpline,
}

fn corners<T: Real>(extent: [T; 2]) -> [[T; 2]; 4] {
    let z = T::zero();
    [[z, z], [extent[0], z], [z, extent[1]], [extent[0], extent[1]]]
}

fn rms_corner_shift<T: Real>(extent: [T; 2], before: &dyn Transform2<T>, after: &dyn Transform2<T>) -> T {
    let mut acc = T::zero();
    for c in corners(extent) {
        let a = before.map(c);
        let b = after.map(c);
        let dx = b[0] - a[0];
        let dy = b[1] - a[1];
        acc += dx * dx + dy * dy;
    }
    (acc / T::lit(4.0)).sqrt()
}

/// Scales for an affine about `center` on a fixed image spanning `[0, extent]` mm.
pub fn affine_scales<T: Real>(extent: [T; 2], center: [T; 2]) -> Vec<T> {
    let base = Affine2::identity(center);
    let p = base.params();
    (0..AFFINE_PARAMS)
        .map(|k| {
            let mut q = p;
            q[k] += T::one();
            let s = rms_corner_shift(extent, &base, &base.with_params(&q));
            if s > T::zero() {
                s
            } else {
                T::one()
            }
        })
        .collect()
}

/// Scales for B-spline coefficients. A unit coefficient moves a corner only
/// when the corner lies in its support, so most corner RMS values are zero;
/// coefficients are already in mm, and all scales are 1.
pub fn bspline_scales<T: Real>(field: &BSplineField2<T>) -> Vec<T> {
    vec![T::one(); 2 * field.len()]
}

/// Scale vector for `kind` on a fixed image spanning `[0, extent]` mm with
/// the affine center at the image center.
pub fn estimate_scales<T: Real>(kind: TransformKind, extent: [T; 2], field: Option<&BSplineField2<T>>) -> Vec<T> {
    match kind {
        TransformKind::Affine => {
            let half = T::lit(0.5);
            affine_scales(extent, [extent[0] * half, extent[1] * half])
        }
        TransformKind::BSpline => match field {
            Some(f) => bspline_scales(f),
            None => Vec::new(),
        },
    }
}
