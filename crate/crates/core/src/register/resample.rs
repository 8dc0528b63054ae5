use rayon::prelude::*;

use super::transform::{Affine2, Transform2};
use super::TransformPair;
use crate::error::Result;
use crate::imgcore::GrayImage;
use crate::scalar::Real;

/// Output grid for resampling: pixel `(i, j)` sits at `(i * sx, j * sy)` mm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec<T> {
    pub width: usize,
    pub height: usize,
    pub spacing: [T; 2],
}

impl<T: Real> GridSpec<T> {
    pub fn of<U>(image: &GrayImage<U>) -> Self
    where
        U: Real,
    {
        Self {
            width: image.width(),
            height: image.height(),
            spacing: image.spacing().map(|s| T::lit(s.f64())),
        }
    }

    pub fn extent(&self) -> [T; 2] {
        [
            T::from_count(self.width - 1) * self.spacing[0],
            T::from_count(self.height - 1) * self.spacing[1],
        ]
    }
}

/// Bilinear sample at continuous pixel coordinates; pixels outside the
/// image read as zero.
#[inline]
pub fn bilinear<T: Real>(image: &GrayImage<T>, px: T, py: T) -> T {
    let (w, h) = (image.width() as isize, image.height() as isize);
    let fx = px.floor();
    let fy = py.floor();
    let (x0, y0) = match (fx.to_isize(), fy.to_isize()) {
        (Some(x), Some(y)) => (x, y),
        _ => return T::zero(),
    };
    if x0 < -1 || y0 < -1 || x0 >= w || y0 >= h {
        return T::zero();
    }
    let tx = px - fx;
    let ty = py - fy;
    let data = image.data();
    let at = |x: isize, y: isize| -> T {
        if x < 0 || y < 0 || x >= w || y >= h {
            T::zero()
        } else {
            data[(y * w + x) as usize]
        }
    };
    let one = T::one();
    let top = at(x0, y0) * (one - tx) + at(x0 + 1, y0) * tx;
    let bottom = at(x0, y0 + 1) * (one - tx) + at(x0 + 1, y0 + 1) * tx;
    top * (one - ty) + bottom * ty
}

/// Moving-image pixel coordinates of fixed pixel `(i, j)` displaced by `d` mm.
#[inline]
pub(crate) fn moving_coords<T: Real>(i: usize, j: usize, d: [T; 2], fixed_sp: [T; 2], moving_sp: [T; 2]) -> (T, T) {
    if fixed_sp == moving_sp {
        (
            T::from_count(i) + d[0] / moving_sp[0],
            T::from_count(j) + d[1] / moving_sp[1],
        )
    } else {
        (
            (T::from_count(i) * fixed_sp[0] + d[0]) / moving_sp[0],
            (T::from_count(j) * fixed_sp[1] + d[1]) / moving_sp[1],
        )
    }
}

/// Resample `moving` onto `grid` through any transform (fixed → moving).
pub fn apply_transform<T: Real, X: Transform2<T> + Sync + ?Sized>(
    moving: &GrayImage<T>,
    transform: &X,
    grid: GridSpec<T>,
) -> GrayImage<T> {
    let msp = moving.spacing();
    let mut data = vec![T::zero(); grid.width * grid.height];
    data.par_chunks_mut(grid.width).enumerate().for_each(|(j, row)| {
        let y = T::from_count(j) * grid.spacing[1];
        for (i, out) in row.iter_mut().enumerate() {
            let x = T::from_count(i) * grid.spacing[0];
            let d = transform.displacement([x, y]);
            let (px, py) = moving_coords(i, j, d, grid.spacing, msp);
            *out = bilinear(moving, px, py);
        }
    });
    GrayImage::new(grid.width, grid.height, grid.spacing, data).expect("finite resample")
}

/// Resample through a saved pair (B-spline displacement, then affine).
pub fn apply_pair<T: Real>(moving: &GrayImage<T>, pair: &TransformPair<T>, grid: GridSpec<T>) -> Result<GrayImage<T>> {
    pair.affine.check_invertible()?;
    Ok(apply_transform(moving, pair, grid))
}

pub fn apply_affine<T: Real>(moving: &GrayImage<T>, affine: &Affine2<T>, grid: GridSpec<T>) -> Result<GrayImage<T>> {
    affine.check_invertible()?;
    Ok(apply_transform(moving, affine, grid))
}
