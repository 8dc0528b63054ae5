//! Cubic B-spline free-form deformation on a uniform control grid.

use super::transform::Transform2;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Uniform cubic B-spline basis at fractional offset `t in [0, 1)`; weight `k`
/// belongs to control point `floor(u) - 1 + k`.
#[inline]
pub fn cubic_weights<T: Real>(t: T) -> [T; 4] {
    let one = T::one();
    let six = T::lit(6.0);
    let s = one - t;
    let t2 = t * t;
    let t3 = t2 * t;
    [
        s * s * s / six,
        (T::lit(3.0) * t3 - six * t2 + T::lit(4.0)) / six,
        (T::lit(-3.0) * t3 + T::lit(3.0) * t2 + T::lit(3.0) * t + one) / six,
        t3 / six,
    ]
}

/// Centered cubic B-spline `beta3(r)`, support `(-2, 2)`.
#[inline]
pub fn beta3<T: Real>(r: T) -> T {
    let a = r.abs();
    let six = T::lit(6.0);
    if a < T::one() {
        (T::lit(4.0) - T::lit(6.0) * a * a + T::lit(3.0) * a * a * a) / six
    } else if a < T::lit(2.0) {
        let b = T::lit(2.0) - a;
        b * b * b / six
    } else {
        T::zero()
    }
}

/// Displacement field `d(x) = sum_ij c_ij beta3(u - i) beta3(v - j)` with
/// `u = (x - origin) / spacing`. Coefficients are displacements in mm.
#[derive(Clone, Debug, PartialEq)]
pub struct BSplineField2<T> {
    pub grid: [usize; 2],
    pub spacing: [T; 2],
    pub origin: [T; 2],
    /// Row-major `[dx, dy]` per control point.
    pub coeffs: Vec<[T; 2]>,
}

impl<T: Real> BSplineField2<T> {
    /// Zero field whose grid covers `[0, extent]` with the full 4x4 support
    /// available at every domain point: one control point before the domain
    /// start and enough after its end.
    pub fn covering(extent: [T; 2], spacing: [T; 2]) -> Result<Self> {
        if !(spacing[0] > T::zero() && spacing[1] > T::zero()) {
            return Err(Error::invalid("bspline grid", "spacing must be > 0"));
        }
        let grid: [usize; 2] = std::array::from_fn(|a| {
            (extent[a] / spacing[a]).floor().to_usize().unwrap_or(0) + 4
        });
        Ok(Self {
            grid,
            spacing,
            origin: [-spacing[0], -spacing[1]],
            coeffs: vec![[T::zero(); 2]; grid[0] * grid[1]],
        })
    }

    pub fn new(grid: [usize; 2], spacing: [T; 2], origin: [T; 2], coeffs: Vec<[T; 2]>) -> Result<Self> {
        if grid[0] < 4 || grid[1] < 4 {
            return Err(Error::invalid("bspline grid", "need at least 4x4 control points"));
        }
        if coeffs.len() != grid[0] * grid[1] {
            return Err(Error::invalid("bspline grid", "coefficient count != cols x rows"));
        }
        if !(spacing[0] > T::zero() && spacing[1] > T::zero()) {
            return Err(Error::invalid("bspline grid", "spacing must be > 0"));
        }
        if coeffs.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::invalid("bspline grid", "coefficients must be finite"));
        }
        Ok(Self {
            grid,
            spacing,
            origin,
            coeffs,
        })
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Index of the first of four supporting control points and their weights
    /// along `axis`; indices may fall outside the grid.
    #[inline]
    pub fn axis_support(&self, axis: usize, x: T) -> (isize, [T; 4]) {
        let u = (x - self.origin[axis]) / self.spacing[axis];
        let f = u.floor();
        let i = f.to_isize().unwrap_or(isize::MIN / 2);
        (i - 1, cubic_weights(u - f))
    }

    /// Flattened coefficient vector `[dx0, dy0, dx1, dy1, ...]`.
    pub fn params(&self) -> Vec<T> {
        self.coeffs.iter().flat_map(|c| [c[0], c[1]]).collect()
    }

    pub fn set_params(&mut self, p: &[T]) {
        for (c, v) in self.coeffs.iter_mut().zip(p.chunks_exact(2)) {
            *c = [v[0], v[1]];
        }
    }

    /// Exact refinement onto a grid with half the spacing covering `extent`.
    pub fn refined(&self, extent: [T; 2]) -> Result<Self> {
        let half = T::lit(0.5);
        let mut fine = Self::covering(extent, [self.spacing[0] * half, self.spacing[1] * half])?;
        // Fine point j sits at coarse coordinate (j - 1) / 2 + 1 relative to the
        // coarse origin (both grids start one spacing before the domain).
        let coarse = |i: isize, j: isize| -> [T; 2] {
            if i < 0 || j < 0 || i >= self.grid[0] as isize || j >= self.grid[1] as isize {
                [T::zero(); 2]
            } else {
                self.coeffs[j as usize * self.grid[0] + i as usize]
            }
        };
        // 1D subdivision masks: odd-offset fine points coincide with coarse
        // points, even-offset ones sit at midpoints.
        let mask = |j: usize| -> Vec<(isize, T)> {
            let j = j as isize - 1;
            if j.rem_euclid(2) == 0 {
                let i = j / 2 + 1;
                vec![(i - 1, T::lit(0.125)), (i, T::lit(0.75)), (i + 1, T::lit(0.125))]
            } else {
                let i = (j - 1).div_euclid(2) + 1;
                vec![(i, half), (i + 1, half)]
            }
        };
        let (fc, fr) = (fine.grid[0], fine.grid[1]);
        for jy in 0..fr {
            let my = mask(jy);
            for jx in 0..fc {
                let mx = mask(jx);
                let mut acc = [T::zero(); 2];
                for &(iy, wy) in &my {
                    for &(ix, wx) in &mx {
                        let c = coarse(ix, iy);
                        acc[0] += wx * wy * c[0];
                        acc[1] += wx * wy * c[1];
                    }
                }
                fine.coeffs[jy * fc + jx] = acc;
            }
        }
        Ok(fine)
    }

    /// Dense displacement raster (mm) at pixel centers `(i * sx, j * sy)`.
    pub fn rasterize(&self, width: usize, height: usize, spacing: [T; 2]) -> Vec<[T; 2]> {
        let xs: Vec<_> = (0..width)
            .map(|i| self.axis_support(0, T::from_count(i) * spacing[0]))
            .collect();
        let mut out = Vec::with_capacity(width * height);
        for j in 0..height {
            let (y0, wy) = self.axis_support(1, T::from_count(j) * spacing[1]);
            for &(x0, wx) in &xs {
                out.push(self.eval_support(x0, &wx, y0, &wy));
            }
        }
        out
    }

    #[inline]
    pub(crate) fn eval_support(&self, x0: isize, wx: &[T; 4], y0: isize, wy: &[T; 4]) -> [T; 2] {
        let (cols, rows) = (self.grid[0] as isize, self.grid[1] as isize);
        let mut d = [T::zero(); 2];
        for (b, &wyb) in wy.iter().enumerate() {
            let j = y0 + b as isize;
            if j < 0 || j >= rows {
                continue;
            }
            let row = &self.coeffs[(j * cols) as usize..((j + 1) * cols) as usize];
            for (a, &wxa) in wx.iter().enumerate() {
                let i = x0 + a as isize;
                if i < 0 || i >= cols {
                    continue;
                }
                let w = wxa * wyb;
                let c = row[i as usize];
                d[0] += w * c[0];
                d[1] += w * c[1];
            }
        }
        d
    }

    pub fn max_abs_coefficient(&self) -> T {
        self.coeffs
            .iter()
            .map(|c| (c[0] * c[0] + c[1] * c[1]).sqrt())
            .fold(T::zero(), |a, b| a.max(b))
    }

    pub fn scale_coefficients(&mut self, k: T) {
        for c in &mut self.coeffs {
            c[0] *= k;
            c[1] *= k;
        }
    }

    pub fn cast<U: Real>(&self) -> BSplineField2<U> {
        BSplineField2 {
            grid: self.grid,
            spacing: self.spacing.map(|v| U::lit(v.f64())),
            origin: self.origin.map(|v| U::lit(v.f64())),
            coeffs: self.coeffs.iter().map(|c| c.map(|v| U::lit(v.f64()))).collect(),
        }
    }
}

impl<T: Real> Transform2<T> for BSplineField2<T> {
    #[inline]
    fn displacement(&self, x: [T; 2]) -> [T; 2] {
        let (x0, wx) = self.axis_support(0, x[0]);
        let (y0, wy) = self.axis_support(1, x[1]);
        self.eval_support(x0, &wx, y0, &wy)
    }
}
