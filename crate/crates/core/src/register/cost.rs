//! Registration objectives: `-MI` between a fixed level and the moving level
//! resampled through the current parameters, with central-difference
//! gradients in scaled parameter space.

use rayon::prelude::*;

use super::bspline::BSplineField2;
use super::lbfgs::Objective;
use super::mi::{bin_position, xlogx_delta, EntropySums, JointHistogram};
use super::resample::{bilinear, moving_coords};
use super::transform::{Affine2, Transform2};
use crate::imgcore::GrayImage;
use crate::scalar::Real;


/// One pyramid level of a fixed/moving pair with the fixed bins cached.
pub(crate) struct Level<'a, T> {
    pub fixed: &'a GrayImage<T>,
    pub moving: &'a GrayImage<T>,
    pub bins: usize,
    fixed_bins: Vec<(usize, f64)>,
    xs: Vec<T>,
    ys: Vec<T>,
}

/// Sampled state of the moving image under one parameter vector.
#[derive(Clone)]
pub(crate) struct Sampled<T> {
    pub coords: Vec<(T, T)>,
    pub values: Vec<T>,
    pub hist: JointHistogram,
    pub sums: EntropySums,
}

impl<'a, T: Real> Level<'a, T> {
    pub fn new(fixed: &'a GrayImage<T>, moving: &'a GrayImage<T>, bins: usize) -> Self {
        let fixed_bins = fixed.data().iter().map(|v| bin_position(v.f64(), bins)).collect();
        let sp = fixed.spacing();
        Self {
            fixed,
            moving,
            bins,
            fixed_bins,
            xs: (0..fixed.width()).map(|i| T::from_count(i) * sp[0]).collect(),
            ys: (0..fixed.height()).map(|j| T::from_count(j) * sp[1]).collect(),
        }
    }

    /// Sample the moving image with the displacement (mm) given per pixel.
    pub fn sample(&self, disp: impl Fn(usize, usize, [T; 2]) -> [T; 2] + Sync) -> Sampled<T> {
        let w = self.fixed.width();
        let fsp = self.fixed.spacing();
        let msp = self.moving.spacing();
        let mut coords = vec![(T::zero(), T::zero()); self.fixed.data().len()];
        coords.par_chunks_mut(w).enumerate().for_each(|(j, row)| {
            for (i, c) in row.iter_mut().enumerate() {
                let d = disp(i, j, [self.xs[i], self.ys[j]]);
                *c = moving_coords(i, j, d, fsp, msp);
            }
        });
        let values: Vec<T> = coords.par_iter().map(|&(px, py)| bilinear(self.moving, px, py)).collect();
        let mut hist = JointHistogram::new(self.bins);
        for (&fb, &v) in self.fixed_bins.iter().zip(&values) {
            hist.add(fb, bin_position(v.f64(), self.bins));
        }
        let sums = hist.entropy_sums();
        Sampled {
            coords,
            values,
            hist,
            sums,
        }
    }
}

pub(crate) struct AffineObjective<'a, T> {
    pub level: &'a Level<'a, T>,
    pub base: Affine2<T>,
    pub scales: Vec<T>,
    /// Central-difference step in scaled units.
    pub fd_step: f64,
}

impl<T: Real> AffineObjective<'_, T> {
    pub fn affine_at(&self, q: &[T]) -> Affine2<T> {
        let p: Vec<T> = q.iter().zip(&self.scales).map(|(&v, &s)| v / s).collect();
        self.base.with_params(&p)
    }

    pub fn to_scaled(&self, a: &Affine2<T>) -> Vec<T> {
        a.params().iter().zip(&self.scales).map(|(&v, &s)| v * s).collect()
    }
}

impl<T: Real> Objective<T> for AffineObjective<'_, T> {
    fn value(&mut self, q: &[T]) -> T {
        let a = self.affine_at(q);
        let s = self.level.sample(|_, _, x| a.displacement(x));
        T::lit(-s.sums.mutual_information())
    }

    fn gradient(&mut self, q: &[T], _fx: T) -> Vec<T> {
        let h = T::lit(self.fd_step);
        (0..q.len())
            .map(|k| {
                let mut qp = q.to_vec();
                qp[k] += h;
                let mut qm = q.to_vec();
                qm[k] -= h;
                (self.value(&qp) - self.value(&qm)) / (h + h)
            })
            .collect()
    }
}

/// Pixels influenced by one control index along one axis, with basis weights.
type Support<T> = Vec<Vec<(usize, T)>>;

fn supports<T: Real>(field: &BSplineField2<T>, axis: usize, coords: &[T]) -> Support<T> {
    let mut out = vec![Vec::new(); field.grid[axis]];
    for (p, &x) in coords.iter().enumerate() {
        let (first, w) = field.axis_support(axis, x);
        for (k, &wk) in w.iter().enumerate() {
            let c = first + k as isize;
            if c >= 0 && (c as usize) < out.len() && wk != T::zero() {
                out[c as usize].push((p, wk));
            }
        }
    }
    out
}

/// B-spline coefficients (mm, unit scale) composed with a fixed affine:
/// moving point = `A(x + d(x))`.
pub(crate) struct BSplineObjective<'a, T> {
    pub level: &'a Level<'a, T>,
    pub affine: Affine2<T>,
    pub field: BSplineField2<T>,
    xsupp: Vec<(isize, [T; 4])>,
    ysupp: Vec<(isize, [T; 4])>,
    cols: Support<T>,
    rows: Support<T>,
    fd_step: f64,
    cache: Option<(Vec<T>, Sampled<T>)>,
}

struct Scratch {
    joint: Vec<f64>,
    moving: Vec<f64>,
    touched_joint: Vec<usize>,
    touched_moving: Vec<usize>,
}

impl Scratch {
    fn new(bins: usize) -> Self {
        Self {
            joint: vec![0.0; bins * bins],
            moving: vec![0.0; bins],
            touched_joint: Vec::new(),
            touched_moving: Vec::new(),
        }
    }

    #[inline]
    fn bump_joint(&mut self, k: usize, v: f64) {
        if self.joint[k] == 0.0 {
            self.touched_joint.push(k);
        }
        self.joint[k] += v;
    }

    #[inline]
    fn bump_moving(&mut self, k: usize, v: f64) {
        if self.moving[k] == 0.0 {
            self.touched_moving.push(k);
        }
        self.moving[k] += v;
    }

    /// Add `sign` times the partial-volume contribution of one sample.
    fn add(&mut self, bins: usize, f: (usize, f64), m: (usize, f64), sign: f64) {
        let (fi, fw) = f;
        let (mi, mw) = m;
        let fw0 = 1.0 - fw;
        let mw0 = 1.0 - mw;
        let r0 = fi * bins + mi;
        let r1 = r0 + bins;
        self.bump_joint(r0, sign * fw0 * mw0);
        self.bump_joint(r0 + 1, sign * fw0 * mw);
        self.bump_joint(r1, sign * fw * mw0);
        self.bump_joint(r1 + 1, sign * fw * mw);
        self.bump_moving(mi, sign * mw0);
        self.bump_moving(mi + 1, sign * mw);
    }

    /// Entropy sums after applying the pending deltas; clears the scratch.
    fn apply(&mut self, hist: &JointHistogram, base: &EntropySums) -> EntropySums {
        let mut out = *base;
        for &k in &self.touched_joint {
            out.joint += xlogx_delta(hist.joint[k], self.joint[k]);
            self.joint[k] = 0.0;
        }
        for &k in &self.touched_moving {
            out.moving += xlogx_delta(hist.moving[k], self.moving[k]);
            self.moving[k] = 0.0;
        }
        self.touched_joint.clear();
        self.touched_moving.clear();
        out
    }
}

impl<'a, T: Real> BSplineObjective<'a, T> {
    pub fn new(level: &'a Level<'a, T>, affine: Affine2<T>, field: BSplineField2<T>, fd_step: f64) -> Self {
        let xsupp = level.xs.iter().map(|&x| field.axis_support(0, x)).collect();
        let ysupp = level.ys.iter().map(|&y| field.axis_support(1, y)).collect();
        let cols = supports(&field, 0, &level.xs);
        let rows = supports(&field, 1, &level.ys);
        Self {
            level,
            affine,
            field,
            xsupp,
            ysupp,
            cols,
            rows,
            fd_step,
            cache: None,
        }
    }

    fn sample_at(&mut self, q: &[T]) -> &Sampled<T> {
        let fresh = matches!(&self.cache, Some((cq, _)) if cq.as_slice() == q);
        if !fresh {
            self.field.set_params(q);
            let (field, affine) = (&self.field, &self.affine);
            let (xs, ys) = (&self.xsupp, &self.ysupp);
            let s = self.level.sample(|i, j, x| {
                let (x0, wx) = xs[i];
                let (y0, wy) = ys[j];
                let d = field.eval_support(x0, &wx, y0, &wy);
                let a = affine.displacement([x[0] + d[0], x[1] + d[1]]);
                [d[0] + a[0], d[1] + a[1]]
            });
            self.cache = Some((q.to_vec(), s));
        }
        &self.cache.as_ref().expect("cache filled").1
    }
}

impl<T: Real> Objective<T> for BSplineObjective<'_, T> {
    fn value(&mut self, q: &[T]) -> T {
        T::lit(-self.sample_at(q).sums.mutual_information())
    }

    fn gradient(&mut self, q: &[T], _fx: T) -> Vec<T> {
        self.sample_at(q);
        let Some((_, state)) = &self.cache else { unreachable!() };
        let level = self.level;
        let bins = level.bins;
        let w = level.fixed.width();
        let msp = level.moving.spacing();
        let m = self.affine.matrix;
        let cols = self.grid_cols();
        let fd = self.fd_step;
        let h = T::lit(fd);
        let (col_supp, row_supp) = (&self.cols, &self.rows);
        (0..q.len())
            .into_par_iter()
            .map_init(
                || Scratch::new(bins),
                |scratch, k| {
                    let c = k / 2;
                    let axis = k % 2;
                    let (ci, cj) = (c % cols, c / cols);
                    // d(moving mm) / d(coefficient) = weight * column `axis` of M.
                    let dir = [m[axis] / msp[0], m[2 + axis] / msp[1]];
                    let mut cost = [0.0f64; 2];
                    for (slot, sign) in [(0usize, T::one()), (1, -T::one())] {
                        for &(j, wy) in &row_supp[cj] {
                            for &(i, wx) in &col_supp[ci] {
                                let p = j * w + i;
                                let step = sign * h * wx * wy;
                                let (px, py) = state.coords[p];
                                let v = bilinear(level.moving, px + step * dir[0], py + step * dir[1]);
                                let old = state.values[p];
                                if v == old {
                                    continue;
                                }
                                let fb = level.fixed_bins[p];
                                scratch.add(bins, fb, bin_position(old.f64(), bins), -1.0);
                                scratch.add(bins, fb, bin_position(v.f64(), bins), 1.0);
                            }
                        }
                        cost[slot] = -scratch.apply(&state.hist, &state.sums).mutual_information();
                    }
                    T::lit((cost[0] - cost[1]) / (2.0 * fd))
                },
            )
            .collect()
    }
}

impl<T: Real> BSplineObjective<'_, T> {
    fn grid_cols(&self) -> usize {
        self.field.grid[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blob(w: usize, h: usize, cx: f64, cy: f64, r: f64) -> GrayImage<f64> {
        GrayImage::from_fn(w, h, [1.0, 1.0], |x, y| {
            let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            (1.0 - d / r).clamp(0.0, 1.0)
        })
    }

    #[test]
    fn incremental_gradient_matches_full_differences() {
        let fixed = blob(40, 36, 20.0, 17.0, 12.0).above(0.2).to_gray::<f64>();
        let moving = blob(40, 36, 21.0, 16.0, 13.0);
        let level = Level::new(&fixed, &moving, 16);
        let affine = Affine2::similarity(3.0, 1.02, [0.4, -0.3], fixed.center());
        let mut field = BSplineField2::covering(fixed.extent(), [8.0, 8.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q: Vec<f64> = (0..2 * field.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        field.set_params(&q);
        let h = 1e-3;
        let mut obj = BSplineObjective::new(&level, affine, field, h);
        let g = obj.gradient(&q, 0.0);
        for k in (0..q.len()).step_by(7) {
            let mut qp = q.clone();
            qp[k] += h;
            let mut qm = q.clone();
            qm[k] -= h;
            let full = (obj.value(&qp) - obj.value(&qm)) / (2.0 * h);
            assert!((g[k] - full).abs() < 1e-6 * (1.0 + full.abs()), "k={k}: {} vs {full}", g[k]);
        }
    }

    #[test]
    fn affine_objective_identity_cost_is_negative_mi() {
        let fixed = blob(32, 32, 16.0, 16.0, 10.0);
        let level = Level::new(&fixed, &fixed, 32);
        let base = Affine2::identity(fixed.center());
        let mut obj = AffineObjective {
            level: &level,
            base,
            scales: vec![1.0; 6],
            fd_step: 1e-3,
        };
        let q = obj.to_scaled(&base);
        let c = obj.value(&q);
        let mi = super::super::mi::mutual_information(&fixed, &fixed, 32).unwrap().mi;
        assert!((c + mi).abs() < 1e-12);
    }
}
