//! Gaussian multi-resolution pyramid with factor-2 downsampling.

use crate::imgcore::GrayImage;
use crate::scalar::Real;

/// Smallest side any pyramid level may have.
pub const MIN_LEVEL_SIZE: usize = 32;
/// Smallest side of a B-spline stage level. Below this the MI estimate
/// against a binary mask is too coarse to constrain a free-form field.
pub const MIN_BSPLINE_LEVEL_SIZE: usize = 64;

fn halved(n: usize) -> usize {
    n.div_ceil(2)
}

/// `min(requested, levels whose min side stays >= 32 px)`, at least 1.
pub fn effective_levels(requested: usize, width: usize, height: usize) -> usize {
    effective_levels_above(requested, width, height, MIN_LEVEL_SIZE)
}

/// As [`effective_levels`] with a custom smallest side.
pub fn effective_levels_above(requested: usize, width: usize, height: usize, min_size: usize) -> usize {
    let (mut w, mut h) = (width, height);
    let mut n = 1;
    while n < requested {
        let (nw, nh) = (halved(w), halved(h));
        if nw.min(nh) < min_size {
            break;
        }
        w = nw;
        h = nh;
        n += 1;
    }
    n
}

fn kernel<T: Real>(sigma: f64) -> Vec<T> {
    let r = (3.0 * sigma).ceil() as isize;
    let w: Vec<f64> = (-r..=r).map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| T::lit(v / s)).collect()
}

/// Separable Gaussian blur in pixel units with clamped borders.
pub fn gaussian_blur<T: Real>(img: &GrayImage<T>, sigma_px: f64) -> GrayImage<T> {
    let k = kernel::<T>(sigma_px);
    let r = (k.len() / 2) as isize;
    let (w, h) = img.dims();
    let src = img.data();
    let mut tmp = vec![T::zero(); w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = T::zero();
            for (t, &kv) in k.iter().enumerate() {
                let xx = (x as isize + t as isize - r).clamp(0, w as isize - 1) as usize;
                acc += kv * src[y * w + xx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![T::zero(); w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = T::zero();
            for (t, &kv) in k.iter().enumerate() {
                let yy = (y as isize + t as isize - r).clamp(0, h as isize - 1) as usize;
                acc += kv * tmp[yy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    GrayImage::new(w, h, img.spacing(), out).expect("finite blur")
}

/// Blur with sigma 1 px, then keep every other pixel; spacing doubles so the
/// physical position of pixel `(i, j)` is `(2i, 2j)` of the input.
pub fn downsample<T: Real>(img: &GrayImage<T>) -> GrayImage<T> {
    let b = gaussian_blur(img, 1.0);
    let (w, h) = img.dims();
    let (nw, nh) = (halved(w), halved(h));
    let sp = img.spacing();
    let two = T::lit(2.0);
    GrayImage::from_fn(nw, nh, [sp[0] * two, sp[1] * two], |x, y| b.get(2 * x, 2 * y))
}

/// Levels finest first; `levels[0]` is the input itself.
pub fn build<T: Real>(img: &GrayImage<T>, levels: usize) -> Vec<GrayImage<T>> {
    let mut out = vec![img.clone()];
    for _ in 1..levels.max(1) {
        let next = downsample(out.last().expect("non-empty"));
        out.push(next);
    }
    out
}

/// Pyramid for the fixed image. A binary `{0, 1}` input stays binary at
/// every level (smoothed levels are cut at 0.5).
pub fn build_fixed<T: Real>(img: &GrayImage<T>, levels: usize) -> Vec<GrayImage<T>> {
    let binary = img.data().iter().all(|&v| v == T::zero() || v == T::one());
    let mut out = build(img, levels);
    if binary {
        let half = T::lit(0.5);
        for level in out.iter_mut().skip(1) {
            *level = level.map(|v| if v >= half { T::one() } else { T::zero() });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamps_to_min_size() {
        assert_eq!(effective_levels(20, 512, 512), 5);
        assert_eq!(effective_levels(3, 512, 512), 3);
        assert_eq!(effective_levels(20, 31, 400), 1);
        assert_eq!(effective_levels(20, 64, 64), 2);
        assert_eq!(effective_levels(0, 64, 64), 1);
    }

    #[test]
    fn level_shapes_and_spacing() {
        let img = GrayImage::<f64>::filled(65, 40, [0.5, 0.5], 0.3);
        let p = build(&img, 2);
        assert_eq!(p[1].dims(), (33, 20));
        assert_eq!(p[1].spacing(), [1.0, 1.0]);
        assert!(p[1].data().iter().all(|v| (v - 0.3).abs() < 1e-12));
    }

    #[test]
    fn binary_fixed_levels_stay_binary() {
        let img = GrayImage::<f64>::from_fn(64, 64, [1.0, 1.0], |x, y| ((x + y) % 7 < 3) as u8 as f64);
        for l in build_fixed(&img, 2) {
            assert!(l.data().iter().all(|&v| v == 0.0 || v == 1.0));
        }
    }

    #[test]
    fn blur_preserves_mass_in_interior() {
        let mut img = GrayImage::<f64>::zeros(21, 21, [1.0, 1.0]);
        img.set(10, 10, 1.0);
        let b = gaussian_blur(&img, 1.0);
        let total: f64 = b.data().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(b.get(10, 10) > b.get(11, 10));
    }
}
