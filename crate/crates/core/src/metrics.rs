//! Registration scoring: Gaussian-window SSIM, target registration error on
//! phantoms, and cohort statistics with a 0.01-wide histogram.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{BinaryMask, GrayImage};
use crate::register::Transform2;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
    /// Odd window side in pixels.
    pub window: usize,
    pub sigma: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
            window: 11,
            sigma: 1.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimResult {
    pub mean_ssim: f64,
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

fn gaussian_window(n: usize, sigma: f64) -> Vec<f64> {
    let c = (n as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..n).map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// 'Valid' separable filtering: output is `(w - n + 1) x (h - n + 1)`.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ow, oh) = (w - n + 1, h - n + 1);
    let mut tmp = vec![0.0; ow * h];
    tmp.par_chunks_mut(ow).enumerate().for_each(|(y, row)| {
        let line = &src[y * w..(y + 1) * w];
        for (x, out) in row.iter_mut().enumerate() {
            *out = k.iter().zip(&line[x..x + n]).map(|(a, b)| a * b).sum();
        }
    });
    let mut out = vec![0.0; ow * oh];
    out.par_chunks_mut(ow).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            *o = k.iter().enumerate().map(|(t, kv)| kv * tmp[(y + t) * ow + x]).sum();
        }
    });
    out
}

/// Per-pixel SSIM over the 'valid' region.
pub fn ssim_map<T: Real>(a: &GrayImage<T>, b: &GrayImage<T>, p: &SsimParams) -> Result<GrayImage<f64>> {
    if !a.same_shape(b) {
        return Err(Error::DimensionMismatch(format!("ssim operands {:?} vs {:?}", a.dims(), b.dims())));
    }
    if p.window.is_multiple_of(2) {
        return Err(Error::invalid("ssim params", "window must be odd"));
    }
    let (w, h) = a.dims();
    if w < p.window || h < p.window {
        return Err(Error::Metrics(format!(
            "image {w}x{h} smaller than the {0}x{0} SSIM window",
            p.window
        )));
    }
    let k = gaussian_window(p.window, p.sigma);
    let av: Vec<f64> = a.data().iter().map(|v| v.f64()).collect();
    let bv: Vec<f64> = b.data().iter().map(|v| v.f64()).collect();
    let aa: Vec<f64> = av.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = bv.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = av.iter().zip(&bv).map(|(x, y)| x * y).collect();
    let mu_a = filter_valid(&av, w, h, &k);
    let mu_b = filter_valid(&bv, w, h, &k);
    let e_aa = filter_valid(&aa, w, h, &k);
    let e_bb = filter_valid(&bb, w, h, &k);
    let e_ab = filter_valid(&ab, w, h, &k);
    let c1 = (p.k1 * p.dynamic_range).powi(2);
    let c2 = (p.k2 * p.dynamic_range).powi(2);
    let map: Vec<f64> = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            let s = ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            s.clamp(-1.0, 1.0)
        })
        .collect();
    let sp = a.spacing().map(|s| s.f64());
    GrayImage::new(w - p.window + 1, h - p.window + 1, sp, map)
}

pub fn ssim<T: Real>(a: &GrayImage<T>, b: &GrayImage<T>, p: &SsimParams) -> Result<SsimResult> {
    let map = ssim_map(a, b, p)?;
    let n = map.data().len() as f64;
    let mean = map.data().iter().sum::<f64>() / n;
    Ok(SsimResult {
        mean_ssim: mean.clamp(-1.0, 1.0),
        window: p.window,
        k1: p.k1,
        k2: p.k2,
        dynamic_range: p.dynamic_range,
    })
}

/// SSIM of two binary masks as `{0, 1}` images.
pub fn ssim_masks(a: &BinaryMask, b: &BinaryMask, p: &SsimParams) -> Result<SsimResult> {
    ssim(&a.to_gray::<f64>(), &b.to_gray::<f64>(), p)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreResult {
    pub mean_px: f64,
    pub max_px: f64,
    pub points: usize,
}

/// Pixel centers (mm) of every `stride`-th pixel on a grid that lie inside `mask`.
pub fn grid_points_in_mask(mask: &BinaryMask, stride: usize) -> Vec<[f64; 2]> {
    let stride = stride.max(1);
    let sp = mask.spacing();
    let mut out = Vec::new();
    for y in (0..mask.height()).step_by(stride) {
        for x in (0..mask.width()).step_by(stride) {
            if mask.get(x, y) {
                out.push([x as f64 * sp[0], y as f64 * sp[1]]);
            }
        }
    }
    out
}

/// Mean and max distance (px) between true and recovered fixed → moving
/// mappings at `points` (mm).
pub fn tre<A, B>(truth: Option<&A>, recovered: &B, points: &[[f64; 2]], spacing: [f64; 2]) -> Result<TreResult>
where
    A: Transform2<f64> + ?Sized,
    B: Transform2<f64> + ?Sized,
{
    let truth = truth.ok_or_else(|| Error::Metrics("missing ground truth".into()))?;
    if points.is_empty() {
        return Err(Error::Metrics("no sample points inside the mask".into()));
    }
    let mut sum = 0.0;
    let mut max = 0.0f64;
    for &p in points {
        let t = truth.map(p);
        let r = recovered.map(p);
        let d = ((t[0] - r[0]) / spacing[0]).hypot((t[1] - r[1]) / spacing[1]);
        sum += d;
        max = max.max(d);
    }
    Ok(TreResult {
        mean_px: sum / points.len() as f64,
        max_px: max,
        points: points.len(),
    })
}

pub const HISTOGRAM_BINS: usize = 100;

/// Bin `k` covers `[k/100, (k+1)/100)`; 1.0 joins the last bin and values
/// below 0 join the first.
pub fn histogram_bin(v: f64) -> usize {
    let n = HISTOGRAM_BINS;
    let edge = |k: usize| k as f64 / n as f64;
    if !(v > 0.0) {
        return 0;
    }
    let mut k = ((v * n as f64).floor() as usize).min(n - 1);
    while k + 1 < n && edge(k + 1) <= v {
        k += 1;
    }
    while k > 0 && edge(k) > v {
        k -= 1;
    }
    k
}

pub fn histogram_edges() -> Vec<f64> {
    (0..=HISTOGRAM_BINS).map(|k| k as f64 / HISTOGRAM_BINS as f64).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortStats {
    pub n: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub median: f64,
    pub histogram: Vec<usize>,
    /// Number of values below 0 counted in the first bin.
    pub clamped_below_zero: usize,
}

impl CohortStats {
    /// `median >= mean`, the signature of a left-skewed distribution.
    pub fn left_skewed(&self) -> bool {
        self.median >= self.mean
    }
}

pub fn cohort_stats(values: &[f64]) -> Result<CohortStats> {
    if values.is_empty() {
        return Err(Error::Metrics("empty SSIM list".into()));
    }
    if let Some(v) = values.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
        return Err(Error::Metrics(format!("SSIM value {v} outside [-1, 1]")));
    }
    // Welford running mean and variance.
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, &v) in values.iter().enumerate() {
        let d = v - mean;
        mean += d / (i + 1) as f64;
        m2 += d * (v - mean);
    }
    let n = values.len();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let mut histogram = vec![0; HISTOGRAM_BINS];
    for &v in values {
        histogram[histogram_bin(v)] += 1;
    }
    Ok(CohortStats {
        n,
        mean,
        std: (m2 / n as f64).sqrt(),
        median,
        histogram,
        clamped_below_zero: values.iter().filter(|&&v| v < 0.0).count(),
    })
}
