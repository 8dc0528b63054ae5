//! Mutual information from a partial-volume joint histogram.
//!
//! Intensities are binned on the fixed range `[0, 1]` (values are clamped).
//! Each sample spreads its unit weight linearly over the two nearest bins on
//! each axis. Histogram counts accumulate in `f64` whatever the image scalar.

use crate::error::{Error, Result};
use crate::imgcore::GrayImage;
use crate::scalar::Real;

/// Lower bin index and weight of the upper bin for `v` on `[0, 1]`.
#[inline]
pub fn bin_position(v: f64, bins: usize) -> (usize, f64) {
    let p = v.clamp(0.0, 1.0) * (bins - 1) as f64;
    let lo = (p.floor() as usize).min(bins - 2);
    (lo, p - lo as f64)
}

/// `h ln h` with `0 ln 0 = 0`.
#[inline]
pub fn xlogx(h: f64) -> f64 {
    if h > 0.0 {
        h * h.ln()
    } else {
        0.0
    }
}

/// `(h + d) ln(h + d) - h ln h`, stable when `|d| << h`.
#[inline]
pub fn xlogx_delta(h: f64, d: f64) -> f64 {
    let n = h + d;
    if h <= 0.0 {
        return xlogx(n.max(0.0));
    }
    if n <= 0.0 {
        return -xlogx(h);
    }
    d * n.ln() + h * (d / h).ln_1p()
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointHistogram {
    bins: usize,
    /// Row = fixed bin, column = moving bin.
    pub joint: Vec<f64>,
    pub fixed: Vec<f64>,
    pub moving: Vec<f64>,
    pub total: f64,
}

impl JointHistogram {
    pub fn new(bins: usize) -> Self {
        assert!(bins >= 2, "need at least two bins");
        Self {
            bins,
            joint: vec![0.0; bins * bins],
            fixed: vec![0.0; bins],
            moving: vec![0.0; bins],
            total: 0.0,
        }
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    #[inline]
    pub fn add(&mut self, f: (usize, f64), m: (usize, f64)) {
        let b = self.bins;
        let (fi, fw) = f;
        let (mi, mw) = m;
        let fw0 = 1.0 - fw;
        let mw0 = 1.0 - mw;
        let r0 = fi * b + mi;
        let r1 = r0 + b;
        self.joint[r0] += fw0 * mw0;
        self.joint[r0 + 1] += fw0 * mw;
        self.joint[r1] += fw * mw0;
        self.joint[r1 + 1] += fw * mw;
        self.fixed[fi] += fw0;
        self.fixed[fi + 1] += fw;
        self.moving[mi] += mw0;
        self.moving[mi + 1] += mw;
        self.total += 1.0;
    }

    pub fn entropy_sums(&self) -> EntropySums {
        EntropySums {
            joint: self.joint.iter().map(|&h| xlogx(h)).sum(),
            fixed: self.fixed.iter().map(|&h| xlogx(h)).sum(),
            moving: self.moving.iter().map(|&h| xlogx(h)).sum(),
            total: self.total,
        }
    }

    /// `sum p(i,j) ln(p(i,j) / (p(i) p(j)))`, natural log.
    pub fn mutual_information(&self) -> f64 {
        self.entropy_sums().mutual_information()
    }
}

/// `sum h ln h` over the joint and both marginals; MI follows from these and
/// the sample count, which lets callers update MI from a few changed cells.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EntropySums {
    pub joint: f64,
    pub fixed: f64,
    pub moving: f64,
    pub total: f64,
}

impl EntropySums {
    #[inline]
    pub fn mutual_information(&self) -> f64 {
        if self.total <= 0.0 {
            return 0.0;
        }
        let mi = self.total.ln() + (self.joint - self.fixed - self.moving) / self.total;
        mi.max(0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MutualInformation<T> {
    pub mi: T,
    /// `false` when the fixed image is constant and MI carries no signal.
    pub informative: bool,
}

impl<T: Real> MutualInformation<T> {
    /// Registration cost: `-MI`.
    pub fn cost(&self) -> T {
        -self.mi
    }
}

fn is_constant<T: Real>(img: &GrayImage<T>) -> bool {
    let first = img.data()[0];
    img.data().iter().all(|&v| v == first)
}

pub fn mutual_information<T: Real>(
    fixed: &GrayImage<T>,
    moving: &GrayImage<T>,
    bins: usize,
) -> Result<MutualInformation<T>> {
    if !fixed.same_shape(moving) {
        return Err(Error::DimensionMismatch(format!(
            "fixed {:?} vs moving {:?}",
            fixed.dims(),
            moving.dims()
        )));
    }
    if bins < 2 {
        return Err(Error::invalid("histogram bins", "need at least 2"));
    }
    if is_constant(fixed) {
        return Ok(MutualInformation {
            mi: T::zero(),
            informative: false,
        });
    }
    if is_constant(moving) {
        return Ok(MutualInformation {
            mi: T::zero(),
            informative: true,
        });
    }
    let mut h = JointHistogram::new(bins);
    for (&f, &m) in fixed.data().iter().zip(moving.data()) {
        h.add(bin_position(f.f64(), bins), bin_position(m.f64(), bins));
    }
    Ok(MutualInformation {
        mi: T::lit(h.mutual_information()),
        informative: true,
    })
}
