//! DSA sequence → binary perfusion mask:
//! temporal average → threshold → small-component removal → erosion + hole fill.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{BinaryMask, FrameSequence, GrayImage};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Polarity {
    /// Contrast lowers intensity (the usual subtracted-run rendering); the
    /// image is inverted before thresholding.
    ContrastDark,
    ContrastBright,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ThresholdMethod {
    Otsu,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    Four,
    Eight,
}

impl TryFrom<u8> for Connectivity {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            _ => Err(format!("connectivity must be 4 or 8, got {v}")),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        match c {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
        }
    }
}

impl Connectivity {
    fn offsets(self) -> &'static [(isize, isize)] {
        const FOUR: [(isize, isize); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
        const EIGHT: [(isize, isize); 8] = [
            (1, 0),
            (-1, 0),
            (0, 1),
            (0, -1),
            (1, 1),
            (1, -1),
            (-1, 1),
            (-1, -1),
        ];
        match self {
            Connectivity::Four => &FOUR,
            Connectivity::Eight => &EIGHT,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocParams {
    pub polarity: Polarity,
    pub threshold: ThresholdMethod,
    pub min_component_px: usize,
    pub erosion_radius: usize,
    pub connectivity: Connectivity,
}

impl Default for PreprocParams {
    fn default() -> Self {
        Self {
            polarity: Polarity::ContrastDark,
            threshold: ThresholdMethod::Otsu,
            min_component_px: 100,
            erosion_radius: 1,
            connectivity: Connectivity::Eight,
        }
    }
}

impl PreprocParams {
    pub fn validate(&self) -> Result<()> {
        if let ThresholdMethod::Fixed(t) = self.threshold {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::invalid("preproc params", format!("fixed threshold {t} not in (0, 1)")));
            }
        }
        Ok(())
    }
}

/// Pixel-wise arithmetic mean over frames.
pub fn temporal_average<T: Real>(seq: &FrameSequence<T>) -> GrayImage<T> {
    let frames = seq.frames();
    let (w, h) = seq.dims();
    let n = T::from_count(frames.len());
    let mut sum = vec![T::zero(); w * h];
    for f in frames {
        for (s, &v) in sum.iter_mut().zip(f.data()) {
            *s += v;
        }
    }
    for s in &mut sum {
        *s /= n;
    }
    GrayImage::new(w, h, seq.spacing(), sum).expect("mean of valid frames is valid")
}

pub const OTSU_LEVELS: usize = 256;

/// 8-bit level of an intensity in `[0, 1]`.
#[inline]
pub fn otsu_level(v: f64) -> usize {
    (v.clamp(0.0, 1.0) * 255.0).round() as usize
}

/// Result of an Otsu search: the winning level `k` (class 0 is levels `<= k`),
/// its intensity threshold, and the between-class variance it achieves.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OtsuResult {
    pub level: usize,
    pub threshold: f64,
    pub between_class_variance: f64,
}

/// Otsu's method on a 256-level histogram; the threshold sits halfway between
/// level `k` and `k + 1`. Ties resolve to the smallest level.
pub fn otsu<T: Real>(values: &[T]) -> Result<OtsuResult> {
    let mut hist = [0u64; OTSU_LEVELS];
    for v in values {
        hist[otsu_level(v.f64())] += 1;
    }
    let total = values.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let mut w0 = 0.0;
    let mut sum0 = 0.0;
    let mut best: Option<(usize, f64)> = None;
    for (k, &c) in hist.iter().enumerate().take(OTSU_LEVELS - 1) {
        w0 += c as f64;
        sum0 += k as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let var = (w0 / total) * (w1 / total) * (m0 - m1) * (m0 - m1);
        if best.is_none_or(|(_, b)| var > b) {
            best = Some((k, var));
        }
    }
    let (level, var) = best.ok_or_else(|| Error::Threshold("no separable classes".into()))?;
    Ok(OtsuResult {
        level,
        threshold: (level as f64 + 0.5) / 255.0,
        between_class_variance: var / (255.0 * 255.0),
    })
}

fn oriented<T: Real>(image: &GrayImage<T>, polarity: Polarity) -> GrayImage<T> {
    match polarity {
        Polarity::ContrastBright => image.clone(),
        Polarity::ContrastDark => image.map(|v| T::one() - v),
    }
}

/// Threshold an intensity image; pixels strictly above the threshold are
/// foreground. Returns the mask and the threshold used (on the oriented
/// scale).
pub fn threshold_with_value<T: Real>(image: &GrayImage<T>, params: &PreprocParams) -> Result<(BinaryMask, f64)> {
    let img = oriented(image, params.polarity);
    let t = match params.threshold {
        ThresholdMethod::Otsu => otsu(img.data())?.threshold,
        ThresholdMethod::Fixed(t) => t,
    };
    Ok((img.above(T::lit(t)), t))
}

pub fn threshold<T: Real>(image: &GrayImage<T>, params: &PreprocParams) -> Result<BinaryMask> {
    threshold_with_value(image, params).map(|(m, _)| m)
}

/// Connected-component label image (0 = background, components numbered
/// from 1 in raster order of their first pixel) and component sizes.
pub fn label_components(mask: &BinaryMask, connectivity: Connectivity) -> (Vec<u32>, Vec<usize>) {
    let (w, h) = mask.dims();
    let mut labels = vec![0u32; w * h];
    let mut sizes = vec![0usize];
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !mask.data()[start] || labels[start] != 0 {
            continue;
        }
        let id = sizes.len() as u32;
        let mut size = 0usize;
        labels[start] = id;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            size += 1;
            let (x, y) = ((p % w) as isize, (p / w) as isize);
            for &(dx, dy) in connectivity.offsets() {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let q = ny as usize * w + nx as usize;
                if mask.data()[q] && labels[q] == 0 {
                    labels[q] = id;
                    queue.push_back(q);
                }
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

/// Drop connected components smaller than `min_component_px` pixels.
pub fn filter_components(mask: &BinaryMask, min_component_px: usize, connectivity: Connectivity) -> BinaryMask {
    if min_component_px == 0 {
        return mask.clone();
    }
    let (labels, sizes) = label_components(mask, connectivity);
    let mut out = mask.clone();
    for (o, &l) in out.data_mut().iter_mut().zip(&labels) {
        *o = l != 0 && sizes[l as usize] >= min_component_px;
    }
    out
}

/// Binary erosion with a `(2r+1)²` square. Only in-image neighbors count, so
/// the image border does not erode a mask that touches it.
pub fn erode(mask: &BinaryMask, radius: usize) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    let (w, h) = mask.dims();
    // Separable: a pixel survives iff its row window, then column window, is all set.
    let pass = |src: &[bool], len: usize, lines: usize, at: &dyn Fn(usize, usize) -> usize| {
        let mut dst = vec![false; src.len()];
        let mut prefix = vec![0usize; len + 1];
        for line in 0..lines {
            for i in 0..len {
                prefix[i + 1] = prefix[i] + (!src[at(line, i)]) as usize;
            }
            for i in 0..len {
                let lo = i.saturating_sub(radius);
                let hi = (i + radius + 1).min(len);
                dst[at(line, i)] = prefix[hi] - prefix[lo] == 0;
            }
        }
        dst
    };
    let rows = pass(mask.data(), w, h, &|y, x| y * w + x);
    let both = pass(&rows, h, w, &|x, y| y * w + x);
    BinaryMask::new(w, h, mask.spacing(), both).expect("same shape")
}

/// Background pixels not 4-connected to the image border become foreground.
pub fn fill_holes(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = mask.dims();
    let mut outside = vec![false; w * h];
    let mut queue = VecDeque::new();
    let seed = |p: usize, outside: &mut Vec<bool>, queue: &mut VecDeque<usize>| {
        if !mask.data()[p] && !outside[p] {
            outside[p] = true;
            queue.push_back(p);
        }
    };
    for x in 0..w {
        seed(x, &mut outside, &mut queue);
        seed((h - 1) * w + x, &mut outside, &mut queue);
    }
    for y in 0..h {
        seed(y * w, &mut outside, &mut queue);
        seed(y * w + w - 1, &mut outside, &mut queue);
    }
    while let Some(p) = queue.pop_front() {
        let (x, y) = ((p % w) as isize, (p / w) as isize);
        for &(dx, dy) in Connectivity::Four.offsets() {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                continue;
            }
            let q = ny as usize * w + nx as usize;
            if !mask.data()[q] && !outside[q] {
                outside[q] = true;
                queue.push_back(q);
            }
        }
    }
    let data = outside.into_iter().map(|o| !o).collect();
    BinaryMask::new(w, h, mask.spacing(), data).expect("same shape")
}

pub fn refine(mask: &BinaryMask, erosion_radius: usize) -> BinaryMask {
    fill_holes(&erode(mask, erosion_radius))
}

/// Every intermediate of [`make_mask`], for debug dumps.
#[derive(Clone, Debug)]
pub struct MaskStages<T> {
    pub average: GrayImage<T>,
    pub threshold: f64,
    pub raw: BinaryMask,
    pub filtered: BinaryMask,
    pub mask: BinaryMask,
}

pub fn make_mask_stages<T: Real>(seq: &FrameSequence<T>, params: &PreprocParams) -> Result<MaskStages<T>> {
    params.validate()?;
    let average = temporal_average(seq);
    let (raw, threshold) = threshold_with_value(&average, params)?;
    let filtered = filter_components(&raw, params.min_component_px, params.connectivity);
    let mask = refine(&filtered, params.erosion_radius);
    Ok(MaskStages {
        average,
        threshold,
        raw,
        filtered,
        mask,
    })
}

pub fn make_mask<T: Real>(seq: &FrameSequence<T>, params: &PreprocParams) -> Result<BinaryMask> {
    make_mask_stages(seq, params).map(|s| s.mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn img(w: usize, h: usize, f: impl FnMut(usize, usize) -> f64) -> GrayImage<f64> {
        GrayImage::from_fn(w, h, [1.0, 1.0], f)
    }

    fn bright(threshold: ThresholdMethod) -> PreprocParams {
        PreprocParams {
            polarity: Polarity::ContrastBright,
            threshold,
            ..Default::default()
        }
    }

    #[test]
    fn average_examples() {
        let seq = FrameSequence::new(vec![img(3, 2, |_, _| 0.4); 4], None).unwrap();
        assert!(temporal_average(&seq).data().iter().all(|&v| (v - 0.4).abs() < 1e-15));
        let seq = FrameSequence::new(vec![img(3, 2, |_, _| 0.0), img(3, 2, |_, _| 1.0)], None).unwrap();
        assert!(temporal_average(&seq).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn bimodal_otsu_selects_bright_population() {
        let im = img(8, 8, |x, _| if x < 3 { 0.2 } else { 0.8 });
        let m = threshold(&im, &bright(ThresholdMethod::Otsu)).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                assert_eq!(m.get(x, y), x >= 3);
            }
        }
    }

    #[test]
    fn fixed_threshold_is_strict() {
        let im = img(2, 1, |x, _| if x == 0 { 0.5 } else { 0.51 });
        let m = threshold(&im, &bright(ThresholdMethod::Fixed(0.5))).unwrap();
        assert_eq!(m.data(), &[false, true]);
    }

    #[test]
    fn constant_image_has_no_otsu_split() {
        let e = threshold(&img(4, 4, |_, _| 0.3), &bright(ThresholdMethod::Otsu)).unwrap_err();
        assert!(e.to_string().contains("no separable classes"));
    }

    #[test]
    fn dark_polarity_inverts() {
        let im = img(4, 1, |x, _| x as f64 / 3.0);
        let m = threshold(
            &im,
            &PreprocParams {
                threshold: ThresholdMethod::Fixed(0.5),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(m.data(), &[true, true, false, false]);
    }

    #[test]
    fn component_sizes_filter() {
        let mut m = BinaryMask::empty(40, 40, [1.0, 1.0]);
        // 5-pixel blob and a 20x25 = 500 pixel blob.
        for x in 0..5 {
            m.set(x, 0, true);
        }
        for y in 10..30 {
            for x in 10..35 {
                m.set(x, y, true);
            }
        }
        let f = filter_components(&m, 100, Connectivity::Eight);
        assert_eq!(f.count(), 500);
        assert!(!f.get(0, 0));
        assert_eq!(filter_components(&m, 0, Connectivity::Four), m);
    }

    #[test]
    fn diagonal_connectivity_matters() {
        let m = BinaryMask::from_fn(3, 3, [1.0, 1.0], |x, y| x == y);
        assert_eq!(label_components(&m, Connectivity::Four).1.len() - 1, 3);
        assert_eq!(label_components(&m, Connectivity::Eight).1.len() - 1, 1);
    }

    fn annulus(n: usize, r_in: f64, r_out: f64) -> BinaryMask {
        let c = (n as f64 - 1.0) / 2.0;
        BinaryMask::from_fn(n, n, [1.0, 1.0], |x, y| {
            let r = ((x as f64 - c).powi(2) + (y as f64 - c).powi(2)).sqrt();
            r >= r_in && r <= r_out
        })
    }

    #[test]
    fn annulus_fills_to_disk() {
        let ring = annulus(41, 8.0, 15.0);
        let filled = refine(&ring, 0);
        assert_eq!(filled, annulus(41, 0.0, 15.0));
        let solid = annulus(41, 0.0, 15.0);
        assert_eq!(fill_holes(&solid), solid);
    }

    #[test]
    fn erosion_of_square() {
        let m = BinaryMask::from_fn(10, 10, [1.0, 1.0], |x, y| (2..8).contains(&x) && (2..8).contains(&y));
        let e = erode(&m, 1);
        assert_eq!(e.count(), 16);
        assert!(e.get(3, 3) && !e.get(2, 2));
        // The border does not erode a mask that touches it.
        let full = BinaryMask::from_fn(5, 5, [1.0, 1.0], |_, _| true);
        assert_eq!(erode(&full, 2), full);
    }

    #[test]
    fn all_zero_fixed_threshold_is_empty() {
        let seq = FrameSequence::new(vec![img(16, 16, |_, _| 0.0); 3], None).unwrap();
        let m = make_mask(&seq, &bright(ThresholdMethod::Fixed(0.5))).unwrap();
        assert!(m.is_empty());
    }

    fn mask_strategy() -> impl Strategy<Value = BinaryMask> {
        (4usize..20, 4usize..20).prop_flat_map(|(w, h)| {
            proptest::collection::vec(any::<bool>(), w * h)
                .prop_map(move |d| BinaryMask::new(w, h, [1.0, 1.0], d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn morphology_monotonicity(m in mask_strategy(), r in 0usize..3, min in 0usize..6) {
            prop_assert!(erode(&m, r).is_subset_of(&m));
            prop_assert!(m.is_subset_of(&fill_holes(&m)));
            let f = fill_holes(&m);
            prop_assert_eq!(fill_holes(&f), f);
            prop_assert!(filter_components(&m, min, Connectivity::Eight).is_subset_of(&m));
        }

        #[test]
        fn polarity_yields_complement(levels in proptest::collection::vec(0u8..=255, 16..64)) {
            let w = levels.len();
            let im = img(w, 1, |x, _| levels[x] as f64 / 255.0);
            let b = threshold(&im, &bright(ThresholdMethod::Otsu));
            let d = threshold(&im, &PreprocParams::default());
            match (b, d) {
                (Ok(b), Ok(d)) => {
                    for (x, y) in b.data().iter().zip(d.data()) {
                        prop_assert_ne!(x, y);
                    }
                }
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "polarity changed separability"),
            }
        }
    }
}
