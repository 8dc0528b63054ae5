use crate::error::{Error, Result};
use crate::scalar::Real;

/// 2D row-major intensity image with physical pixel spacing (mm/pixel).
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage<T> {
    width: usize,
    height: usize,
    spacing: [T; 2],
    data: Vec<T>,
}

impl<T: Real> GrayImage<T> {
    pub fn new(width: usize, height: usize, spacing: [T; 2], data: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image", "width and height must be >= 1"));
        }
        if data.len() != width * height {
            return Err(Error::invalid(
                "image",
                format!("data length {} != {}x{}", data.len(), width, height),
            ));
        }
        if !(spacing[0] > T::zero() && spacing[1] > T::zero()) {
            return Err(Error::invalid("image", "spacing components must be > 0"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("image", "intensities must be finite"));
        }
        Ok(Self {
            width,
            height,
            spacing,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, spacing: [T; 2], value: T) -> Self {
        assert!(width > 0 && height > 0, "empty image");
        Self {
            width,
            height,
            spacing,
            data: vec![value; width * height],
        }
    }

    pub fn zeros(width: usize, height: usize, spacing: [T; 2]) -> Self {
        Self::filled(width, height, spacing, T::zero())
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        spacing: [T; 2],
        mut f: impl FnMut(usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            spacing,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn spacing(&self) -> [T; 2] {
        self.spacing
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    /// Physical extent (mm) spanned by pixel centers: `(n - 1) * spacing`.
    pub fn extent(&self) -> [T; 2] {
        [
            T::from_count(self.width - 1) * self.spacing[0],
            T::from_count(self.height - 1) * self.spacing[1],
        ]
    }

    /// Physical center of the pixel grid (mm), with pixel (0, 0) at the origin.
    pub fn center(&self) -> [T; 2] {
        let e = self.extent();
        let half = T::lit(0.5);
        [e[0] * half, e[1] * half]
    }

    pub fn same_shape<U>(&self, other: &GrayImage<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn max_value(&self) -> T {
        self.data
            .iter()
            .copied()
            .fold(T::neg_infinity(), |a, b| a.max(b))
    }

    pub fn min_value(&self) -> T {
        self.data.iter().copied().fold(T::infinity(), |a, b| a.min(b))
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            width: self.width,
            height: self.height,
            spacing: self.spacing,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Scale intensities into `[0, 1]` by the maximum; all-zero images stay zero.
    pub fn normalized_by_max(&self) -> Self {
        let m = self.max_value();
        if m > T::zero() {
            self.map(|v| (v / m).max(T::zero()))
        } else {
            self.map(|_| T::zero())
        }
    }

    /// `true` where the intensity strictly exceeds `level`.
    pub fn above(&self, level: T) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            spacing: [OrdF64(self.spacing[0].f64()), OrdF64(self.spacing[1].f64())],
            data: self.data.iter().map(|&v| v > level).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> GrayImage<U> {
        GrayImage {
            width: self.width,
            height: self.height,
            spacing: [U::lit(self.spacing[0].f64()), U::lit(self.spacing[1].f64())],
            data: self.data.iter().map(|v| U::lit(v.f64())).collect(),
        }
    }
}

/// 2D row-major boolean mask with physical pixel spacing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    spacing: [OrdF64; 2],
    data: Vec<bool>,
}

// Spacing is kept as raw f64 but compared bitwise so masks can be `Eq`.
#[derive(Clone, Copy, Debug)]
struct OrdF64(f64);

impl PartialEq for OrdF64 {
    fn eq(&self, o: &Self) -> bool {
        self.0.to_bits() == o.0.to_bits()
    }
}
impl Eq for OrdF64 {}

impl BinaryMask {
    pub fn new(width: usize, height: usize, spacing: [f64; 2], data: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("mask", "width and height must be >= 1"));
        }
        if data.len() != width * height {
            return Err(Error::invalid(
                "mask",
                format!("data length {} != {}x{}", data.len(), width, height),
            ));
        }
        if !(spacing[0] > 0.0 && spacing[1] > 0.0) {
            return Err(Error::invalid("mask", "spacing components must be > 0"));
        }
        Ok(Self {
            width,
            height,
            spacing: [OrdF64(spacing[0]), OrdF64(spacing[1])],
            data,
        })
    }

    pub fn empty(width: usize, height: usize, spacing: [f64; 2]) -> Self {
        Self::new(width, height, spacing, vec![false; width * height]).expect("valid empty mask")
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        spacing: [f64; 2],
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, spacing, data).expect("valid mask")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn spacing(&self) -> [f64; 2] {
        [self.spacing[0].0, self.spacing[1].0]
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [bool] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    /// `{0, 1}` float image.
    pub fn to_gray<T: Real>(&self) -> GrayImage<T> {
        GrayImage {
            width: self.width,
            height: self.height,
            spacing: [T::lit(self.spacing[0].0), T::lit(self.spacing[1].0)],
            data: self
                .data
                .iter()
                .map(|&b| if b { T::one() } else { T::zero() })
                .collect(),
        }
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.data.len() == other.data.len()
            && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    /// Dice overlap; two empty masks score 1.
    pub fn dice(&self, other: &BinaryMask) -> f64 {
        assert_eq!(self.dims(), other.dims(), "dice on masks of different size");
        let mut inter = 0usize;
        let mut total = 0usize;
        for (&a, &b) in self.data.iter().zip(&other.data) {
            inter += (a && b) as usize;
            total += a as usize + b as usize;
        }
        if total == 0 {
            1.0
        } else {
            2.0 * inter as f64 / total as f64
        }
    }

    /// Mean of foreground pixel coordinates (pixel units), `None` for an empty mask.
    pub fn centroid(&self) -> Option<[f64; 2]> {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    sx += x as f64;
                    sy += y as f64;
                    n += 1;
                }
            }
        }
        (n > 0).then(|| [sx / n as f64, sy / n as f64])
    }
}

/// 3D voxel grid of territory labels, x fastest. Label 0 is background.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelVolume {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    data: Vec<u32>,
}

impl LabelVolume {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3], data: Vec<u32>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::invalid("volume", "all dimensions must be >= 1"));
        }
        let n = dims[0] * dims[1] * dims[2];
        if data.len() != n {
            return Err(Error::invalid(
                "volume",
                format!("data length {} != {}x{}x{}", data.len(), dims[0], dims[1], dims[2]),
            ));
        }
        if !spacing.iter().all(|&s| s > 0.0 && s.is_finite()) {
            return Err(Error::invalid("volume", "spacing components must be > 0"));
        }
        if !origin.iter().all(|o| o.is_finite()) {
            return Err(Error::invalid("volume", "origin must be finite"));
        }
        Ok(Self {
            dims,
            spacing,
            origin,
            data,
        })
    }

    /// Volume whose geometric center sits at the world origin (the isocenter).
    pub fn centered(dims: [usize; 3], spacing: [f64; 3], data: Vec<u32>) -> Result<Self> {
        let origin = std::array::from_fn(|i| -0.5 * (dims[i] as f64 - 1.0) * spacing[i]);
        Self::new(dims, spacing, origin, data)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> u32 {
        self.data[self.index(x, y, z)]
    }

    /// Copy with the origin moved so the volume center is at the world origin.
    pub fn recentered(&self) -> Self {
        let origin = std::array::from_fn(|i| -0.5 * (self.dims[i] as f64 - 1.0) * self.spacing[i]);
        Self {
            origin,
            ..self.clone()
        }
    }

    /// World-space bounds of the voxel grid (outer voxel faces).
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let lo = std::array::from_fn(|i| self.origin[i] - 0.5 * self.spacing[i]);
        let hi = std::array::from_fn(|i| lo[i] + self.dims[i] as f64 * self.spacing[i]);
        (lo, hi)
    }

    pub fn diagonal(&self) -> f64 {
        (0..3)
            .map(|i| (self.dims[i] as f64 * self.spacing[i]).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Sorted distinct non-zero labels.
    pub fn labels(&self) -> Vec<u32> {
        let mut seen = std::collections::BTreeSet::new();
        for &v in &self.data {
            if v != 0 {
                seen.insert(v);
            }
        }
        seen.into_iter().collect()
    }

    pub fn count_label(&self, label: u32) -> usize {
        self.data.iter().filter(|&&v| v == label).count()
    }

    pub(crate) fn with_data(&self, data: Vec<u32>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        Self {
            data,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_lengths_and_spacing() {
        assert!(GrayImage::<f64>::new(2, 2, [1.0, 1.0], vec![0.0; 3]).is_err());
        assert!(GrayImage::<f64>::new(2, 2, [0.0, 1.0], vec![0.0; 4]).is_err());
        assert!(GrayImage::<f64>::new(1, 1, [1.0, 1.0], vec![f64::NAN]).is_err());
        assert!(BinaryMask::new(2, 2, [1.0, 1.0], vec![true; 5]).is_err());
        assert!(LabelVolume::new([2, 2, 2], [1.0; 3], [0.0; 3], vec![0; 7]).is_err());
        assert!(LabelVolume::new([2, 2, 2], [1.0, -1.0, 1.0], [0.0; 3], vec![0; 8]).is_err());
    }

    #[test]
    fn centered_volume_bounds_are_symmetric() {
        let v = LabelVolume::centered([4, 6, 2], [1.0, 0.5, 2.0], vec![0; 48]).unwrap();
        let (lo, hi) = v.bounds();
        for i in 0..3 {
            assert!((lo[i] + hi[i]).abs() < 1e-12);
        }
        assert_eq!(hi, [2.0, 1.5, 2.0]);
    }

    #[test]
    fn dice_of_identical_and_disjoint() {
        let a = BinaryMask::from_fn(4, 4, [1.0, 1.0], |x, _| x < 2);
        let b = BinaryMask::from_fn(4, 4, [1.0, 1.0], |x, _| x >= 2);
        assert_eq!(a.dice(&a), 1.0);
        assert_eq!(a.dice(&b), 0.0);
        assert_eq!(a.centroid(), Some([0.5, 1.5]));
    }
}
