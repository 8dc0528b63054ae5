//! Cone-beam forward projection of a labeled volume onto a flat detector.
//!
//! World frame: isocenter at the origin, `z` is the patient superior axis.
//! At primary/secondary angles (0, 0) the source sits on `+y`; a primary
//! angle of +90° moves it to `+x`. Path lengths are exact voxel chord
//! lengths from an incremental parametric traversal.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::atlas::ViewLabel;
use crate::error::{Error, Result};
use crate::imgcore::{BinaryMask, GrayImage, LabelVolume};
use crate::scalar::Real;

/// C-arm acquisition geometry; field names match the geometry sidecar JSON.
///
/// DICOM mapping: `sid_mm` ← Distance Source to Patient (0018,1111),
/// `sdd_mm` ← Distance Source to Detector (0018,1110),
/// `primary_angle_deg` ← Positioner Primary Angle (0018,1510),
/// `secondary_angle_deg` ← Positioner Secondary Angle (0018,1511),
/// `det_spacing_mm` ← Imager Pixel Spacing (0018,1164),
/// `det_cols`/`det_rows` ← Columns/Rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeBeamGeometry {
    pub sid_mm: f64,
    pub sdd_mm: f64,
    pub primary_angle_deg: f64,
    pub secondary_angle_deg: f64,
    pub det_cols: usize,
    pub det_rows: usize,
    pub det_spacing_mm: [f64; 2],
}

impl ConeBeamGeometry {
    pub fn validate(&self) -> Result<()> {
        let bad = |why: String| Err(Error::invalid("geometry", why));
        if !(self.sid_mm > 0.0 && self.sid_mm < self.sdd_mm && self.sdd_mm.is_finite()) {
            return bad(format!(
                "need 0 < sid < sdd (sid = {}, sdd = {})",
                self.sid_mm, self.sdd_mm
            ));
        }
        if self.det_cols == 0 || self.det_rows == 0 {
            return bad("detector needs at least one row and column".into());
        }
        if !self.det_spacing_mm.iter().all(|&s| s > 0.0 && s.is_finite()) {
            return bad("detector spacing must be > 0".into());
        }
        if !(self.primary_angle_deg.is_finite() && self.secondary_angle_deg.is_finite()) {
            return bad("angles must be finite".into());
        }
        Ok(())
    }

    /// The two biplane views: AP at 0°, lateral at +90°, no tilt.
    pub fn for_view(view: ViewLabel, sid_mm: f64, sdd_mm: f64, cols: usize, rows: usize, spacing: [f64; 2]) -> Self {
        let primary = match view {
            ViewLabel::Anteroposterior => 0.0,
            ViewLabel::Lateral => 90.0,
        };
        Self {
            sid_mm,
            sdd_mm,
            primary_angle_deg: primary,
            secondary_angle_deg: 0.0,
            det_cols: cols,
            det_rows: rows,
            det_spacing_mm: spacing,
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let g: Self = serde_json::from_str(s)?;
        g.validate()?;
        Ok(g)
    }
}

/// Source position and detector basis in world coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectorFrame {
    pub source: [f64; 3],
    pub center: [f64; 3],
    /// Detector column direction.
    pub u: [f64; 3],
    /// Detector "up" direction; rows run along `-v`.
    pub v: [f64; 3],
    /// Unit vector from isocenter towards the source.
    pub axis: [f64; 3],
    cols: usize,
    rows: usize,
    spacing: [f64; 2],
}

impl DetectorFrame {
    /// World position of the center of detector pixel `(col, row)`.
    pub fn pixel_center(&self, col: f64, row: f64) -> [f64; 3] {
        let du = (col - 0.5 * (self.cols as f64 - 1.0)) * self.spacing[0];
        let dv = (0.5 * (self.rows as f64 - 1.0) - row) * self.spacing[1];
        std::array::from_fn(|i| self.center[i] + du * self.u[i] + dv * self.v[i])
    }
}

pub fn place_geometry(g: &ConeBeamGeometry) -> Result<DetectorFrame> {
    g.validate()?;
    let (sa, ca) = g.primary_angle_deg.to_radians().sin_cos();
    let (sb, cb) = g.secondary_angle_deg.to_radians().sin_cos();
    let axis = [sa * cb, ca * cb, sb];
    let u = [ca, -sa, 0.0];
    let v = [-sa * sb, -ca * sb, cb];
    let source = axis.map(|a| g.sid_mm * a);
    let center = std::array::from_fn(|i| source[i] - g.sdd_mm * axis[i]);
    Ok(DetectorFrame {
        source,
        center,
        u,
        v,
        axis,
        cols: g.det_cols,
        rows: g.det_rows,
        spacing: g.det_spacing_mm,
    })
}

/// Geometric magnification of an object at the isocenter.
pub fn magnification(g: &ConeBeamGeometry) -> f64 {
    g.sdd_mm / g.sid_mm
}

/// Silhouette threshold for a volume: half the smallest voxel spacing (mm).
pub fn silhouette_epsilon(volume: &LabelVolume) -> f64 {
    0.5 * volume.spacing().iter().copied().fold(f64::INFINITY, f64::min)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelProjection<T> {
    pub integral: GrayImage<T>,
    pub silhouette: BinaryMask,
}

/// Detector-plane path-length images for a set of labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection<T> {
    /// Path length (mm) through any selected label.
    pub integral: GrayImage<T>,
    pub silhouette: BinaryMask,
    pub per_label: BTreeMap<u32, LabelProjection<T>>,
    pub epsilon: T,
}

/// Lookup from label value to its slot in the selected set.
struct LabelSlots {
    slots: Vec<u32>,
}

const NO_SLOT: u32 = u32::MAX;

impl LabelSlots {
    fn new(labels: &[u32]) -> Self {
        let max = labels.iter().copied().max().map_or(0, |m| m as usize + 1);
        let mut slots = vec![NO_SLOT; max];
        for (i, &l) in labels.iter().enumerate() {
            slots[l as usize] = i as u32;
        }
        Self { slots }
    }

    #[inline]
    fn get(&self, label: u32) -> Option<usize> {
        match self.slots.get(label as usize) {
            Some(&s) if s != NO_SLOT => Some(s as usize),
            _ => None,
        }
    }
}

/// Grid description in the traversal scalar type.
struct Grid<T> {
    lo: [T; 3],
    spacing: [T; 3],
    dims: [usize; 3],
}

impl<T: Real> Grid<T> {
    fn of(volume: &LabelVolume) -> Self {
        let (lo, _) = volume.bounds();
        Self {
            lo: lo.map(T::lit),
            spacing: volume.spacing().map(T::lit),
            dims: volume.dims(),
        }
    }
}

/// Walk the segment `from → to` through the voxel grid, calling `visit` with
/// each crossed voxel's linear index and chord length.
fn traverse<T: Real>(grid: &Grid<T>, from: [T; 3], to: [T; 3], mut visit: impl FnMut(usize, T)) {
    let d: [T; 3] = std::array::from_fn(|i| to[i] - from[i]);
    let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    if len <= T::zero() {
        return;
    }
    let mut t0 = T::zero();
    let mut t1 = T::one();
    for i in 0..3 {
        let hi = grid.lo[i] + T::from_count(grid.dims[i]) * grid.spacing[i];
        if d[i] == T::zero() {
            if from[i] < grid.lo[i] || from[i] > hi {
                return;
            }
        } else {
            let a = (grid.lo[i] - from[i]) / d[i];
            let b = (hi - from[i]) / d[i];
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
    }
    if t0 >= t1 {
        return;
    }

    let mut idx = [0usize; 3];
    let mut step = [0isize; 3];
    let mut t_next = [T::infinity(); 3];
    let mut t_delta = [T::infinity(); 3];
    let tm = (t0 + t1) * T::lit(0.5);
    for i in 0..3 {
        // Locate the entry voxel from a point just inside the clipped span
        // so rays starting on a face land in the right cell.
        let p = from[i] + d[i] * (t0 + (tm - t0) * T::lit(1e-9));
        let f = ((p - grid.lo[i]) / grid.spacing[i]).floor();
        let max = grid.dims[i] as isize - 1;
        let k = (f.to_isize().unwrap_or(0)).clamp(0, max);
        idx[i] = k as usize;
        if d[i] > T::zero() {
            step[i] = 1;
            let edge = grid.lo[i] + T::from_count(k as usize + 1) * grid.spacing[i];
            t_next[i] = (edge - from[i]) / d[i];
            t_delta[i] = grid.spacing[i] / d[i];
        } else if d[i] < T::zero() {
            step[i] = -1;
            let edge = grid.lo[i] + T::from_count(k as usize) * grid.spacing[i];
            t_next[i] = (edge - from[i]) / d[i];
            t_delta[i] = -grid.spacing[i] / d[i];
        }
    }

    let (nx, ny) = (grid.dims[0], grid.dims[1]);
    let mut t = t0;
    loop {
        let axis = if t_next[0] <= t_next[1] && t_next[0] <= t_next[2] {
            0
        } else if t_next[1] <= t_next[2] {
            1
        } else {
            2
        };
        let t_exit = t_next[axis].min(t1);
        if t_exit > t {
            visit((idx[2] * ny + idx[1]) * nx + idx[0], (t_exit - t) * len);
        }
        if t_next[axis] >= t1 {
            break;
        }
        t = t_exit;
        let k = idx[axis] as isize + step[axis];
        if k < 0 || k >= grid.dims[axis] as isize {
            break;
        }
        idx[axis] = k as usize;
        t_next[axis] += t_delta[axis];
    }
}

/// Exact length (mm) of the segment `from → to` inside voxels whose label is
/// in `labels`.
pub fn path_length<T: Real>(volume: &LabelVolume, labels: &BTreeSet<u32>, from: [f64; 3], to: [f64; 3]) -> T {
    let grid = Grid::<T>::of(volume);
    let data = volume.data();
    let mut acc = T::zero();
    traverse(&grid, from.map(T::lit), to.map(T::lit), |i, l| {
        if labels.contains(&data[i]) {
            acc += l;
        }
    });
    acc
}

/// Cast one ray per detector pixel from the source through the pixel center
/// and accumulate per-label path lengths. Empty `labels` yields all-zero
/// images.
pub fn project<T: Real>(
    volume: &LabelVolume,
    labels: &BTreeSet<u32>,
    g: &ConeBeamGeometry,
) -> Result<Projection<T>> {
    let frame = place_geometry(g)?;
    let label_list: Vec<u32> = labels.iter().copied().filter(|&l| l != 0).collect();
    let slots = LabelSlots::new(&label_list);
    let grid = Grid::<T>::of(volume);
    let data = volume.data();
    let (cols, rows) = (g.det_cols, g.det_rows);
    let nl = label_list.len();
    let source = frame.source.map(T::lit);

    // Row-major buffer of `nl` path lengths per pixel.
    let mut per_pixel = vec![T::zero(); cols * rows * nl];
    if nl > 0 {
        per_pixel
            .par_chunks_mut(cols * nl)
            .enumerate()
            .for_each(|(r, row)| {
                for c in 0..cols {
                    let target = frame.pixel_center(c as f64, r as f64).map(T::lit);
                    let acc = &mut row[c * nl..(c + 1) * nl];
                    traverse(&grid, source, target, |i, l| {
                        if let Some(s) = slots.get(data[i]) {
                            acc[s] += l;
                        }
                    });
                }
            });
    }

    let spacing = [T::lit(g.det_spacing_mm[0]), T::lit(g.det_spacing_mm[1])];
    let eps = T::lit(silhouette_epsilon(volume));
    let total: Vec<T> = (0..cols * rows)
        .map(|p| per_pixel[p * nl..(p + 1) * nl].iter().copied().sum())
        .collect();
    let integral = GrayImage::new(cols, rows, spacing, total)?;
    let silhouette = integral.above(eps);
    let per_label = label_list
        .iter()
        .enumerate()
        .map(|(s, &l)| {
            let img = GrayImage::new(
                cols,
                rows,
                spacing,
                (0..cols * rows).map(|p| per_pixel[p * nl + s]).collect(),
            )
            .expect("consistent shape");
            let sil = img.above(eps);
            (
                l,
                LabelProjection {
                    integral: img,
                    silhouette: sil,
                },
            )
        })
        .collect();
    Ok(Projection {
        integral,
        silhouette,
        per_label,
        epsilon: eps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(cols: usize, rows: usize, sp: f64) -> ConeBeamGeometry {
        ConeBeamGeometry {
            sid_mm: 750.0,
            sdd_mm: 1200.0,
            primary_angle_deg: 0.0,
            secondary_angle_deg: 0.0,
            det_cols: cols,
            det_rows: rows,
            det_spacing_mm: [sp, sp],
        }
    }

    fn norm(a: [f64; 3]) -> f64 {
        (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
    }

    #[test]
    fn placement_conventions() {
        let f = place_geometry(&geom(4, 4, 1.0)).unwrap();
        assert_eq!(f.source, [0.0, 750.0, 0.0]);
        assert_eq!(f.center, [0.0, -450.0, 0.0]);
        assert_eq!(f.v, [0.0, 0.0, 1.0]);
        let mut g = geom(4, 4, 1.0);
        g.primary_angle_deg = 90.0;
        let f = place_geometry(&g).unwrap();
        assert!((f.source[0] - 750.0).abs() < 1e-9 && f.source[1].abs() < 1e-9);
        for (a, b) in [(12.0, -31.0), (170.0, 44.0), (-75.0, 5.0)] {
            g.primary_angle_deg = a;
            g.secondary_angle_deg = b;
            let f = place_geometry(&g).unwrap();
            let sd: [f64; 3] = std::array::from_fn(|i| f.source[i] - f.center[i]);
            assert!((norm(sd) - 1200.0).abs() < 1e-9);
            let dot = |x: [f64; 3], y: [f64; 3]| x[0] * y[0] + x[1] * y[1] + x[2] * y[2];
            assert!(dot(f.u, f.v).abs() < 1e-12);
            assert!(dot(f.u, f.axis).abs() < 1e-12);
            assert!(dot(f.v, f.axis).abs() < 1e-12);
            assert!((norm(f.u) - 1.0).abs() < 1e-12 && (norm(f.v) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_geometry() {
        let mut g = geom(4, 4, 1.0);
        g.sid_mm = 1300.0;
        assert!(place_geometry(&g).is_err());
        let mut g = geom(0, 4, 1.0);
        assert!(g.validate().is_err());
        g.det_cols = 2;
        g.det_spacing_mm = [0.0, 1.0];
        assert!(g.validate().is_err());
    }

    #[test]
    fn magnification_values() {
        assert!((magnification(&geom(1, 1, 1.0)) - 1.6).abs() < 1e-15);
        let mut g = geom(1, 1, 1.0);
        g.sid_mm = g.sdd_mm - 1e-6;
        assert!((magnification(&g) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn axis_aligned_row_chord() {
        // A row of 5 voxels of 2 mm along y, crossed by the central ray.
        let v = LabelVolume::centered([1, 5, 1], [2.0; 3], vec![1; 5]).unwrap();
        let l: f64 = path_length(&v, &BTreeSet::from([1]), [0.0, 750.0, 0.0], [0.0, -450.0, 0.0]);
        assert!((l - 10.0).abs() < 1e-12, "{l}");
        let p = project::<f64>(&v, &BTreeSet::from([1]), &geom(3, 3, 0.1)).unwrap();
        assert!((p.integral.get(1, 1) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn single_voxel_projects_to_center() {
        let mut data = vec![0u32; 27];
        data[13] = 1;
        let v = LabelVolume::centered([3, 3, 3], [1.0; 3], data).unwrap();
        let p = project::<f64>(&v, &BTreeSet::from([1]), &geom(9, 9, 0.5)).unwrap();
        assert!(p.silhouette.get(4, 4));
        assert_eq!(p.silhouette.centroid(), Some([4.0, 4.0]));
        assert!(p.silhouette.count() < 81);
        assert!(!p.silhouette.get(0, 0));
    }

    #[test]
    fn empty_label_set_is_zero() {
        let v = LabelVolume::centered([2, 2, 2], [1.0; 3], vec![1; 8]).unwrap();
        let p = project::<f64>(&v, &BTreeSet::new(), &geom(5, 5, 1.0)).unwrap();
        assert!(p.integral.data().iter().all(|&x| x == 0.0));
        assert!(p.silhouette.is_empty());
        assert!(p.per_label.is_empty());
    }

    #[test]
    fn f32_traversal_matches_f64() {
        let v = LabelVolume::centered([4, 4, 4], [1.5; 3], (0..64).map(|i| i % 3).collect()).unwrap();
        let set = BTreeSet::from([1, 2]);
        let a: f64 = path_length(&v, &set, [3.0, 750.0, -2.0], [-5.0, -450.0, 4.0]);
        let b: f32 = path_length(&v, &set, [3.0, 750.0, -2.0], [-5.0, -450.0, 4.0]);
        assert!(a > 0.0);
        assert!((a - b as f64).abs() < 1e-3 * a);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn volume() -> impl Strategy<Value = LabelVolume> {
            (2usize..7, 2usize..7, 2usize..7, 0.5f64..3.0).prop_flat_map(|(x, y, z, sp)| {
                proptest::collection::vec(0u32..4, x * y * z)
                    .prop_map(move |d| LabelVolume::centered([x, y, z], [sp; 3], d).unwrap())
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn disjoint_label_sets_add(v in volume(), a in -20.0f64..20.0, b in -20.0f64..20.0) {
                let mut g = geom(6, 5, 1.3);
                g.primary_angle_deg = a;
                g.secondary_angle_deg = b;
                let one = project::<f64>(&v, &BTreeSet::from([1]), &g).unwrap();
                let rest = project::<f64>(&v, &BTreeSet::from([2, 3]), &g).unwrap();
                let all = project::<f64>(&v, &BTreeSet::from([1, 2, 3]), &g).unwrap();
                for i in 0..all.integral.data().len() {
                    let sum = one.integral.data()[i] + rest.integral.data()[i];
                    prop_assert!((all.integral.data()[i] - sum).abs() < 1e-9);
                }
            }

            #[test]
            fn chord_never_exceeds_the_diagonal(
                v in volume(),
                from in proptest::array::uniform3(-40.0f64..40.0),
                to in proptest::array::uniform3(-40.0f64..40.0),
            ) {
                let l: f64 = path_length(&v, &BTreeSet::from([0, 1, 2, 3]), from, to);
                let d = v.dims();
                let sp = v.spacing();
                let diag = norm(std::array::from_fn(|i| d[i] as f64 * sp[i]));
                let seg = norm(std::array::from_fn(|i| to[i] - from[i]));
                prop_assert!(l >= 0.0);
                prop_assert!(l <= diag + 1e-9 && l <= seg + 1e-9, "{l} {diag} {seg}");
            }
        }
    }
}
