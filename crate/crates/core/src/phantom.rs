//! Seeded synthetic cases with known geometry, warp and mask.
//!
//! A case projects the territories perfused from one site, warps the
//! projection by a sampled affine and a coarse cubic B-spline field, and
//! renders a contrast run whose intensity follows a gamma-variate curve.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::atlas::{InjectionSite, TerritoryLUT, ViewLabel};
use crate::error::{Error, Result};
use crate::imgcore::png_io::{quantize16, write_mask_png, write_png_gray};
use crate::imgcore::{write_nifti, BinaryMask, FrameSequence, GrayImage, LabelVolume};
use crate::io_util::atomic_write;
use crate::projector::{project, ConeBeamGeometry};
use crate::register::{apply_transform, Affine2, BSplineField2, GridSpec, Transform2};

pub const MAX_TRANSLATION_PX: f64 = 20.0;
pub const MAX_ROTATION_DEG: f64 = 10.0;
pub const SCALE_LIMITS: [f64; 2] = [0.9, 1.1];
pub const MAX_BSPLINE_PX: f64 = 8.0;
/// Raster peak of a sampled field, as a fraction of the configured bound.
pub const BSPLINE_PEAK_FRACTION: [f64; 2] = [0.75, 1.0];

/// Unsubtracted background level of every frame.
pub const BACKGROUND: f64 = 0.9;
/// Intensity drop at full opacification and the curve peak.
pub const CONTRAST_DROP: f64 = 0.6;
/// Path length (mm) over which opacity saturates: `c = 1 - exp(-L / λ)`.
pub const OPACITY_LENGTH_MM: f64 = 1.0;
/// Gamma-variate shape `(t / tp)^α · exp(α (1 - t / tp))`.
pub const GAMMA_ALPHA: f64 = 3.0;
/// Peak time as a fraction of the run.
pub const GAMMA_PEAK_FRACTION: f64 = 0.35;

pub const PHANTOM_SID_MM: f64 = 750.0;
pub const PHANTOM_SDD_MM: f64 = 1200.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WarpBounds {
    pub max_translation_px: f64,
    pub max_rotation_deg: f64,
    pub scale_range: [f64; 2],
    pub max_bspline_px: f64,
    /// Control intervals across the detector; fewer is smoother.
    pub bspline_intervals: usize,
}

impl Default for WarpBounds {
    fn default() -> Self {
        Self {
            max_translation_px: MAX_TRANSLATION_PX,
            max_rotation_deg: MAX_ROTATION_DEG,
            scale_range: SCALE_LIMITS,
            max_bspline_px: MAX_BSPLINE_PX,
            bspline_intervals: 4,
        }
    }
}

impl WarpBounds {
    pub fn identity() -> Self {
        Self {
            max_translation_px: 0.0,
            max_rotation_deg: 0.0,
            scale_range: [1.0, 1.0],
            max_bspline_px: 0.0,
            ..Self::default()
        }
    }

    /// Full affine range with no deformable component.
    pub fn affine_only() -> Self {
        Self {
            max_bspline_px: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |why: String| Err(Error::invalid("warp bounds", why));
        if !(0.0..=MAX_TRANSLATION_PX).contains(&self.max_translation_px) {
            return bad(format!("translation bound {} outside [0, {MAX_TRANSLATION_PX}] px", self.max_translation_px));
        }
        if !(0.0..=MAX_ROTATION_DEG).contains(&self.max_rotation_deg) {
            return bad(format!("rotation bound {} outside [0, {MAX_ROTATION_DEG}] deg", self.max_rotation_deg));
        }
        let [lo, hi] = self.scale_range;
        if !(SCALE_LIMITS[0] <= lo && lo <= hi && hi <= SCALE_LIMITS[1]) {
            return bad(format!("scale range [{lo}, {hi}] not inside {SCALE_LIMITS:?}"));
        }
        if !(0.0..=MAX_BSPLINE_PX).contains(&self.max_bspline_px) {
            return bad(format!("B-spline bound {} outside [0, {MAX_BSPLINE_PX}] px", self.max_bspline_px));
        }
        if !(1..=8).contains(&self.bspline_intervals) {
            return bad(format!("{} control intervals, need 1..=8", self.bspline_intervals));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    pub site: InjectionSite,
    pub view: ViewLabel,
    pub bounds: WarpBounds,
    pub noise_sigma: f64,
    pub n_frames: usize,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            site: InjectionSite::LeftAnterior,
            view: ViewLabel::Anteroposterior,
            bounds: WarpBounds::default(),
            noise_sigma: 0.02,
            n_frames: 12,
            seed: 0,
        }
    }
}

/// Dense displacement raster in pixels, stored at `f32` so the on-disk copy
/// is exactly the field used to render the frames.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementRaster {
    pub width: usize,
    pub height: usize,
    pub spacing: [f64; 2],
    pub data: Vec<[f32; 2]>,
}

impl DisplacementRaster {
    pub fn zeros(width: usize, height: usize, spacing: [f64; 2]) -> Self {
        Self {
            width,
            height,
            spacing,
            data: vec![[0.0; 2]; width * height],
        }
    }

    pub fn max_magnitude_px(&self) -> f64 {
        self.data
            .iter()
            .map(|d| (d[0] as f64).hypot(d[1] as f64))
            .fold(0.0, f64::max)
    }

    /// Bilinear lookup (px) at a physical point, clamped to the raster edge.
    pub fn sample_px(&self, x: [f64; 2]) -> [f64; 2] {
        let px = (x[0] / self.spacing[0]).clamp(0.0, (self.width - 1) as f64);
        let py = (x[1] / self.spacing[1]).clamp(0.0, (self.height - 1) as f64);
        let (x0, y0) = (px.floor() as usize, py.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (tx, ty) = (px - x0 as f64, py - y0 as f64);
        let at = |i: usize, j: usize, k: usize| self.data[j * self.width + i][k] as f64;
        let mut out = [0.0; 2];
        for (k, o) in out.iter_mut().enumerate() {
            let top = at(x0, y0, k) * (1.0 - tx) + at(x1, y0, k) * tx;
            let bottom = at(x0, y1, k) * (1.0 - tx) + at(x1, y1, k) * tx;
            *o = top * (1.0 - ty) + bottom * ty;
        }
        out
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data
            .iter()
            .flat_map(|d| d.iter().flat_map(|v| v.to_le_bytes()))
            .collect()
    }

    pub fn from_le_bytes(width: usize, height: usize, spacing: [f64; 2], bytes: &[u8]) -> Result<Self> {
        if bytes.len() != width * height * 8 {
            return Err(Error::Phantom(format!(
                "field raster has {} bytes, shape {height}x{width}x2 needs {}",
                bytes.len(),
                width * height * 8
            )));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| {
                [
                    f32::from_le_bytes([c[0], c[1], c[2], c[3]]),
                    f32::from_le_bytes([c[4], c[5], c[6], c[7]]),
                ]
            })
            .collect();
        Ok(Self {
            width,
            height,
            spacing,
            data,
        })
    }
}

/// Ground-truth fixed → moving map `A(x + d(x))`, the same composition a
/// registered transform pair uses.
#[derive(Clone, Debug, PartialEq)]
pub struct TruthWarp {
    pub affine: Affine2<f64>,
    pub field: DisplacementRaster,
}

impl Transform2<f64> for TruthWarp {
    fn displacement(&self, x: [f64; 2]) -> [f64; 2] {
        let d = self.field.sample_px(x);
        let inner = [x[0] + d[0] * self.field.spacing[0], x[1] + d[1] * self.field.spacing[1]];
        let y = self.affine.map(inner);
        [y[0] - x[0], y[1] - x[1]]
    }
}

#[derive(Clone, Debug)]
pub struct PhantomCase {
    pub atlas: LabelVolume,
    pub geometry: ConeBeamGeometry,
    pub site: InjectionSite,
    pub view: ViewLabel,
    pub labels: BTreeSet<u32>,
    pub true_affine: Affine2<f64>,
    pub true_field: DisplacementRaster,
    pub frames: FrameSequence<f64>,
    pub true_mask: BinaryMask,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl PhantomCase {
    pub fn truth(&self) -> TruthWarp {
        TruthWarp {
            affine: self.true_affine,
            field: self.true_field.clone(),
        }
    }
}

struct Blob {
    center: [f64; 3],
    radii: [f64; 3],
    /// Rows are the blob's local axes in volume coordinates.
    axes: [[f64; 3]; 3],
    power: f64,
    label: u32,
}

impl Blob {
    /// Superellipsoid norm; `< 1` inside.
    fn norm(&self, p: [f64; 3]) -> f64 {
        let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        let mut s = 0.0;
        for k in 0..3 {
            let a = &self.axes[k];
            let local = a[0] * d[0] + a[1] * d[1] + a[2] * d[2];
            s += (local / self.radii[k]).abs().powf(self.power);
        }
        s.powf(1.0 / self.power)
    }
}

fn rotation(yaw: f64, pitch: f64) -> [[f64; 3]; 3] {
    let (sy, cy) = yaw.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    // Rz(yaw) * Ry(pitch), rows taken as local axes.
    [[cy * cp, sy * cp, -sp], [-sy, cy, 0.0], [cy * sp, sy * sp, cp]]
}

/// Seeded atlas of `n` disjoint territories labeled `1..=n`, each the union
/// of a main superellipsoid and a satellite lobe, arranged on a ring about
/// the volume center. Spacing is 1 mm and the center sits at the origin.
pub fn synth_atlas(dims: [usize; 3], n: usize, seed: u64) -> Result<LabelVolume> {
    if n < 2 {
        return Err(Error::Phantom(format!("need at least 2 territories, got {n}")));
    }
    if dims.iter().any(|&d| d < 32) {
        return Err(Error::Phantom(format!("atlas dims {dims:?} below 32^3")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = *dims.iter().min().unwrap() as f64;
    let mid = dims.map(|d| (d as f64 - 1.0) / 2.0);
    let ring = 0.18 * size;
    let mut blobs = Vec::with_capacity(2 * n);
    for k in 0..n {
        let label = k as u32 + 1;
        let phi = std::f64::consts::TAU * (k as f64 + rng.random_range(-0.15..0.15)) / n as f64;
        let center = [
            mid[0] + ring * phi.cos(),
            mid[1] + rng.random_range(-0.08..0.08) * size,
            mid[2] + ring * phi.sin(),
        ];
        let radii = [0.0; 3].map(|_| rng.random_range(0.15..0.21) * size);
        let main = Blob {
            center,
            radii,
            axes: rotation(rng.random_range(0.0..std::f64::consts::PI), rng.random_range(-0.6..0.6)),
            power: rng.random_range(2.0..3.5),
            label,
        };
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let z: f64 = rng.random_range(-0.5..0.5);
        let r = (1.0 - z * z).sqrt();
        let dir = [r * theta.cos(), r * theta.sin(), z];
        let reach = 0.75 * radii.iter().sum::<f64>() / 3.0;
        let sat = Blob {
            center: [0, 1, 2].map(|i| center[i] + reach * dir[i]),
            radii: radii.map(|a| a * rng.random_range(0.45..0.65)),
            axes: rotation(rng.random_range(0.0..std::f64::consts::PI), rng.random_range(-0.6..0.6)),
            power: rng.random_range(2.0..3.5),
            label,
        };
        blobs.push(main);
        blobs.push(sat);
    }

    let [nx, ny, nz] = dims;
    let mut data = vec![0u32; nx * ny * nz];
    data.par_chunks_mut(nx * ny).enumerate().for_each(|(z, slab)| {
        for y in 0..ny {
            for x in 0..nx {
                let p = [x as f64, y as f64, z as f64];
                let mut best = (1.0, 0u32);
                for b in &blobs {
                    let f = b.norm(p);
                    if f < best.0 {
                        best = (f, b.label);
                    }
                }
                slab[y * nx + x] = best.1;
            }
        }
    });

    let total = data.len();
    let mut counts = vec![0usize; n + 1];
    for &v in &data {
        counts[v as usize] += 1;
    }
    for (label, &c) in counts.iter().enumerate().skip(1) {
        if c * 100 < total {
            return Err(Error::Phantom(format!(
                "territory {label} failed to fit: {c} voxels, under 1% of {total}"
            )));
        }
    }
    LabelVolume::centered(dims, [1.0; 3], data)
}

/// LUT for a synthetic atlas: labels are dealt round-robin to the three
/// sites; a site left empty receives every label.
pub fn synth_lut(n: usize) -> Result<TerritoryLUT> {
    let names: BTreeMap<u32, String> = (1..=n as u32).map(|l| (l, format!("territory {l}"))).collect();
    let all: BTreeSet<u32> = names.keys().copied().collect();
    let mut entries = BTreeMap::new();
    for (k, site) in InjectionSite::ALL.into_iter().enumerate() {
        let set: BTreeSet<u32> = all.iter().copied().filter(|l| (*l as usize - 1) % 3 == k).collect();
        entries.insert(site, if set.is_empty() { all.clone() } else { set });
    }
    TerritoryLUT::new(entries, names, BTreeMap::new())
}

/// Square detector of `det_px` pixels on which the atlas bounding box spans
/// 80% of the width.
pub fn phantom_geometry(view: ViewLabel, det_px: usize, atlas: &LabelVolume) -> ConeBeamGeometry {
    let (lo, hi) = atlas.bounds();
    let extent = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
    let spacing = PHANTOM_SDD_MM / PHANTOM_SID_MM * extent / (0.8 * det_px as f64);
    ConeBeamGeometry::for_view(view, PHANTOM_SID_MM, PHANTOM_SDD_MM, det_px, det_px, [spacing; 2])
}

/// Normalized gamma-variate curve over `n` frames, peak value 1.
pub fn time_curve(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let tp = GAMMA_PEAK_FRACTION * (n - 1) as f64;
    (0..n)
        .map(|k| {
            let r = k as f64 / tp;
            r.powf(GAMMA_ALPHA) * (GAMMA_ALPHA * (1.0 - r)).exp()
        })
        .collect()
}

/// Sample an affine about the detector center and a coarse B-spline field
/// whose raster maximum is a random fraction of the bound.
fn sample_warp(bounds: &WarpBounds, grid: GridSpec<f64>, rng: &mut ChaCha8Rng) -> Result<(Affine2<f64>, DisplacementRaster)> {
    let sp = grid.spacing;
    let extent = grid.extent();
    let center = [extent[0] / 2.0, extent[1] / 2.0];

    let r = bounds.max_translation_px * rng.random::<f64>().sqrt();
    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    let t = [r * phi.cos() * sp[0], r * phi.sin() * sp[1]];
    let angle = bounds.max_rotation_deg * rng.random_range(-1.0..=1.0);
    let [lo, hi] = bounds.scale_range;
    let scale = lo + (hi - lo) * rng.random::<f64>();
    let affine = Affine2::similarity(angle, scale, t, center);

    let mut raster = DisplacementRaster::zeros(grid.width, grid.height, sp);
    if bounds.max_bspline_px > 0.0 {
        let g = bounds.bspline_intervals as f64;
        let mut field = BSplineField2::covering(extent, [extent[0] / g, extent[1] / g])?;
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let coeffs: Vec<f64> = (0..2 * field.len()).map(|_| normal.sample(rng)).collect();
        field.set_params(&coeffs);
        let mm = field.rasterize(grid.width, grid.height, sp);
        let peak = mm
            .iter()
            .map(|d| (d[0] / sp[0]).hypot(d[1] / sp[1]))
            .fold(0.0, f64::max);
        let [lo, hi] = BSPLINE_PEAK_FRACTION;
        let target = bounds.max_bspline_px * rng.random_range(lo..=hi);
        let k = if peak > 0.0 { target / peak } else { 0.0 };
        // Narrowing to f32 may round up; stay inside the bound.
        let k = k * (1.0 - 1e-6);
        raster.data = mm
            .iter()
            .map(|d| [(k * d[0] / sp[0]) as f32, (k * d[1] / sp[1]) as f32])
            .collect();
    }
    Ok((affine, raster))
}

/// Render one synthetic case. Frames are quantized to 16 bits, so they
/// survive a PNG round trip unchanged.
pub fn make_case(
    atlas: &LabelVolume,
    geometry: &ConeBeamGeometry,
    labels: &BTreeSet<u32>,
    config: &PhantomConfig,
) -> Result<PhantomCase> {
    config.bounds.validate()?;
    if !(config.noise_sigma >= 0.0 && config.noise_sigma.is_finite()) {
        return Err(Error::invalid("noise sigma", format!("{} is not a finite non-negative value", config.noise_sigma)));
    }
    if config.n_frames == 0 {
        return Err(Error::invalid("frame count", "need at least one frame"));
    }
    let proj = project::<f64>(atlas, labels, geometry)?;
    if proj.silhouette.is_empty() {
        return Err(Error::Phantom("selected territories project to an empty silhouette".into()));
    }
    let grid = GridSpec::of(&proj.integral);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (true_affine, true_field) = sample_warp(&config.bounds, grid, &mut rng)?;
    let truth = TruthWarp {
        affine: true_affine,
        field: true_field,
    };

    let length = apply_transform(&proj.integral, &truth, grid);
    let true_mask = apply_transform(&proj.silhouette.to_gray::<f64>(), &truth, grid).above(0.5);
    let opacity: Vec<f64> = length
        .data()
        .iter()
        .map(|&l| 1.0 - (-l / OPACITY_LENGTH_MM).exp())
        .collect();

    let noise = Normal::new(0.0, config.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let frames = time_curve(config.n_frames)
        .into_iter()
        .map(|g| {
            let data = opacity
                .iter()
                .map(|&c| {
                    let n = if config.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    let v = (BACKGROUND - CONTRAST_DROP * g * c + n).clamp(0.0, 1.0);
                    quantize16(v) as f64 / 65535.0
                })
                .collect();
            GrayImage::new(grid.width, grid.height, grid.spacing, data)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(PhantomCase {
        atlas: atlas.clone(),
        geometry: geometry.clone(),
        site: config.site,
        view: config.view,
        labels: labels.clone(),
        true_affine: truth.affine,
        true_field: truth.field,
        frames: FrameSequence::new(frames, None)?,
        true_mask,
        noise_sigma: config.noise_sigma,
        seed: config.seed,
    })
}

#[derive(Serialize, Deserialize)]
struct AffineJson {
    matrix: [f64; 4],
    translation_mm: [f64; 2],
    center_mm: [f64; 2],
}

#[derive(Serialize, Deserialize)]
struct FieldJson {
    file: String,
    dtype: String,
    units: String,
    /// `[rows, cols, 2]`, row-major, x component first.
    shape: [usize; 3],
    spacing_mm: [f64; 2],
}

#[derive(Serialize, Deserialize)]
struct TruthJson {
    seed: u64,
    site: InjectionSite,
    view: ViewLabel,
    labels: Vec<u32>,
    noise_sigma: f64,
    affine: AffineJson,
    field: String,
}

pub const FIELD_FILE: &str = "true_field.f32";
pub const FIELD_SIDECAR: &str = "true_field.json";

/// Paths written by [`write_case`].
#[derive(Clone, Debug)]
pub struct CaseFiles {
    pub frames_dir: PathBuf,
    pub geometry: PathBuf,
    pub truth: PathBuf,
    pub true_mask: PathBuf,
    pub atlas: PathBuf,
    pub lut: PathBuf,
}

/// Write `frames/frame_NNN.png`, `geometry.json`, `truth.json` with its raw
/// field raster, `true_mask.png`, `atlas.nii` and `lut.json`.
pub fn write_case(case: &PhantomCase, lut: &TerritoryLUT, dir: impl AsRef<Path>) -> Result<CaseFiles> {
    let dir = dir.as_ref();
    let frames_dir = dir.join("frames");
    std::fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
    for (k, f) in case.frames.frames().iter().enumerate() {
        write_png_gray(f, frames_dir.join(format!("frame_{k:03}.png")))?;
    }
    let files = CaseFiles {
        geometry: dir.join("geometry.json"),
        truth: dir.join("truth.json"),
        true_mask: dir.join("true_mask.png"),
        atlas: dir.join("atlas.nii"),
        lut: dir.join("lut.json"),
        frames_dir,
    };
    atomic_write(&files.geometry, serde_json::to_string_pretty(&case.geometry)?.as_bytes())?;
    let f = &case.true_field;
    atomic_write(dir.join(FIELD_FILE), &f.to_le_bytes())?;
    let sidecar = FieldJson {
        file: FIELD_FILE.into(),
        dtype: "float32-le".into(),
        units: "px".into(),
        shape: [f.height, f.width, 2],
        spacing_mm: f.spacing,
    };
    atomic_write(dir.join(FIELD_SIDECAR), serde_json::to_string_pretty(&sidecar)?.as_bytes())?;
    let a = &case.true_affine;
    let truth = TruthJson {
        seed: case.seed,
        site: case.site,
        view: case.view,
        labels: case.labels.iter().copied().collect(),
        noise_sigma: case.noise_sigma,
        affine: AffineJson {
            matrix: a.matrix,
            translation_mm: a.translation,
            center_mm: a.center,
        },
        field: FIELD_SIDECAR.into(),
    };
    let text = crate::register::json::to_exact_json(&truth)?;
    atomic_write(&files.truth, text.as_bytes())?;
    write_mask_png(&case.true_mask, &files.true_mask)?;
    write_nifti(&case.atlas, &files.atlas)?;
    atomic_write(&files.lut, lut.to_json_string().as_bytes())?;
    Ok(files)
}

/// Read the ground-truth warp written by [`write_case`].
pub fn read_truth(truth_json: impl AsRef<Path>) -> Result<TruthWarp> {
    let path = truth_json.as_ref();
    let dir = path.parent().unwrap_or(Path::new("."));
    let read = |p: &Path| std::fs::read(p).map_err(|e| Error::io(p, e));
    let truth: TruthJson = serde_json::from_slice(&read(path)?)?;
    let sidecar_path = dir.join(&truth.field);
    let sidecar: FieldJson = serde_json::from_slice(&read(&sidecar_path)?)?;
    if sidecar.dtype != "float32-le" || sidecar.units != "px" || sidecar.shape[2] != 2 {
        return Err(Error::Phantom(format!("unsupported field raster description in {}", sidecar_path.display())));
    }
    let [rows, cols, _] = sidecar.shape;
    let field = DisplacementRaster::from_le_bytes(cols, rows, sidecar.spacing_mm, &read(&dir.join(&sidecar.file))?)?;
    let affine = Affine2 {
        matrix: truth.affine.matrix,
        translation: truth.affine.translation_mm,
        center: truth.affine.center_mm,
    };
    affine.check_invertible()?;
    Ok(TruthWarp { affine, field })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{grid_points_in_mask, tre};
    use crate::preproc::{make_mask, PreprocParams};

    fn small_case(bounds: WarpBounds, sigma: f64, det: usize, seed: u64) -> PhantomCase {
        let atlas = synth_atlas([48; 3], 3, 11).unwrap();
        let labels: BTreeSet<u32> = [1, 2, 3].into();
        let geometry = phantom_geometry(ViewLabel::Anteroposterior, det, &atlas);
        let config = PhantomConfig {
            bounds,
            noise_sigma: sigma,
            n_frames: 10,
            seed,
            ..PhantomConfig::default()
        };
        make_case(&atlas, &geometry, &labels, &config).unwrap()
    }

    #[test]
    fn two_territories_are_disjoint_and_large() {
        let v = synth_atlas([48; 3], 2, 7).unwrap();
        let total = v.data().len();
        assert_eq!(v.labels(), vec![1, 2]);
        for l in [1, 2] {
            assert!(v.count_label(l) * 100 >= total, "label {l}");
        }
        // A voxel carries one label, so disjointness reduces to the label set.
        assert!(v.data().iter().all(|&x| x <= 2));
    }

    #[test]
    fn atlas_is_deterministic() {
        let a = synth_atlas([40, 36, 32], 4, 3).unwrap();
        let b = synth_atlas([40, 36, 32], 4, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, synth_atlas([40, 36, 32], 4, 4).unwrap());
    }

    #[test]
    fn atlas_preconditions() {
        assert!(synth_atlas([48; 3], 0, 1).is_err());
        assert!(synth_atlas([48; 3], 1, 1).is_err());
        assert!(synth_atlas([31, 48, 48], 2, 1).is_err());
    }

    #[test]
    fn synthetic_lut_covers_every_label() {
        let lut = synth_lut(5).unwrap();
        assert!(lut.uncovered_labels().is_empty());
        let two = synth_lut(2).unwrap();
        assert_eq!(two.entries()[&InjectionSite::Posterior], [1, 2].into());
    }

    #[test]
    fn bounds_are_checked() {
        let mut b = WarpBounds::default();
        assert!(b.validate().is_ok());
        b.max_translation_px = 21.0;
        assert!(b.validate().is_err());
        let b = WarpBounds {
            scale_range: [0.8, 1.0],
            ..WarpBounds::default()
        };
        assert!(b.validate().is_err());
        let b = WarpBounds {
            max_bspline_px: 9.0,
            ..WarpBounds::default()
        };
        assert!(b.validate().is_err());
    }

    #[test]
    fn time_curve_peaks_at_one() {
        let g = time_curve(21);
        assert_eq!(g[0], 0.0);
        let peak = g.iter().cloned().fold(0.0, f64::max);
        assert!((peak - 1.0).abs() < 1e-12);
        assert!(g.iter().all(|&v| (0.0..=1.0 + 1e-12).contains(&v)));
    }

    #[test]
    fn field_respects_bound() {
        for seed in 0..4 {
            let c = small_case(WarpBounds::default(), 0.0, 64, seed);
            let m = c.true_field.max_magnitude_px();
            assert!((BSPLINE_PEAK_FRACTION[0] * MAX_BSPLINE_PX * 0.99..=MAX_BSPLINE_PX).contains(&m), "seed {seed}: {m}");
        }
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let a = small_case(WarpBounds::default(), 0.05, 64, 9);
        let b = small_case(WarpBounds::default(), 0.05, 64, 9);
        assert_eq!(a.frames, b.frames);
        assert_eq!(a.true_field, b.true_field);
        assert_eq!(a.true_affine, b.true_affine);
        assert_eq!(a.true_mask, b.true_mask);
    }

    #[test]
    fn noiseless_identity_mask_matches_truth() {
        // The default 1 px erosion removes a perimeter band; the detector must
        // be fine enough for that band to stay under 1% of the Dice.
        let c = small_case(WarpBounds::identity(), 0.0, 768, 1);
        let mask = make_mask(&c.frames, &PreprocParams::default()).unwrap();
        let dice = mask.dice(&c.true_mask);
        assert!(dice >= 0.99, "dice {dice}");
    }

    #[test]
    fn noisy_mask_matches_truth() {
        let c = small_case(WarpBounds::default(), 0.05, 128, 2);
        let mask = make_mask(&c.frames, &PreprocParams::default()).unwrap();
        let dice = mask.dice(&c.true_mask);
        assert!(dice >= 0.9, "dice {dice}");
    }

    #[test]
    fn truth_has_zero_error_against_itself() {
        let c = small_case(WarpBounds::default(), 0.0, 64, 5);
        let t = c.truth();
        let pts = grid_points_in_mask(&c.true_mask, 3);
        let r = tre(Some(&t), &t, &pts, c.true_field.spacing).unwrap();
        assert_eq!(r.mean_px, 0.0);
        assert_eq!(r.max_px, 0.0);
    }

    #[test]
    fn case_directory_round_trips_truth() {
        let c = small_case(WarpBounds::default(), 0.02, 64, 6);
        let dir = tempfile::tempdir().unwrap();
        let files = write_case(&c, &synth_lut(3).unwrap(), dir.path()).unwrap();
        let back = read_truth(&files.truth).unwrap();
        assert_eq!(back, c.truth());
        let frames = crate::imgcore::load_frames::<f64>(&files.frames_dir, None, c.frames.spacing()).unwrap();
        assert_eq!(frames.frames(), c.frames.frames());
        let atlas = crate::imgcore::read_nifti(&files.atlas).unwrap();
        assert_eq!(atlas.data(), c.atlas.data());
    }
}
