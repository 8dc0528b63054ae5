//! Two-stage intensity registration of a projected atlas (moving) onto a
//! perfusion mask (fixed): affine, then cubic B-spline free-form deformation.
//!
//! Both stages minimize `-MI` over a Gaussian pyramid with L-BFGS and
//! central-difference gradients. Points map fixed → moving as
//! `y = A(x + d(x))`, with `A` the affine and `d` the B-spline displacement.

pub mod bspline;
mod cost;
pub mod json;
pub mod lbfgs;
pub mod mi;
pub mod pyramid;
pub mod resample;
pub mod scales;
pub mod transform;

use serde::{Deserialize, Serialize};

pub use bspline::BSplineField2;
pub use lbfgs::StopReason;
pub use mi::{mutual_information, MutualInformation};
pub use resample::{apply_affine, apply_pair, apply_transform, bilinear, GridSpec};
pub use scales::{estimate_scales, TransformKind};
pub use transform::{Affine2, Identity, Transform2};

use crate::error::{Error, Result};
use crate::imgcore::GrayImage;
use crate::scalar::Real;
use cost::{AffineObjective, BSplineObjective, Level};
use lbfgs::{minimize, LbfgsOptions, LbfgsReport, StepNorm};

/// A binary fixed image makes MI piecewise flat below about a pixel of
/// motion; the difference step has to span that.
pub const FD_STEP_DEFAULT: f64 = 0.3;
pub const BSPLINE_MAX_DIVISIONS_DEFAULT: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationConfig {
    pub resolutions_affine: usize,
    pub resolutions_bspline: usize,
    /// Bound on each optimizer step in scaled parameter units.
    pub max_step_length: f64,
    pub histogram_bins: usize,
    pub lbfgs_memory: usize,
    pub max_iterations_per_level: usize,
    pub convergence_tol: f64,
    pub auto_scale: bool,
    /// Central-difference step for gradients, in scaled parameter units.
    pub fd_step: f64,
    /// Coarsest B-spline control spacing is the image extent over this.
    pub bspline_initial_divisions: usize,
    /// Control spacing stops halving once it reaches the extent over this.
    pub bspline_max_divisions: usize,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            resolutions_affine: 20,
            resolutions_bspline: 16,
            max_step_length: 2.0,
            histogram_bins: 32,
            lbfgs_memory: 5,
            max_iterations_per_level: 200,
            convergence_tol: 1e-6,
            auto_scale: true,
            fd_step: FD_STEP_DEFAULT,
            bspline_initial_divisions: 2,
            bspline_max_divisions: BSPLINE_MAX_DIVISIONS_DEFAULT,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("resolutions_affine", self.resolutions_affine),
            ("resolutions_bspline", self.resolutions_bspline),
            ("lbfgs_memory", self.lbfgs_memory),
            ("max_iterations_per_level", self.max_iterations_per_level),
            ("bspline_initial_divisions", self.bspline_initial_divisions),
            ("bspline_max_divisions", self.bspline_max_divisions),
        ];
        for (name, v) in counts {
            if v < 1 {
                return Err(Error::invalid("registration config", format!("{name} must be >= 1")));
            }
        }
        if self.histogram_bins < 2 {
            return Err(Error::invalid("registration config", "histogram_bins must be >= 2"));
        }
        if !(self.max_step_length > 0.0 && self.max_step_length.is_finite()) {
            return Err(Error::invalid("registration config", "max_step_length must be > 0"));
        }
        if !(self.fd_step > 0.0 && self.fd_step.is_finite()) {
            return Err(Error::invalid("registration config", "fd_step must be > 0"));
        }
        if self.bspline_max_divisions < self.bspline_initial_divisions {
            return Err(Error::invalid(
                "registration config",
                "bspline_max_divisions must be >= bspline_initial_divisions",
            ));
        }
        if !(self.convergence_tol >= 0.0) {
            return Err(Error::invalid("registration config", "convergence_tol must be >= 0"));
        }
        Ok(())
    }

    fn options<T: Real>(&self, step_norm: StepNorm) -> LbfgsOptions<T> {
        LbfgsOptions {
            memory: self.lbfgs_memory,
            max_iterations: self.max_iterations_per_level,
            tolerance: T::lit(self.convergence_tol),
            max_step: T::lit(self.max_step_length),
            step_norm,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Affine,
    Bspline,
}

/// Optimizer record for one pyramid level. Level 0 is full resolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelLog {
    pub stage: Stage,
    pub level: usize,
    pub requested_levels: usize,
    pub effective_levels: usize,
    pub width: usize,
    pub height: usize,
    /// Control grid `[cols, rows]` for B-spline levels.
    pub grid: Option<[usize; 2]>,
    pub iterations: usize,
    pub evaluations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub stop: StopReason,
    pub costs: Vec<f64>,
}

/// Outcome of one stage.
#[derive(Clone, Debug, PartialEq)]
pub struct StageResult<X> {
    pub transform: X,
    /// Cost at full resolution after optimization.
    pub final_cost: f64,
    /// Cost at full resolution before optimization.
    pub initial_cost: f64,
    /// `false` when the full-resolution level ended no better than it started.
    pub improved: bool,
    pub informative: bool,
    pub levels: Vec<LevelLog>,
}

/// Saved result of a registration run.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformPair<T> {
    pub affine: Affine2<T>,
    pub bspline: Option<BSplineField2<T>>,
    pub config: RegistrationConfig,
    /// `-MI` at full resolution after the last stage.
    pub final_cost: f64,
    pub levels: Vec<LevelLog>,
}

impl<T: Real> Transform2<T> for TransformPair<T> {
    #[inline]
    fn displacement(&self, x: [T; 2]) -> [T; 2] {
        let d = match &self.bspline {
            Some(f) => f.displacement(x),
            None => [T::zero(); 2],
        };
        let a = self.affine.displacement([x[0] + d[0], x[1] + d[1]]);
        [d[0] + a[0], d[1] + a[1]]
    }
}

fn log_from<T: Real>(
    stage: Stage,
    level: usize,
    requested: usize,
    effective: usize,
    img: &GrayImage<T>,
    grid: Option<[usize; 2]>,
    rep: &LbfgsReport<T>,
) -> LevelLog {
    LevelLog {
        stage,
        level,
        requested_levels: requested,
        effective_levels: effective,
        width: img.width(),
        height: img.height(),
        grid,
        iterations: rep.iterations,
        evaluations: rep.evaluations,
        initial_cost: rep.initial_value.f64(),
        final_cost: rep.value.f64(),
        stop: rep.stop,
        costs: rep.costs.iter().map(|c| c.f64()).collect(),
    }
}

fn is_constant<T: Real>(img: &GrayImage<T>) -> bool {
    let first = img.data()[0];
    img.data().iter().all(|&v| v == first)
}

fn physical_centroid<T: Real>(img: &GrayImage<T>, level: T) -> Option<[T; 2]> {
    let c = img.above(level).centroid()?;
    let sp = img.spacing();
    Some([T::lit(c[0]) * sp[0], T::lit(c[1]) * sp[1]])
}

/// Affine from centroid alignment: fixed-mask centroid onto the moving
/// silhouette centroid, centered on the fixed image.
pub fn centroid_initialization<T: Real>(fixed: &GrayImage<T>, moving: &GrayImage<T>) -> Result<Affine2<T>> {
    let fc = physical_centroid(fixed, T::lit(0.5))
        .ok_or_else(|| Error::Registration("empty fixed mask".into()))?;
    let mc = physical_centroid(moving, T::zero()).unwrap_or(fc);
    Ok(Affine2::translation([mc[0] - fc[0], mc[1] - fc[1]], fixed.center()))
}

fn stage_levels<T: Real>(requested: usize, fixed: &GrayImage<T>, moving: &GrayImage<T>, min_size: usize) -> usize {
    pyramid::effective_levels_above(requested, fixed.width(), fixed.height(), min_size)
        .min(pyramid::effective_levels_above(requested, moving.width(), moving.height(), min_size))
}

/// Multi-resolution affine stage starting from centroid alignment.
pub fn register_affine<T: Real>(
    fixed: &GrayImage<T>,
    moving: &GrayImage<T>,
    config: &RegistrationConfig,
) -> Result<StageResult<Affine2<T>>> {
    config.validate()?;
    let init = centroid_initialization(fixed, moving)?;
    register_affine_from(fixed, moving, init, config)
}

/// Multi-resolution affine stage from a given starting affine.
pub fn register_affine_from<T: Real>(
    fixed: &GrayImage<T>,
    moving: &GrayImage<T>,
    init: Affine2<T>,
    config: &RegistrationConfig,
) -> Result<StageResult<Affine2<T>>> {
    config.validate()?;
    init.check_invertible()?;
    let requested = config.resolutions_affine;
    let n = stage_levels(requested, fixed, moving, pyramid::MIN_LEVEL_SIZE);
    let fp = pyramid::build_fixed(fixed, n);
    let mp = pyramid::build(moving, n);
    let scales = if config.auto_scale {
        scales::affine_scales(fixed.extent(), init.center)
    } else {
        vec![T::one(); transform::AFFINE_PARAMS]
    };
    let opts = config.options::<T>(StepNorm::Euclidean);
    let mut affine = init;
    let mut logs = Vec::with_capacity(n);
    let mut last = None;
    for l in (0..n).rev() {
        let level = Level::new(&fp[l], &mp[l], config.histogram_bins);
        let mut obj = AffineObjective {
            level: &level,
            base: affine,
            scales: scales.clone(),
            fd_step: config.fd_step,
        };
        let q0 = obj.to_scaled(&affine);
        let rep = minimize(&mut obj, q0, &opts);
        let next = obj.affine_at(&rep.x);
        if next.check_invertible().is_ok() {
            affine = next;
        }
        logs.push(log_from(Stage::Affine, l, requested, n, &fp[l], None, &rep));
        last = Some(rep);
    }
    let rep = last.expect("at least one level");
    Ok(StageResult {
        transform: affine,
        final_cost: rep.value.f64(),
        initial_cost: rep.initial_value.f64(),
        improved: rep.value < rep.initial_value,
        informative: !is_constant(fixed),
        levels: logs,
    })
}

/// Multi-resolution B-spline stage composed with a fixed `affine`; starts
/// from zero displacement and halves the control spacing per level.
pub fn register_bspline<T: Real>(
    fixed: &GrayImage<T>,
    moving: &GrayImage<T>,
    affine: &Affine2<T>,
    config: &RegistrationConfig,
) -> Result<StageResult<BSplineField2<T>>> {
    config.validate()?;
    affine.check_invertible()?;
    if fixed.above(T::lit(0.5)).is_empty() {
        return Err(Error::Registration("empty fixed mask".into()));
    }
    let requested = config.resolutions_bspline;
    let n = stage_levels(requested, fixed, moving, pyramid::MIN_BSPLINE_LEVEL_SIZE);
    let fp = pyramid::build_fixed(fixed, n);
    let mp = pyramid::build(moving, n);
    let extent = fixed.extent();
    let div = T::from_count(config.bspline_initial_divisions);
    let mut field = BSplineField2::covering(extent, [extent[0] / div, extent[1] / div])?;
    let opts = config.options::<T>(StepNorm::MaxPair);
    let mut divisions = config.bspline_initial_divisions;
    let mut logs = Vec::with_capacity(n);
    let mut last = None;
    for l in (0..n).rev() {
        if l + 1 < n && 2 * divisions <= config.bspline_max_divisions {
            field = field.refined(extent)?;
            divisions *= 2;
        }
        let level = Level::new(&fp[l], &mp[l], config.histogram_bins);
        let mut obj = BSplineObjective::new(&level, *affine, field.clone(), config.fd_step);
        let rep = minimize(&mut obj, field.params(), &opts);
        field.set_params(&rep.x);
        logs.push(log_from(Stage::Bspline, l, requested, n, &fp[l], Some(field.grid), &rep));
        last = Some(rep);
    }
    let rep = last.expect("at least one level");
    Ok(StageResult {
        transform: field,
        final_cost: rep.value.f64(),
        initial_cost: rep.initial_value.f64(),
        improved: rep.value < rep.initial_value,
        informative: !is_constant(fixed),
        levels: logs,
    })
}

/// Affine stage, then (unless `stage` is [`Stage::Affine`]) the B-spline stage.
pub fn register<T: Real>(
    fixed: &GrayImage<T>,
    moving: &GrayImage<T>,
    config: &RegistrationConfig,
    stage: Stage,
) -> Result<TransformPair<T>> {
    let a = register_affine(fixed, moving, config)?;
    let mut levels = a.levels;
    let (bspline, final_cost) = match stage {
        Stage::Affine => (None, a.final_cost),
        Stage::Bspline => {
            let b = register_bspline(fixed, moving, &a.transform, config)?;
            levels.extend(b.levels);
            (Some(b.transform), b.final_cost)
        }
    };
    Ok(TransformPair {
        affine: a.transform,
        bspline,
        config: config.clone(),
        final_cost,
        levels,
    })
}

#[derive(Serialize, Deserialize)]
struct AffineJson {
    matrix: [f64; 4],
    translation_mm: [f64; 2],
    center_mm: [f64; 2],
}

#[derive(Serialize, Deserialize)]
struct BSplineJson {
    grid: [usize; 2],
    spacing_mm: [f64; 2],
    origin_mm: [f64; 2],
    coeffs_mm: Vec<[f64; 2]>,
}

#[derive(Serialize, Deserialize)]
struct TransformPairJson {
    affine: AffineJson,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bspline: Option<BSplineJson>,
    config: RegistrationConfig,
    final_cost: f64,
    #[serde(default)]
    levels: Vec<LevelLog>,
}

impl<T: Real> TransformPair<T> {
    pub fn identity(center: [T; 2], config: RegistrationConfig) -> Self {
        Self {
            affine: Affine2::identity(center),
            bspline: None,
            config,
            final_cost: 0.0,
            levels: Vec::new(),
        }
    }

    pub fn to_json_string(&self) -> Result<String> {
        let a = self.affine.cast::<f64>();
        let doc = TransformPairJson {
            affine: AffineJson {
                matrix: a.matrix,
                translation_mm: a.translation,
                center_mm: a.center,
            },
            bspline: self.bspline.as_ref().map(|f| {
                let f = f.cast::<f64>();
                BSplineJson {
                    grid: f.grid,
                    spacing_mm: f.spacing,
                    origin_mm: f.origin,
                    coeffs_mm: f.coeffs,
                }
            }),
            config: self.config.clone(),
            final_cost: self.final_cost,
            levels: self.levels.clone(),
        };
        json::to_exact_json(&doc)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let doc: TransformPairJson = serde_json::from_str(s)?;
        let affine = Affine2 {
            matrix: doc.affine.matrix,
            translation: doc.affine.translation_mm,
            center: doc.affine.center_mm,
        }
        .cast::<T>();
        affine.check_invertible()?;
        let bspline = match doc.bspline {
            Some(b) => Some(BSplineField2::new(b.grid, b.spacing_mm, b.origin_mm, b.coeffs_mm)?.cast::<T>()),
            None => None,
        };
        doc.config.validate()?;
        Ok(Self {
            affine,
            bspline,
            config: doc.config,
            final_cost: doc.final_cost,
            levels: doc.levels,
        })
    }
}
