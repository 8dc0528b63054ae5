//! One case end to end: load, select labels, project, mask, register,
//! score, overlay, export.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use dsa_atlas::atlas::{load_lut, select_labels, InjectionSite, TerritoryLUT, ViewLabel};
use dsa_atlas::imgcore::{load_frames, read_nifti, write_mask_png, write_png_gray, BinaryMask, FrameSequence, LabelVolume};
use dsa_atlas::io_util::atomic_write;
use dsa_atlas::metrics::{grid_points_in_mask, ssim_masks, tre, SsimParams, TreResult};
use dsa_atlas::overlay::{build_overlay, export_overlay, OverlayFiles, TerritoryOverlay};
use dsa_atlas::phantom::{read_truth, TruthWarp};
use dsa_atlas::preproc::{make_mask_stages, MaskStages};
use dsa_atlas::projector::{project, ConeBeamGeometry, Projection};
use dsa_atlas::register::{
    apply_affine, apply_pair, register_affine, register_bspline, GridSpec, Stage, TransformPair,
};
use dsa_atlas::Error;

use crate::config::CaseConfig;

/// Pipeline stage names used to tag failures and timings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineStage {
    Load,
    SelectLabels,
    Project,
    MakeMask,
    RegisterAffine,
    RegisterBspline,
    Ssim,
    Overlay,
    Export,
}

impl PipelineStage {
    pub fn as_str(self) -> &'static str {
        match self {
            PipelineStage::Load => "load",
            PipelineStage::SelectLabels => "select_labels",
            PipelineStage::Project => "project",
            PipelineStage::MakeMask => "make_mask",
            PipelineStage::RegisterAffine => "register_affine",
            PipelineStage::RegisterBspline => "register_bspline",
            PipelineStage::Ssim => "ssim",
            PipelineStage::Overlay => "overlay",
            PipelineStage::Export => "export",
        }
    }
}

impl fmt::Display for PipelineStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug)]
pub struct StageError {
    pub stage: PipelineStage,
    pub source: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.stage, self.source)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

trait Tag<T> {
    fn at(self, stage: PipelineStage) -> Result<T, StageError>;
}

impl<T> Tag<T> for dsa_atlas::Result<T> {
    fn at(self, stage: PipelineStage) -> Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

/// Everything a case needs, already in memory.
#[derive(Clone, Debug)]
pub struct CaseInputs {
    pub case_id: String,
    pub atlas: LabelVolume,
    pub lut: TerritoryLUT,
    pub frames: FrameSequence<f64>,
    pub geometry: ConeBeamGeometry,
    pub site: InjectionSite,
    pub view: ViewLabel,
    pub truth: Option<TruthWarp>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Timing {
    /// Seconds per stage.
    pub stages: BTreeMap<PipelineStage, f64>,
    pub total_s: f64,
}

impl Timing {
    fn time<T>(&mut self, stage: PipelineStage, f: impl FnOnce() -> Result<T, StageError>) -> Result<T, StageError> {
        let t0 = Instant::now();
        let out = f();
        *self.stages.entry(stage).or_default() += t0.elapsed().as_secs_f64();
        out
    }
}

#[derive(Clone, Debug)]
pub struct CaseOutcome {
    pub case_id: String,
    pub site: InjectionSite,
    pub view: ViewLabel,
    pub projection: Projection<f64>,
    pub mask_stages: MaskStages<f64>,
    pub pair: TransformPair<f64>,
    pub warped_affine: BinaryMask,
    pub warped_final: BinaryMask,
    pub ssim_affine: f64,
    pub ssim_final: f64,
    pub tre: Option<TreResult>,
    pub overlay: TerritoryOverlay,
    pub timing: Timing,
}

impl CaseOutcome {
    pub fn mask(&self) -> &BinaryMask {
        &self.mask_stages.mask
    }
}

/// Pixel stride of the TRE sample grid inside the fixed mask.
pub const TRE_STRIDE: usize = 4;

/// Run the in-memory pipeline. `cfg.stage` selects affine-only or full
/// registration. Warped silhouettes are cut at one half.
pub fn run_case(inputs: &CaseInputs, cfg: &CaseConfig) -> Result<CaseOutcome, StageError> {
    let start = Instant::now();
    let mut timing = Timing::default();
    cfg.preproc.validate().at(PipelineStage::MakeMask)?;
    cfg.registration.validate().at(PipelineStage::RegisterAffine)?;

    let labels = timing.time(PipelineStage::SelectLabels, || {
        select_labels(&inputs.lut, inputs.site).at(PipelineStage::SelectLabels)
    })?;
    let projection = timing.time(PipelineStage::Project, || {
        project::<f64>(&inputs.atlas, &labels, &inputs.geometry).at(PipelineStage::Project)
    })?;
    let stages = timing.time(PipelineStage::MakeMask, || {
        let frames = &inputs.frames;
        if frames.dims() != projection.integral.dims() {
            return Err(Error::DimensionMismatch(format!(
                "frames are {:?}, detector is {}x{}",
                frames.dims(),
                inputs.geometry.det_cols,
                inputs.geometry.det_rows
            )))
            .at(PipelineStage::MakeMask);
        }
        make_mask_stages(frames, &cfg.preproc).at(PipelineStage::MakeMask)
    })?;

    let fixed = stages.mask.to_gray::<f64>();
    let moving = projection.integral.normalized_by_max();
    let reg = &cfg.registration;
    let affine = timing.time(PipelineStage::RegisterAffine, || {
        register_affine(&fixed, &moving, reg).at(PipelineStage::RegisterAffine)
    })?;
    let mut levels = affine.levels.clone();
    let (bspline, final_cost) = match cfg.stage {
        Stage::Affine => (None, affine.final_cost),
        Stage::Bspline => {
            let b = timing.time(PipelineStage::RegisterBspline, || {
                register_bspline(&fixed, &moving, &affine.transform, reg).at(PipelineStage::RegisterBspline)
            })?;
            levels.extend(b.levels);
            (Some(b.transform), b.final_cost)
        }
    };
    let pair = TransformPair {
        affine: affine.transform,
        bspline,
        config: reg.clone(),
        final_cost,
        levels,
    };

    let grid = GridSpec::of(&fixed);
    let sil = projection.silhouette.to_gray::<f64>();
    let params = SsimParams::default();
    let (warped_affine, warped_final, ssim_affine, ssim_final, tre_result) =
        timing.time(PipelineStage::Ssim, || {
            let wa = apply_affine(&sil, &pair.affine, grid).at(PipelineStage::Ssim)?.above(0.5);
            let wf = apply_pair(&sil, &pair, grid).at(PipelineStage::Ssim)?.above(0.5);
            let sa = ssim_masks(&stages.mask, &wa, &params).at(PipelineStage::Ssim)?.mean_ssim;
            let sf = ssim_masks(&stages.mask, &wf, &params).at(PipelineStage::Ssim)?.mean_ssim;
            let t = match &inputs.truth {
                Some(truth) => {
                    let pts = grid_points_in_mask(&stages.mask, TRE_STRIDE);
                    Some(tre(Some(truth), &pair, &pts, stages.mask.spacing()).at(PipelineStage::Ssim)?)
                }
                None => None,
            };
            Ok((wa, wf, sa, sf, t))
        })?;

    let overlay = timing.time(PipelineStage::Overlay, || {
        build_overlay(&projection, &pair, &inputs.lut, grid).at(PipelineStage::Overlay)
    })?;
    timing.total_s = start.elapsed().as_secs_f64();
    Ok(CaseOutcome {
        case_id: inputs.case_id.clone(),
        site: inputs.site,
        view: inputs.view,
        projection,
        mask_stages: stages,
        pair,
        warped_affine,
        warped_final,
        ssim_affine,
        ssim_final,
        tre: tre_result,
        overlay,
        timing,
    })
}

/// Read every input named by `cfg`.
pub fn load_inputs(cfg: &CaseConfig) -> Result<CaseInputs, StageError> {
    let load = PipelineStage::Load;
    cfg.check_paths().at(load)?;
    let atlas = read_nifti(&cfg.atlas).at(load)?;
    let lut = load_lut(&cfg.lut).at(load)?;
    let text = std::fs::read_to_string(&cfg.geometry)
        .map_err(|e| Error::Io {
            path: cfg.geometry.clone(),
            source: e,
        })
        .at(load)?;
    let geometry = ConeBeamGeometry::from_json_str(&text).at(load)?;
    let range = cfg.frame_range.map(|[a, b]| (a, b));
    let frames = load_frames::<f64>(&cfg.frames, range, geometry.det_spacing_mm).at(load)?;
    let truth = match &cfg.truth {
        Some(p) => Some(read_truth(p).at(load)?),
        None => None,
    };
    Ok(CaseInputs {
        case_id: cfg.case_id.clone(),
        atlas,
        lut,
        frames,
        geometry,
        site: cfg.site,
        view: cfg.view,
        truth,
    })
}

/// One row of the results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub case_id: String,
    pub site: String,
    pub view: String,
    pub ssim_affine: f64,
    pub ssim_final: f64,
    /// Empty for cases without ground truth.
    pub tre_mean_px: Option<f64>,
    pub runtime_s: f64,
}

impl ResultRow {
    pub fn of(o: &CaseOutcome) -> Self {
        Self {
            case_id: o.case_id.clone(),
            site: o.site.as_str().into(),
            view: o.view.as_str().into(),
            ssim_affine: o.ssim_affine,
            ssim_final: o.ssim_final,
            tre_mean_px: o.tre.map(|t| t.mean_px),
            runtime_s: o.timing.total_s,
        }
    }
}

pub fn results_csv(rows: &[ResultRow]) -> dsa_atlas::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::invalid("results csv", e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::invalid("results csv", e.to_string()))
}

pub fn read_results_csv(path: &Path) -> dsa_atlas::Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::invalid("results csv", format!("{}: {e}", path.display())))?;
    r.deserialize()
        .collect::<Result<Vec<ResultRow>, _>>()
        .map_err(|e| Error::invalid("results csv", format!("{}: {e}", path.display())))
}

#[derive(Clone, Debug)]
pub struct Artifacts {
    pub transforms: PathBuf,
    pub overlay: OverlayFiles,
    pub mask: PathBuf,
    pub results: PathBuf,
    pub timing: PathBuf,
}

pub const TRANSFORMS_FILE: &str = "transforms.json";
pub const MASK_FILE: &str = "mask.png";
pub const RESULTS_FILE: &str = "results.csv";
pub const TIMING_FILE: &str = "timing.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Run manifest. Contains no timestamps, so it is reproducible.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub tool_version: String,
    pub core_version: String,
    pub case_id: String,
    /// SHA-256 of the resolved config.
    pub config_hash: String,
    pub stage: Stage,
    pub seeds: BTreeMap<String, u64>,
    pub ssim_operands: String,
    pub artifacts: Vec<String>,
}

impl Manifest {
    pub fn new(cfg: &CaseConfig) -> dsa_atlas::Result<Self> {
        let mut artifacts = vec![
            TRANSFORMS_FILE.to_string(),
            "overlay_labels.png".into(),
            "overlay_composite.png".into(),
            "overlay_legend.json".into(),
            MASK_FILE.into(),
            RESULTS_FILE.into(),
            TIMING_FILE.into(),
        ];
        artifacts.sort();
        Ok(Self {
            tool: env!("CARGO_PKG_NAME").into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            core_version: dsa_atlas::VERSION.into(),
            case_id: cfg.case_id.clone(),
            config_hash: cfg.hash()?,
            stage: cfg.stage,
            seeds: cfg.seed.map(|s| ("phantom".to_string(), s)).into_iter().collect(),
            ssim_operands: crate::report::SSIM_OPERANDS.into(),
            artifacts,
        })
    }
}

/// Write the case artifacts into `dir`. Everything except the timing log and
/// the runtime column is a pure function of the inputs.
pub fn write_artifacts(o: &CaseOutcome, dir: &Path, debug_dir: Option<&Path>) -> Result<Artifacts, StageError> {
    let export = PipelineStage::Export;
    std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.into(), source: e }).at(export)?;
    let transforms = dir.join(TRANSFORMS_FILE);
    atomic_write(&transforms, o.pair.to_json_string().at(export)?.as_bytes()).at(export)?;
    let background = o.mask_stages.average.normalized_by_max();
    let overlay = export_overlay(&o.overlay, &background, dir, "overlay").at(export)?;
    let mask = dir.join(MASK_FILE);
    write_mask_png(o.mask(), &mask).at(export)?;
    let results = dir.join(RESULTS_FILE);
    atomic_write(&results, &results_csv(&[ResultRow::of(o)]).at(export)?).at(export)?;
    let timing = dir.join(TIMING_FILE);
    let text = serde_json::to_string_pretty(&o.timing).map_err(Error::from).at(export)?;
    atomic_write(&timing, text.as_bytes()).at(export)?;
    if let Some(d) = debug_dir {
        write_debug(o, d).at(export)?;
    }
    Ok(Artifacts {
        transforms,
        overlay,
        mask,
        results,
        timing,
    })
}

fn write_debug(o: &CaseOutcome, dir: &Path) -> dsa_atlas::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.into(), source: e })?;
    let s = &o.mask_stages;
    write_png_gray(&s.average, dir.join("average.png"))?;
    write_png_gray(&o.projection.integral.normalized_by_max(), dir.join("projection.png"))?;
    write_mask_png(&o.projection.silhouette, dir.join("silhouette.png"))?;
    write_mask_png(&s.raw, dir.join("mask_raw.png"))?;
    write_mask_png(&s.filtered, dir.join("mask_filtered.png"))?;
    write_mask_png(&o.warped_affine, dir.join("warped_affine.png"))?;
    write_mask_png(&o.warped_final, dir.join("warped_final.png"))?;
    let text = serde_json::to_string_pretty(&serde_json::json!({
        "threshold": s.threshold,
        "levels": o.pair.levels,
    }))?;
    atomic_write(dir.join("debug.json"), text.as_bytes())
}

/// Load, run and export one configured case.
pub fn cmd_pipeline(cfg: &CaseConfig) -> Result<(CaseOutcome, Artifacts), StageError> {
    let total = Instant::now();
    let inputs = {
        let t0 = Instant::now();
        let i = load_inputs(cfg)?;
        (i, t0.elapsed().as_secs_f64())
    };
    let (inputs, load_s) = inputs;
    let mut outcome = run_case(&inputs, cfg)?;
    outcome.timing.stages.insert(PipelineStage::Load, load_s);
    let t0 = Instant::now();
    let artifacts = write_artifacts(&outcome, &cfg.output, cfg.debug_dir.as_deref())?;
    outcome.timing.stages.insert(PipelineStage::Export, t0.elapsed().as_secs_f64());
    outcome.timing.total_s = total.elapsed().as_secs_f64();
    // Rewrite the timing log and the row with the full wall time.
    let export = PipelineStage::Export;
    let text = serde_json::to_string_pretty(&outcome.timing).map_err(Error::from).at(export)?;
    atomic_write(&artifacts.timing, text.as_bytes()).at(export)?;
    atomic_write(&artifacts.results, &results_csv(&[ResultRow::of(&outcome)]).at(export)?).at(export)?;
    let manifest = Manifest::new(cfg).at(export)?;
    let text = serde_json::to_string_pretty(&manifest).map_err(Error::from).at(export)?;
    atomic_write(cfg.output.join(MANIFEST_FILE), text.as_bytes()).at(export)?;
    Ok((outcome, artifacts))
}

/// Outcome of one batch entry.
pub type BatchResult = Result<(ResultRow, Artifacts), StageError>;

/// Run independent cases on `jobs` worker threads. Output directories must
/// be pairwise distinct.
pub fn run_batch(cfgs: &[CaseConfig], jobs: usize) -> Result<Vec<BatchResult>, StageError> {
    let load = PipelineStage::Load;
    let mut outputs: Vec<&Path> = cfgs.iter().map(|c| c.output.as_path()).collect();
    outputs.sort();
    if let Some(w) = outputs.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::invalid("batch", format!("two cases share the output directory {}", w[0].display()))).at(load);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::invalid("batch", e.to_string()))
        .at(load)?;
    Ok(pool.install(|| {
        cfgs.par_iter()
            .map(|c| cmd_pipeline(c).map(|(o, a)| (ResultRow::of(&o), a)))
            .collect()
    }))
}
