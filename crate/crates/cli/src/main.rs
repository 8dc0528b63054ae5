use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dsa_atlas::atlas::{load_lut, select_labels, InjectionSite, ViewLabel};
use dsa_atlas::imgcore::png_io::read_png_gray_with_spacing;
use dsa_atlas::imgcore::{load_frames, read_nifti, write_mask_png, write_png_gray, GrayImage};
use dsa_atlas::io_util::atomic_write;
use dsa_atlas::metrics::{ssim, ssim_masks, SsimParams};
use dsa_atlas::overlay::{build_overlay, export_overlay};
use dsa_atlas::phantom::{PhantomConfig, WarpBounds};
use dsa_atlas::preproc::{make_mask_stages, PreprocParams};
use dsa_atlas::projector::{project, ConeBeamGeometry};
use dsa_atlas::register::{apply_pair, register, GridSpec, RegistrationConfig, Stage, TransformPair};
use dsa_atlas::Error;

use dsa_atlas_cli::config::CaseConfig;
use dsa_atlas_cli::phantom_case::{write_phantom, PhantomSetup};
use dsa_atlas_cli::pipeline::{read_results_csv, results_csv, run_batch};
use dsa_atlas_cli::report::{stats_report, write_stats, SsimColumn};

#[derive(Parser)]
#[command(name = "dsa-atlas", version, about = "Atlas-to-DSA territory registration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline for one or more cases.
    Pipeline(PipelineArgs),
    /// Project the territories of an injection site onto the detector.
    Project(ProjectArgs),
    /// Perfusion mask from a frame sequence.
    Preprocess(PreprocessArgs),
    /// Register a moving image onto a fixed mask.
    Register(RegisterArgs),
    /// Territory overlay from a projection and a stored transform.
    Overlay(OverlayArgs),
    /// SSIM between two images.
    Ssim(SsimArgs),
    /// Write a synthetic case directory with ground truth and a case.toml.
    Phantom(PhantomArgs),
    /// Cohort statistics and histogram from a results CSV.
    Stats(StatsArgs),
}

fn parse_site(s: &str) -> Result<InjectionSite, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_view(s: &str) -> Result<ViewLabel, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_stage(s: &str) -> Result<Stage, String> {
    match s {
        "affine" => Ok(Stage::Affine),
        "bspline" => Ok(Stage::Bspline),
        _ => Err(format!("unknown stage {s:?}, expected affine or bspline")),
    }
}

#[derive(Args)]
struct PipelineArgs {
    /// Case config (TOML). Repeat for a batch; values in a file override flags.
    #[arg(long = "config")]
    configs: Vec<PathBuf>,
    #[arg(long)]
    case_id: Option<String>,
    #[arg(long)]
    atlas: Option<PathBuf>,
    #[arg(long)]
    lut: Option<PathBuf>,
    /// Directory of PNG frames.
    #[arg(long)]
    frames: Option<PathBuf>,
    /// Geometry sidecar JSON.
    #[arg(long)]
    geometry: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Phantom ground truth (truth.json); enables TRE.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    debug_dir: Option<PathBuf>,
    #[arg(long, value_parser = parse_site)]
    site: Option<InjectionSite>,
    #[arg(long, value_parser = parse_view)]
    view: Option<ViewLabel>,
    /// Inclusive frame index range.
    #[arg(long, num_args = 2, value_names = ["FIRST", "LAST"])]
    frame_range: Option<Vec<usize>>,
    /// `affine` skips the B-spline stage.
    #[arg(long, value_parser = parse_stage)]
    stage: Option<Stage>,
    /// Concurrent cases in batch mode.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Also write one combined results CSV for the batch.
    #[arg(long)]
    results: Option<PathBuf>,
}

impl PipelineArgs {
    fn flags(&self) -> CaseConfig {
        let mut c = CaseConfig::default();
        if let Some(v) = &self.case_id {
            c.case_id = v.clone();
        }
        for (dst, src) in [
            (&mut c.atlas, &self.atlas),
            (&mut c.lut, &self.lut),
            (&mut c.frames, &self.frames),
            (&mut c.geometry, &self.geometry),
            (&mut c.output, &self.output),
        ] {
            if let Some(v) = src {
                *dst = v.clone();
            }
        }
        if self.truth.is_some() {
            c.truth = self.truth.clone();
        }
        if self.debug_dir.is_some() {
            c.debug_dir = self.debug_dir.clone();
        }
        if let Some(v) = self.site {
            c.site = v;
        }
        if let Some(v) = self.view {
            c.view = v;
        }
        if let Some(r) = &self.frame_range {
            c.frame_range = Some([r[0], r[1]]);
        }
        if let Some(v) = self.stage {
            c.stage = v;
        }
        c
    }
}

#[derive(Args)]
struct SceneArgs {
    #[arg(long)]
    atlas: PathBuf,
    #[arg(long)]
    lut: PathBuf,
    #[arg(long)]
    geometry: PathBuf,
    #[arg(long, value_parser = parse_site)]
    site: InjectionSite,
}

#[derive(Args)]
struct ProjectArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    frames: PathBuf,
    #[arg(long, num_args = 2, value_names = ["FIRST", "LAST"])]
    frame_range: Option<Vec<usize>>,
    /// Detector pixel spacing in mm.
    #[arg(long, default_value_t = 1.0)]
    spacing: f64,
    /// Preprocessing parameters (TOML).
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct RegisterArgs {
    /// Fixed mask PNG; nonzero is inside.
    #[arg(long)]
    fixed: PathBuf,
    /// Moving grayscale PNG.
    #[arg(long)]
    moving: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    spacing: f64,
    #[arg(long, value_parser = parse_stage, default_value = "bspline")]
    stage: Stage,
    /// Registration config (TOML).
    #[arg(long)]
    params: Option<PathBuf>,
    /// Transforms JSON to write.
    #[arg(long)]
    output: PathBuf,
    /// Warped moving image PNG.
    #[arg(long)]
    warped: Option<PathBuf>,
}

#[derive(Args)]
struct OverlayArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[arg(long)]
    transforms: PathBuf,
    /// Background PNG on the detector grid; the projection when absent.
    #[arg(long)]
    background: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value = "overlay")]
    stem: String,
}

#[derive(Args)]
struct SsimArgs {
    a: PathBuf,
    b: PathBuf,
    /// Cut both images at one half first.
    #[arg(long)]
    binary: bool,
}

#[derive(Args)]
struct PhantomArgs {
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value = "phantom")]
    case_id: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    atlas_size: usize,
    #[arg(long, default_value_t = 6)]
    territories: usize,
    #[arg(long, default_value_t = 1)]
    atlas_seed: u64,
    #[arg(long, default_value_t = 192)]
    detector: usize,
    #[arg(long, default_value_t = 0.02)]
    noise: f64,
    #[arg(long, default_value_t = 12)]
    n_frames: usize,
    #[arg(long, value_parser = parse_site, default_value = "LeftAnterior")]
    site: InjectionSite,
    #[arg(long, value_parser = parse_view, default_value = "ap")]
    view: ViewLabel,
    /// No deformable component.
    #[arg(long)]
    affine_only: bool,
    /// Control intervals of the true field across the detector.
    #[arg(long, default_value_t = 4)]
    intervals: usize,
}

#[derive(Args)]
struct StatsArgs {
    /// Results CSV, as written by `pipeline`.
    #[arg(long)]
    results: PathBuf,
    #[arg(long, default_value = "ssim_final")]
    column: String,
    #[arg(long)]
    output: PathBuf,
}

/// Failure message, already tagged with its stage.
struct Failure(String);

fn at<E: Display>(stage: &'static str) -> impl Fn(E) -> Failure {
    move |e| Failure(format!("[{stage}] {e}"))
}

type Outcome = Result<(), Failure>;

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path, stage: &'static str) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure(format!("[{stage}] {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Failure(format!("[{stage}] {}: {e}", path.display())))
}

fn read_geometry(path: &Path, stage: &'static str) -> Result<ConeBeamGeometry, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure(format!("[{stage}] {}: {e}", path.display())))?;
    ConeBeamGeometry::from_json_str(&text).map_err(at(stage))
}

fn mkdir(dir: &Path, stage: &'static str) -> Outcome {
    std::fs::create_dir_all(dir).map_err(|e| Failure(format!("[{stage}] {}: {e}", dir.display())))
}

fn mkparent(file: &Path, stage: &'static str) -> Outcome {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => mkdir(p, stage),
        _ => Ok(()),
    }
}

fn cmd_pipeline(args: PipelineArgs) -> Outcome {
    let flags = args.flags();
    let cfgs = if args.configs.is_empty() {
        vec![flags]
    } else {
        args.configs
            .iter()
            .map(|p| CaseConfig::resolve(&flags, Some(p)))
            .collect::<Result<Vec<_>, _>>()
            .map_err(at("load"))?
    };
    let results = run_batch(&cfgs, args.jobs).map_err(|e| Failure(e.to_string()))?;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (cfg, r) in cfgs.iter().zip(results) {
        match r {
            Ok((row, a)) => {
                println!(
                    "{}: ssim affine {:.4}, final {:.4}{}, {:.1} s -> {}",
                    row.case_id,
                    row.ssim_affine,
                    row.ssim_final,
                    row.tre_mean_px.map(|t| format!(", TRE {t:.3} px")).unwrap_or_default(),
                    row.runtime_s,
                    a.transforms.parent().unwrap_or(Path::new(".")).display()
                );
                rows.push(row);
            }
            Err(e) => failures.push(format!("{}: {e}", cfg.case_id)),
        }
    }
    if let Some(path) = &args.results {
        mkparent(path, "export")?;
        let bytes = results_csv(&rows).map_err(at("export"))?;
        atomic_write(path, &bytes).map_err(at("export"))?;
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure(failures.join("\n")))
    }
}

fn cmd_project(args: ProjectArgs) -> Outcome {
    let s = &args.scene;
    let atlas = read_nifti(&s.atlas).map_err(at("load"))?;
    let lut = load_lut(&s.lut).map_err(at("load"))?;
    let geometry = read_geometry(&s.geometry, "load")?;
    let labels = select_labels(&lut, s.site).map_err(at("select_labels"))?;
    let p = project::<f64>(&atlas, &labels, &geometry).map_err(at("project"))?;
    mkdir(&args.output, "export")?;
    write_png_gray(&p.integral.normalized_by_max(), args.output.join("projection.png")).map_err(at("export"))?;
    write_mask_png(&p.silhouette, args.output.join("silhouette.png")).map_err(at("export"))?;
    let info = serde_json::json!({
        "site": s.site,
        "labels": labels,
        "max_path_mm": p.integral.max_value(),
        "silhouette_px": p.silhouette.count(),
    });
    let text = serde_json::to_string_pretty(&info).map_err(at("export"))?;
    atomic_write(args.output.join("projection.json"), text.as_bytes()).map_err(at("export"))?;
    println!("projected labels {labels:?} -> {}", args.output.display());
    Ok(())
}

fn cmd_preprocess(args: PreprocessArgs) -> Outcome {
    let params: PreprocParams = match &args.params {
        Some(p) => read_toml(p, "make_mask")?,
        None => PreprocParams::default(),
    };
    let range = args.frame_range.as_ref().map(|r| (r[0], r[1]));
    let frames = load_frames::<f64>(&args.frames, range, [args.spacing; 2]).map_err(at("load"))?;
    let s = make_mask_stages(&frames, &params).map_err(at("make_mask"))?;
    mkdir(&args.output, "export")?;
    let out = &args.output;
    write_png_gray(&s.average, out.join("average.png")).map_err(at("export"))?;
    write_mask_png(&s.raw, out.join("mask_raw.png")).map_err(at("export"))?;
    write_mask_png(&s.filtered, out.join("mask_filtered.png")).map_err(at("export"))?;
    write_mask_png(&s.mask, out.join("mask.png")).map_err(at("export"))?;
    let info = serde_json::json!({
        "frames": frames.len(),
        "threshold": s.threshold,
        "mask_px": s.mask.count(),
        "params": params,
    });
    let text = serde_json::to_string_pretty(&info).map_err(at("export"))?;
    atomic_write(out.join("preprocess.json"), text.as_bytes()).map_err(at("export"))?;
    println!("threshold {:.6}, mask {} px -> {}", s.threshold, s.mask.count(), out.display());
    Ok(())
}

fn cmd_register(args: RegisterArgs) -> Outcome {
    let config: RegistrationConfig = match &args.params {
        Some(p) => read_toml(p, "register_affine")?,
        None => RegistrationConfig::default(),
    };
    let sp = [args.spacing; 2];
    let fixed: GrayImage<f64> = read_png_gray_with_spacing(&args.fixed, sp).map_err(at("load"))?;
    let fixed = fixed.above(0.0).to_gray::<f64>();
    let moving: GrayImage<f64> = read_png_gray_with_spacing(&args.moving, sp).map_err(at("load"))?;
    let stage = if args.stage == Stage::Affine { "register_affine" } else { "register_bspline" };
    let pair = register(&fixed, &moving, &config, args.stage).map_err(at(stage))?;
    let text = pair.to_json_string().map_err(at("export"))?;
    mkparent(&args.output, "export")?;
    atomic_write(&args.output, text.as_bytes()).map_err(at("export"))?;
    if let Some(w) = &args.warped {
        let warped = apply_pair(&moving, &pair, GridSpec::of(&fixed)).map_err(at("export"))?;
        mkparent(w, "export")?;
        write_png_gray(&warped, w).map_err(at("export"))?;
    }
    println!("final cost {:.6} -> {}", pair.final_cost, args.output.display());
    Ok(())
}

fn cmd_overlay(args: OverlayArgs) -> Outcome {
    let s = &args.scene;
    let atlas = read_nifti(&s.atlas).map_err(at("load"))?;
    let lut = load_lut(&s.lut).map_err(at("load"))?;
    let geometry = read_geometry(&s.geometry, "load")?;
    let text = std::fs::read_to_string(&args.transforms)
        .map_err(|e| Failure(format!("[load] {}: {e}", args.transforms.display())))?;
    let pair = TransformPair::<f64>::from_json_str(&text).map_err(at("load"))?;
    let labels = select_labels(&lut, s.site).map_err(at("select_labels"))?;
    let p = project::<f64>(&atlas, &labels, &geometry).map_err(at("project"))?;
    let grid = GridSpec::of(&p.integral);
    let ov = build_overlay(&p, &pair, &lut, grid).map_err(at("overlay"))?;
    let background = match &args.background {
        Some(b) => read_png_gray_with_spacing::<f64>(b, geometry.det_spacing_mm).map_err(at("load"))?,
        None => p.integral.normalized_by_max(),
    };
    mkdir(&args.output, "export")?;
    let files = export_overlay(&ov, &background, &args.output, &args.stem).map_err(at("export"))?;
    println!("{} territories -> {}", ov.legend.len(), files.composite.display());
    Ok(())
}

fn cmd_ssim(args: SsimArgs) -> Outcome {
    let a: GrayImage<f64> = read_png_gray_with_spacing(&args.a, [1.0; 2]).map_err(at("load"))?;
    let b: GrayImage<f64> = read_png_gray_with_spacing(&args.b, [1.0; 2]).map_err(at("load"))?;
    let p = SsimParams::default();
    let r = if args.binary {
        ssim_masks(&a.above(0.5), &b.above(0.5), &p)
    } else {
        ssim(&a, &b, &p)
    }
    .map_err(at("ssim"))?;
    println!("{}", serde_json::to_string_pretty(&r).map_err(at("ssim"))?);
    Ok(())
}

fn cmd_phantom(args: PhantomArgs) -> Outcome {
    let bounds = if args.affine_only {
        WarpBounds::affine_only()
    } else {
        WarpBounds {
            bspline_intervals: args.intervals,
            ..WarpBounds::default()
        }
    };
    let setup = PhantomSetup {
        atlas_size: args.atlas_size,
        territories: args.territories,
        atlas_seed: args.atlas_seed,
        detector_px: args.detector,
        case: PhantomConfig {
            site: args.site,
            view: args.view,
            bounds,
            noise_sigma: args.noise,
            n_frames: args.n_frames,
            seed: args.seed,
        },
    };
    let (_, path) = write_phantom(&setup, &args.case_id, &args.output).map_err(at("phantom"))?;
    println!("{}", path.display());
    Ok(())
}

fn cmd_stats(args: StatsArgs) -> Outcome {
    let column = SsimColumn::parse(&args.column).map_err(at("stats"))?;
    let rows = read_results_csv(&args.results).map_err(at("load"))?;
    let report = stats_report(&rows, column).map_err(at("stats"))?;
    write_stats(&report, &args.output).map_err(at("export"))?;
    let s = &report.stats;
    println!(
        "n {} mean {:.4} std {:.4} median {:.4}{}",
        s.n,
        s.mean,
        s.std,
        s.median,
        if report.left_skewed { " (left-skewed)" } else { "" }
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Pipeline(a) => cmd_pipeline(a),
        Command::Project(a) => cmd_project(a),
        Command::Preprocess(a) => cmd_preprocess(a),
        Command::Register(a) => cmd_register(a),
        Command::Overlay(a) => cmd_overlay(a),
        Command::Ssim(a) => cmd_ssim(a),
        Command::Phantom(a) => cmd_phantom(a),
        Command::Stats(a) => cmd_stats(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
