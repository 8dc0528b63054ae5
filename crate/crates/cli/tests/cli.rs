use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dsa_atlas::phantom::{PhantomConfig, WarpBounds};
use dsa_atlas_cli::phantom_case::{write_phantom, PhantomSetup};
use dsa_atlas_cli::pipeline::{read_results_csv, Manifest, MANIFEST_FILE, RESULTS_FILE, TRANSFORMS_FILE};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dsa-atlas"))
}

fn small_case(dir: &Path, seed: u64, bounds: WarpBounds) -> PathBuf {
    let setup = PhantomSetup {
        atlas_size: 48,
        territories: 4,
        detector_px: 96,
        case: PhantomConfig {
            bounds,
            n_frames: 4,
            seed,
            ..PhantomConfig::default()
        },
        ..PhantomSetup::default()
    };
    write_phantom(&setup, &format!("small-{seed}"), dir).unwrap().1
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn missing_atlas_names_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let toml = small_case(dir.path(), 1, WarpBounds::default());
    std::fs::remove_file(dir.path().join("atlas.nii")).unwrap();
    let out = bin().args(["pipeline", "--config"]).arg(&toml).output().unwrap();
    assert!(!out.status.success());
    let msg = stderr(&out);
    assert!(msg.contains("[load]") && msg.contains("atlas"), "{msg}");
    assert!(!dir.path().join("out").join(TRANSFORMS_FILE).exists());
}

#[test]
fn affine_stage_writes_no_bspline_block() {
    let dir = tempfile::tempdir().unwrap();
    let toml = small_case(dir.path(), 2, WarpBounds::default());
    let out = bin()
        .args(["pipeline", "--stage", "affine", "--config"])
        .arg(&toml)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out").join(TRANSFORMS_FILE)).unwrap()).unwrap();
    assert!(json.get("affine").is_some());
    assert!(json.get("bspline").is_none(), "{json}");
    let m: Manifest =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out").join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(m.seeds.get("phantom"), Some(&2));
}

#[test]
fn batch_runs_cases_into_their_own_directories() {
    let root = tempfile::tempdir().unwrap();
    let a = small_case(&root.path().join("a"), 3, WarpBounds::affine_only());
    let b = small_case(&root.path().join("b"), 4, WarpBounds::affine_only());
    let combined = root.path().join("all.csv");
    let out = bin()
        .args(["pipeline", "--jobs", "2", "--config"])
        .arg(&a)
        .arg("--config")
        .arg(&b)
        .arg("--results")
        .arg(&combined)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    for d in ["a", "b"] {
        let rows = read_results_csv(&root.path().join(d).join("out").join(RESULTS_FILE)).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].tre_mean_px.is_some());
    }
    assert_eq!(read_results_csv(&combined).unwrap().len(), 2);
}

#[test]
fn batch_rejects_shared_output() {
    let root = tempfile::tempdir().unwrap();
    let a = small_case(&root.path().join("a"), 3, WarpBounds::affine_only());
    let shared = root.path().join("shared");
    let out = bin()
        .args(["pipeline", "--config"])
        .arg(&a)
        .arg("--config")
        .arg(&a)
        .arg("--output")
        .arg(&shared)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(stderr(&out).contains("output directory"), "{}", stderr(&out));
}

#[test]
fn module_subcommands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_case(d, 5, WarpBounds::affine_only());
    let run = |args: &[&str]| {
        let out = bin().args(args).current_dir(d).output().unwrap();
        assert!(out.status.success(), "{args:?}: {}", stderr(&out));
        String::from_utf8_lossy(&out.stdout).into_owned()
    };
    let scene = ["--atlas", "atlas.nii", "--lut", "lut.json", "--geometry", "geometry.json", "--site", "la"];
    run(&[&["project"][..], &scene, &["--output", "proj"]].concat());
    assert!(d.join("proj/projection.png").exists() && d.join("proj/silhouette.png").exists());
    run(&["preprocess", "--frames", "frames", "--output", "pre"]);
    assert!(d.join("pre/mask.png").exists());
    run(&[
        "register",
        "--fixed",
        "pre/mask.png",
        "--moving",
        "proj/projection.png",
        "--stage",
        "affine",
        "--output",
        "reg/transforms.json",
        "--warped",
        "reg/warped.png",
    ]);
    assert!(d.join("reg/warped.png").exists());
    run(&[&["overlay"][..], &scene, &["--transforms", "reg/transforms.json", "--output", "ov"]].concat());
    assert!(d.join("ov/overlay_composite.png").exists());
    let s = run(&["ssim", "pre/mask.png", "pre/mask.png", "--binary"]);
    let r: serde_json::Value = serde_json::from_str(&s).unwrap();
    assert!((r["mean_ssim"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn stats_writes_report_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("r.csv");
    std::fs::write(
        &csv,
        "case_id,site,view,ssim_affine,ssim_final,tre_mean_px,runtime_s\n\
         a,LeftAnterior,Anteroposterior,0.4,0.5,,1.0\n\
         b,LeftAnterior,Lateral,0.6,0.7,,1.0\n\
         c,Posterior,Lateral,0.8,0.9,0.5,1.0\n",
    )
    .unwrap();
    let out = bin()
        .args(["stats", "--results"])
        .arg(&csv)
        .arg("--output")
        .arg(dir.path().join("s"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    for f in ["stats.json", "histogram.svg", "histogram.png"] {
        assert!(dir.path().join("s").join(f).exists(), "{f}");
    }
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("s/stats.json")).unwrap()).unwrap();
    assert!((v["mean"].as_f64().unwrap() - 0.7).abs() < 1e-15);
    assert_eq!(v["bin_width"].as_f64().unwrap(), 0.01);
}

#[test]
fn unknown_config_key_fails_at_load() {
    let dir = tempfile::tempdir().unwrap();
    let toml = dir.path().join("bad.toml");
    std::fs::write(&toml, "atlass = \"x\"\n").unwrap();
    let out = bin().args(["pipeline", "--config"]).arg(&toml).output().unwrap();
    assert!(!out.status.success());
    assert!(stderr(&out).contains("[load]"), "{}", stderr(&out));
}
