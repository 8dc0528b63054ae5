//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dsa_atlas::atlas::ViewLabel;
use dsa_atlas::imgcore::png_io::decode_rgb8;
use dsa_atlas::imgcore::{BinaryMask, GrayImage, LabelVolume};
use dsa_atlas::metrics::{ssim, SsimParams};
use dsa_atlas::phantom::{PhantomConfig, WarpBounds};
use dsa_atlas::preproc::{fill_holes, filter_components, otsu, Connectivity};
use dsa_atlas::projector::{path_length, project, ConeBeamGeometry};
use dsa_atlas::register::bspline::{beta3, cubic_weights};
use dsa_atlas::register::{mutual_information, BSplineField2, Stage, Transform2};

use dsa_atlas_cli::config::CaseConfig;
use dsa_atlas_cli::phantom_case::{write_phantom, PhantomScene, PhantomSetup};
use dsa_atlas_cli::pipeline::{results_csv, run_case, write_artifacts, ResultRow, TRANSFORMS_FILE};
use dsa_atlas_cli::report::{png_bar_columns, StatsReport};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_budget(t0: Instant, budget_s: f64) -> Result<f64, String> {
    let s = t0.elapsed().as_secs_f64();
    ensure(s < budget_s, || format!("took {s:.1} s, budget {budget_s} s"))?;
    Ok(s)
}

// 1 ------------------------------------------------------------------------

fn ssim_identities() -> Check {
    let t0 = Instant::now();
    let p = SsimParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let (w, h) = (rng.random_range(16..80), rng.random_range(16..80));
        let img = GrayImage::from_fn(w, h, [1.0, 1.0], |_, _| rng.random::<f64>());
        let s = ssim(&img, &img, &p).map_err(|e| e.to_string())?.mean_ssim;
        worst = worst.max((s - 1.0).abs());
    }
    ensure(worst <= 1e-9, || format!("ssim(x, x) off by {worst:e}"))?;
    let zero = GrayImage::filled(32, 32, [1.0, 1.0], 0.0);
    let full = GrayImage::filled(32, 32, [1.0, 1.0], p.dynamic_range);
    let got = ssim(&zero, &full, &p).map_err(|e| e.to_string())?.mean_ssim;
    let c1 = (p.k1 * p.dynamic_range).powi(2);
    let want = c1 / (p.dynamic_range.powi(2) + c1);
    ensure((got - want).abs() <= 1e-9, || format!("constant pair {got:e} vs closed form {want:e}"))?;
    let s = within_budget(t0, 5.0)?;
    Ok(format!("max |ssim(x,x)-1| {worst:.1e}, constant pair {got:.6e} vs {want:.6e}, {s:.1} s"))
}

// 2 ------------------------------------------------------------------------

/// Midpoint ray marching at `step`; counts samples in labeled voxels.
fn marched_length(v: &LabelVolume, labels: &BTreeSet<u32>, a: [f64; 3], b: [f64; 3], step: f64) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    let n = (len / step).ceil() as usize;
    let (lo, _) = v.bounds();
    let (dims, sp) = (v.dims(), v.spacing());
    let mut inside = 0usize;
    for i in 0..n {
        let t = (i as f64 + 0.5) / n as f64;
        let mut idx = [0usize; 3];
        let mut ok = true;
        for k in 0..3 {
            let u = ((a[k] + t * d[k] - lo[k]) / sp[k]).floor();
            if u < 0.0 || u >= dims[k] as f64 {
                ok = false;
                break;
            }
            idx[k] = u as usize;
        }
        if ok && labels.contains(&v.get(idx[0], idx[1], idx[2])) {
            inside += 1;
        }
    }
    inside as f64 * len / n as f64
}

fn unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let p: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        if r > 0.1 && r <= 1.0 {
            return p.map(|c| c / r);
        }
    }
}

fn projector_oracle() -> Check {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let labels: BTreeSet<u32> = [1, 3].into();
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let dims: [usize; 3] = std::array::from_fn(|_| rng.random_range(8..24));
        let spacing: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.5..2.0));
        let origin: [f64; 3] = std::array::from_fn(|_| rng.random_range(-10.0..10.0));
        let data = (0..dims.iter().product()).map(|_| rng.random_range(0..4)).collect();
        let v = LabelVolume::new(dims, spacing, origin, data).map_err(|e| e.to_string())?;
        let (lo, hi) = v.bounds();
        let step = spacing.iter().copied().fold(f64::INFINITY, f64::min) / 50.0;
        let reach = 2.0 * v.diagonal();
        for _ in 0..20 {
            // Through a random point of the central half of the box.
            let p: [f64; 3] = std::array::from_fn(|k| {
                let q = 0.25 * (hi[k] - lo[k]);
                rng.random_range(lo[k] + q..hi[k] - q)
            });
            let u = unit(&mut rng);
            let a = std::array::from_fn(|k| p[k] - reach * u[k]);
            let b = std::array::from_fn(|k| p[k] + reach * u[k]);
            let exact: f64 = path_length(&v, &labels, a, b);
            let marched = marched_length(&v, &labels, a, b, step);
            ensure(marched > 0.0, || "ray through the volume misses every label".into())?;
            let rel = (exact - marched).abs() / marched;
            worst = worst.max(rel);
        }
    }
    ensure(worst <= 0.01, || format!("path length off by {:.3}%", 100.0 * worst))?;

    // Centered sphere.
    let n = 64;
    let r = 24.0;
    let c = (n as f64 - 1.0) / 2.0;
    let mut data = Vec::with_capacity(n * n * n);
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                let d2 = (x as f64 - c).powi(2) + (y as f64 - c).powi(2) + (z as f64 - c).powi(2);
                data.push(u32::from(d2 <= r * r));
            }
        }
    }
    let sphere = LabelVolume::centered([n; 3], [1.0; 3], data).map_err(|e| e.to_string())?;
    let g = ConeBeamGeometry::for_view(ViewLabel::Anteroposterior, 750.0, 1200.0, 256, 256, [0.5, 0.5]);
    let proj = project::<f64>(&sphere, &[1].into(), &g).map_err(|e| e.to_string())?;
    let area_mm2 = proj.silhouette.count() as f64 * 0.25;
    let shadow = 2.0 * (area_mm2 / std::f64::consts::PI).sqrt();
    let mag = shadow / (2.0 * r);
    let want = g.sdd_mm / g.sid_mm;
    let err = (mag - want).abs() / want;
    ensure(err <= 0.02, || format!("sphere magnification {mag:.4} vs {want:.4}"))?;
    let s = within_budget(t0, 60.0)?;
    Ok(format!(
        "100 rays, worst relative error {:.3}%; sphere magnification {mag:.4} vs {want:.4}, {s:.1} s",
        100.0 * worst
    ))
}

// 3 ------------------------------------------------------------------------

fn flood_fill_filter(mask: &BinaryMask, min_px: usize, eight: bool) -> Vec<bool> {
    let (w, h) = mask.dims();
    let mut seen = vec![false; w * h];
    let mut keep = vec![false; w * h];
    for start in 0..w * h {
        if !mask.data()[start] || seen[start] {
            continue;
        }
        let mut comp = vec![start];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if (dx == 0 && dy == 0) || (!eight && dx != 0 && dy != 0) {
                        continue;
                    }
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask.data()[j] && !seen[j] {
                        seen[j] = true;
                        comp.push(j);
                        stack.push(j);
                    }
                }
            }
        }
        if comp.len() >= min_px {
            for i in comp {
                keep[i] = true;
            }
        }
    }
    keep
}

fn exhaustive_otsu(values: &[f64]) -> Vec<f64> {
    let levels: Vec<usize> = values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as usize).collect();
    let n = levels.len() as f64;
    (0..255)
        .map(|k| {
            let (c0, c1): (Vec<f64>, Vec<f64>) = {
                let (a, b): (Vec<usize>, Vec<usize>) = levels.iter().partition(|&&l| l <= k);
                (a.into_iter().map(|l| l as f64).collect(), b.into_iter().map(|l| l as f64).collect())
            };
            if c0.is_empty() || c1.is_empty() {
                return f64::NEG_INFINITY;
            }
            let m0 = c0.iter().sum::<f64>() / c0.len() as f64;
            let m1 = c1.iter().sum::<f64>() / c1.len() as f64;
            (c0.len() as f64 / n) * (c1.len() as f64 / n) * (m0 - m1).powi(2)
        })
        .collect()
}

fn preproc_oracle() -> Check {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..50 {
        let (w, h) = (rng.random_range(8..64), rng.random_range(8..64));
        let density = rng.random_range(0.2..0.7);
        let mask = BinaryMask::from_fn(w, h, [1.0, 1.0], |_, _| rng.random_bool(density));
        let min_px = rng.random_range(1..30);
        for (conn, eight) in [(Connectivity::Four, false), (Connectivity::Eight, true)] {
            let got = filter_components(&mask, min_px, conn);
            let want = flood_fill_filter(&mask, min_px, eight);
            ensure(got.data() == want.as_slice(), || format!("mask {case}: component filter differs ({conn:?})"))?;
        }
        let once = fill_holes(&mask);
        let twice = fill_holes(&once);
        ensure(once == twice, || format!("mask {case}: fill_holes not idempotent"))?;
        ensure(mask.is_subset_of(&once), || format!("mask {case}: fill_holes removed pixels"))?;
    }
    let mut exact = 0;
    for case in 0..50 {
        let n = rng.random_range(50..2000);
        let (m0, m1) = (rng.random_range(0.1..0.5), rng.random_range(0.5..0.9));
        let values: Vec<f64> = (0..n)
            .map(|_| {
                let m = if rng.random_bool(0.4) { m1 } else { m0 };
                (m + 0.08 * (rng.random::<f64>() - 0.5)).clamp(0.0, 1.0)
            })
            .collect();
        let got = otsu(&values).map_err(|e| e.to_string())?;
        let scan = exhaustive_otsu(&values);
        let best = scan.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        ensure(scan[got.level] >= best * (1.0 - 1e-12), || {
            format!("set {case}: level {} gives {:e}, scan best {best:e}", got.level, scan[got.level])
        })?;
        if scan.iter().position(|&v| v == best) == Some(got.level) {
            exact += 1;
        }
    }
    let s = within_budget(t0, 30.0)?;
    Ok(format!("50 masks x 2 connectivities match flood fill; fill_holes idempotent; Otsu optimal on 50/50 ({exact} identical levels), {s:.1} s"))
}

// 4 ------------------------------------------------------------------------

fn mi_properties() -> Check {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut asym: f64 = 0.0;
    for _ in 0..20 {
        let (w, h) = (rng.random_range(8..64), rng.random_range(8..64));
        let a = GrayImage::from_fn(w, h, [1.0, 1.0], |_, _| rng.random::<f64>());
        let b = GrayImage::from_fn(w, h, [1.0, 1.0], |x, y| {
            0.5 * a.get(x, y) + 0.5 * rng.random::<f64>()
        });
        let ab = mutual_information(&a, &b, 32).map_err(|e| e.to_string())?.mi;
        let ba = mutual_information(&b, &a, 32).map_err(|e| e.to_string())?.mi;
        asym = asym.max((ab - ba).abs());
        let c = GrayImage::filled(w, h, [1.0, 1.0], rng.random::<f64>());
        let mc = mutual_information(&a, &c, 32).map_err(|e| e.to_string())?.mi;
        ensure(mc == 0.0, || format!("MI(x, constant) = {mc:e}"))?;
    }
    ensure(asym <= 1e-12, || format!("MI asymmetry {asym:e}"))?;
    // Levels j/32 sit exactly on bin centers of a 33-bin histogram.
    let mut worst: f64 = 0.0;
    for k in [2usize, 3, 4, 5, 8, 16, 33] {
        let reps = 60;
        let mut data: Vec<f64> = (0..k)
            .flat_map(|i| {
                let j = (i * 32) / (k - 1);
                std::iter::repeat_n(j as f64 / 32.0, reps)
            })
            .collect();
        data.shuffle(&mut rng);
        let img = GrayImage::new(k * 6, 10, [1.0, 1.0], data).map_err(|e| e.to_string())?;
        let mi = mutual_information(&img, &img, 33).map_err(|e| e.to_string())?.mi;
        worst = worst.max((mi - (k as f64).ln()).abs());
    }
    ensure(worst <= 1e-9, || format!("MI(x, x) off log k by {worst:e}"))?;
    let s = within_budget(t0, 10.0)?;
    Ok(format!("asymmetry {asym:.1e}; MI(x,const) = 0; |MI(x,x) - ln k| <= {worst:.1e}, {s:.2} s"))
}

// 5 ------------------------------------------------------------------------

fn bspline_properties() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let t: f64 = rng.random();
        let w = cubic_weights(t);
        worst = worst.max((w.iter().sum::<f64>() - 1.0).abs());
        let u: f64 = rng.random_range(-50.0..50.0);
        let f = u.floor() as i64;
        let s: f64 = (f - 2..=f + 2).map(|i| beta3(u - i as f64)).sum();
        worst = worst.max((s - 1.0).abs());
    }
    ensure(worst <= 1e-12, || format!("partition of unity off by {worst:e}"))?;
    let extent = [120.0, 90.0];
    let mut field = BSplineField2::covering(extent, [17.0, 13.0]).map_err(|e| e.to_string())?;
    let c: [f64; 2] = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
    field.coeffs.iter_mut().for_each(|v| *v = c);
    let mut dev: f64 = 0.0;
    for _ in 0..1000 {
        let x = [rng.random_range(0.0..extent[0]), rng.random_range(0.0..extent[1])];
        let d = field.displacement(x);
        dev = dev.max((d[0] - c[0]).abs().max((d[1] - c[1]).abs()));
    }
    ensure(dev <= 1e-12, || format!("constant coefficients deviate from a translation by {dev:e}"))?;
    Ok(format!("1000 points, partition of unity within {worst:.1e}; constant field = translation within {dev:.1e}"))
}

// 6 ------------------------------------------------------------------------

const SUITE_SEEDS: std::ops::Range<u64> = 0..20;

fn suite_setup(bounds: WarpBounds, seed: u64) -> PhantomSetup {
    PhantomSetup {
        case: PhantomConfig {
            bounds,
            seed,
            ..PhantomConfig::default()
        },
        ..PhantomSetup::default()
    }
}

fn affine_recovery() -> Check {
    let t0 = Instant::now();
    let scene = PhantomScene::new(&suite_setup(WarpBounds::affine_only(), 0)).map_err(|e| e.to_string())?;
    let cfg = CaseConfig {
        stage: Stage::Affine,
        ..CaseConfig::default()
    };
    let mut good = 0;
    let mut lines = Vec::new();
    for seed in SUITE_SEEDS {
        let setup = suite_setup(WarpBounds::affine_only(), seed);
        let case = scene.case(&setup.case).map_err(|e| e.to_string())?;
        let o = run_case(&scene.inputs(&format!("affine-{seed}"), &case), &cfg).map_err(|e| e.to_string())?;
        // Translation is compared where the recovered map is anchored: the
        // centroid of the fixed mask.
        let sp = scene.geometry.det_spacing_mm;
        let m = o.mask().centroid().ok_or("empty mask")?;
        let x = [m[0] * sp[0], m[1] * sp[1]];
        let (a, b) = (case.true_affine.map(x), o.pair.affine.map(x));
        let dt = ((a[0] - b[0]) / sp[0]).hypot((a[1] - b[1]) / sp[1]);
        let dr = (case.true_affine.rotation_deg() - o.pair.affine.rotation_deg()).abs();
        let ok = dt <= 0.5 && dr <= 0.5;
        good += usize::from(ok);
        lines.push(format!("seed {seed:2}: translation error {dt:.3} px, rotation error {dr:.3} deg{}", if ok { "" } else { "  <-" }));
    }
    for l in &lines {
        println!("      {l}");
    }
    ensure(good >= 18, || format!("{good}/20 cases within 0.5 px and 0.5 deg"))?;
    let s = within_budget(t0, 600.0)?;
    Ok(format!("{good}/20 cases within 0.5 px and 0.5 deg, {s:.0} s"))
}

// 7, 8, 11 -----------------------------------------------------------------

struct SuiteCase {
    ssim_affine: f64,
    ssim_final: f64,
    tre: f64,
}

/// Criterion 7's suite; artifacts of case `seed` go to `root/case_<seed>`.
fn deformable_suite(root: &Path) -> Result<Vec<SuiteCase>, String> {
    let scene = PhantomScene::new(&suite_setup(WarpBounds::default(), 0)).map_err(|e| e.to_string())?;
    let cfg = CaseConfig::default();
    let mut out = Vec::new();
    for seed in SUITE_SEEDS {
        let setup = suite_setup(WarpBounds::default(), seed);
        let case = scene.case(&setup.case).map_err(|e| e.to_string())?;
        let id = format!("case_{seed:02}");
        let o = run_case(&scene.inputs(&id, &case), &cfg).map_err(|e| e.to_string())?;
        write_artifacts(&o, &root.join(&id), None).map_err(|e| e.to_string())?;
        out.push(SuiteCase {
            ssim_affine: o.ssim_affine,
            ssim_final: o.ssim_final,
            tre: o.tre.ok_or("no TRE on a phantom case")?.mean_px,
        });
    }
    Ok(out)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn deformable_recovery(cases: &[SuiteCase], elapsed: f64) -> Check {
    for (seed, c) in SUITE_SEEDS.zip(cases) {
        println!(
            "      seed {seed:2}: ssim affine {:.4}, final {:.4}, TRE {:.3} px",
            c.ssim_affine, c.ssim_final, c.tre
        );
    }
    let n = cases.len();
    let good = cases.iter().filter(|c| c.ssim_final >= 0.90).count();
    let tre = cases.iter().map(|c| c.tre).sum::<f64>() / n as f64;
    ensure(10 * good >= 9 * n, || format!("SSIM >= 0.90 in {good}/{n}"))?;
    ensure(tre <= 2.0, || format!("mean TRE {tre:.3} px"))?;
    Ok(format!("SSIM >= 0.90 in {good}/{n}, mean TRE {tre:.3} px, {elapsed:.0} s"))
}

fn affine_insufficient(cases: &[SuiteCase]) -> Check {
    let n = cases.len();
    let better = cases.iter().filter(|c| c.ssim_final >= c.ssim_affine).count();
    let mut gains: Vec<f64> = cases.iter().map(|c| c.ssim_final - c.ssim_affine).collect();
    let med = median(&mut gains);
    ensure(10 * better >= 9 * n, || format!("final >= affine-only in {better}/{n}"))?;
    ensure(med >= 0.03, || format!("median improvement {med:.4}"))?;
    Ok(format!("final >= affine-only in {better}/{n}, median improvement {med:.4}"))
}

const COMPARED: [&str; 3] = [TRANSFORMS_FILE, "overlay_labels.png", "overlay_composite.png"];

fn determinism(first: &Path, second: &Path) -> Check {
    let t0 = Instant::now();
    deformable_suite(second)?;
    let mut files = 0;
    for seed in SUITE_SEEDS {
        let id = format!("case_{seed:02}");
        for name in COMPARED {
            let read = |root: &Path| std::fs::read(root.join(&id).join(name)).map_err(|e| format!("{id}/{name}: {e}"));
            ensure(read(first)? == read(second)?, || format!("{id}/{name} differs between runs"))?;
            files += 1;
        }
    }
    Ok(format!("{files} files byte-identical across two runs, {:.0} s", t0.elapsed().as_secs_f64()))
}

// 9 ------------------------------------------------------------------------

fn binary() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_dsa-atlas"))
}

fn runtime_budget(root: &Path) -> Check {
    let setup = PhantomSetup {
        atlas_size: 128,
        detector_px: 512,
        ..suite_setup(WarpBounds::default(), 0)
    };
    let (_, toml) = write_phantom(&setup, "budget", root).map_err(|e| e.to_string())?;
    let t0 = Instant::now();
    let out = Command::new(binary())
        .args(["pipeline", "--config"])
        .arg(&toml)
        .output()
        .map_err(|e| e.to_string())?;
    let s = t0.elapsed().as_secs_f64();
    ensure(out.status.success(), || String::from_utf8_lossy(&out.stderr).into_owned())?;
    ensure(root.join("out").join(TRANSFORMS_FILE).exists(), || "no transforms written".into())?;
    ensure(s <= 180.0, || format!("pipeline took {s:.1} s"))?;
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    Ok(format!("512 px detector, 128^3 atlas: {s:.1} s on {threads} hardware thread(s)"))
}

// 10 -----------------------------------------------------------------------

fn reporting_fidelity(root: &Path) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let values: Vec<f64> = (0..1000)
        .map(|_| {
            let v: f64 = if rng.random_bool(0.8) {
                1.0 - 0.25 * rng.random::<f64>().powi(2)
            } else {
                rng.random_range(-0.05..0.7)
            };
            v.clamp(-1.0, 1.0)
        })
        .collect();
    let rows: Vec<ResultRow> = values
        .iter()
        .enumerate()
        .map(|(i, &v)| ResultRow {
            case_id: format!("s{i}"),
            site: "LeftAnterior".into(),
            view: "Anteroposterior".into(),
            ssim_affine: v,
            ssim_final: v,
            tre_mean_px: None,
            runtime_s: 0.0,
        })
        .collect();
    let csv = root.join("results.csv");
    std::fs::write(&csv, results_csv(&rows).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let out_dir = root.join("stats");
    let out = Command::new(binary())
        .args(["stats", "--results"])
        .arg(&csv)
        .arg("--output")
        .arg(&out_dir)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || String::from_utf8_lossy(&out.stderr).into_owned())?;
    let text = std::fs::read_to_string(out_dir.join("stats.json")).map_err(|e| e.to_string())?;
    let r: StatsReport = serde_json::from_str(&text).map_err(|e| e.to_string())?;

    // Naive two-pass oracle.
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let mut sorted = values.clone();
    let med = median(&mut sorted);
    let d = (r.stats.mean - mean).abs().max((r.stats.std - std).abs()).max((r.stats.median - med).abs());
    ensure(d <= 1e-12, || format!("stats differ from the oracle by {d:e}"))?;

    ensure(r.bin_width == 0.01, || format!("bin width {}", r.bin_width))?;
    ensure(r.bin_edges.len() == 101, || format!("{} edges", r.bin_edges.len()))?;
    for (k, e) in r.bin_edges.iter().enumerate() {
        ensure(*e == k as f64 / 100.0, || format!("edge {k} is {e}"))?;
    }
    let mut counts = vec![0usize; 100];
    for &v in &values {
        // Upper bin on an edge; 1.0 joins the last bin, negatives the first.
        let k = (1..100).filter(|&k| v >= k as f64 / 100.0).count();
        counts[k] += 1;
    }
    ensure(r.stats.histogram == counts, || "histogram counts differ from the oracle".into())?;
    let svg = std::fs::read_to_string(out_dir.join("histogram.svg")).map_err(|e| e.to_string())?;
    let bars: Vec<&str> = svg.lines().filter(|l| l.starts_with("<rect x=")).collect();
    ensure(bars.len() == counts.iter().filter(|&&c| c > 0).count(), || "SVG bar count".into())?;
    ensure(bars.iter().all(|b| b.contains(r#"width="0.01""#)), || "SVG bar not 0.01 wide".into())?;
    let png = std::fs::read(out_dir.join("histogram.png")).map_err(|e| e.to_string())?;
    let (w, h, rgb) = decode_rgb8(&png).map_err(|e| e.to_string())?;
    // Row just above the axis: bar k covers exactly its own column range.
    let row = h - 41;
    let px = |x: usize| &rgb[3 * (row * w + x)..3 * (row * w + x) + 3];
    let white = [255u8, 255, 255];
    for (k, &c) in counts.iter().enumerate() {
        let cols = png_bar_columns(k);
        let filled = cols.clone().filter(|&x| px(x) != white).count();
        let want = if c > 0 { cols.len() } else { 0 };
        ensure(filled == want, || format!("PNG bar {k}: {filled} of {} columns filled", cols.len()))?;
    }
    Ok(format!(
        "n {}, mean {:.6}, std {:.6}, median {:.6} within {d:.1e} of the oracle; 100 bins of width 0.01",
        r.stats.n, r.stats.mean, r.stats.std, r.stats.median
    ))
}

// --------------------------------------------------------------------------

fn report(id: usize, name: &str, result: Check, failed: &mut usize) {
    match result {
        Ok(detail) => println!("PASS  {id:2}  {name}: {detail}"),
        Err(why) => {
            *failed += 1;
            println!("FAIL  {id:2}  {name}: {why}");
        }
    }
}

fn main() {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let root = tmp.path();
    let mut failed = 0;
    report(1, "SSIM identities", ssim_identities(), &mut failed);
    report(2, "projector oracle", projector_oracle(), &mut failed);
    report(3, "preproc oracle", preproc_oracle(), &mut failed);
    report(4, "MI properties", mi_properties(), &mut failed);
    report(5, "B-spline basis", bspline_properties(), &mut failed);
    report(6, "affine recovery", affine_recovery(), &mut failed);
    let t0 = Instant::now();
    let first = root.join("run1");
    let suite = deformable_suite(&first);
    let elapsed = t0.elapsed().as_secs_f64();
    match &suite {
        Ok(cases) => {
            report(7, "deformable recovery", deformable_recovery(cases, elapsed), &mut failed);
            report(8, "deformable stage over affine", affine_insufficient(cases), &mut failed);
        }
        Err(e) => {
            report(7, "deformable recovery", Err(e.clone()), &mut failed);
            report(8, "deformable stage over affine", Err(e.clone()), &mut failed);
        }
    }
    report(9, "runtime budget", runtime_budget(&root.join("budget")), &mut failed);
    report(10, "reporting fidelity", reporting_fidelity(root), &mut failed);
    let det = match &suite {
        Ok(_) => determinism(&first, &root.join("run2")),
        Err(e) => Err(e.clone()),
    };
    report(11, "determinism", det, &mut failed);
    println!("{} of 11 criteria passed", 11 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
