//! Cohort statistics over a results table and the SSIM histogram plots.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dsa_atlas::imgcore::png_io::encode_rgb8;
use dsa_atlas::io_util::atomic_write;
use dsa_atlas::metrics::{cohort_stats, histogram_edges, CohortStats, HISTOGRAM_BINS};
use dsa_atlas::{Error, Result};

use crate::pipeline::ResultRow;

/// Which SSIM is read from each results row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SsimColumn {
    SsimAffine,
    SsimFinal,
}

impl SsimColumn {
    pub fn as_str(self) -> &'static str {
        match self {
            SsimColumn::SsimAffine => "ssim_affine",
            SsimColumn::SsimFinal => "ssim_final",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ssim_affine" | "affine" => Ok(SsimColumn::SsimAffine),
            "ssim_final" | "final" => Ok(SsimColumn::SsimFinal),
            _ => Err(Error::invalid("ssim column", format!("unknown column {s:?}"))),
        }
    }

    fn pick(self, r: &ResultRow) -> f64 {
        match self {
            SsimColumn::SsimAffine => r.ssim_affine,
            SsimColumn::SsimFinal => r.ssim_final,
        }
    }
}

/// SSIM operand pair, stated in every report.
pub const SSIM_OPERANDS: &str = "fixed perfusion mask vs warped atlas silhouette, both binary";

pub const BIN_WIDTH: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub column: SsimColumn,
    pub ssim_operands: String,
    pub bin_width: f64,
    /// `HISTOGRAM_BINS + 1` edges over [0, 1].
    pub bin_edges: Vec<f64>,
    /// Reported, not asserted: median at or above the mean.
    pub left_skewed: bool,
    #[serde(flatten)]
    pub stats: CohortStats,
}

pub fn stats_report(rows: &[ResultRow], column: SsimColumn) -> Result<StatsReport> {
    let values: Vec<f64> = rows.iter().map(|r| column.pick(r)).collect();
    let stats = cohort_stats(&values)?;
    Ok(StatsReport {
        column,
        ssim_operands: SSIM_OPERANDS.into(),
        bin_width: BIN_WIDTH,
        bin_edges: histogram_edges(),
        left_skewed: stats.left_skewed(),
        stats,
    })
}

// Plot layout in SVG user units and PNG pixels alike.
const BAR_PX: usize = 6;
const MARGIN_LEFT: usize = 48;
const MARGIN_RIGHT: usize = 16;
const MARGIN_TOP: usize = 16;
const MARGIN_BOTTOM: usize = 40;
const PLOT_H: usize = 240;
const PLOT_W: usize = BAR_PX * HISTOGRAM_BINS;

/// Bars are drawn in SSIM units: bar `k` has `x = k * 0.01`, `width = 0.01`.
pub fn histogram_svg(report: &StatsReport) -> String {
    let counts = &report.stats.histogram;
    let peak = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let w = MARGIN_LEFT + PLOT_W + MARGIN_RIGHT;
    let h = MARGIN_TOP + PLOT_H + MARGIN_BOTTOM;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let base = MARGIN_TOP + PLOT_H;
    let _ = writeln!(
        s,
        r#"<g transform="translate({MARGIN_LEFT} {base}) scale({PLOT_W} {})" fill="steelblue">"#,
        -(PLOT_H as f64) / peak
    );
    for (k, &c) in counts.iter().enumerate() {
        if c > 0 {
            let x = report.bin_edges[k];
            let _ = writeln!(s, r#"<rect x="{x}" y="0" width="{BIN_WIDTH}" height="{c}"/>"#);
        }
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(
        s,
        r#"<path d="M{MARGIN_LEFT} {MARGIN_TOP} V{base} H{}" stroke="black" fill="none"/>"#,
        MARGIN_LEFT + PLOT_W
    );
    for t in 0..=10 {
        let x = MARGIN_LEFT + t * PLOT_W / 10;
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{}" font-size="11" text-anchor="middle">{:.1}</text>"#,
            base + 16,
            t as f64 / 10.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">SSIM ({}, n = {}, bin width {BIN_WIDTH})</text>"#,
        MARGIN_LEFT + PLOT_W / 2,
        base + 34,
        report.column.as_str(),
        report.stats.n
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{}</text>"#,
        MARGIN_LEFT - 4,
        MARGIN_TOP + 10,
        peak as usize
    );
    s.push_str("</svg>\n");
    s
}

/// Raster copy of the plot; every bar is exactly `BAR_PX` pixels wide.
pub fn histogram_png(report: &StatsReport) -> Result<Vec<u8>> {
    let counts = &report.stats.histogram;
    let peak = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let w = MARGIN_LEFT + PLOT_W + MARGIN_RIGHT;
    let h = MARGIN_TOP + PLOT_H + MARGIN_BOTTOM;
    let mut rgb = vec![255u8; w * h * 3];
    let mut put = |x: usize, y: usize, c: [u8; 3]| {
        let i = 3 * (y * w + x);
        rgb[i..i + 3].copy_from_slice(&c);
    };
    let base = MARGIN_TOP + PLOT_H;
    for (k, &c) in counts.iter().enumerate() {
        // Nonzero bins stay visible.
        let bar = ((c as f64 / peak) * PLOT_H as f64).round().max(if c > 0 { 1.0 } else { 0.0 }) as usize;
        for y in base - bar..base {
            for x in 0..BAR_PX {
                put(MARGIN_LEFT + k * BAR_PX + x, y, [70, 130, 180]);
            }
        }
    }
    for y in MARGIN_TOP..=base {
        put(MARGIN_LEFT - 1, y, [0, 0, 0]);
    }
    for x in MARGIN_LEFT - 1..MARGIN_LEFT + PLOT_W {
        put(x, base, [0, 0, 0]);
    }
    for t in 0..=10 {
        let x = MARGIN_LEFT + t * PLOT_W / 10;
        for y in base..base + 5 {
            put(x.min(w - 1), y, [0, 0, 0]);
        }
    }
    encode_rgb8(w, h, &rgb)
}

/// Pixel column range of histogram bar `k` in [`histogram_png`].
pub fn png_bar_columns(k: usize) -> std::ops::Range<usize> {
    let x0 = MARGIN_LEFT + k * BAR_PX;
    x0..x0 + BAR_PX
}

pub const STATS_FILE: &str = "stats.json";
pub const HISTOGRAM_SVG: &str = "histogram.svg";
pub const HISTOGRAM_PNG: &str = "histogram.png";

#[derive(Clone, Debug)]
pub struct StatsFiles {
    pub stats: PathBuf,
    pub svg: PathBuf,
    pub png: PathBuf,
}

pub fn write_stats(report: &StatsReport, dir: &Path) -> Result<StatsFiles> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = StatsFiles {
        stats: dir.join(STATS_FILE),
        svg: dir.join(HISTOGRAM_SVG),
        png: dir.join(HISTOGRAM_PNG),
    };
    atomic_write(&files.stats, serde_json::to_string_pretty(report)?.as_bytes())?;
    atomic_write(&files.svg, histogram_svg(report).as_bytes())?;
    atomic_write(&files.png, &histogram_png(report)?)?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: f64) -> ResultRow {
        ResultRow {
            case_id: "c".into(),
            site: "LeftAnterior".into(),
            view: "Anteroposterior".into(),
            ssim_affine: v - 0.1,
            ssim_final: v,
            tre_mean_px: None,
            runtime_s: 0.0,
        }
    }

    #[test]
    fn report_picks_the_column() {
        let rows: Vec<_> = [0.5, 0.7, 0.9].into_iter().map(row).collect();
        let f = stats_report(&rows, SsimColumn::SsimFinal).unwrap();
        assert!((f.stats.mean - 0.7).abs() < 1e-15);
        let a = stats_report(&rows, SsimColumn::SsimAffine).unwrap();
        assert!((a.stats.median - 0.6).abs() < 1e-15);
        assert_eq!(f.bin_edges.len(), HISTOGRAM_BINS + 1);
    }

    #[test]
    fn svg_bars_are_one_bin_wide() {
        let rows: Vec<_> = [0.05, 0.5, 0.505, 0.99].into_iter().map(row).collect();
        let r = stats_report(&rows, SsimColumn::SsimFinal).unwrap();
        let svg = histogram_svg(&r);
        let bars: Vec<&str> = svg.lines().filter(|l| l.starts_with("<rect x=")).collect();
        assert_eq!(bars.len(), 3);
        assert!(bars.iter().all(|l| l.contains(r#"width="0.01""#)));
        assert!(bars[1].contains(r#"x="0.5""#) && bars[1].contains(r#"height="2""#));
    }

    #[test]
    fn empty_results_are_rejected() {
        assert!(stats_report(&[], SsimColumn::SsimFinal).is_err());
    }
}
