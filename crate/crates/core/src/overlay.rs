//! Per-territory overlay: warp each label's path-length image, keep the
//! label with the longest path per pixel, and render it over the DSA.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::atlas::TerritoryLUT;
use crate::error::{Error, Result};
use crate::imgcore::png_io::{decode_indexed, encode_indexed, encode_rgb8};
use crate::imgcore::GrayImage;
use crate::io_util::atomic_write;
use crate::projector::Projection;
use crate::register::{apply_pair, GridSpec, TransformPair};
use crate::scalar::Real;

/// Default territory colors, assigned by label id order.
pub const PALETTE: [[u8; 3]; 12] = [
    [230, 25, 75],
    [60, 180, 75],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [170, 110, 40],
    [255, 225, 25],
];

pub const OVERLAY_ALPHA: f64 = 0.4;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LegendEntry {
    pub name: String,
    pub rgb: [u8; 3],
}

pub type Legend = BTreeMap<u32, LegendEntry>;

#[derive(Clone, Debug, PartialEq)]
pub struct TerritoryOverlay {
    pub width: usize,
    pub height: usize,
    /// Row-major territory ids, 0 = none.
    pub label_map: Vec<u32>,
    pub legend: Legend,
}

/// Legend over every named label of the LUT; palette colors follow id order
/// unless the LUT overrides them.
pub fn legend_from_lut(lut: &TerritoryLUT) -> Legend {
    lut.names()
        .iter()
        .enumerate()
        .map(|(rank, (&id, name))| {
            let rgb = lut.color_override(id).unwrap_or(PALETTE[rank % PALETTE.len()]);
            (
                id,
                LegendEntry {
                    name: name.clone(),
                    rgb,
                },
            )
        })
        .collect()
}

/// Label with the greatest warped path length per pixel (ties to the smaller
/// id); pixels where every path length is `<= epsilon` get 0.
pub fn argmax_labels<T: Real>(warped: &BTreeMap<u32, GrayImage<T>>, epsilon: T, len: usize) -> Vec<u32> {
    let mut best = vec![(0u32, epsilon); len];
    for (&id, img) in warped {
        for (b, &v) in best.iter_mut().zip(img.data()) {
            if v > b.1 {
                *b = (id, v);
            }
        }
    }
    best.into_iter().map(|(id, _)| id).collect()
}

pub fn build_overlay<T: Real>(
    projection: &Projection<T>,
    pair: &TransformPair<T>,
    lut: &TerritoryLUT,
    grid: GridSpec<T>,
) -> Result<TerritoryOverlay> {
    let full = legend_from_lut(lut);
    let mut legend = Legend::new();
    let mut warped = BTreeMap::new();
    for (&id, lp) in &projection.per_label {
        let entry = full
            .get(&id)
            .ok_or_else(|| Error::Overlay(format!("label {id} is missing from the legend")))?;
        legend.insert(id, entry.clone());
        warped.insert(id, apply_pair(&lp.integral, pair, grid)?);
    }
    let label_map = argmax_labels(&warped, projection.epsilon, grid.width * grid.height);
    legend.retain(|id, _| label_map.contains(id));
    Ok(TerritoryOverlay {
        width: grid.width,
        height: grid.height,
        label_map,
        legend,
    })
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// RGB composite: `0.6 * background + 0.4 * color` under territories,
/// plain grayscale elsewhere.
pub fn composite<T: Real>(ov: &TerritoryOverlay, background: &GrayImage<T>) -> Result<Vec<u8>> {
    if background.dims() != (ov.width, ov.height) {
        return Err(Error::DimensionMismatch(format!(
            "background {:?} vs overlay {:?}",
            background.dims(),
            (ov.width, ov.height)
        )));
    }
    let mut rgb = Vec::with_capacity(ov.label_map.len() * 3);
    for (&id, &v) in ov.label_map.iter().zip(background.data()) {
        let b = to_u8(v.f64());
        match ov.legend.get(&id) {
            Some(e) if id != 0 => {
                for c in e.rgb {
                    let mix = (1.0 - OVERLAY_ALPHA) * b as f64 + OVERLAY_ALPHA * c as f64;
                    rgb.push(mix.round() as u8);
                }
            }
            _ => rgb.extend([b, b, b]),
        }
    }
    Ok(rgb)
}

/// Indexed PNG whose pixel value is the territory id; palette entry `k`
/// holds the legend color of id `k` (black when unused).
pub fn encode_label_png(ov: &TerritoryOverlay) -> Result<Vec<u8>> {
    let max = ov.label_map.iter().copied().max().unwrap_or(0);
    if max > 255 {
        return Err(Error::Overlay(format!("label id {max} does not fit an 8-bit indexed PNG")));
    }
    let mut palette = vec![[0u8; 3]; max as usize + 1];
    for (&id, e) in &ov.legend {
        if (id as usize) < palette.len() {
            palette[id as usize] = e.rgb;
        }
    }
    let idx: Vec<u8> = ov.label_map.iter().map(|&v| v as u8).collect();
    encode_indexed(ov.width, ov.height, &palette, &idx)
}

pub fn read_label_png(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u32>)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (w, h, _, idx) = decode_indexed(&bytes)?;
    Ok((w, h, idx.into_iter().map(u32::from).collect()))
}

#[derive(Serialize)]
struct LegendJson<'a> {
    #[serde(flatten)]
    entries: BTreeMap<String, &'a LegendEntry>,
}

pub fn legend_json(legend: &Legend) -> Result<String> {
    let doc = LegendJson {
        entries: legend.iter().map(|(id, e)| (id.to_string(), e)).collect(),
    };
    let mut s = serde_json::to_string_pretty(&doc)?;
    s.push('\n');
    Ok(s)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OverlayFiles {
    pub labels: PathBuf,
    pub composite: PathBuf,
    pub legend: PathBuf,
}

/// Writes `<stem>_labels.png`, `<stem>_composite.png` and `<stem>_legend.json`.
pub fn export_overlay<T: Real>(
    ov: &TerritoryOverlay,
    background: &GrayImage<T>,
    dir: impl AsRef<Path>,
    stem: &str,
) -> Result<OverlayFiles> {
    let dir = dir.as_ref();
    let rgb = composite(ov, background)?;
    let files = OverlayFiles {
        labels: dir.join(format!("{stem}_labels.png")),
        composite: dir.join(format!("{stem}_composite.png")),
        legend: dir.join(format!("{stem}_legend.json")),
    };
    atomic_write(&files.labels, &encode_label_png(ov)?)?;
    atomic_write(&files.composite, &encode_rgb8(ov.width, ov.height, &rgb)?)?;
    atomic_write(&files.legend, legend_json(&ov.legend)?.as_bytes())?;
    Ok(files)
}
