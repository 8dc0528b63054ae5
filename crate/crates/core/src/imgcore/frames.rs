use std::fs;
use std::path::{Path, PathBuf};

use super::png_io::read_png_gray_with_spacing;
use super::GrayImage;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Ordered DSA frames sharing one pixel grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence<T> {
    frames: Vec<GrayImage<T>>,
    /// Seconds between frames, informational only.
    pub frame_interval: Option<f64>,
}

impl<T: Real> FrameSequence<T> {
    pub fn new(frames: Vec<GrayImage<T>>, frame_interval: Option<f64>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::Frames("sequence needs at least one frame".into()))?;
        if frames
            .iter()
            .any(|f| f.dims() != first.dims() || f.spacing() != first.spacing())
        {
            return Err(Error::Frames("mixed dimensions".into()));
        }
        Ok(Self {
            frames,
            frame_interval,
        })
    }

    pub fn frames(&self) -> &[GrayImage<T>] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames[0].dims()
    }

    pub fn spacing(&self) -> [T; 2] {
        self.frames[0].spacing()
    }
}

/// Sorted `*.png` paths in `dir` (byte-wise lexicographic file names).
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .map(|x| x.eq_ignore_ascii_case("png"))
                    .unwrap_or(false)
        })
        .collect();
    paths.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(paths)
}

/// Load the PNG frames of `dir`, optionally keeping only the inclusive index
/// range `[first, last]`.
pub fn load_frames<T: Real>(
    dir: impl AsRef<Path>,
    range: Option<(usize, usize)>,
    spacing: [T; 2],
) -> Result<FrameSequence<T>> {
    let dir = dir.as_ref();
    let paths = list_pngs(dir)?;
    if paths.is_empty() {
        return Err(Error::Frames(format!("empty directory {}", dir.display())));
    }
    let selected: &[PathBuf] = match range {
        None => &paths,
        Some((first, last)) => {
            if first > last || first >= paths.len() {
                return Err(Error::Frames(format!(
                    "empty range [{first}, {last}] for {} frames",
                    paths.len()
                )));
            }
            &paths[first..=last.min(paths.len() - 1)]
        }
    };
    let frames = selected
        .iter()
        .map(|p| read_png_gray_with_spacing(p, spacing))
        .collect::<Result<Vec<_>>>()?;
    FrameSequence::new(frames, None)
}
