//! Raster types and file I/O: 2D intensity images, binary masks, labeled
//! volumes, frame sequences, plus minimal NIfTI-1 and grayscale PNG codecs.

mod frames;
mod image;
pub mod nifti;
pub mod png_io;

pub use frames::{load_frames, FrameSequence};
pub use image::{BinaryMask, GrayImage, LabelVolume};
pub use nifti::{read_nifti, write_nifti};
pub use png_io::{read_mask_png, read_png_gray, write_mask_png, write_png_gray};
