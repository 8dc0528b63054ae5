//! Grayscale, RGB and indexed PNG codecs built on the `png` crate.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use super::{BinaryMask, GrayImage};
use crate::error::{Error, Result};
use crate::io_util::atomic_write;
use crate::scalar::Real;

fn perr(e: impl std::fmt::Display) -> Error {
    Error::Png(e.to_string())
}

struct Decoded {
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    palette: Option<Vec<u8>>,
    bytes: Vec<u8>,
}

fn decode(bytes: &[u8], expand: bool) -> Result<Decoded> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(if expand {
        png::Transformations::EXPAND
    } else {
        png::Transformations::IDENTITY
    });
    let mut reader = dec.read_info().map_err(perr)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Png("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(perr)?;
    buf.truncate(info.buffer_size());
    let palette = reader.info().palette.as_ref().map(|p| p.to_vec());
    Ok(Decoded {
        width: info.width as usize,
        height: info.height as usize,
        color: info.color_type,
        depth: info.bit_depth,
        palette,
        bytes: buf,
    })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Decode an 8- or 16-bit grayscale PNG into `[0, 1]` intensities.
pub fn decode_gray<T: Real>(bytes: &[u8], spacing: [T; 2]) -> Result<GrayImage<T>> {
    let d = decode(bytes, true)?;
    if d.color != png::ColorType::Grayscale {
        return Err(Error::Png(format!(
            "expected a grayscale PNG, found {:?}",
            d.color
        )));
    }
    let data: Vec<T> = match d.depth {
        png::BitDepth::Sixteen => d
            .bytes
            .chunks_exact(2)
            .map(|c| T::lit(u16::from_be_bytes([c[0], c[1]]) as f64 / 65535.0))
            .collect(),
        _ => d.bytes.iter().map(|&b| T::lit(b as f64 / 255.0)).collect(),
    };
    GrayImage::new(d.width, d.height, spacing, data)
}

pub fn read_png_gray<T: Real>(path: impl AsRef<Path>) -> Result<GrayImage<T>> {
    read_png_gray_with_spacing(path, [T::one(), T::one()])
}

pub fn read_png_gray_with_spacing<T: Real>(
    path: impl AsRef<Path>,
    spacing: [T; 2],
) -> Result<GrayImage<T>> {
    let path = path.as_ref();
    decode_gray(&read_file(path)?, spacing).map_err(|e| match e {
        Error::Png(m) => Error::Png(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Quantize `v in [0, 1]` to a 16-bit sample (values are clamped).
#[inline]
pub fn quantize16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

/// 16-bit grayscale encoding; intensities are clamped to `[0, 1]`.
pub fn encode_gray16<T: Real>(image: &GrayImage<T>) -> Result<Vec<u8>> {
    let mut raw = Vec::with_capacity(image.data().len() * 2);
    for v in image.data() {
        raw.extend_from_slice(&quantize16(v.f64()).to_be_bytes());
    }
    encode_raw(
        image.width(),
        image.height(),
        png::ColorType::Grayscale,
        png::BitDepth::Sixteen,
        None,
        &raw,
    )
}

pub fn write_png_gray<T: Real>(image: &GrayImage<T>, path: impl AsRef<Path>) -> Result<()> {
    atomic_write(path, &encode_gray16(image)?)
}

/// Masks are stored as 8-bit grayscale, 0 or 255.
pub fn write_mask_png(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    let raw: Vec<u8> = mask.data().iter().map(|&b| if b { 255 } else { 0 }).collect();
    let bytes = encode_raw(
        mask.width(),
        mask.height(),
        png::ColorType::Grayscale,
        png::BitDepth::Eight,
        None,
        &raw,
    )?;
    atomic_write(path, &bytes)
}

/// Any grayscale PNG; pixels at or above half scale are foreground.
pub fn read_mask_png(path: impl AsRef<Path>, spacing: [f64; 2]) -> Result<BinaryMask> {
    let img: GrayImage<f64> = read_png_gray(path)?;
    BinaryMask::new(
        img.width(),
        img.height(),
        spacing,
        img.data().iter().map(|&v| v >= 0.5).collect(),
    )
}

pub fn encode_rgb8(width: usize, height: usize, rgb: &[u8]) -> Result<Vec<u8>> {
    if rgb.len() != width * height * 3 {
        return Err(Error::Png("rgb buffer size mismatch".into()));
    }
    encode_raw(width, height, png::ColorType::Rgb, png::BitDepth::Eight, None, rgb)
}

pub fn decode_rgb8(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let d = decode(bytes, false)?;
    if d.color != png::ColorType::Rgb || d.depth != png::BitDepth::Eight {
        return Err(Error::Png(format!("expected 8-bit RGB, found {:?}", d.color)));
    }
    Ok((d.width, d.height, d.bytes))
}

/// 8-bit indexed PNG; `palette` holds RGB triples.
pub fn encode_indexed(width: usize, height: usize, palette: &[[u8; 3]], indices: &[u8]) -> Result<Vec<u8>> {
    if indices.len() != width * height {
        return Err(Error::Png("index buffer size mismatch".into()));
    }
    if palette.is_empty() || palette.len() > 256 {
        return Err(Error::Png("palette must hold 1..=256 entries".into()));
    }
    if let Some(&i) = indices.iter().find(|&&i| i as usize >= palette.len()) {
        return Err(Error::Png(format!("index {i} outside palette")));
    }
    let flat: Vec<u8> = palette.iter().flatten().copied().collect();
    encode_raw(
        width,
        height,
        png::ColorType::Indexed,
        png::BitDepth::Eight,
        Some(&flat),
        indices,
    )
}

/// `(width, height, palette, indices)`.
pub type IndexedImage = (usize, usize, Vec<[u8; 3]>, Vec<u8>);

/// Decode without palette expansion.
pub fn decode_indexed(bytes: &[u8]) -> Result<IndexedImage> {
    let d = decode(bytes, false)?;
    if d.color != png::ColorType::Indexed || d.depth != png::BitDepth::Eight {
        return Err(Error::Png(format!(
            "expected 8-bit indexed PNG, found {:?}/{:?}",
            d.color, d.depth
        )));
    }
    let palette = d
        .palette
        .unwrap_or_default()
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    Ok((d.width, d.height, palette, d.bytes))
}

fn encode_raw(
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    palette: Option<&[u8]>,
    raw: &[u8],
) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(depth);
        if let Some(p) = palette {
            enc.set_palette(p.to_vec());
        }
        let mut w = enc.write_header().map_err(perr)?;
        w.write_image_data(raw).map_err(perr)?;
        w.finish().map_err(perr)?;
    }
    Ok(out)
}
