//! Minimal little-endian NIfTI-1 reader/writer for label volumes.
//!
//! Only the header fields needed to recover a label grid are honored:
//! `sizeof_hdr`, `dim`, `datatype`, `bitpix`, `pixdim`, `vox_offset`,
//! `qform_code`/`qoffset_*` and `magic`. Orientation quaternions are ignored;
//! the file's axis order is the world axis order.

use std::fs;
use std::path::{Path, PathBuf};

use super::LabelVolume;
use crate::error::{Error, Result};

pub const HEADER_SIZE: usize = 348;

pub const DT_UINT8: i16 = 2;
pub const DT_INT16: i16 = 4;
pub const DT_FLOAT32: i16 = 16;
pub const DT_UINT16: i16 = 512;

const OFF_DIM: usize = 40;
const OFF_DATATYPE: usize = 70;
const OFF_BITPIX: usize = 72;
const OFF_PIXDIM: usize = 76;
const OFF_VOX_OFFSET: usize = 108;
const OFF_QFORM_CODE: usize = 252;
const OFF_QOFFSET: usize = 268;
const OFF_MAGIC: usize = 344;

fn err(msg: impl Into<String>) -> Error {
    Error::Nifti(msg.into())
}

fn i16_at(b: &[u8], off: usize) -> i16 {
    i16::from_le_bytes([b[off], b[off + 1]])
}

fn i32_at(b: &[u8], off: usize) -> i32 {
    i32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

fn f32_at(b: &[u8], off: usize) -> f32 {
    f32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

fn bytes_per_voxel(datatype: i16) -> Option<usize> {
    match datatype {
        DT_UINT8 => Some(1),
        DT_INT16 | DT_UINT16 => Some(2),
        DT_FLOAT32 => Some(4),
        _ => None,
    }
}

/// Parsed subset of a NIfTI-1 header.
#[derive(Clone, Debug, PartialEq)]
pub struct Header {
    pub dims: [usize; 3],
    pub datatype: i16,
    pub pixdim: [f64; 3],
    pub vox_offset: usize,
    pub origin: [f64; 3],
    pub single_file: bool,
}

pub fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < HEADER_SIZE {
        return Err(err(format!(
            "file shorter than the {HEADER_SIZE}-byte header ({} bytes)",
            bytes.len()
        )));
    }
    let sizeof_hdr = i32_at(bytes, 0);
    if sizeof_hdr != HEADER_SIZE as i32 {
        if i32::from_be_bytes(bytes[0..4].try_into().unwrap()) == HEADER_SIZE as i32 {
            return Err(err("big-endian file; only little-endian NIfTI-1 is supported"));
        }
        return Err(err(format!("sizeof_hdr is {sizeof_hdr}, expected 348")));
    }
    let magic = &bytes[OFF_MAGIC..OFF_MAGIC + 4];
    let single_file = match magic {
        b"n+1\0" => true,
        b"ni1\0" => false,
        _ => return Err(err(format!("bad magic {magic:?}; expected \"n+1\\0\" or \"ni1\\0\""))),
    };
    let ndim = i16_at(bytes, OFF_DIM);
    if !(1..=7).contains(&ndim) {
        return Err(err(format!(
            "dim[0] = {ndim} is outside 1..7 (big-endian or corrupt header)"
        )));
    }
    if ndim != 3 {
        return Err(err(format!("expected a 3D volume, dim[0] = {ndim}")));
    }
    let mut dims = [0usize; 3];
    for (i, d) in dims.iter_mut().enumerate() {
        let v = i16_at(bytes, OFF_DIM + 2 * (i + 1));
        if v < 1 {
            return Err(err(format!("dim[{}] = {v} must be >= 1", i + 1)));
        }
        *d = v as usize;
    }
    let datatype = i16_at(bytes, OFF_DATATYPE);
    let bpv = bytes_per_voxel(datatype)
        .ok_or_else(|| err(format!("unsupported datatype {datatype}")))?;
    let bitpix = i16_at(bytes, OFF_BITPIX);
    if bitpix as usize != 8 * bpv {
        return Err(err(format!(
            "bitpix {bitpix} inconsistent with datatype {datatype}"
        )));
    }
    let mut pixdim = [0.0f64; 3];
    for (i, p) in pixdim.iter_mut().enumerate() {
        let v = f32_at(bytes, OFF_PIXDIM + 4 * (i + 1)) as f64;
        if !(v.is_finite() && v > 0.0) {
            return Err(err(format!("pixdim[{}] = {v} must be > 0", i + 1)));
        }
        *p = v;
    }
    let vox_offset = f32_at(bytes, OFF_VOX_OFFSET);
    let vox_offset = if single_file {
        if !(vox_offset.is_finite() && vox_offset >= HEADER_SIZE as f32) {
            return Err(err(format!("vox_offset {vox_offset} lies inside the header")));
        }
        vox_offset as usize
    } else {
        vox_offset.max(0.0) as usize
    };
    let origin = if i16_at(bytes, OFF_QFORM_CODE) > 0 {
        std::array::from_fn(|i| f32_at(bytes, OFF_QOFFSET + 4 * i) as f64)
    } else {
        [0.0; 3]
    };
    Ok(Header {
        dims,
        datatype,
        pixdim,
        vox_offset,
        origin,
        single_file,
    })
}

/// Decode a label volume from an in-memory single-file (`n+1`) image, or
/// from a header plus a separate payload for `ni1` pairs.
pub fn decode(header: &Header, payload: &[u8]) -> Result<LabelVolume> {
    let n: usize = header.dims.iter().product();
    let bpv = bytes_per_voxel(header.datatype).expect("validated datatype");
    let need = n * bpv;
    if payload.len() < need {
        return Err(err(format!(
            "truncated payload: {} bytes, expected {need}",
            payload.len()
        )));
    }
    let raw = &payload[..need];
    let data: Vec<u32> = match header.datatype {
        DT_UINT8 => raw.iter().map(|&b| b as u32).collect(),
        DT_UINT16 => raw
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]) as u32)
            .collect(),
        DT_INT16 => raw
            .chunks_exact(2)
            .map(|c| {
                let v = i16::from_le_bytes([c[0], c[1]]);
                if v < 0 {
                    Err(err(format!("negative label {v}")))
                } else {
                    Ok(v as u32)
                }
            })
            .collect::<Result<_>>()?,
        DT_FLOAT32 => raw
            .chunks_exact(4)
            .map(|c| {
                let v = f32::from_le_bytes(c.try_into().unwrap());
                if !v.is_finite() {
                    return Err(err(format!("non-finite label {v}")));
                }
                let r = v.round();
                if r < 0.0 {
                    return Err(err(format!("negative label {v}")));
                }
                if r > u32::MAX as f32 {
                    return Err(err(format!("label {v} out of range")));
                }
                Ok(r as u32)
            })
            .collect::<Result<_>>()?,
        _ => unreachable!(),
    };
    LabelVolume::new(header.dims, header.pixdim, header.origin, data)
}

fn companion_img(path: &Path) -> PathBuf {
    path.with_extension("img")
}

pub fn read_nifti(path: impl AsRef<Path>) -> Result<LabelVolume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let header = parse_header(&bytes)?;
    if header.single_file {
        let payload = bytes.get(header.vox_offset..).unwrap_or(&[]);
        decode(&header, payload)
    } else {
        let img = companion_img(path);
        let payload = fs::read(&img).map_err(|e| Error::io(&img, e))?;
        let payload = payload.get(header.vox_offset..).unwrap_or(&[]);
        decode(&header, payload)
    }
}

/// Encode a label volume as a single-file NIfTI-1 image. Labels up to 255 are
/// stored as uint8, larger ones as uint16.
pub fn encode(vol: &LabelVolume) -> Result<Vec<u8>> {
    let max = vol.data().iter().copied().max().unwrap_or(0);
    let (datatype, bpv) = if max <= u8::MAX as u32 {
        (DT_UINT8, 1usize)
    } else if max <= u16::MAX as u32 {
        (DT_UINT16, 2)
    } else {
        return Err(err(format!("label {max} does not fit in uint16")));
    };
    let dims = vol.dims();
    if dims.iter().any(|&d| d > i16::MAX as usize) {
        return Err(err("dimension exceeds the NIfTI-1 int16 limit"));
    }
    let vox_offset = 352usize;
    let mut out = vec![0u8; vox_offset + vol.data().len() * bpv];
    out[0..4].copy_from_slice(&(HEADER_SIZE as i32).to_le_bytes());
    let dim = [3i16, dims[0] as i16, dims[1] as i16, dims[2] as i16, 1, 1, 1, 1];
    for (i, d) in dim.iter().enumerate() {
        out[OFF_DIM + 2 * i..OFF_DIM + 2 * i + 2].copy_from_slice(&d.to_le_bytes());
    }
    out[OFF_DATATYPE..OFF_DATATYPE + 2].copy_from_slice(&datatype.to_le_bytes());
    out[OFF_BITPIX..OFF_BITPIX + 2].copy_from_slice(&((8 * bpv) as i16).to_le_bytes());
    let sp = vol.spacing();
    let pixdim = [1.0f32, sp[0] as f32, sp[1] as f32, sp[2] as f32, 1.0, 1.0, 1.0, 1.0];
    for (i, p) in pixdim.iter().enumerate() {
        out[OFF_PIXDIM + 4 * i..OFF_PIXDIM + 4 * i + 4].copy_from_slice(&p.to_le_bytes());
    }
    out[OFF_VOX_OFFSET..OFF_VOX_OFFSET + 4].copy_from_slice(&(vox_offset as f32).to_le_bytes());
    // scl_slope = 1
    out[112..116].copy_from_slice(&1.0f32.to_le_bytes());
    out[OFF_QFORM_CODE..OFF_QFORM_CODE + 2].copy_from_slice(&1i16.to_le_bytes());
    for (i, o) in vol.origin().iter().enumerate() {
        out[OFF_QOFFSET + 4 * i..OFF_QOFFSET + 4 * i + 4].copy_from_slice(&(*o as f32).to_le_bytes());
    }
    out[OFF_MAGIC..OFF_MAGIC + 4].copy_from_slice(b"n+1\0");
    let body = &mut out[vox_offset..];
    match bpv {
        1 => body.iter_mut().zip(vol.data()).for_each(|(b, &v)| *b = v as u8),
        _ => body
            .chunks_exact_mut(2)
            .zip(vol.data())
            .for_each(|(b, &v)| b.copy_from_slice(&(v as u16).to_le_bytes())),
    }
    Ok(out)
}

pub fn write_nifti(vol: &LabelVolume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(vol)?;
    crate::io_util::atomic_write(path, &bytes)
}
