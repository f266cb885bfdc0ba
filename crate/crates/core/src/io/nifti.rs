//! Reader for uncompressed single-file NIfTI-1 volumes.
//!
//! Only the fields needed to recover a scalar 3D grid are interpreted:
//! `dim`, `datatype`, `bitpix`, `pixdim`, `vox_offset`, the intensity
//! scaling pair and the magic string. Orientation is ignored.

use std::path::Path;

use super::read_bytes;
use crate::error::{Error, Result};
use crate::volume::{Dims, LabelMap, Volume};

const HEADER_LEN: usize = 348;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;

/// Scaled voxel values of a NIfTI-1 file.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiImage {
    pub dims: Dims,
    pub spacing: [f64; 3],
    pub datatype: i16,
    pub values: Vec<f64>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    big_endian: bool,
}

impl Reader<'_> {
    fn array<const N: usize>(&self, at: usize) -> [u8; N] {
        let mut a = [0u8; N];
        a.copy_from_slice(&self.bytes[at..at + N]);
        if self.big_endian {
            a.reverse();
        }
        a
    }

    fn i16(&self, at: usize) -> i16 {
        i16::from_le_bytes(self.array(at))
    }

    fn f32(&self, at: usize) -> f32 {
        f32::from_le_bytes(self.array(at))
    }
}

fn unsupported(field: &'static str, detail: impl Into<String>) -> Error {
    Error::Unsupported {
        field,
        detail: detail.into(),
    }
}

pub fn decode_nifti1(bytes: &[u8]) -> Result<NiftiImage> {
    if bytes.len() < HEADER_LEN {
        return Err(unsupported(
            "sizeof_hdr",
            format!("file has {} bytes, a header needs {HEADER_LEN}", bytes.len()),
        ));
    }
    let le = i32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    let be = i32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    let big_endian = match (le, be) {
        (348, _) => false,
        (_, 348) => true,
        _ => return Err(unsupported("sizeof_hdr", format!("expected 348, found {le}"))),
    };
    let r = Reader { bytes, big_endian };

    let magic = &bytes[344..348];
    if magic != b"n+1\0" {
        return Err(unsupported(
            "magic",
            format!(
                "expected single-file \"n+1\", found {:?}",
                String::from_utf8_lossy(magic)
            ),
        ));
    }
    let ndim = r.i16(40);
    if ndim != 3 {
        return Err(unsupported(
            "dim[0]",
            format!("expected 3 dimensions, found {ndim}"),
        ));
    }
    let mut d = [0usize; 3];
    for (a, v) in d.iter_mut().enumerate() {
        let n = r.i16(42 + 2 * a);
        if n < 1 {
            return Err(unsupported("dim", format!("dim[{}] = {n}", a + 1)));
        }
        *v = n as usize;
    }
    let datatype = r.i16(70);
    let size = match datatype {
        DT_INT16 => 2,
        DT_FLOAT32 => 4,
        other => {
            return Err(unsupported(
                "datatype",
                format!("code {other}; only 4 (int16) and 16 (float32) are read"),
            ))
        }
    };
    let bitpix = r.i16(72);
    if bitpix as usize != 8 * size {
        return Err(unsupported(
            "bitpix",
            format!("{bitpix} does not match datatype {datatype}"),
        ));
    }
    let mut spacing = [1.0; 3];
    for (a, s) in spacing.iter_mut().enumerate() {
        let p = r.f32(80 + 4 * a) as f64;
        if p.is_finite() && p > 0.0 {
            *s = p;
        }
    }
    let vox_offset = r.f32(108);
    if !(vox_offset.is_finite() && vox_offset >= HEADER_LEN as f32 && vox_offset.fract() == 0.0) {
        return Err(unsupported("vox_offset", format!("{vox_offset}")));
    }
    let start = vox_offset as usize;
    let slope = r.f32(112) as f64;
    let inter = r.f32(116) as f64;
    let (slope, inter) = if slope != 0.0 && slope.is_finite() && inter.is_finite() {
        (slope, inter)
    } else {
        (1.0, 0.0)
    };

    let dims = Dims::from_array(d);
    let expected = dims.len() * size;
    let found = bytes.len().saturating_sub(start);
    if found < expected {
        return Err(Error::Truncated {
            expected,
            found,
            missing_byte: found + 1,
        });
    }
    let payload = Reader {
        bytes: &bytes[start..start + expected],
        big_endian,
    };
    let mut values = Vec::with_capacity(dims.len());
    for i in 0..dims.len() {
        let raw = match datatype {
            DT_INT16 => payload.i16(2 * i) as f64,
            _ => payload.f32(4 * i) as f64,
        };
        let v = raw * slope + inter;
        if !v.is_finite() {
            return Err(Error::NonFinite {
                index: i,
                offset: start + i * size,
            });
        }
        values.push(v);
    }
    Ok(NiftiImage {
        dims,
        spacing,
        datatype,
        values,
    })
}

/// Intensity volume; scaled values are stored as f32.
pub fn read_nifti1(path: impl AsRef<Path>) -> Result<Volume> {
    let img = decode_nifti1(&read_bytes(path.as_ref())?)?;
    Volume::from_f64(img.dims, img.spacing, &img.values)
}

/// Label map; every scaled value must be a non-negative integer.
pub fn read_nifti1_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    let img = decode_nifti1(&read_bytes(path.as_ref())?)?;
    let mut labels = Vec::with_capacity(img.values.len());
    for (i, &v) in img.values.iter().enumerate() {
        if v < 0.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
            return Err(Error::invalid(format!("voxel {i} holds {v}, not a label")));
        }
        labels.push(v as u32);
    }
    LabelMap::new(img.dims, labels)
}
