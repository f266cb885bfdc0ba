//! Native container: a UTF-8 `key: value` header closed by a blank line,
//! followed by the little-endian payload in x-fastest order.
//!
//! ```text
//! SVR1
//! role: intensity
//! dtype: f32
//! dims: 8 8 8
//! spacing: 1 1 1
//! order: x-fastest
//! components: 1
//!
//! <payload>
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use super::{read_bytes, write_bytes};
use crate::error::{Error, Result};
use crate::transform::DisplacementField;
use crate::volume::{ConfidenceMask, Dims, LabelMap, Volume};

const MAGIC: &str = "SVR1";
const ORDER: &str = "x-fastest";
const KEYS: [&str; 6] = ["role", "dtype", "dims", "spacing", "order", "components"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Intensity,
    Mask,
    Labels,
    Field,
}

impl Role {
    fn components(self) -> usize {
        if self == Role::Field {
            3
        } else {
            1
        }
    }

    fn allows(self, dtype: Dtype) -> bool {
        match self {
            Role::Intensity => true,
            Role::Mask | Role::Field => dtype == Dtype::F32,
            Role::Labels => dtype != Dtype::F32,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Intensity => "intensity",
            Role::Mask => "mask",
            Role::Labels => "labels",
            Role::Field => "field",
        })
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "intensity" => Ok(Role::Intensity),
            "mask" => Ok(Role::Mask),
            "labels" => Ok(Role::Labels),
            "field" => Ok(Role::Field),
            _ => Err(format!("unknown role `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    I16,
    U16,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::I16 | Dtype::U16 => 2,
        }
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dtype::F32 => "f32",
            Dtype::I16 => "i16",
            Dtype::U16 => "u16",
        })
    }
}

impl FromStr for Dtype {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "f32" => Ok(Dtype::F32),
            "i16" => Ok(Dtype::I16),
            "u16" => Ok(Dtype::U16),
            _ => Err(format!("unknown dtype `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvrHeader {
    pub role: Role,
    pub dtype: Dtype,
    pub dims: Dims,
    pub spacing: [f64; 3],
    pub components: usize,
}

impl SvrHeader {
    pub fn payload_len(&self) -> usize {
        self.dims.len() * self.components * self.dtype.size()
    }

    fn render(&self) -> String {
        let d = self.dims;
        let s = self.spacing;
        format!(
            "{MAGIC}\nrole: {}\ndtype: {}\ndims: {} {} {}\nspacing: {} {} {}\norder: {ORDER}\ncomponents: {}\n\n",
            self.role, self.dtype, d.nx, d.ny, d.nz, s[0], s[1], s[2], self.components
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SvrData {
    Intensity(Volume),
    Mask(ConfidenceMask),
    Labels(LabelMap),
    Field(DisplacementField),
}

impl SvrData {
    pub fn role(&self) -> Role {
        match self {
            SvrData::Intensity(_) => Role::Intensity,
            SvrData::Mask(_) => Role::Mask,
            SvrData::Labels(_) => Role::Labels,
            SvrData::Field(_) => Role::Field,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvrFile {
    pub header: SvrHeader,
    pub data: SvrData,
}

fn malformed(offset: usize, reason: impl Into<String>) -> Error {
    Error::MalformedHeader {
        offset,
        reason: reason.into(),
    }
}

fn parse_triple<T: FromStr + Default + Copy>(value: &str, offset: usize, key: &str) -> Result<[T; 3]> {
    let parts: Vec<&str> = value.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(malformed(
            offset,
            format!("`{key}` needs 3 values, got {}", parts.len()),
        ));
    }
    let mut out = [T::default(); 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p
            .parse()
            .map_err(|_| malformed(offset, format!("bad `{key}` value `{p}`")))?;
    }
    Ok(out)
}

/// Parses the header; returns it with the offset of the first payload byte.
fn parse_header(bytes: &[u8]) -> Result<(SvrHeader, usize)> {
    let end = bytes
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| malformed(bytes.len(), "header is not closed by a blank line"))?;
    let text =
        std::str::from_utf8(&bytes[..end]).map_err(|e| malformed(e.valid_up_to(), "header is not UTF-8"))?;

    let mut offset = 0;
    let mut values: [Option<(String, usize)>; 6] = Default::default();
    for (n, line) in text.split('\n').enumerate() {
        let line_offset = offset;
        offset += line.len() + 1;
        if n == 0 {
            if line != MAGIC {
                return Err(malformed(0, format!("expected `{MAGIC}`")));
            }
            continue;
        }
        let (key, value) = line
            .split_once(':')
            .ok_or_else(|| malformed(line_offset, "expected `key: value`"))?;
        let key = key.trim();
        let slot = KEYS
            .iter()
            .position(|k| *k == key)
            .ok_or_else(|| malformed(line_offset, format!("unknown key `{key}`")))?;
        if values[slot].is_some() {
            return Err(malformed(line_offset, format!("duplicate key `{key}`")));
        }
        values[slot] = Some((value.trim().to_string(), line_offset));
    }
    let mut get = |i: usize| {
        values[i]
            .take()
            .ok_or_else(|| malformed(end, format!("missing key `{}`", KEYS[i])))
    };
    let (role, role_at) = get(0)?;
    let (dtype, dtype_at) = get(1)?;
    let (dims, dims_at) = get(2)?;
    let (spacing, spacing_at) = get(3)?;
    let (order, order_at) = get(4)?;
    let (components, comp_at) = get(5)?;

    let role: Role = role.parse().map_err(|e| malformed(role_at, e))?;
    let dtype: Dtype = dtype.parse().map_err(|e| malformed(dtype_at, e))?;
    let d: [usize; 3] = parse_triple(&dims, dims_at, "dims")?;
    if d.contains(&0) {
        return Err(malformed(dims_at, "dims must be positive"));
    }
    let spacing: [f64; 3] = parse_triple(&spacing, spacing_at, "spacing")?;
    if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(malformed(spacing_at, "spacing must be finite and positive"));
    }
    if order != ORDER {
        return Err(malformed(order_at, format!("unsupported order `{order}`")));
    }
    let components: usize = components
        .parse()
        .map_err(|_| malformed(comp_at, format!("bad `components` value `{components}`")))?;
    if components != role.components() {
        return Err(malformed(
            comp_at,
            format!(
                "role `{role}` needs {} components, got {components}",
                role.components()
            ),
        ));
    }
    if !role.allows(dtype) {
        return Err(Error::DtypeMismatch {
            role: role.to_string(),
            dtype: dtype.to_string(),
        });
    }
    Ok((
        SvrHeader {
            role,
            dtype,
            dims: Dims::from_array(d),
            spacing,
            components,
        },
        end + 2,
    ))
}

/// Payload values widened to f64, with their absolute byte offsets.
fn payload_values(payload: &[u8], dtype: Dtype) -> impl Iterator<Item = f64> + '_ {
    payload.chunks_exact(dtype.size()).map(move |c| match dtype {
        Dtype::F32 => f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64,
        Dtype::I16 => i16::from_le_bytes([c[0], c[1]]) as f64,
        Dtype::U16 => u16::from_le_bytes([c[0], c[1]]) as f64,
    })
}

pub fn decode_svr(bytes: &[u8]) -> Result<SvrFile> {
    let (header, start) = parse_header(bytes)?;
    let expected = header.payload_len();
    let found = bytes.len() - start;
    if found < expected {
        return Err(Error::Truncated {
            expected,
            found,
            missing_byte: found + 1,
        });
    }
    if found > expected {
        return Err(malformed(
            start + expected,
            format!("{} bytes of trailing data after the payload", found - expected),
        ));
    }
    let payload = &bytes[start..];
    let size = header.dtype.size();
    let offset_of = |i: usize| start + i * size;
    let values: Vec<f64> = payload_values(payload, header.dtype).collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            index: i / header.components,
            offset: offset_of(i),
        });
    }
    let dims = header.dims;
    let data = match header.role {
        Role::Intensity => {
            let data: Vec<f32> = values.iter().map(|&v| v as f32).collect();
            SvrData::Intensity(Volume::new(dims, header.spacing, data)?)
        }
        Role::Mask => {
            if let Some(i) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::RangeViolation {
                    index: i,
                    offset: offset_of(i),
                    value: values[i],
                });
            }
            SvrData::Mask(ConfidenceMask::new(
                dims,
                values.iter().map(|&v| v as f32).collect(),
            )?)
        }
        Role::Labels => {
            if let Some(i) = values.iter().position(|&v| v < 0.0) {
                return Err(Error::invalid(format!(
                    "negative label {} at voxel {i} (byte {})",
                    values[i],
                    offset_of(i)
                )));
            }
            SvrData::Labels(LabelMap::new(dims, values.iter().map(|&v| v as u32).collect())?)
        }
        Role::Field => {
            let u = values.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
            SvrData::Field(DisplacementField::new(dims, u)?)
        }
    };
    Ok(SvrFile { header, data })
}

/// Serializes `data`. Volumes keep their spacing; other roles are written
/// with `spacing`.
pub fn encode_svr(data: &SvrData, spacing: [f64; 3]) -> Result<Vec<u8>> {
    let (dims, dtype, spacing) = match data {
        SvrData::Intensity(v) => (v.dims(), Dtype::F32, v.spacing()),
        SvrData::Mask(m) => (m.dims(), Dtype::F32, spacing),
        SvrData::Labels(l) => (l.dims(), Dtype::U16, spacing),
        SvrData::Field(f) => (f.dims(), Dtype::F32, spacing),
    };
    let header = SvrHeader {
        role: data.role(),
        dtype,
        dims,
        spacing,
        components: data.role().components(),
    };
    let mut out = header.render().into_bytes();
    out.reserve(header.payload_len());
    match data {
        SvrData::Intensity(v) => v.data().iter().for_each(|x| out.extend(x.to_le_bytes())),
        SvrData::Mask(m) => m.weights().iter().for_each(|x| out.extend(x.to_le_bytes())),
        SvrData::Labels(l) => {
            for (i, &x) in l.labels().iter().enumerate() {
                let x = u16::try_from(x)
                    .map_err(|_| Error::invalid(format!("label {x} at voxel {i} does not fit in u16")))?;
                out.extend(x.to_le_bytes());
            }
        }
        SvrData::Field(f) => {
            for v in f.vectors() {
                for c in v {
                    out.extend((*c as f32).to_le_bytes());
                }
            }
        }
    }
    Ok(out)
}

pub fn read_svr(path: impl AsRef<Path>) -> Result<SvrFile> {
    decode_svr(&read_bytes(path.as_ref())?)
}

pub fn write_svr(path: impl AsRef<Path>, data: &SvrData, spacing: [f64; 3]) -> Result<()> {
    write_bytes(path.as_ref(), &encode_svr(data, spacing)?)
}

fn wrong_role(path: &Path, want: Role, got: Role) -> Error {
    Error::invalid(format!(
        "{}: expected role `{want}`, found `{got}`",
        path.display()
    ))
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    match read_svr(path)?.data {
        SvrData::Intensity(v) => Ok(v),
        other => Err(wrong_role(path, Role::Intensity, other.role())),
    }
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<ConfidenceMask> {
    let path = path.as_ref();
    match read_svr(path)?.data {
        SvrData::Mask(m) => Ok(m),
        other => Err(wrong_role(path, Role::Mask, other.role())),
    }
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    let path = path.as_ref();
    match read_svr(path)?.data {
        SvrData::Labels(l) => Ok(l),
        other => Err(wrong_role(path, Role::Labels, other.role())),
    }
}

pub fn read_field(path: impl AsRef<Path>) -> Result<DisplacementField> {
    let path = path.as_ref();
    match read_svr(path)?.data {
        SvrData::Field(f) => Ok(f),
        other => Err(wrong_role(path, Role::Field, other.role())),
    }
}

pub fn write_volume(path: impl AsRef<Path>, v: &Volume) -> Result<()> {
    write_svr(path, &SvrData::Intensity(v.clone()), v.spacing())
}

pub fn write_mask(path: impl AsRef<Path>, m: &ConfidenceMask, spacing: [f64; 3]) -> Result<()> {
    write_svr(path, &SvrData::Mask(m.clone()), spacing)
}

pub fn write_labels(path: impl AsRef<Path>, l: &LabelMap, spacing: [f64; 3]) -> Result<()> {
    write_svr(path, &SvrData::Labels(l.clone()), spacing)
}

/// Components are stored as f32.
pub fn write_field(path: impl AsRef<Path>, f: &DisplacementField, spacing: [f64; 3]) -> Result<()> {
    write_svr(path, &SvrData::Field(f.clone()), spacing)
}
