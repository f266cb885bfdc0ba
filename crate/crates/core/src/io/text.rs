//! Line-oriented text files for acquisition patterns and affine matrices.
//!
//! Pattern:
//!
//! ```text
//! axis: z
//! indices: 0 7 14 21
//! ```
//!
//! Affine: four rows of four whitespace-separated numbers.

use std::path::Path;

use super::{read_bytes, write_bytes};
use crate::error::{Error, Result};
use crate::simulate::Affine;
use crate::volume::{Axis, SliceAcquisitionPattern};

fn malformed(offset: usize, reason: impl Into<String>) -> Error {
    Error::MalformedHeader {
        offset,
        reason: reason.into(),
    }
}

/// Non-empty lines with their byte offsets.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    let mut offset = 0;
    text.split('\n').filter_map(move |line| {
        let at = offset;
        offset += line.len() + 1;
        let line = line.trim_end_matches('\r');
        (!line.trim().is_empty()).then_some((at, line))
    })
}

pub fn format_pattern(p: &SliceAcquisitionPattern) -> String {
    let idx: Vec<String> = p.indices().iter().map(|i| i.to_string()).collect();
    format!("axis: {}\nindices: {}\n", p.axis(), idx.join(" "))
}

pub fn parse_pattern(text: &str) -> Result<SliceAcquisitionPattern> {
    let mut axis = None;
    let mut indices = None;
    for (at, line) in lines(text) {
        let (key, value) = line
            .split_once(':')
            .ok_or_else(|| malformed(at, "expected `key: value`"))?;
        match key.trim() {
            "axis" if axis.is_none() => {
                axis = Some(
                    value
                        .trim()
                        .parse::<Axis>()
                        .map_err(|e| malformed(at, e.to_string()))?,
                )
            }
            "indices" if indices.is_none() => {
                let mut v = Vec::new();
                for tok in value.split_whitespace() {
                    v.push(
                        tok.parse::<usize>()
                            .map_err(|_| malformed(at, format!("bad slice index `{tok}`")))?,
                    );
                }
                indices = Some(v);
            }
            k => return Err(malformed(at, format!("unexpected key `{k}`"))),
        }
    }
    let end = text.len();
    SliceAcquisitionPattern::new(
        axis.ok_or_else(|| malformed(end, "missing key `axis`"))?,
        indices.ok_or_else(|| malformed(end, "missing key `indices`"))?,
    )
}

pub fn format_affine(a: &Affine) -> String {
    a.rows()
        .iter()
        .map(|r| format!("{} {} {} {}\n", r[0], r[1], r[2], r[3]))
        .collect()
}

pub fn parse_affine(text: &str) -> Result<Affine> {
    let mut rows = [[0.0; 4]; 4];
    let mut n = 0;
    for (at, line) in lines(text) {
        if n == 4 {
            return Err(malformed(at, "more than four rows"));
        }
        let vals: Vec<&str> = line.split_whitespace().collect();
        if vals.len() != 4 {
            return Err(malformed(
                at,
                format!("row has {} values, expected 4", vals.len()),
            ));
        }
        for (c, tok) in vals.iter().enumerate() {
            rows[n][c] = tok
                .parse()
                .map_err(|_| malformed(at, format!("bad number `{tok}`")))?;
        }
        n += 1;
    }
    if n != 4 {
        return Err(malformed(text.len(), format!("found {n} rows, expected 4")));
    }
    Affine::from_rows(rows)
}

fn read_text(path: &Path) -> Result<String> {
    String::from_utf8(read_bytes(path)?)
        .map_err(|e| malformed(e.utf8_error().valid_up_to(), "file is not UTF-8"))
}

pub fn read_pattern(path: impl AsRef<Path>) -> Result<SliceAcquisitionPattern> {
    parse_pattern(&read_text(path.as_ref())?)
}

pub fn write_pattern(path: impl AsRef<Path>, p: &SliceAcquisitionPattern) -> Result<()> {
    write_bytes(path.as_ref(), format_pattern(p).as_bytes())
}

pub fn read_affine(path: impl AsRef<Path>) -> Result<Affine> {
    parse_affine(&read_text(path.as_ref())?)
}

pub fn write_affine(path: impl AsRef<Path>, a: &Affine) -> Result<()> {
    write_bytes(path.as_ref(), format_affine(a).as_bytes())
}
