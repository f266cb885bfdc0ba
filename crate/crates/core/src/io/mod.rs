//! File formats: the native `.svr` container, NIfTI-1 import, and small
//! text files for acquisition patterns and affine matrices.

mod nifti;
mod svr;
mod text;

use std::fs;
use std::path::Path;

pub use nifti::{decode_nifti1, read_nifti1, read_nifti1_labels, NiftiImage};
pub use svr::{
    decode_svr, encode_svr, read_field, read_labels, read_mask, read_svr, read_volume, write_field,
    write_labels, write_mask, write_svr, write_volume, Dtype, Role, SvrData, SvrFile, SvrHeader,
};
pub use text::{
    format_affine, format_pattern, parse_affine, parse_pattern, read_affine, read_pattern, write_affine,
    write_pattern,
};

use crate::error::{Error, Result};
use crate::volume::{LabelMap, Volume};

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn is_nifti(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("nii"))
}

/// Intensity volume from either a `.nii` file or the native container.
pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    if is_nifti(path) {
        read_nifti1(path)
    } else {
        read_volume(path)
    }
}

/// Label map from either a `.nii` file or the native container.
pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    let path = path.as_ref();
    if is_nifti(path) {
        read_nifti1_labels(path)
    } else {
        read_labels(path)
    }
}
