//! Deformable registration of sparse 3D volumes with mask-weighted
//! similarity losses.

// Negated float comparisons are used on purpose so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod eval;
pub mod experiment;
pub mod io;
pub mod localstats;
pub mod losses;
pub mod optimize;
pub mod simulate;
pub mod transform;
pub mod volume;

pub use error::{Error, Result};
