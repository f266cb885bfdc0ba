//! Dense voxel containers and slice-axis up-sampling.
//!
//! All grids use an x-fastest linear layout: voxel `(x, y, z)` lives at
//! `x + nx * (y + ny * z)`. The naive oracles in the test suites rely on the
//! same addressing.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub const fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Dims { nx, ny, nz }
    }

    pub const fn cube(n: usize) -> Self {
        Dims::new(n, n, n)
    }

    pub const fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline(always)]
    pub const fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.nx * (y + self.ny * z)
    }

    #[inline(always)]
    pub const fn coords(&self, i: usize) -> (usize, usize, usize) {
        let x = i % self.nx;
        let yz = i / self.nx;
        (x, yz % self.ny, yz / self.ny)
    }

    pub const fn as_array(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    pub const fn from_array(a: [usize; 3]) -> Self {
        Dims::new(a[0], a[1], a[2])
    }

    pub const fn extent(&self, axis: Axis) -> usize {
        self.as_array()[axis.index()]
    }

    /// Same dims with the extent along `axis` replaced.
    pub const fn with_extent(&self, axis: Axis, len: usize) -> Self {
        let mut a = self.as_array();
        a[axis.index()] = len;
        Dims::from_array(a)
    }

    pub const fn stride(&self, axis: Axis) -> usize {
        match axis {
            Axis::X => 1,
            Axis::Y => self.nx,
            Axis::Z => self.nx * self.ny,
        }
    }

    /// Linear indices of the voxels on slice `s` along `axis`, in x-fastest
    /// order of the two remaining axes.
    pub fn slice_indices(&self, axis: Axis, s: usize) -> impl Iterator<Item = usize> + '_ {
        let (a, b) = axis.others();
        let (na, nb) = (self.extent(a), self.extent(b));
        let (sa, sb) = (self.stride(a), self.stride(b));
        let base = s * self.stride(axis);
        (0..nb).flat_map(move |j| (0..na).map(move |i| base + i * sa + j * sb))
    }

    pub const fn slice_len(&self, axis: Axis) -> usize {
        self.len() / self.extent(axis)
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.nx, self.ny, self.nz)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub const fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    /// The two remaining axes, lower index first.
    pub const fn others(self) -> (Axis, Axis) {
        match self {
            Axis::X => (Axis::Y, Axis::Z),
            Axis::Y => (Axis::X, Axis::Z),
            Axis::Z => (Axis::X, Axis::Y),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        })
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "x" | "X" => Ok(Axis::X),
            "y" | "Y" => Ok(Axis::Y),
            "z" | "Z" => Ok(Axis::Z),
            other => Err(Error::invalid(format!("unknown axis `{other}`"))),
        }
    }
}

fn check_dims(dims: Dims, len: usize) -> Result<()> {
    if dims.is_empty() {
        return Err(Error::invalid(format!("empty dims {dims}")));
    }
    if dims.len() != len {
        return Err(Error::invalid(format!(
            "dims {dims} need {} voxels, got {len}",
            dims.len()
        )));
    }
    Ok(())
}

/// Scalar intensity volume with physical spacing in millimeters.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: Dims,
    spacing: [f64; 3],
    data: Vec<f32>,
}

impl Volume {
    pub fn new(dims: Dims, spacing: [f64; 3], data: Vec<f32>) -> Result<Self> {
        check_dims(dims, data.len())?;
        if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::invalid(format!("spacing {spacing:?} must be positive")));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                index: i,
                offset: 4 * i,
            });
        }
        Ok(Volume { dims, spacing, data })
    }

    /// Unit-spacing volume.
    pub fn from_data(dims: Dims, data: Vec<f32>) -> Result<Self> {
        Volume::new(dims, [1.0; 3], data)
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self> {
        let data = (0..dims.len())
            .map(|i| {
                let (x, y, z) = dims.coords(i);
                f(x, y, z)
            })
            .collect();
        Volume::from_data(dims, data)
    }

    pub fn constant(dims: Dims, value: f32) -> Result<Self> {
        Volume::from_data(dims, vec![value; dims.len()])
    }

    /// Rounds 64-bit samples to 32-bit storage.
    pub fn from_f64(dims: Dims, spacing: [f64; 3], data: &[f64]) -> Result<Self> {
        Volume::new(dims, spacing, data.iter().map(|&v| v as f32).collect())
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.dims.index(x, y, z)]
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    pub fn with_spacing(mut self, spacing: [f64; 3]) -> Result<Self> {
        if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::invalid(format!("spacing {spacing:?} must be positive")));
        }
        self.spacing = spacing;
        Ok(self)
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Keeps only the slices listed in `pattern`, in order.
    pub fn restrict_to_slices(&self, pattern: &SliceAcquisitionPattern) -> Result<Volume> {
        pattern.validate_for(self.dims)?;
        let axis = pattern.axis();
        let out_dims = self.dims.with_extent(axis, pattern.len());
        let mut data = vec![0.0f32; out_dims.len()];
        for (k, &s) in pattern.indices().iter().enumerate() {
            for (dst, src) in out_dims
                .slice_indices(axis, k)
                .zip(self.dims.slice_indices(axis, s))
            {
                data[dst] = self.data[src];
            }
        }
        let mut spacing = self.spacing;
        if let Some(step) = pattern.mean_step() {
            spacing[axis.index()] *= step;
        }
        Volume::new(out_dims, spacing, data)
    }
}

/// Per-voxel confidence weights in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMask {
    dims: Dims,
    weights: Vec<f32>,
}

impl ConfidenceMask {
    pub fn new(dims: Dims, weights: Vec<f32>) -> Result<Self> {
        check_dims(dims, weights.len())?;
        if let Some(i) = weights.iter().position(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::RangeViolation {
                index: i,
                offset: 4 * i,
                value: weights[i] as f64,
            });
        }
        Ok(ConfidenceMask { dims, weights })
    }

    pub fn ones(dims: Dims) -> Self {
        ConfidenceMask {
            dims,
            weights: vec![1.0; dims.len()],
        }
    }

    pub fn zeros(dims: Dims) -> Self {
        ConfidenceMask {
            dims,
            weights: vec![0.0; dims.len()],
        }
    }

    /// Clamps each weight into `[0, 1]`; non-finite weights become 0.
    pub fn from_f64_clamped(dims: Dims, weights: &[f64]) -> Result<Self> {
        let w = weights
            .iter()
            .map(|&v| {
                if v.is_finite() {
                    v.clamp(0.0, 1.0) as f32
                } else {
                    0.0
                }
            })
            .collect();
        ConfidenceMask::new(dims, w)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.weights.iter().map(|&v| v as f64).collect()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().map(|&w| w as f64).sum()
    }
}

/// Integer segmentation, 0 = background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    dims: Dims,
    labels: Vec<u32>,
}

impl LabelMap {
    pub fn new(dims: Dims, labels: Vec<u32>) -> Result<Self> {
        check_dims(dims, labels.len())?;
        Ok(LabelMap { dims, labels })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> u32 {
        self.labels[self.dims.index(x, y, z)]
    }

    /// Sorted distinct non-background labels.
    pub fn distinct_labels(&self) -> Vec<u32> {
        let mut v: Vec<u32> = self.labels.iter().copied().filter(|&l| l != 0).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn count(&self, label: u32) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

/// Which slices along one axis were actually acquired.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SliceAcquisitionPattern {
    axis: Axis,
    indices: Vec<usize>,
}

impl SliceAcquisitionPattern {
    pub fn new(axis: Axis, indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::invalid("acquisition pattern has no slices"));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!(
                "acquired slice indices must be strictly increasing: {indices:?}"
            )));
        }
        Ok(SliceAcquisitionPattern { axis, indices })
    }

    /// Every slice acquired.
    pub fn dense(axis: Axis, len: usize) -> Result<Self> {
        SliceAcquisitionPattern::new(axis, (0..len).collect())
    }

    /// Slices `0, period, 2 * period, ...` below `len`.
    pub fn every(axis: Axis, len: usize, period: usize) -> Result<Self> {
        if period == 0 {
            return Err(Error::invalid("slice period must be at least 1"));
        }
        SliceAcquisitionPattern::new(axis, (0..len).step_by(period).collect())
    }

    pub fn axis(&self) -> Axis {
        self.axis
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn last(&self) -> usize {
        *self.indices.last().expect("pattern is non-empty")
    }

    pub fn contains(&self, slice: usize) -> bool {
        self.indices.binary_search(&slice).is_ok()
    }

    pub fn validate_for(&self, dims: Dims) -> Result<()> {
        let extent = dims.extent(self.axis);
        if self.last() >= extent {
            return Err(Error::invalid(format!(
                "slice index {} out of range for {} extent {extent}",
                self.last(),
                self.axis
            )));
        }
        Ok(())
    }

    /// Average gap between acquired slices, if there are at least two.
    fn mean_step(&self) -> Option<f64> {
        (self.len() > 1).then(|| (self.last() - self.indices[0]) as f64 / (self.len() - 1) as f64)
    }
}

/// Rebuilds a dense volume from its acquired slices by linear interpolation
/// along the pattern axis.
///
/// Acquired slices are copied verbatim. Slices before the first or after the
/// last acquired index replicate the nearest acquired slice.
pub fn upsample_slices(
    sparse: &Volume,
    pattern: &SliceAcquisitionPattern,
    target_dim: usize,
) -> Result<Volume> {
    let axis = pattern.axis();
    let sparse_dims = sparse.dims();
    if sparse_dims.extent(axis) != pattern.len() {
        return Err(Error::invalid(format!(
            "sparse volume has {} slices along {axis}, pattern lists {}",
            sparse_dims.extent(axis),
            pattern.len()
        )));
    }
    if target_dim <= pattern.last() {
        return Err(Error::invalid(format!(
            "target extent {target_dim} does not cover acquired slice {}",
            pattern.last()
        )));
    }
    let out_dims = sparse_dims.with_extent(axis, target_dim);
    let plane = out_dims.slice_len(axis);
    let src = sparse.data();

    let slice_values =
        |k: usize| -> Vec<f32> { sparse_dims.slice_indices(axis, k).map(|i| src[i]).collect() };

    let mut data = vec![0.0f32; out_dims.len()];
    let idx = pattern.indices();
    for s in 0..target_dim {
        let values: Vec<f32> = match idx.binary_search(&s) {
            Ok(k) => slice_values(k),
            Err(0) => slice_values(0),
            Err(k) if k == idx.len() => slice_values(idx.len() - 1),
            Err(k) => {
                let (lo, hi) = (idx[k - 1], idx[k]);
                let t = (s - lo) as f64 / (hi - lo) as f64;
                let a = slice_values(k - 1);
                let b = slice_values(k);
                a.iter()
                    .zip(&b)
                    .map(|(&va, &vb)| ((1.0 - t) * va as f64 + t * vb as f64) as f32)
                    .collect()
            }
        };
        debug_assert_eq!(values.len(), plane);
        for (dst, v) in out_dims.slice_indices(axis, s).zip(values) {
            data[dst] = v;
        }
    }

    let mut spacing = sparse.spacing();
    if let Some(step) = pattern.mean_step() {
        spacing[axis.index()] /= step;
    }
    Volume::new(out_dims, spacing, data)
}

/// Weight 1 on acquired slices, 0 on interpolated ones.
pub fn make_acquisition_mask(dims: Dims, pattern: &SliceAcquisitionPattern) -> Result<ConfidenceMask> {
    pattern.validate_for(dims)?;
    let mut weights = vec![0.0f32; dims.len()];
    for &s in pattern.indices() {
        for i in dims.slice_indices(pattern.axis(), s) {
            weights[i] = 1.0;
        }
    }
    ConfidenceMask::new(dims, weights)
}

/// Element-wise product: voxels observed in both scans.
pub fn combine_masks(a: &ConfidenceMask, b: &ConfidenceMask) -> Result<ConfidenceMask> {
    if a.dims() != b.dims() {
        return Err(Error::invalid(format!(
            "mask dims differ: {} vs {}",
            a.dims(),
            b.dims()
        )));
    }
    let weights = a.weights().iter().zip(b.weights()).map(|(x, y)| x * y).collect();
    ConfidenceMask::new(a.dims(), weights)
}
