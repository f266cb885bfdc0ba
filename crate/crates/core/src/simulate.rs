//! Clinical-sparsity simulation and synthetic phantoms.
//!
//! The pipeline mirrors how thick-slice clinical scans are produced from an
//! isotropic acquisition: jitter the head position with a small random
//! affine, drop all but every `keep_every`-th slice, and blend the result
//! with a slightly shifted copy of itself in the frequency domain to mimic
//! motion blur.

use std::f64::consts::PI;

use nalgebra::{Matrix4, Vector4};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::transform::{sample_clamped, DisplacementField};
use crate::volume::{
    make_acquisition_mask, upsample_slices, Axis, ConfidenceMask, Dims, LabelMap, SliceAcquisitionPattern,
    Volume,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationConfig {
    /// Largest rotation about each axis, degrees.
    pub max_rotation_deg: f64,
    /// Largest translation along each axis, voxels.
    pub max_translation: f64,
    /// Largest per-axis log scale factor.
    pub max_log_scale: f64,
    pub keep_every: usize,
    pub axis: Axis,
    /// Offset of the blurred copy, voxels.
    pub blur_shift: [f64; 3],
    /// Weight of the shifted copy in `[0, 1]`.
    pub blur_weight: f64,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            max_rotation_deg: 3.0,
            max_translation: 2.0,
            max_log_scale: 0.02,
            keep_every: 7,
            axis: Axis::Z,
            blur_shift: [0.5, 0.0, 0.0],
            blur_weight: 0.5,
            seed: 0,
        }
    }
}

impl SimulationConfig {
    /// No affine jitter and no blur; only slice deletion remains.
    pub fn without_jitter(mut self) -> Self {
        self.max_rotation_deg = 0.0;
        self.max_translation = 0.0;
        self.max_log_scale = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.keep_every == 0 {
            return Err(Error::Config("keep_every must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.blur_weight) {
            return Err(Error::Config(format!(
                "blur weight {} outside [0, 1]",
                self.blur_weight
            )));
        }
        let bounds = [self.max_rotation_deg, self.max_translation, self.max_log_scale];
        if bounds.iter().any(|b| !(b.is_finite() && *b >= 0.0))
            || self.blur_shift.iter().any(|s| !s.is_finite())
        {
            return Err(Error::Config(
                "jitter bounds must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Homogeneous map from input voxel coordinates to output voxel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    matrix: Matrix4<f64>,
}

impl Affine {
    pub fn identity() -> Self {
        Affine {
            matrix: Matrix4::identity(),
        }
    }

    pub fn from_rows(rows: [[f64; 4]; 4]) -> Result<Self> {
        let matrix = Matrix4::from_fn(|r, c| rows[r][c]);
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("affine has non-finite entries"));
        }
        Ok(Affine { matrix })
    }

    pub fn translation(t: [f64; 3]) -> Self {
        let mut matrix = Matrix4::identity();
        for a in 0..3 {
            matrix[(a, 3)] = t[a];
        }
        Affine { matrix }
    }

    pub fn rows(&self) -> [[f64; 4]; 4] {
        let mut out = [[0.0; 4]; 4];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = self.matrix[(r, c)];
            }
        }
        out
    }

    pub fn inverse(&self) -> Result<Affine> {
        self.matrix
            .try_inverse()
            .map(|matrix| Affine { matrix })
            .ok_or_else(|| Error::invalid("affine is singular"))
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let v = self.matrix * Vector4::new(p[0], p[1], p[2], 1.0);
        [v[0], v[1], v[2]]
    }

    pub fn is_identity(&self) -> bool {
        self.matrix == Matrix4::identity()
    }
}

fn uniform(rng: &mut impl Rng, bound: f64) -> f64 {
    if bound == 0.0 {
        0.0
    } else {
        rng.random_range(-bound..=bound)
    }
}

/// Random rotation, anisotropic scale and translation about the volume
/// centre, within the configured bounds.
pub fn sample_affine(dims: Dims, cfg: &SimulationConfig, rng: &mut impl Rng) -> Affine {
    let angles: [f64; 3] = std::array::from_fn(|_| uniform(rng, cfg.max_rotation_deg).to_radians());
    let scales: [f64; 3] = std::array::from_fn(|_| uniform(rng, cfg.max_log_scale).exp());
    let shift: [f64; 3] = std::array::from_fn(|_| uniform(rng, cfg.max_translation));
    let centre = dims.as_array().map(|n| (n as f64 - 1.0) / 2.0);

    let rot = |axis: usize, a: f64| {
        let (s, c) = a.sin_cos();
        let (i, j) = match axis {
            0 => (1, 2),
            1 => (2, 0),
            _ => (0, 1),
        };
        let mut m = Matrix4::identity();
        m[(i, i)] = c;
        m[(i, j)] = -s;
        m[(j, i)] = s;
        m[(j, j)] = c;
        m
    };
    let mut scale = Matrix4::identity();
    for a in 0..3 {
        scale[(a, a)] = scales[a];
    }
    let to_origin = Affine::translation(centre.map(|c| -c)).matrix;
    let back = Affine::translation([centre[0] + shift[0], centre[1] + shift[1], centre[2] + shift[2]]).matrix;
    Affine {
        matrix: back * rot(2, angles[2]) * rot(1, angles[1]) * rot(0, angles[0]) * scale * to_origin,
    }
}

/// Resamples `vol` so that input point `x` lands on `affine(x)`; trilinear
/// with border clamping.
pub fn apply_affine(vol: &Volume, affine: &Affine) -> Result<Volume> {
    if affine.is_identity() {
        return Ok(vol.clone());
    }
    let inv = affine.inverse()?;
    let dims = vol.dims();
    let src = vol.to_f64();
    let out: Vec<f64> = (0..dims.len())
        .into_par_iter()
        .map(|i| {
            let (x, y, z) = dims.coords(i);
            sample_clamped(&src, dims, inv.apply([x as f64, y as f64, z as f64]))
        })
        .collect();
    Volume::from_f64(dims, vol.spacing(), &out)
}

/// Nearest-neighbour counterpart of [`apply_affine`]; samples leaving the
/// grid become background.
pub fn apply_affine_labels(labels: &LabelMap, affine: &Affine) -> Result<LabelMap> {
    if affine.is_identity() {
        return Ok(labels.clone());
    }
    let inv = affine.inverse()?;
    let dims = labels.dims();
    let n = dims.as_array();
    let src = labels.labels();
    let out: Vec<u32> = (0..dims.len())
        .into_par_iter()
        .map(|i| {
            let (x, y, z) = dims.coords(i);
            let q = inv.apply([x as f64, y as f64, z as f64]);
            let mut idx = [0usize; 3];
            for a in 0..3 {
                let r = (q[a] + 0.5).floor();
                if !(r >= 0.0 && r < n[a] as f64) {
                    return 0;
                }
                idx[a] = r as usize;
            }
            src[dims.index(idx[0], idx[1], idx[2])]
        })
        .collect();
    LabelMap::new(dims, out)
}

/// Draws an affine within `cfg` and applies it to an image and its labels.
pub fn apply_random_affine(
    vol: &Volume,
    labels: &LabelMap,
    cfg: &SimulationConfig,
    rng: &mut impl Rng,
) -> Result<(Volume, LabelMap, Affine)> {
    cfg.validate()?;
    if vol.dims() != labels.dims() {
        return Err(Error::invalid("volume and labels differ in dims"));
    }
    let affine = sample_affine(vol.dims(), cfg, rng);
    Ok((
        apply_affine(vol, &affine)?,
        apply_affine_labels(labels, &affine)?,
        affine,
    ))
}

/// Keeps slices `0, keep_every, 2 * keep_every, ...` along `axis`.
pub fn subsample_slices(
    vol: &Volume,
    keep_every: usize,
    axis: Axis,
) -> Result<(Volume, SliceAcquisitionPattern)> {
    let extent = vol.dims().extent(axis);
    if extent < 1 {
        return Err(Error::invalid(format!("{axis} extent is empty")));
    }
    let pattern = SliceAcquisitionPattern::every(axis, extent, keep_every)?;
    Ok((vol.restrict_to_slices(&pattern)?, pattern))
}

/// In-place 3D DFT, one axis at a time.
fn fft3d(data: &mut [Complex<f64>], dims: Dims, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    for axis in Axis::ALL {
        let n = dims.extent(axis);
        if n == 1 {
            continue;
        }
        let fft = if inverse {
            planner.plan_fft_inverse(n)
        } else {
            planner.plan_fft_forward(n)
        };
        let stride = dims.stride(axis);
        let (a, b) = axis.others();
        let starts: Vec<usize> = dims.slice_indices(axis, 0).collect();
        debug_assert_eq!(starts.len(), dims.extent(a) * dims.extent(b));
        let mut line = vec![Complex::new(0.0, 0.0); n];
        for s in starts {
            for (k, v) in line.iter_mut().enumerate() {
                *v = data[s + k * stride];
            }
            fft.process(&mut line);
            for (k, v) in line.iter().enumerate() {
                data[s + k * stride] = *v;
            }
        }
    }
}

/// Per-axis phase factor of a shift by `s` voxels at frequency bin `k`. The
/// Nyquist bin of an even-length axis uses the real part so the blended
/// spectrum stays Hermitian.
fn shift_phase(k: usize, n: usize, s: f64) -> Complex<f64> {
    if n.is_multiple_of(2) && k == n / 2 {
        return Complex::new((PI * s).cos(), 0.0);
    }
    let freq = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
    Complex::from_polar(1.0, -2.0 * PI * freq * s / n as f64)
}

/// Blends the volume with a copy shifted by `blur_shift` (circularly), as
/// `(1 - w) F + w F e^{-2 pi i k.s / N}` in the frequency domain.
pub fn motion_blur(vol: &Volume, cfg: &SimulationConfig) -> Result<Volume> {
    cfg.validate()?;
    let w = cfg.blur_weight;
    if w == 0.0 || cfg.blur_shift == [0.0; 3] {
        return Ok(vol.clone());
    }
    let dims = vol.dims();
    let mut spec: Vec<Complex<f64>> = vol.data().iter().map(|&v| Complex::new(v as f64, 0.0)).collect();
    fft3d(&mut spec, dims, false);
    let n = dims.as_array();
    let phases: Vec<Vec<Complex<f64>>> = (0..3)
        .map(|a| {
            (0..n[a])
                .map(|k| shift_phase(k, n[a], cfg.blur_shift[a]))
                .collect()
        })
        .collect();
    for (i, v) in spec.iter_mut().enumerate() {
        let (x, y, z) = dims.coords(i);
        let ramp = phases[0][x] * phases[1][y] * phases[2][z];
        *v *= Complex::new(1.0 - w, 0.0) + ramp * w;
    }
    fft3d(&mut spec, dims, true);
    let scale = 1.0 / dims.len() as f64;
    let out: Vec<f64> = spec.iter().map(|c| c.re * scale).collect();
    Volume::from_f64(dims, vol.spacing(), &out)
}

/// Everything the simulation produces for one isotropic scan.
#[derive(Debug, Clone)]
pub struct SimulatedScan {
    pub affine: Affine,
    /// Labels after the affine jitter, on the dense grid.
    pub labels: LabelMap,
    /// Acquired slices only, blurred.
    pub sparse: Volume,
    pub pattern: SliceAcquisitionPattern,
    /// Sparse scan linearly interpolated back to the dense grid.
    pub dense: Volume,
    /// 1 on acquired slices, 0 on interpolated ones.
    pub mask: ConfidenceMask,
}

/// Jitter, slice deletion, motion blur, then linear up-sampling.
pub fn simulate_sparse_scan(
    vol: &Volume,
    labels: &LabelMap,
    cfg: &SimulationConfig,
    rng: &mut impl Rng,
) -> Result<SimulatedScan> {
    let (moved, labels, affine) = apply_random_affine(vol, labels, cfg, rng)?;
    let (sparse, pattern) = subsample_slices(&moved, cfg.keep_every, cfg.axis)?;
    let sparse = motion_blur(&sparse, cfg)?;
    let extent = vol.dims().extent(cfg.axis);
    let dense = upsample_slices(&sparse, &pattern, extent)?.with_spacing(vol.spacing())?;
    let mask = make_acquisition_mask(dense.dims(), &pattern)?;
    Ok(SimulatedScan {
        affine,
        labels,
        sparse,
        pattern,
        dense,
        mask,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhantomConfig {
    /// Standard deviation of the white noise added inside the head.
    pub noise: f64,
    /// Amplitude of the smooth intensity texture.
    pub texture: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            noise: 0.01,
            texture: 0.06,
        }
    }
}

struct Ellipsoid {
    centre: [f64; 3],
    radii: [f64; 3],
    label: u32,
    intensity: f64,
}

impl Ellipsoid {
    fn contains(&self, p: [f64; 3]) -> bool {
        (0..3)
            .map(|a| ((p[a] - self.centre[a]) / self.radii[a]).powi(2))
            .sum::<f64>()
            <= 1.0
    }
}

/// Label of the head tissue not covered by any inner structure.
pub const PHANTOM_TISSUE_LABEL: u32 = 5;

/// A head-like phantom: an ellipsoidal "brain" with two dark ventricle-like
/// and two bright nucleus-like ellipsoids, labelled 1..=4, remaining tissue
/// labelled [`PHANTOM_TISSUE_LABEL`].
pub fn make_phantom(dims: Dims, rng: &mut impl Rng) -> (Volume, LabelMap) {
    make_phantom_with(dims, &PhantomConfig::default(), rng)
}

pub fn make_phantom_with(dims: Dims, cfg: &PhantomConfig, rng: &mut impl Rng) -> (Volume, LabelMap) {
    let mut jitter = |c: f64| c + rng.random_range(-0.04..=0.04);
    let head = Ellipsoid {
        centre: [jitter(0.0), jitter(0.0), jitter(0.0)],
        radii: [0.82, 0.86, 0.78],
        label: PHANTOM_TISSUE_LABEL,
        intensity: 0.55,
    };
    let mut structures = Vec::new();
    for (side, sign) in [(0u32, -1.0f64), (1, 1.0)] {
        structures.push(Ellipsoid {
            centre: [jitter(sign * 0.48), jitter(-0.4), jitter(-0.1)],
            radii: [0.25, 0.3, 0.33],
            label: 3 + side,
            intensity: 0.85,
        });
    }
    for (side, sign) in [(0u32, -1.0f64), (1, 1.0)] {
        structures.push(Ellipsoid {
            centre: [jitter(sign * 0.2), jitter(0.25), jitter(0.05)],
            radii: [0.17, 0.42, 0.33],
            label: 1 + side,
            intensity: 0.15,
        });
    }
    for s in structures.iter_mut() {
        for r in s.radii.iter_mut() {
            *r *= rng.random_range(0.95..=1.15);
        }
    }

    // smooth texture: a few random plane waves
    let waves: Vec<([f64; 3], f64, f64)> = (0..6)
        .map(|_| {
            let k: [f64; 3] = std::array::from_fn(|_| rng.random_range(-2.5..=2.5) * PI);
            (k, rng.random_range(0.0..2.0 * PI), rng.random_range(0.5..=1.0))
        })
        .collect();
    let norm: f64 = waves.iter().map(|w| w.2).sum();

    let noise = Normal::new(0.0, cfg.noise.max(0.0)).expect("finite standard deviation");
    let n = dims.as_array();
    let mut data = Vec::with_capacity(dims.len());
    let mut labels = Vec::with_capacity(dims.len());
    for i in 0..dims.len() {
        let (x, y, z) = dims.coords(i);
        let c = [x, y, z];
        let p: [f64; 3] = std::array::from_fn(|a| {
            if n[a] > 1 {
                2.0 * c[a] as f64 / (n[a] - 1) as f64 - 1.0
            } else {
                0.0
            }
        });
        let (mut label, mut value) = (0u32, 0.05);
        if head.contains(p) {
            label = head.label;
            value = head.intensity;
            for s in &structures {
                if s.contains(p) {
                    label = s.label;
                    value = s.intensity;
                }
            }
            let tex: f64 = waves
                .iter()
                .map(|(k, ph, a)| a * (k[0] * p[0] + k[1] * p[1] + k[2] * p[2] + ph).sin())
                .sum::<f64>()
                / norm;
            value += cfg.texture * tex;
            if cfg.noise > 0.0 {
                value += noise.sample(rng);
            }
        }
        data.push(value as f32);
        labels.push(label);
    }
    (
        Volume::from_data(dims, data).expect("finite phantom"),
        LabelMap::new(dims, labels).expect("dims match"),
    )
}

/// Smooth random field: a mixture of low-frequency plane waves per component,
/// scaled so the largest displacement vector has length `max_magnitude`.
pub fn make_ground_truth_deformation(
    dims: Dims,
    max_magnitude: f64,
    rng: &mut impl Rng,
) -> Result<DisplacementField> {
    if !(max_magnitude >= 0.0 && max_magnitude.is_finite()) {
        return Err(Error::Config(format!("invalid magnitude {max_magnitude}")));
    }
    let n = dims.as_array();
    // (wave vector, phase, amplitude) per component
    let waves: Vec<Vec<([f64; 3], f64, f64)>> = (0..3)
        .map(|_| {
            (0..4)
                .map(|_| {
                    let k: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..=1.0) * PI);
                    (k, rng.random_range(0.0..2.0 * PI), rng.random_range(0.3..=1.0))
                })
                .collect()
        })
        .collect();
    let mut u: Vec<[f64; 3]> = (0..dims.len())
        .map(|i| {
            let (x, y, z) = dims.coords(i);
            let c = [x, y, z];
            let p: [f64; 3] = std::array::from_fn(|a| {
                if n[a] > 1 {
                    2.0 * c[a] as f64 / (n[a] - 1) as f64 - 1.0
                } else {
                    0.0
                }
            });
            std::array::from_fn(|comp| {
                waves[comp]
                    .iter()
                    .map(|(k, ph, a)| a * (k[0] * p[0] + k[1] * p[1] + k[2] * p[2] + ph).sin())
                    .sum()
            })
        })
        .collect();
    let peak = u
        .iter()
        .map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt())
        .fold(0.0f64, f64::max);
    let scale = if peak > 0.0 { max_magnitude / peak } else { 0.0 };
    for v in u.iter_mut() {
        for c in v.iter_mut() {
            *c *= scale;
        }
    }
    DisplacementField::new(dims, u)
}
