//! Similarity terms, the smoothness penalty and the composite registration
//! objective, together with their gradients with respect to the field.
//!
//! Correlation similarities are negated inside [`total_loss`] so every
//! configuration is minimized. Intensities are promoted to 64-bit on entry
//! and every reduction runs in 64-bit with a fixed chunking, so repeated
//! evaluations return identical scalars regardless of thread count.

mod correlation;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::localstats::{WindowSpec, DEFAULT_EPS};
use crate::transform::{warp_adjoint_f64, warp_trilinear_f64, DisplacementField, Vec3};
use crate::volume::{ConfidenceMask, Dims, Volume};

pub(crate) use correlation::CorrelationWeights;
use correlation::{correlation_map, correlation_with_grad};

const REDUCE_CHUNK: usize = 4096;

/// Sum with a fixed chunking; independent of the rayon pool size.
pub(crate) fn stable_sum(values: &[f64]) -> f64 {
    let partials: Vec<f64> = values
        .par_chunks(REDUCE_CHUNK)
        .map(|c| c.iter().sum::<f64>())
        .collect();
    partials.iter().sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Similarity {
    Mse,
    Lcc,
    Smse,
    Slcc,
}

impl Similarity {
    pub const ALL: [Similarity; 4] = [
        Similarity::Mse,
        Similarity::Smse,
        Similarity::Lcc,
        Similarity::Slcc,
    ];

    pub fn is_correlation(self) -> bool {
        matches!(self, Similarity::Lcc | Similarity::Slcc)
    }

    pub fn uses_masks(self) -> bool {
        matches!(self, Similarity::Smse | Similarity::Slcc)
    }
}

impl fmt::Display for Similarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Similarity::Mse => "mse",
            Similarity::Lcc => "lcc",
            Similarity::Smse => "smse",
            Similarity::Slcc => "slcc",
        })
    }
}

impl FromStr for Similarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(Similarity::Mse),
            "lcc" => Ok(Similarity::Lcc),
            "smse" => Ok(Similarity::Smse),
            "slcc" => Ok(Similarity::Slcc),
            other => Err(Error::Config(format!("unknown similarity `{other}`"))),
        }
    }
}

/// How correlation sums and the smoothness sum are scaled. Mean-squared
/// errors are means by definition and ignore this setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Normalization {
    /// Raw sum over all voxels.
    RawSum,
    /// Sum divided by the voxel count.
    #[default]
    VoxelMean,
}

impl Normalization {
    fn scale(self, dims: Dims) -> f64 {
        match self {
            Normalization::RawSum => 1.0,
            Normalization::VoxelMean => 1.0 / dims.len() as f64,
        }
    }
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Normalization::RawSum => "sum",
            Normalization::VoxelMean => "voxel-mean",
        })
    }
}

impl FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" | "raw-sum" => Ok(Normalization::RawSum),
            "voxel-mean" | "mean" => Ok(Normalization::VoxelMean),
            other => Err(Error::Config(format!("unknown normalization `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub similarity: Similarity,
    /// Smoothness weight.
    pub lambda: f64,
    pub window: WindowSpec,
    pub eps: f64,
    pub normalization: Normalization,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            similarity: Similarity::Slcc,
            lambda: 1.5,
            window: WindowSpec::default(),
            eps: DEFAULT_EPS,
            normalization: Normalization::VoxelMean,
        }
    }
}

impl LossConfig {
    pub fn new(similarity: Similarity) -> Self {
        LossConfig {
            similarity,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::Config(format!("eps must be > 0, got {}", self.eps)));
        }
        WindowSpec::new(self.window.n())?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub similarity_term: f64,
    pub smoothness_term: f64,
    /// Sum of the combined mask weights.
    pub observed_voxel_weight: f64,
}

/// Mask weights in the form the similarity kernels consume.
///
/// `fixed_mean` and `moving_mean` weight the local means of each image,
/// `combined` weights the squared error and the correlation sums.
#[derive(Debug, Clone, PartialEq)]
pub struct LossMasks {
    fixed_mean: Vec<f64>,
    moving_mean: Vec<f64>,
    combined: Vec<f64>,
    dims: Dims,
}

impl LossMasks {
    /// A single combined mask used for every weight.
    pub fn from_combined(w_c: &ConfidenceMask) -> Self {
        let w = w_c.to_f64();
        LossMasks {
            fixed_mean: w.clone(),
            moving_mean: w.clone(),
            combined: w,
            dims: w_c.dims(),
        }
    }

    /// Per-image mean weights, combined weight `w_f * w_m`.
    pub fn from_pair(w_f: &ConfidenceMask, w_m: &ConfidenceMask) -> Result<Self> {
        if w_f.dims() != w_m.dims() {
            return Err(Error::invalid(format!(
                "mask dims differ: {} vs {}",
                w_f.dims(),
                w_m.dims()
            )));
        }
        let fixed_mean = w_f.to_f64();
        let moving_mean = w_m.to_f64();
        let combined = fixed_mean.iter().zip(&moving_mean).map(|(a, b)| a * b).collect();
        Ok(LossMasks {
            fixed_mean,
            moving_mean,
            combined,
            dims: w_f.dims(),
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn observed_weight(&self) -> f64 {
        stable_sum(&self.combined)
    }

    fn correlation_weights(&self, eps: f64) -> CorrelationWeights<'_> {
        CorrelationWeights {
            fixed_mean: Some(&self.fixed_mean),
            moving_mean: Some(&self.moving_mean),
            cross: Some(&self.combined),
            mean_eps: eps,
        }
    }
}

fn check_same(a: Dims, b: Dims, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::invalid(format!("{what}: dims {a} vs {b}")));
    }
    Ok(())
}

fn mse_f64(f: &[f64], m: &[f64]) -> f64 {
    let sq: Vec<f64> = f.par_iter().zip(m).map(|(a, b)| (a - b) * (a - b)).collect();
    stable_sum(&sq) / f.len() as f64
}

fn smse_f64(f: &[f64], w: &[f64], m: &[f64]) -> Result<f64> {
    let total_w = stable_sum(w);
    if !(total_w > 0.0) {
        return Err(Error::DegenerateMask(
            "combined mask has zero total weight".into(),
        ));
    }
    let sq: Vec<f64> = f
        .par_iter()
        .zip(m)
        .zip(w)
        .map(|((a, b), w)| w * (a - b) * (a - b))
        .collect();
    Ok(stable_sum(&sq) / total_w)
}

/// Mean squared intensity difference over all voxels.
pub fn mse(f: &Volume, warped: &Volume) -> Result<f64> {
    check_same(f.dims(), warped.dims(), "mse")?;
    Ok(mse_f64(&f.to_f64(), &warped.to_f64()))
}

/// Squared error averaged over observed voxels, weighted by `w_c`.
pub fn smse(f: &Volume, w_c: &ConfidenceMask, warped: &Volume) -> Result<f64> {
    check_same(f.dims(), warped.dims(), "smse")?;
    check_same(f.dims(), w_c.dims(), "smse mask")?;
    smse_f64(&f.to_f64(), &w_c.to_f64(), &warped.to_f64())
}

/// Unweighted local normalized cross correlation (larger is better).
pub fn lcc(
    f: &Volume,
    warped: &Volume,
    win: WindowSpec,
    eps: f64,
    normalization: Normalization,
) -> Result<f64> {
    check_same(f.dims(), warped.dims(), "lcc")?;
    let dims = f.dims();
    let t = correlation_map(
        dims,
        &f.to_f64(),
        &warped.to_f64(),
        &CorrelationWeights::unweighted(),
        win,
        eps,
    );
    Ok(stable_sum(&t) * normalization.scale(dims))
}

/// Sparse local cross correlation: local means and correlation sums both
/// restricted to voxels observed in both scans through `w_c`.
pub fn slcc(
    f: &Volume,
    w_c: &ConfidenceMask,
    warped: &Volume,
    win: WindowSpec,
    eps: f64,
    normalization: Normalization,
) -> Result<f64> {
    sparse_correlation(f, &LossMasks::from_combined(w_c), warped, win, eps, normalization)
}

/// Sparse local cross correlation with separate mean weights per image.
pub fn sparse_correlation(
    f: &Volume,
    masks: &LossMasks,
    warped: &Volume,
    win: WindowSpec,
    eps: f64,
    normalization: Normalization,
) -> Result<f64> {
    check_same(f.dims(), warped.dims(), "slcc")?;
    check_same(f.dims(), masks.dims(), "slcc mask")?;
    let dims = f.dims();
    let t = correlation_map(
        dims,
        &f.to_f64(),
        &warped.to_f64(),
        &masks.correlation_weights(eps),
        win,
        eps,
    );
    Ok(stable_sum(&t) * normalization.scale(dims))
}

/// Squared forward differences of every component along every axis, summed
/// over the grid. Differences across the far face are omitted.
pub fn smoothness(field: &DisplacementField) -> f64 {
    let dims = field.dims();
    let u = field.vectors();
    let per_voxel: Vec<f64> = (0..dims.len())
        .into_par_iter()
        .map(|i| {
            let (x, y, z) = dims.coords(i);
            let here = u[i];
            let mut acc = 0.0;
            for (inside, j) in [
                (x + 1 < dims.nx, i + 1),
                (y + 1 < dims.ny, i + dims.nx),
                (z + 1 < dims.nz, i + dims.nx * dims.ny),
            ] {
                if inside {
                    for c in 0..3 {
                        let d = u[j][c] - here[c];
                        acc += d * d;
                    }
                }
            }
            acc
        })
        .collect();
    stable_sum(&per_voxel)
}

/// Gradient of [`smoothness`] with respect to every displacement component.
pub fn smoothness_grad(field: &DisplacementField) -> Vec<Vec3> {
    let dims = field.dims();
    let u = field.vectors();
    let strides = [1, dims.nx, dims.nx * dims.ny];
    (0..dims.len())
        .into_par_iter()
        .map(|i| {
            let coords = dims.coords(i);
            let coords = [coords.0, coords.1, coords.2];
            let extent = dims.as_array();
            let mut g = [0.0; 3];
            for a in 0..3 {
                if coords[a] > 0 {
                    let j = i - strides[a];
                    for c in 0..3 {
                        g[c] += 2.0 * (u[i][c] - u[j][c]);
                    }
                }
                if coords[a] + 1 < extent[a] {
                    let j = i + strides[a];
                    for c in 0..3 {
                        g[c] -= 2.0 * (u[j][c] - u[i][c]);
                    }
                }
            }
            g
        })
        .collect()
}

/// Similarity value (as minimized) and optionally its gradient with respect
/// to the warped image.
fn similarity_f64(
    dims: Dims,
    f: &[f64],
    masks: &LossMasks,
    warped: &[f64],
    cfg: &LossConfig,
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    let n = dims.len() as f64;
    match cfg.similarity {
        Similarity::Mse => {
            let value = mse_f64(f, warped);
            let grad = want_grad.then(|| {
                f.par_iter()
                    .zip(warped)
                    .map(|(a, b)| -2.0 * (a - b) / n)
                    .collect()
            });
            Ok((value, grad))
        }
        Similarity::Smse => {
            let value = smse_f64(f, &masks.combined, warped)?;
            let total_w = stable_sum(&masks.combined);
            let grad = want_grad.then(|| {
                f.par_iter()
                    .zip(warped)
                    .zip(&masks.combined)
                    .map(|((a, b), w)| -2.0 * w * (a - b) / total_w)
                    .collect()
            });
            Ok((value, grad))
        }
        Similarity::Lcc | Similarity::Slcc => {
            let weights = if cfg.similarity == Similarity::Lcc {
                CorrelationWeights::unweighted()
            } else {
                if !(masks.observed_weight() > 0.0) {
                    return Err(Error::DegenerateMask(
                        "combined mask has zero total weight".into(),
                    ));
                }
                masks.correlation_weights(cfg.eps)
            };
            let scale = cfg.normalization.scale(dims);
            if want_grad {
                let (terms, grad) = correlation_with_grad(dims, f, warped, &weights, cfg.window, cfg.eps);
                let grad = grad.into_par_iter().map(|g| -scale * g).collect();
                Ok((-scale * stable_sum(&terms), Some(grad)))
            } else {
                let terms = correlation_map(dims, f, warped, &weights, cfg.window, cfg.eps);
                Ok((-scale * stable_sum(&terms), None))
            }
        }
    }
}

fn report(
    dims: Dims,
    masks: &LossMasks,
    similarity_term: f64,
    field: &DisplacementField,
    cfg: &LossConfig,
) -> LossReport {
    let smoothness_term = smoothness(field) * cfg.normalization.scale(dims);
    LossReport {
        total: similarity_term + cfg.lambda * smoothness_term,
        similarity_term,
        smoothness_term,
        observed_voxel_weight: masks.observed_weight(),
    }
}

/// `L = L_sim(f, warped) + lambda * L_smooth(field)` for an already warped
/// moving image.
pub fn total_loss(
    f: &Volume,
    w_c: &ConfidenceMask,
    warped: &Volume,
    field: &DisplacementField,
    cfg: &LossConfig,
) -> Result<LossReport> {
    cfg.validate()?;
    let dims = f.dims();
    check_same(dims, warped.dims(), "total_loss warped")?;
    check_same(dims, w_c.dims(), "total_loss mask")?;
    check_same(dims, field.dims(), "total_loss field")?;
    let masks = LossMasks::from_combined(w_c);
    let (sim, _) = similarity_f64(dims, &f.to_f64(), &masks, &warped.to_f64(), cfg, false)?;
    Ok(report(dims, &masks, sim, field, cfg))
}

/// Gradient of [`total_loss`] with respect to the field, for
/// `warped = moving ∘ (Id + field)`.
pub fn total_loss_grad(
    f: &Volume,
    w_c: &ConfidenceMask,
    moving: &Volume,
    field: &DisplacementField,
    cfg: &LossConfig,
) -> Result<Vec<Vec3>> {
    let objective = Objective::new(f, moving, MaskSource::Combined(w_c.clone()), *cfg)?;
    Ok(objective.evaluate(field, true)?.1.expect("gradient requested"))
}

/// Where the loss masks come from during an evaluation.
#[derive(Debug, Clone)]
pub enum MaskSource {
    /// Fixed combined mask on the fixed grid.
    Combined(ConfidenceMask),
    /// Fixed-image mask plus a moving-image mask that is warped with the
    /// current field before combining. The warped mask is held constant when
    /// differentiating.
    Pair {
        fixed: ConfidenceMask,
        moving: ConfidenceMask,
    },
}

/// The composite objective evaluated end to end in 64-bit: warp, similarity,
/// smoothness, and the chained gradient.
#[derive(Debug, Clone)]
pub struct Objective {
    dims: Dims,
    fixed: Vec<f64>,
    moving: Vec<f64>,
    moving_dims: Dims,
    masks: MaskSource,
    combined: Option<LossMasks>,
    cfg: LossConfig,
}

impl Objective {
    pub fn new(fixed: &Volume, moving: &Volume, masks: MaskSource, cfg: LossConfig) -> Result<Self> {
        cfg.validate()?;
        let dims = fixed.dims();
        let combined = match &masks {
            MaskSource::Combined(w_c) => {
                check_same(dims, w_c.dims(), "fixed vs combined mask")?;
                Some(LossMasks::from_combined(w_c))
            }
            MaskSource::Pair {
                fixed: w_f,
                moving: w_m,
            } => {
                check_same(dims, w_f.dims(), "fixed vs fixed mask")?;
                check_same(moving.dims(), w_m.dims(), "moving vs moving mask")?;
                None
            }
        };
        Ok(Objective {
            dims,
            fixed: fixed.to_f64(),
            moving: moving.to_f64(),
            moving_dims: moving.dims(),
            masks,
            combined,
            cfg,
        })
    }

    pub fn config(&self) -> &LossConfig {
        &self.cfg
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// Warped moving image in 64-bit.
    pub fn warp(&self, field: &DisplacementField) -> Vec<f64> {
        warp_trilinear_f64(&self.moving, self.moving_dims, field)
    }

    fn masks_for(&self, field: &DisplacementField) -> Result<std::borrow::Cow<'_, LossMasks>> {
        match (&self.combined, &self.masks) {
            (Some(m), _) => Ok(std::borrow::Cow::Borrowed(m)),
            (None, MaskSource::Pair { fixed, moving }) => {
                let warped = crate::transform::warp_mask(moving, field);
                Ok(std::borrow::Cow::Owned(LossMasks::from_pair(fixed, &warped)?))
            }
            (None, MaskSource::Combined(_)) => unreachable!("combined masks are precomputed"),
        }
    }

    /// Loss report and, when `want_grad`, the gradient with respect to the field.
    pub fn evaluate(
        &self,
        field: &DisplacementField,
        want_grad: bool,
    ) -> Result<(LossReport, Option<Vec<Vec3>>)> {
        check_same(self.dims, field.dims(), "objective field")?;
        let masks = self.masks_for(field)?;
        let warped = self.warp(field);
        let (sim, dsim) = similarity_f64(self.dims, &self.fixed, &masks, &warped, &self.cfg, want_grad)?;
        let rep = report(self.dims, &masks, sim, field, &self.cfg);
        let grad = dsim.map(|dsim| {
            let mut g = warp_adjoint_f64(&dsim, &self.moving, self.moving_dims, field);
            if self.cfg.lambda > 0.0 {
                let k = self.cfg.lambda * self.cfg.normalization.scale(self.dims);
                let gs = smoothness_grad(field);
                g.par_iter_mut().zip(&gs).for_each(|(a, b)| {
                    for c in 0..3 {
                        a[c] += k * b[c];
                    }
                });
            }
            g
        });
        Ok((rep, grad))
    }
}
