//! Pairwise registration: minimizes the composite objective over a dense
//! displacement field with Adam, coarse to fine.

pub mod adam;
pub mod pyramid;

use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::losses::{LossConfig, LossReport, MaskSource, Objective};
use crate::transform::DisplacementField;
use crate::volume::{ConfidenceMask, Volume};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use pyramid::{coarser_dims, downsample_mask, downsample_volume, level_dims, upsample_field};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistrationConfig {
    pub loss: LossConfig,
    /// Pyramid depth; 1 registers at full resolution only.
    pub levels: usize,
    /// Iteration budget for every level except the finest.
    pub iters_coarse: usize,
    pub iters_fine: usize,
    pub adam: AdamConfig,
    /// Reserved for stochastic tie-breaking; the default pipeline is fully
    /// deterministic and never draws from it.
    pub seed: u64,
    /// Stop a level once the relative loss change over `convergence_window`
    /// iterations falls below this.
    pub convergence_tol: f64,
    pub convergence_window: usize,
    /// Shrink the correlation window with the level so it keeps its
    /// physical extent.
    pub scale_window: bool,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        RegistrationConfig {
            loss: LossConfig::default(),
            levels: 3,
            iters_coarse: 200,
            iters_fine: 100,
            adam: AdamConfig {
                step_size: DEFAULT_STEP_SIZE,
                ..AdamConfig::default()
            },
            seed: 0,
            convergence_tol: 1e-6,
            convergence_window: 10,
            scale_window: true,
        }
    }
}

/// Adam step in voxels per iteration.
pub const DEFAULT_STEP_SIZE: f64 = 0.05;

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.levels == 0 {
            return Err(Error::Config("levels must be >= 1".into()));
        }
        if self.iters_coarse == 0 || self.iters_fine == 0 {
            return Err(Error::Config("iteration budgets must be >= 1".into()));
        }
        if !(self.adam.step_size > 0.0 && self.adam.step_size.is_finite()) {
            return Err(Error::Config(format!(
                "step size must be > 0, got {}",
                self.adam.step_size
            )));
        }
        if !(self.adam.eps > 0.0)
            || !(0.0..1.0).contains(&self.adam.beta1)
            || !(0.0..1.0).contains(&self.adam.beta2)
        {
            return Err(Error::Config("invalid Adam constants".into()));
        }
        Ok(())
    }

    fn iters_for(&self, level: usize) -> usize {
        if level == 0 {
            self.iters_fine
        } else {
            self.iters_coarse
        }
    }

    fn loss_for(&self, level: usize) -> LossConfig {
        let mut loss = self.loss;
        if self.scale_window {
            loss.window = loss.window.coarsened(level);
        }
        loss
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    /// Pyramid level, 0 = full resolution.
    pub level: usize,
    pub iteration: usize,
    pub report: LossReport,
}

#[derive(Debug, Clone)]
pub struct RegistrationResult {
    pub field: DisplacementField,
    /// Loss before every update, plus one closing entry per level evaluated
    /// at the field that level hands on.
    pub loss_trace: Vec<TraceEntry>,
    /// Wall time per level, coarsest first.
    pub level_times: Vec<Duration>,
}

impl RegistrationResult {
    pub fn final_report(&self) -> LossReport {
        self.loss_trace.last().expect("trace is never empty").report
    }
}

fn objective_for(
    f: &Volume,
    w_f: &ConfidenceMask,
    m: &Volume,
    w_m: &ConfidenceMask,
    loss: LossConfig,
) -> Result<Objective> {
    Objective::new(
        f,
        m,
        MaskSource::Pair {
            fixed: w_f.clone(),
            moving: w_m.clone(),
        },
        loss,
    )
}

/// Objective value of a full-resolution field under the same conventions
/// `register` uses at its finest level.
pub fn evaluate_field(
    f: &Volume,
    w_f: &ConfidenceMask,
    m: &Volume,
    w_m: &ConfidenceMask,
    field: &DisplacementField,
    cfg: &RegistrationConfig,
) -> Result<LossReport> {
    let obj = objective_for(f, w_f, m, w_m, cfg.loss_for(0))?;
    Ok(obj.evaluate(field, false)?.0)
}

struct Level {
    fixed: Volume,
    fixed_mask: ConfidenceMask,
    moving: Volume,
    moving_mask: ConfidenceMask,
}

fn build_pyramid(
    f: &Volume,
    w_f: &ConfidenceMask,
    m: &Volume,
    w_m: &ConfidenceMask,
    levels: usize,
) -> Result<Vec<Level>> {
    level_dims(f.dims(), levels)?;
    let mut out = vec![Level {
        fixed: f.clone(),
        fixed_mask: w_f.clone(),
        moving: m.clone(),
        moving_mask: w_m.clone(),
    }];
    for _ in 1..levels {
        let prev = out.last().expect("non-empty");
        out.push(Level {
            fixed: downsample_volume(&prev.fixed, Some(&prev.fixed_mask))?,
            fixed_mask: downsample_mask(&prev.fixed_mask)?,
            moving: downsample_volume(&prev.moving, Some(&prev.moving_mask))?,
            moving_mask: downsample_mask(&prev.moving_mask)?,
        });
    }
    Ok(out)
}

/// Registers moving image `m` to fixed image `f`: finds `u` such that
/// `m ∘ (Id + u)` matches `f`. Both images must already share a grid and be
/// affinely aligned.
pub fn register(
    f: &Volume,
    w_f: &ConfidenceMask,
    m: &Volume,
    w_m: &ConfidenceMask,
    cfg: &RegistrationConfig,
) -> Result<RegistrationResult> {
    cfg.validate()?;
    if f.dims() != m.dims() {
        return Err(Error::invalid(format!(
            "fixed dims {} differ from moving dims {}",
            f.dims(),
            m.dims()
        )));
    }
    if w_f.dims() != f.dims() || w_m.dims() != m.dims() {
        return Err(Error::invalid("mask dims must match their volumes"));
    }

    let pyramid = build_pyramid(f, w_f, m, w_m, cfg.levels)?;
    let mut field = DisplacementField::zeros(pyramid.last().expect("non-empty").fixed.dims());
    let mut trace = Vec::new();
    let mut level_times = Vec::new();

    for level in (0..pyramid.len()).rev() {
        let start = Instant::now();
        let lv = &pyramid[level];
        if field.dims() != lv.fixed.dims() {
            field = upsample_field(&field, lv.fixed.dims())?;
        }
        let loss = cfg.loss_for(level);
        if loss.similarity.uses_masks() {
            let combined = lv
                .fixed_mask
                .weights()
                .iter()
                .zip(lv.moving_mask.weights())
                .any(|(a, b)| a * b > 0.0);
            if !combined {
                return Err(Error::DegenerateMask(format!(
                    "no overlapping mask weight at pyramid level {level}"
                )));
            }
        }
        let obj = objective_for(&lv.fixed, &lv.fixed_mask, &lv.moving, &lv.moving_mask, loss)?;
        let mut state = AdamState::new(3 * field.dims().len());
        let level_start = trace.len();

        for iteration in 0..cfg.iters_for(level) {
            let (report, grad) = obj.evaluate(&field, true)?;
            if !report.total.is_finite() {
                return Err(Error::Divergence {
                    level,
                    iteration,
                    loss: report.total,
                });
            }
            trace.push(TraceEntry {
                level,
                iteration,
                report,
            });
            let grad = grad.expect("gradient requested");
            adam_step(
                field.vectors_mut().as_flattened_mut(),
                grad.as_flattened(),
                &mut state,
                &cfg.adam,
            );
            if field.vectors().iter().any(|v| v.iter().any(|c| !c.is_finite())) {
                return Err(Error::Divergence {
                    level,
                    iteration,
                    loss: f64::NAN,
                });
            }
            let done = trace.len() - level_start;
            if done > cfg.convergence_window {
                let now = trace[trace.len() - 1].report.total;
                let before = trace[trace.len() - 1 - cfg.convergence_window].report.total;
                if (now - before).abs() <= cfg.convergence_tol * before.abs().max(f64::MIN_POSITIVE) {
                    break;
                }
            }
        }

        let (report, _) = obj.evaluate(&field, false)?;
        if !report.total.is_finite() {
            return Err(Error::Divergence {
                level,
                iteration: trace.len() - level_start,
                loss: report.total,
            });
        }
        trace.push(TraceEntry {
            level,
            iteration: trace.len() - level_start,
            report,
        });
        level_times.push(start.elapsed());
    }

    Ok(RegistrationResult {
        field,
        loss_trace: trace,
        level_times,
    })
}
