//! Synthetic recovery experiment on phantoms.
//!
//! A subject is made by warping a phantom atlas with a smooth random field
//! and passing it through the sparse-acquisition simulation. The atlas is
//! then registered back to the subject's interpolated scan and the warped
//! atlas labels are scored against the subject labels on acquired slices.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::eval::{dice, DiceReport};
use crate::localstats::WindowSpec;
use crate::losses::{LossConfig, Similarity};
use crate::optimize::{register, RegistrationConfig, RegistrationResult};
use crate::simulate::{
    make_ground_truth_deformation, make_phantom_with, simulate_sparse_scan, PhantomConfig, SimulatedScan,
    SimulationConfig,
};
use crate::transform::{warp_labels, warp_trilinear, DisplacementField};
use crate::volume::{ConfidenceMask, Dims, LabelMap, Volume};

/// Labels scored by the experiment.
pub const PHANTOM_LABELS: [u32; 5] = [1, 2, 3, 4, 5];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveryConfig {
    pub size: usize,
    /// Largest ground-truth displacement, voxels.
    pub max_deformation: f64,
    pub phantom: PhantomConfig,
    pub simulation: SimulationConfig,
    pub registration: RegistrationConfig,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        RecoveryConfig {
            size: 64,
            max_deformation: 4.0,
            phantom: PhantomConfig::default(),
            simulation: SimulationConfig::default(),
            registration: RegistrationConfig::default(),
        }
    }
}

/// One simulated atlas/subject pair.
#[derive(Debug, Clone)]
pub struct RecoveryCase {
    pub seed: u64,
    pub atlas: Volume,
    pub atlas_labels: LabelMap,
    pub ground_truth: DisplacementField,
    pub scan: SimulatedScan,
}

impl RecoveryCase {
    pub fn new(cfg: &RecoveryConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = Dims::cube(cfg.size);
        let (atlas, atlas_labels) = make_phantom_with(dims, &cfg.phantom, &mut rng);
        let ground_truth = make_ground_truth_deformation(dims, cfg.max_deformation, &mut rng)?;
        let subject = warp_trilinear(&atlas, &ground_truth);
        let subject_labels = warp_labels(&atlas_labels, &ground_truth);
        let sim = SimulationConfig {
            seed,
            ..cfg.simulation
        };
        let scan = simulate_sparse_scan(&subject, &subject_labels, &sim, &mut rng)?;
        Ok(RecoveryCase {
            seed,
            atlas,
            atlas_labels,
            ground_truth,
            scan,
        })
    }

    /// Dice of the atlas labels carried by `field` against the subject labels,
    /// on the subject's acquired slices.
    pub fn score(&self, field: &DisplacementField) -> Result<DiceReport> {
        let moved = warp_labels(&self.atlas_labels, field);
        dice(
            &moved,
            &self.scan.labels,
            &PHANTOM_LABELS,
            Some(&self.scan.pattern),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Sparse correlation with the acquisition mask on the subject side.
    SparseSlcc,
    /// Plain correlation on the interpolated subject scan.
    InterpolatedLcc,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::SparseSlcc => "slcc",
            Method::InterpolatedLcc => "lcc",
        }
    }
}

#[derive(Debug, Clone)]
pub struct MethodRun {
    pub registration: RegistrationResult,
    pub dice: DiceReport,
}

pub fn run_method(
    case: &RecoveryCase,
    method: Method,
    window: WindowSpec,
    registration: &RegistrationConfig,
) -> Result<MethodRun> {
    let dims = case.atlas.dims();
    let ones = ConfidenceMask::ones(dims);
    let (similarity, w_f) = match method {
        Method::SparseSlcc => (Similarity::Slcc, &case.scan.mask),
        Method::InterpolatedLcc => (Similarity::Lcc, &ones),
    };
    let cfg = RegistrationConfig {
        loss: LossConfig {
            similarity,
            window,
            ..registration.loss
        },
        ..*registration
    };
    let result = register(&case.scan.dense, w_f, &case.atlas, &ones, &cfg)?;
    let dice = case.score(&result.field)?;
    Ok(MethodRun {
        registration: result,
        dice,
    })
}

/// Mean Dice of both methods on one seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeedComparison {
    pub seed: u64,
    pub slcc: f64,
    pub lcc: f64,
    /// Mean Dice of the identity field, for reference.
    pub unregistered: f64,
}

pub fn compare_methods(cfg: &RecoveryConfig, seed: u64) -> Result<SeedComparison> {
    let case = RecoveryCase::new(cfg, seed)?;
    let window = cfg.registration.loss.window;
    let slcc = run_method(&case, Method::SparseSlcc, window, &cfg.registration)?;
    let lcc = run_method(&case, Method::InterpolatedLcc, window, &cfg.registration)?;
    let unregistered = case.score(&DisplacementField::zeros(case.atlas.dims()))?;
    let mean = |d: &DiceReport| d.mean().unwrap_or(0.0);
    Ok(SeedComparison {
        seed,
        slcc: mean(&slcc.dice),
        lcc: mean(&lcc.dice),
        unregistered: mean(&unregistered),
    })
}

/// Mean Dice of the sparse method per window size, averaged over `seeds`.
pub fn window_sweep(
    cfg: &RecoveryConfig,
    windows: &[WindowSpec],
    seeds: &[u64],
) -> Result<Vec<(WindowSpec, f64)>> {
    let cases: Vec<RecoveryCase> = seeds
        .iter()
        .map(|&s| RecoveryCase::new(cfg, s))
        .collect::<Result<_>>()?;
    windows
        .iter()
        .map(|&w| {
            let mut total = 0.0;
            for case in &cases {
                total += run_method(case, Method::SparseSlcc, w, &cfg.registration)?
                    .dice
                    .mean()
                    .unwrap_or(0.0);
            }
            Ok((w, total / cases.len().max(1) as f64))
        })
        .collect()
}
