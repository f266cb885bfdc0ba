use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparsereg::eval::{dice, Summary};
use sparsereg::experiment::{window_sweep, RecoveryConfig};
use sparsereg::io;
use sparsereg::localstats::{box_sum, WindowSpec};
use sparsereg::losses::{slcc, LossConfig, MaskSource, Objective};
use sparsereg::optimize::{register as run_registration, AdamConfig, RegistrationConfig};
use sparsereg::simulate::{simulate_sparse_scan, SimulationConfig};
use sparsereg::transform::{warp_trilinear, DisplacementField};
use sparsereg::volume::{ConfidenceMask, Dims, LabelMap, Volume};

use crate::report::{join, num, Report};
use crate::{
    BenchArgs, CheckFailed, EvalArgs, GradcheckArgs, InputError, LossArgs, OptimArgs, RegisterArgs,
    SimulateArgs, SweepArgs,
};

fn input_error(msg: impl Into<String>) -> anyhow::Error {
    InputError(msg.into()).into()
}

fn registration_config(loss: &LossArgs, optim: &OptimArgs) -> Result<RegistrationConfig> {
    let defaults = RegistrationConfig::default();
    let cfg = RegistrationConfig {
        loss: LossConfig {
            similarity: loss.loss,
            lambda: loss.lambda,
            window: WindowSpec::new(loss.window_n)?,
            eps: loss.eps,
            normalization: loss.normalization,
        },
        levels: optim.levels,
        iters_coarse: optim.iters_coarse,
        iters_fine: optim.iters,
        adam: AdamConfig {
            step_size: optim.step_size,
            ..defaults.adam
        },
        scale_window: !optim.fixed_window,
        ..defaults
    };
    cfg.validate()?;
    Ok(cfg)
}

fn echo_registration(r: &mut Report, cfg: &RegistrationConfig) {
    r.kv("loss", cfg.loss.similarity);
    r.kv("lambda", cfg.loss.lambda);
    r.kv("window_n", cfg.loss.window.n());
    r.kv("eps", num(cfg.loss.eps));
    r.kv("normalization", cfg.loss.normalization);
    r.kv("levels", cfg.levels);
    r.kv("iters_fine", cfg.iters_fine);
    r.kv("iters_coarse", cfg.iters_coarse);
    r.kv("step_size", cfg.adam.step_size);
    r.kv("beta1", cfg.adam.beta1);
    r.kv("beta2", cfg.adam.beta2);
    r.kv("adam_eps", num(cfg.adam.eps));
    r.kv("convergence_tol", num(cfg.convergence_tol));
    r.kv("convergence_window", cfg.convergence_window);
    r.kv("scale_window", cfg.scale_window);
}

fn path_or(p: &Option<PathBuf>, fallback: &str) -> String {
    p.as_ref()
        .map_or(fallback.to_string(), |p| p.display().to_string())
}

fn load_mask(path: &Option<PathBuf>, dims: Dims) -> Result<ConfidenceMask> {
    match path {
        Some(p) => Ok(io::read_mask(p)?),
        None => Ok(ConfidenceMask::ones(dims)),
    }
}

pub fn register(a: RegisterArgs) -> Result<()> {
    let cfg = registration_config(&a.loss, &a.optim)?;
    let fixed = io::load_volume(&a.fixed)?;
    let moving = io::load_volume(&a.moving)?;
    if fixed.dims() != moving.dims() {
        return Err(input_error(format!(
            "fixed is {} but moving is {}",
            fixed.dims(),
            moving.dims()
        )));
    }
    let w_f = load_mask(&a.fixed_mask, fixed.dims())?;
    let w_m = load_mask(&a.moving_mask, moving.dims())?;

    let mut r = Report::new();
    r.kv("command", "register");
    r.kv("fixed", a.fixed.display());
    r.kv("fixed_mask", path_or(&a.fixed_mask, "ones"));
    r.kv("moving", a.moving.display());
    r.kv("moving_mask", path_or(&a.moving_mask, "ones"));
    r.kv("dims", fixed.dims());
    echo_registration(&mut r, &cfg);

    let start = Instant::now();
    let result = run_registration(&fixed, &w_f, &moving, &w_m, &cfg)?;
    let elapsed = start.elapsed();

    if let Some(p) = &a.out_field {
        io::write_field(p, &result.field, fixed.spacing())?;
    }
    if let Some(p) = &a.out_warped {
        let warped = warp_trilinear(&moving, &result.field).with_spacing(fixed.spacing())?;
        io::write_volume(p, &warped)?;
    }

    let last = result.final_report();
    r.kv("final_loss", num(last.total));
    r.kv("final_similarity", num(last.similarity_term));
    r.kv("final_smoothness", num(last.smoothness_term));
    r.kv("observed_weight", num(last.observed_voxel_weight));
    r.kv("max_abs_u", num(result.field.max_abs()));
    r.kv("trace_len", result.loss_trace.len());
    r.line("# trace");
    r.line("level,iteration,total,similarity,smoothness,observed_weight");
    for e in &result.loss_trace {
        let rep = e.report;
        r.line(format!(
            "{},{},{},{},{},{}",
            e.level,
            e.iteration,
            num(rep.total),
            num(rep.similarity_term),
            num(rep.smoothness_term),
            num(rep.observed_voxel_weight)
        ));
    }
    // level_times is coarsest first
    let levels = result.level_times.len();
    for (k, t) in result.level_times.iter().enumerate() {
        r.timing(&format!("level_{}_secs", levels - 1 - k), *t);
    }
    r.timing("total_secs", elapsed);
    r.emit(a.report.as_deref())
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn simulate(a: SimulateArgs) -> Result<()> {
    let [sx, sy, sz] = a.blur_shift[..] else {
        return Err(input_error(format!(
            "--blur-shift needs 3 values, got {}",
            a.blur_shift.len()
        )));
    };
    let mut cfg = SimulationConfig {
        max_rotation_deg: a.max_rotation_deg,
        max_translation: a.max_translation,
        max_log_scale: a.max_log_scale,
        keep_every: a.keep_every,
        axis: a.axis,
        blur_shift: [sx, sy, sz],
        blur_weight: a.blur_weight,
        seed: a.seed,
    };
    if a.no_jitter {
        cfg = cfg.without_jitter();
    }
    cfg.validate()?;

    let vol = io::load_volume(&a.input)?;
    let labels = match &a.labels {
        Some(p) => io::load_labels(p)?,
        None => LabelMap::new(vol.dims(), vec![0; vol.dims().len()])?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let scan = simulate_sparse_scan(&vol, &labels, &cfg, &mut rng)?;

    let out = |s: &str| with_suffix(&a.out_prefix, s);
    let spacing = vol.spacing();
    io::write_volume(out("_sparse.svr"), &scan.sparse)?;
    io::write_volume(out("_dense.svr"), &scan.dense)?;
    io::write_mask(out("_mask.svr"), &scan.mask, spacing)?;
    io::write_pattern(out("_pattern.txt"), &scan.pattern)?;
    io::write_affine(out("_affine.txt"), &scan.affine)?;
    if a.labels.is_some() {
        io::write_labels(out("_labels.svr"), &scan.labels, spacing)?;
    }

    let mut r = Report::new();
    r.kv("command", "simulate");
    r.kv("in", a.input.display());
    r.kv("labels", path_or(&a.labels, "none"));
    r.kv("keep_every", cfg.keep_every);
    r.kv("axis", cfg.axis);
    r.kv("max_rotation_deg", cfg.max_rotation_deg);
    r.kv("max_translation", cfg.max_translation);
    r.kv("max_log_scale", cfg.max_log_scale);
    r.kv("blur_shift", join(&cfg.blur_shift));
    r.kv("blur_weight", cfg.blur_weight);
    r.kv("seed", cfg.seed);
    r.kv("out_prefix", a.out_prefix.display());
    r.kv("dims", vol.dims());
    r.kv("sparse_dims", scan.sparse.dims());
    r.kv("acquired_slices", scan.pattern.len());
    r.kv("pattern", join(scan.pattern.indices()));
    r.emit(None)
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let pred = io::load_labels(&a.pred_labels)?;
    let truth = io::load_labels(&a.true_labels)?;
    let pattern = a.pattern.as_ref().map(io::read_pattern).transpose()?;
    let labels = match &a.labels_list {
        Some(l) => l.clone(),
        None => {
            let mut l = pred.distinct_labels();
            l.extend(truth.distinct_labels());
            l.sort_unstable();
            l.dedup();
            l.retain(|&x| x != 0);
            l
        }
    };
    let report = dice(&pred, &truth, &labels, pattern.as_ref())?;

    let mut r = Report::csv();
    r.kv("command", "eval");
    r.kv("pred_labels", a.pred_labels.display());
    r.kv("true_labels", a.true_labels.display());
    r.kv("pattern", path_or(&a.pattern, "all"));
    r.kv("labels_list", join(&labels));
    r.line("label,dice,n_voxels_a,n_voxels_b");
    let (mut total_a, mut total_b) = (0, 0);
    for (label, d) in &report.per_label {
        let score = d.dice.map_or("NA".to_string(), num);
        r.line(format!("{label},{score},{},{}", d.count_a, d.count_b));
        total_a += d.count_a;
        total_b += d.count_b;
    }
    if let Some(s) = report.summary {
        for (name, v) in [
            ("mean", s.mean),
            ("sd", s.sd),
            ("median", s.median),
            ("mad", s.mad),
        ] {
            r.line(format!("{name},{},{total_a},{total_b}", num(v)));
        }
    }
    r.emit(a.out_csv.as_deref())
}

pub fn sweep_window(a: SweepArgs) -> Result<()> {
    if a.n_list.is_empty() || a.seeds.is_empty() {
        return Err(input_error("--n-list and --seeds need at least one value"));
    }
    let windows = a
        .n_list
        .iter()
        .map(|&n| WindowSpec::new(n))
        .collect::<sparsereg::Result<Vec<_>>>()?;
    let loss = LossArgs {
        loss: sparsereg::losses::Similarity::Slcc,
        lambda: a.lambda,
        window_n: windows[0].n(),
        eps: sparsereg::localstats::DEFAULT_EPS,
        normalization: Default::default(),
    };
    let registration = registration_config(&loss, &a.optim)?;
    let defaults = RecoveryConfig::default();
    let cfg = RecoveryConfig {
        size: a.size,
        max_deformation: a.max_deformation,
        simulation: SimulationConfig {
            keep_every: a.keep_every,
            ..defaults.simulation
        },
        registration,
        ..defaults
    };
    if cfg.size == 0 {
        return Err(input_error("--size must be positive"));
    }

    let mut r = Report::csv();
    r.kv("command", "sweep-window");
    r.kv("n_list", join(&a.n_list));
    r.kv("seeds", join(&a.seeds));
    r.kv("size", cfg.size);
    r.kv("max_deformation", cfg.max_deformation);
    r.kv("keep_every", cfg.simulation.keep_every);
    echo_registration(&mut r, &cfg.registration);

    let start = Instant::now();
    let rows = window_sweep(&cfg, &windows, &a.seeds)?;
    r.line("n,mean_dice");
    for (w, d) in rows {
        r.line(format!("{},{}", w.n(), num(d)));
    }
    r.timing("total_secs", start.elapsed());
    r.emit(a.out_csv.as_deref())
}

fn random_volume(dims: Dims, rng: &mut impl Rng) -> Result<Volume> {
    Ok(Volume::from_fn(dims, |_, _, _| rng.random_range(0.0f32..1.0))?)
}

fn random_mask(dims: Dims, rng: &mut impl Rng) -> Result<ConfidenceMask> {
    let w: Vec<f64> = (0..dims.len()).map(|_| rng.random_range(0.0..1.0)).collect();
    Ok(ConfidenceMask::from_f64_clamped(dims, &w)?)
}

/// Displacements kept away from integer offsets, where trilinear warping has
/// kinks that finite differences cannot resolve.
fn off_lattice_field(dims: Dims, rng: &mut impl Rng) -> Result<DisplacementField> {
    let u = (0..dims.len())
        .map(|_| std::array::from_fn(|_| rng.random_range(-1i32..=1) as f64 + rng.random_range(0.15..0.85)))
        .collect();
    Ok(DisplacementField::new(dims, u)?)
}

pub fn gradcheck(a: GradcheckArgs) -> Result<()> {
    if a.size == 0 {
        return Err(input_error("--size must be positive"));
    }
    if !(a.fd_step > 0.0 && a.fd_step.is_finite()) {
        return Err(input_error("--fd-step must be positive"));
    }
    let dims = Dims::cube(a.size);
    let cfg = LossConfig {
        similarity: a.loss,
        lambda: a.lambda,
        window: WindowSpec::new(a.window_n)?,
        ..LossConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let f = random_volume(dims, &mut rng)?;
    let m = random_volume(dims, &mut rng)?;
    let w = random_mask(dims, &mut rng)?;
    let field = off_lattice_field(dims, &mut rng)?;
    let objective = Objective::new(&f, &m, MaskSource::Combined(w), cfg)?;
    let analytic = objective.evaluate(&field, true)?.1.expect("gradient requested");

    let h = a.fd_step;
    let mut u = field.into_vectors();
    let loss_at = |u: &[[f64; 3]]| -> Result<f64> {
        let shifted = DisplacementField::new(dims, u.to_vec())?;
        Ok(objective.evaluate(&shifted, false)?.0.total)
    };
    let (mut worst_abs, mut largest) = (0.0f64, 0.0f64);
    for i in 0..dims.len() {
        for c in 0..3 {
            let orig = u[i][c];
            u[i][c] = orig + h;
            let plus = loss_at(&u)?;
            u[i][c] = orig - h;
            let minus = loss_at(&u)?;
            u[i][c] = orig;
            let fd = (plus - minus) / (2.0 * h);
            worst_abs = worst_abs.max((analytic[i][c] - fd).abs());
            largest = largest.max(fd.abs());
        }
    }
    let rel = if largest > 0.0 {
        worst_abs / largest
    } else {
        worst_abs
    };
    let pass = rel < a.tol;

    let mut r = Report::new();
    r.kv("command", "gradcheck");
    r.kv("size", a.size);
    r.kv("loss", a.loss);
    r.kv("lambda", a.lambda);
    r.kv("window_n", a.window_n);
    r.kv("fd_step", num(h));
    r.kv("tol", num(a.tol));
    r.kv("seed", a.seed);
    r.kv("max_abs_error", num(worst_abs));
    r.kv("max_rel_error", num(rel));
    r.kv("result", if pass { "pass" } else { "fail" });
    r.emit(None)?;
    if pass {
        Ok(())
    } else {
        Err(CheckFailed(format!("gradient check failed: {rel:e} >= {:e}", a.tol)).into())
    }
}

fn time_reps(reps: usize, mut op: impl FnMut() -> Result<()>) -> Result<Vec<Duration>> {
    (0..reps)
        .map(|_| {
            let start = Instant::now();
            op()?;
            Ok(start.elapsed())
        })
        .collect()
}

pub fn bench(a: BenchArgs) -> Result<()> {
    if a.size == 0 || a.reps == 0 {
        return Err(input_error("--size and --reps must be positive"));
    }
    let dims = Dims::cube(a.size);
    let win = WindowSpec::new(a.window_n)?;
    let cfg = LossConfig {
        window: win,
        ..LossConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let f = random_volume(dims, &mut rng)?;
    let m = random_volume(dims, &mut rng)?;
    let w = random_mask(dims, &mut rng)?;
    let field = off_lattice_field(dims, &mut rng)?;
    let objective = Objective::new(&f, &m, MaskSource::Combined(w.clone()), cfg)?;

    let ops: [(&str, Vec<Duration>); 3] = [
        (
            "box_sum",
            time_reps(a.reps, || {
                std::hint::black_box(box_sum(&f, win));
                Ok(())
            })?,
        ),
        (
            "slcc",
            time_reps(a.reps, || {
                std::hint::black_box(slcc(&f, &w, &m, win, cfg.eps, cfg.normalization)?);
                Ok(())
            })?,
        ),
        (
            "full_gradient",
            time_reps(a.reps, || {
                std::hint::black_box(objective.evaluate(&field, true)?);
                Ok(())
            })?,
        ),
    ];

    let mut r = Report::csv();
    r.kv("command", "bench");
    r.kv("size", a.size);
    r.kv("window_n", a.window_n);
    r.kv("reps", a.reps);
    r.kv("seed", a.seed);
    r.kv("threads", rayon::current_num_threads());
    r.line("op,reps,mean_secs,sd_secs");
    for (name, times) in &ops {
        let secs: Vec<f64> = times.iter().map(Duration::as_secs_f64).collect();
        let s = Summary::from_values(&secs).context("no timings")?;
        r.line(format!("{name},{},{:.6},{:.6}", s.count, s.mean, s.sd));
    }
    r.emit(None)
}
