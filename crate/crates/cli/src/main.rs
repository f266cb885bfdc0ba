//! `sparsereg` command-line front end.

mod commands;
mod report;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sparsereg::losses::{Normalization, Similarity};
use sparsereg::volume::Axis;

#[derive(Debug, Parser)]
#[command(
    name = "sparsereg",
    version,
    about = "Deformable registration of sparse 3D volumes"
)]
struct Cli {
    /// Worker threads; 0 or unset uses every core.
    #[arg(long, global = true, env = "SPARSEREG_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Register a moving volume to a fixed one.
    Register(RegisterArgs),
    /// Simulate a sparse clinical acquisition of a dense volume.
    Simulate(SimulateArgs),
    /// Dice scores between two label maps.
    Eval(EvalArgs),
    /// Phantom recovery Dice for several correlation window sizes.
    SweepWindow(SweepArgs),
    /// Compare the analytic loss gradient with central differences.
    Gradcheck(GradcheckArgs),
    /// Time the main kernels.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Args)]
struct LossArgs {
    #[arg(long, default_value = "slcc")]
    loss: Similarity,
    /// Smoothness weight.
    #[arg(long, default_value_t = 1.5)]
    lambda: f64,
    /// Correlation window edge length (odd).
    #[arg(long, default_value_t = 15)]
    window_n: usize,
    #[arg(long, default_value_t = sparsereg::localstats::DEFAULT_EPS)]
    eps: f64,
    #[arg(long, default_value = "voxel-mean")]
    normalization: Normalization,
}

#[derive(Debug, Clone, Args)]
struct OptimArgs {
    #[arg(long, default_value_t = 3)]
    levels: usize,
    /// Iterations at full resolution.
    #[arg(long, default_value_t = 100)]
    iters: usize,
    /// Iterations at every coarser level.
    #[arg(long, default_value_t = 200)]
    iters_coarse: usize,
    #[arg(long, default_value_t = sparsereg::optimize::DEFAULT_STEP_SIZE)]
    step_size: f64,
    /// Keep the window size fixed across pyramid levels.
    #[arg(long)]
    fixed_window: bool,
}

#[derive(Debug, Args)]
struct RegisterArgs {
    #[arg(long)]
    fixed: PathBuf,
    /// Defaults to all ones.
    #[arg(long)]
    fixed_mask: Option<PathBuf>,
    #[arg(long)]
    moving: PathBuf,
    /// Defaults to all ones.
    #[arg(long)]
    moving_mask: Option<PathBuf>,
    #[command(flatten)]
    loss: LossArgs,
    #[command(flatten)]
    optim: OptimArgs,
    #[arg(long)]
    out_field: Option<PathBuf>,
    #[arg(long)]
    out_warped: Option<PathBuf>,
    /// Report path; stdout when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    keep_every: usize,
    #[arg(long, default_value = "z")]
    axis: Axis,
    #[arg(long, default_value_t = 3.0)]
    max_rotation_deg: f64,
    #[arg(long, default_value_t = 2.0)]
    max_translation: f64,
    #[arg(long, default_value_t = 0.02)]
    max_log_scale: f64,
    /// Skip the random affine.
    #[arg(long)]
    no_jitter: bool,
    /// Offset of the ghost copy, voxels, as x,y,z.
    #[arg(long, value_delimiter = ',', default_value = "0.5,0,0")]
    blur_shift: Vec<f64>,
    #[arg(long, default_value_t = 0.5)]
    blur_weight: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Outputs go to `<prefix>_sparse.svr`, `<prefix>_dense.svr` and so on.
    #[arg(long)]
    out_prefix: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    pred_labels: PathBuf,
    #[arg(long)]
    true_labels: PathBuf,
    /// Score only these slices.
    #[arg(long)]
    pattern: Option<PathBuf>,
    /// Defaults to every nonzero label present in either map.
    #[arg(long, value_delimiter = ',')]
    labels_list: Option<Vec<u32>>,
    #[arg(long)]
    out_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long, value_delimiter = ',', default_value = "9,11,13,15,17")]
    n_list: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
    /// Phantom edge length.
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Largest ground-truth displacement, voxels.
    #[arg(long, default_value_t = 4.0)]
    max_deformation: f64,
    #[arg(long, default_value_t = 7)]
    keep_every: usize,
    #[arg(long, default_value_t = 1.5)]
    lambda: f64,
    #[command(flatten)]
    optim: OptimArgs,
    #[arg(long)]
    out_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 6)]
    size: usize,
    #[arg(long, default_value = "slcc")]
    loss: Similarity,
    #[arg(long, default_value_t = 1e-3)]
    fd_step: f64,
    #[arg(long, default_value_t = 3)]
    window_n: usize,
    #[arg(long, default_value_t = 1.5)]
    lambda: f64,
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 15)]
    window_n: usize,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Bad arguments caught by the front end itself.
#[derive(Debug)]
pub struct InputError(pub String);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

/// A check that ran to completion and did not pass.
#[derive(Debug)]
pub struct CheckFailed(pub String);

impl fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<sparsereg::Error>() {
            return match e {
                sparsereg::Error::Divergence { .. } => 3,
                sparsereg::Error::Io { .. } => 4,
                _ => 2,
            };
        }
        if cause.is::<InputError>() {
            return 2;
        }
        if cause.is::<std::io::Error>() {
            return 4;
        }
    }
    1
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let threads = cli.threads.unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()?;
    match cli.command {
        Command::Register(a) => commands::register(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Eval(a) => commands::eval(a),
        Command::SweepWindow(a) => commands::sweep_window(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Bench(a) => commands::bench(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
