//! Command-line interface: `run`, `duffing`, `sweep`, `bench` and `modes`.
//!
//! Exit codes: 0 success, 2 invalid configuration, 3 unreadable or
//! unwritable files, 4 numerical breakdown, 5 benchmark timeout.

mod bench;
mod run;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use bench::{
    bench_pair, bench_report, fit_slope, median, sweep_csv, sweep_rows, BenchConfig, BenchEntry, BenchError,
    BenchReport, Slope, StageSeconds, SweepRow,
};
pub use run::{
    execute, export_modes, load_pair, load_result, read_json, save_result, sidecar_path, write_json, Algorithm,
    DatasetMeta, ResultFile, RunConfig, VERSION,
};

use crate::datasets::{duffing_generate, save_matrix, tile_rows};
use crate::error::Error;
use crate::kernels::KernelSpec;
use crate::numerics::DEFAULT_REL_TOL;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;
pub const EXIT_TIMEOUT: i32 = 5;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        Self { code: EXIT_CONFIG, message: message.into() }
    }
}

/// Prefixes file errors with the path involved.
fn at(path: &Path) -> impl Fn(Error) -> CliError + '_ {
    move |e| {
        let mut c = CliError::from(e);
        if c.code == EXIT_IO {
            c.message = format!("{}: {}", path.display(), c.message);
        }
        c
    }
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidInput(_) | Error::IndexOutOfRange { .. } | Error::UnsupportedKernel(_) => EXIT_CONFIG,
        Error::Breakdown { .. } | Error::NoConvergence(_) | Error::UndefinedMetric => EXIT_NUMERICAL,
        Error::MalformedHeader(_)
        | Error::TruncatedPayload { .. }
        | Error::DimensionOverflow { .. }
        | Error::TrailingData(_)
        | Error::Csv(_)
        | Error::Io(_) => EXIT_IO,
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self { code: exit_code(&e), message: e.to_string() }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Failed(e) => e.into(),
            BenchError::Timeout { algorithm, m, s, limit } => Self {
                code: EXIT_TIMEOUT,
                message: format!(
                    "{} with M = {m}{} exceeded the {} ms timeout",
                    algorithm.name(),
                    s.map(|s| format!(", S = {s}")).unwrap_or_default(),
                    limit.as_millis()
                ),
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "rkdmd", version, about = "Dynamic mode decomposition with randomized kernel factorizations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one pipeline on a snapshot matrix and write a result file.
    Run(RunArgs),
    /// Generate tiled Duffing oscillator trajectories.
    Duffing(DuffingArgs),
    /// Reconstruction error against the sample count.
    Sweep(SweepArgs),
    /// Stage timings against problem size.
    Bench(BenchArgs),
    /// Export residual-sorted modes and an eigenvalue table from a result.
    Modes(ModesArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelFamily {
    Gaussian,
    Polynomial,
    Linear,
}

/// Kernel and solver settings shared by `run`, `sweep` and `bench`.
#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    #[arg(long, value_enum, default_value_t = KernelFamily::Gaussian)]
    pub kernel: KernelFamily,
    /// Gaussian scale in `exp(-sigma |x - y|^2)`; defaults to 1/N. Also the
    /// scale behind the random Fourier features, where it must be given.
    #[arg(long)]
    pub kernel_sigma: Option<f64>,
    #[arg(long, default_value_t = 2)]
    pub degree: u32,
    #[arg(long, default_value_t = 1.0)]
    pub offset: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_REL_TOL)]
    pub rel_tol: f64,
    /// Keep the computed order instead of sorting by residual.
    #[arg(long, conflicts_with = "sort")]
    pub no_sort: bool,
    /// Sort by residual even where the algorithm would not.
    #[arg(long)]
    pub sort: bool,
}

impl SolverArgs {
    fn kernel_spec(&self) -> KernelSpec {
        match self.kernel {
            KernelFamily::Gaussian => KernelSpec::Gaussian { sigma: self.kernel_sigma },
            KernelFamily::Polynomial => KernelSpec::Polynomial { degree: self.degree, offset: self.offset },
            KernelFamily::Linear => KernelSpec::Linear,
        }
    }

    fn run_config(&self, algorithm: Algorithm, samples: Option<usize>) -> RunConfig {
        RunConfig {
            algorithm,
            kernel: self.kernel_spec(),
            samples,
            seed: self.seed,
            rel_tol: self.rel_tol,
            mode_count: None,
            sort: if self.no_sort {
                Some(false)
            } else if self.sort {
                Some(true)
            } else {
                None
            },
            input: None,
            trajectory_length: None,
        }
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, value_enum)]
    pub algorithm: Algorithm,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Sample count `S` (pivots or random features).
    #[arg(long)]
    pub samples: Option<usize>,
    /// Keep only this many modes of smallest residual.
    #[arg(long)]
    pub mode_count: Option<usize>,
    /// Snapshot matrix (`.rkdm` binary or `.csv`).
    #[arg(long)]
    pub input: PathBuf,
    /// Snapshots per trajectory; overrides the sidecar metadata.
    #[arg(long)]
    pub trajectory_length: Option<usize>,
    /// Result JSON; matrices are written next to it.
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct DuffingArgs {
    #[arg(long, default_value_t = 700)]
    pub initial_count: usize,
    /// Stored snapshots per trajectory, including the initial state.
    #[arg(long, default_value_t = 11)]
    pub steps: usize,
    #[arg(long, default_value_t = crate::datasets::DEFAULT_DT)]
    pub dt: f64,
    #[arg(long, default_value_t = 10000)]
    pub tile_rows: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_enum, default_value_t = Algorithm::KdmdRpcholesky)]
    pub algorithm: Algorithm,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, value_delimiter = ',', default_value = "10,20,40,80")]
    pub samples_list: Vec<usize>,
    /// Seeds per sample count, starting at `--seed`.
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    /// Append an exact kernel DMD row at `S = M`.
    #[arg(long)]
    pub include_exact: bool,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub trajectory_length: Option<usize>,
    /// CSV with columns algorithm, S, seed, tau, elapsed_ms.
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum, value_delimiter = ',', default_value = "kdmd-rpcholesky,kdmd-exact")]
    pub algorithms: Vec<Algorithm>,
    #[arg(long, value_delimiter = ',', default_value = "1000,2000,4000")]
    pub m_list: Vec<usize>,
    /// Sample counts; the first is used for the sweep over `M`.
    #[arg(long, value_delimiter = ',', default_value = "50")]
    pub s_list: Vec<usize>,
    /// State dimension `N` of the synthetic data.
    #[arg(long, default_value_t = 10)]
    pub dim: usize,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    /// Abort with exit code 5 when one repetition takes longer.
    #[arg(long, default_value_t = 600_000)]
    pub timeout_ms: u64,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct ModesArgs {
    /// Result JSON written by `run`.
    #[arg(long)]
    pub input: PathBuf,
    /// Number of modes to write as matrix files.
    #[arg(long, visible_alias = "mode-count", default_value_t = 0)]
    pub count: usize,
    /// Output directory.
    #[arg(long)]
    pub output: PathBuf,
}

fn cmd_run(a: RunArgs) -> Result<(), CliError> {
    let mut config = a.solver.run_config(a.algorithm, a.samples);
    config.mode_count = a.mode_count;
    config.input = Some(a.input.display().to_string());
    config.validate()?;
    let (pair, len) = load_pair(&a.input, a.trajectory_length).map_err(at(&a.input))?;
    config.trajectory_length = len;
    let (result, _) = execute(&config, &pair)?;
    for w in &result.warnings {
        log::warn!("{w}");
    }
    let file = ResultFile::new(&config, &pair, &result, &a.output);
    save_result(&a.output, &file, &result).map_err(at(&a.output))?;
    Ok(())
}

fn cmd_duffing(a: DuffingArgs) -> Result<(), CliError> {
    let batch = duffing_generate(a.initial_count, a.steps, a.dt, a.seed)?;
    let data = tile_rows(batch.data.as_ref(), a.tile_rows)?;
    save_matrix(data.as_ref(), &a.output).map_err(at(&a.output))?;
    write_json(&sidecar_path(&a.output), &DatasetMeta::duffing(&batch, a.tile_rows, a.seed)).map_err(at(&a.output))?;
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<(), CliError> {
    let mut config = a.solver.run_config(a.algorithm, a.samples_list.first().copied());
    config.input = Some(a.input.display().to_string());
    if !a.algorithm.uses_samples() {
        return Err(CliError::config(format!("sweep needs a sampling algorithm, got {}", a.algorithm.name())));
    }
    config.validate()?;
    let (pair, len) = load_pair(&a.input, a.trajectory_length).map_err(at(&a.input))?;
    config.trajectory_length = len;
    let rows = sweep_rows(&config, &pair, &a.samples_list, a.repeats, a.include_exact)?;
    fs::write(&a.output, sweep_csv(&rows)).map_err(Error::from).map_err(at(&a.output))?;
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<(), CliError> {
    faer::set_global_parallelism(faer::Par::Seq);
    let mut cfg = BenchConfig::new(a.algorithms, a.m_list, a.s_list, a.dim);
    cfg.repeats = a.repeats;
    cfg.timeout = Duration::from_millis(a.timeout_ms);
    cfg.seed = a.solver.seed;
    cfg.kernel = a.solver.kernel_spec();
    cfg.rel_tol = a.solver.rel_tol;
    let report = bench_report(&cfg)?;
    write_json(&a.output, &report).map_err(at(&a.output))?;
    Ok(())
}

fn cmd_modes(a: ModesArgs) -> Result<(), CliError> {
    let (file, modes) = load_result(&a.input).map_err(at(&a.input))?;
    export_modes(&file, modes, a.count, &a.output).map_err(at(&a.output))?;
    Ok(())
}

/// Parses `args` and runs the selected command, returning the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let outcome = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Duffing(a) => cmd_duffing(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Modes(a) => cmd_modes(a),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}
