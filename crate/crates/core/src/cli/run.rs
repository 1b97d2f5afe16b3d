use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::ValueEnum;
use faer::{c64, Mat};
use serde::{Deserialize, Serialize};

use crate::datasets::{load_matrix, save_matrix, TrajectoryBatch};
use crate::dmd::{
    edmd_timed, kdmd_exact_timed, kdmd_randomized_timed, reconstruct, reconstruction_error, select_dominant,
    svd_dmd_timed, DmdResult, FactorMethod, ObservableMap, RandomizedConfig, SnapshotPair, StageTimings,
};
use crate::error::{invalid, Error, Result};
use crate::kernels::{rff_sample, KernelSpec};
use crate::numerics::{gather_cols, CMat, DEFAULT_REL_TOL};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Svd,
    EdmdRff,
    KdmdExact,
    KdmdRpcholesky,
    KdmdGreedy,
    KdmdOasis,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Svd => "svd",
            Algorithm::EdmdRff => "edmd-rff",
            Algorithm::KdmdExact => "kdmd-exact",
            Algorithm::KdmdRpcholesky => "kdmd-rpcholesky",
            Algorithm::KdmdGreedy => "kdmd-greedy",
            Algorithm::KdmdOasis => "kdmd-oasis",
        }
    }

    pub fn factor_method(self) -> Option<FactorMethod> {
        match self {
            Algorithm::KdmdRpcholesky => Some(FactorMethod::RpCholesky),
            Algorithm::KdmdGreedy => Some(FactorMethod::Greedy),
            Algorithm::KdmdOasis => Some(FactorMethod::Oasis),
            _ => None,
        }
    }

    /// Whether the algorithm takes a sample count.
    pub fn uses_samples(self) -> bool {
        self == Algorithm::EdmdRff || self.factor_method().is_some()
    }
}

/// Everything that determines the output of one pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub kernel: KernelSpec,
    pub samples: Option<usize>,
    pub seed: u64,
    pub rel_tol: f64,
    pub mode_count: Option<usize>,
    /// `None` keeps each algorithm's default ordering.
    pub sort: Option<bool>,
    pub input: Option<String>,
    pub trajectory_length: Option<usize>,
}

impl RunConfig {
    pub fn new(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            kernel: KernelSpec::default(),
            samples: None,
            seed: 0,
            rel_tol: DEFAULT_REL_TOL,
            mode_count: None,
            sort: None,
            input: None,
            trajectory_length: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(invalid(format!("rel-tol must lie in (0, 1), got {}", self.rel_tol)));
        }
        if self.algorithm.uses_samples() {
            match self.samples {
                None => return Err(invalid(format!("{} needs --samples", self.algorithm.name()))),
                Some(0) => return Err(invalid("--samples must be at least 1")),
                _ => {}
            }
        }
        if self.algorithm == Algorithm::EdmdRff && !matches!(self.kernel, KernelSpec::Gaussian { sigma: Some(_) }) {
            return Err(invalid("edmd-rff needs an explicit Gaussian --kernel-sigma"));
        }
        Ok(())
    }
}

/// Sidecar metadata written next to generated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub version: String,
    pub generator: String,
    pub initial_count: usize,
    pub steps: usize,
    pub dt: f64,
    pub tile_rows: usize,
    pub seed: u64,
    pub rows: usize,
    pub cols: usize,
    /// Snapshots per trajectory; pairs never cross trajectory boundaries.
    pub trajectory_length: usize,
    pub boundaries: Vec<[usize; 2]>,
}

impl DatasetMeta {
    pub fn duffing(batch: &TrajectoryBatch, rows: usize, seed: u64) -> Self {
        Self {
            version: VERSION.into(),
            generator: "duffing".into(),
            initial_count: batch.initial_count,
            steps: batch.trajectory_length,
            dt: batch.dt,
            tile_rows: rows,
            seed,
            rows,
            cols: batch.data.ncols(),
            trajectory_length: batch.trajectory_length,
            boundaries: batch.boundaries().into_iter().map(|(a, b)| [a, b]).collect(),
        }
    }
}

pub fn sidecar_path(data: &Path) -> PathBuf {
    let mut s = data.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn json_error(path: &Path, e: serde_json::Error) -> Error {
    Error::MalformedHeader(format!("{}: {e}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| json_error(path, e))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| json_error(path, e))
}

/// Loads a snapshot matrix and pairs its columns. The trajectory length comes
/// from `trajectory_length`, else from a sidecar file, else the whole matrix
/// is one trajectory.
pub fn load_pair(input: &Path, trajectory_length: Option<usize>) -> Result<(SnapshotPair, Option<usize>)> {
    let data = load_matrix(input)?;
    let sidecar = sidecar_path(input);
    let len = match trajectory_length {
        Some(l) => Some(l),
        None if sidecar.exists() => Some(read_json::<DatasetMeta>(&sidecar)?.trajectory_length),
        None => None,
    };
    let pair = match len {
        Some(l) if l != data.ncols() => SnapshotPair::from_trajectories(data, l)?,
        _ => SnapshotPair::from_trajectory(data)?,
    };
    Ok((pair, len))
}

/// Runs the configured pipeline and applies ordering and mode selection.
pub fn execute(config: &RunConfig, pair: &SnapshotPair) -> Result<(DmdResult, StageTimings)> {
    config.validate()?;
    let spec = config.kernel.resolve(pair.dim());
    let samples = config.samples.unwrap_or(0);
    let (mut result, timings) = match config.algorithm {
        Algorithm::Svd => svd_dmd_timed(pair, config.rel_tol)?,
        Algorithm::EdmdRff => {
            let start = Instant::now();
            let feats = rff_sample(&spec, pair.dim(), samples, config.seed)?;
            let sampling = start.elapsed();
            let (r, mut t) = edmd_timed(pair, &ObservableMap::Rff(feats), config.rel_tol)?;
            t.observables += sampling;
            (r, t)
        }
        Algorithm::KdmdExact => kdmd_exact_timed(pair, &spec, config.rel_tol)?,
        a => {
            let method = a.factor_method().expect("randomized kernel algorithm");
            let rc = RandomizedConfig {
                samples,
                seed: config.seed,
                rel_tol: config.rel_tol,
                method,
                stop_tol: 0.0,
                sort: config.sort,
            };
            kdmd_randomized_timed(pair, &spec, &rc)?
        }
    };
    if config.algorithm.factor_method().is_none() {
        match config.sort {
            Some(true) => result = result.sorted_by_residual(),
            Some(false) => result = result.in_computed_order(),
            None => {}
        }
    }
    if let Some(k) = config.mode_count {
        let k = if k > result.rank() {
            let msg = format!("mode count {k} clipped to rank {}", result.rank());
            log::warn!("{msg}");
            result.warnings.push(msg);
            result.rank()
        } else {
            k
        };
        result = if result.sorted {
            select_dominant(&result, k)?
        } else {
            let mut r = result.permuted(&(0..k).collect::<Vec<_>>());
            r.sorted = false;
            r
        };
    }
    Ok((result, timings))
}

/// The JSON document written by `run`; matrices live in sibling files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    pub version: String,
    pub config: RunConfig,
    /// Kernel with the default scale filled in.
    pub resolved_kernel: KernelSpec,
    pub state_dim: usize,
    pub snapshot_pairs: usize,
    pub rank: usize,
    pub sorted: bool,
    pub real_data: bool,
    /// `[re, im]` per mode, in stored order.
    pub eigenvalues: Vec<[f64; 2]>,
    pub residuals: Vec<f64>,
    pub residual_floors: Vec<f64>,
    pub computed_order: Vec<usize>,
    pub zero_flags: Vec<bool>,
    pub pivots: Vec<usize>,
    /// Reconstruction error over the stored modes, when eigenfunctions exist.
    pub reconstruction_error: Option<f64>,
    pub warnings: Vec<String>,
    /// `N x R` modes, relative to the directory of this file.
    pub modes_file: String,
    /// `M x R` eigenfunction values at the data.
    pub eigenfunctions_file: String,
}

fn sibling(output: &Path, suffix: &str) -> (PathBuf, String) {
    let stem = output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "result".into());
    let name = format!("{stem}.{suffix}.rkdm");
    (output.with_file_name(&name), name)
}

impl ResultFile {
    pub fn new(config: &RunConfig, pair: &SnapshotPair, result: &DmdResult, output: &Path) -> Self {
        let tau = if result.rank() > 0 && result.eigenfunctions.ncols() == result.rank() {
            reconstruct(result, result.rank())
                .and_then(|xhat| reconstruction_error(pair.x().as_ref(), xhat.as_ref()))
                .ok()
        } else {
            None
        };
        Self {
            version: VERSION.into(),
            config: config.clone(),
            resolved_kernel: config.kernel.resolve(pair.dim()),
            state_dim: pair.dim(),
            snapshot_pairs: pair.len(),
            rank: result.rank(),
            sorted: result.sorted,
            real_data: result.real_data,
            eigenvalues: result.lambdas.iter().map(|l| [l.re, l.im]).collect(),
            residuals: result.residuals.clone(),
            residual_floors: result.residual_floors.clone(),
            computed_order: result.order.clone(),
            zero_flags: result.zero_flags.clone(),
            pivots: result.pivots.clone(),
            reconstruction_error: tau,
            warnings: result.warnings.clone(),
            modes_file: sibling(output, "modes").1,
            eigenfunctions_file: sibling(output, "eigenfunctions").1,
        }
    }

    /// Rebuilds the parts of a [`DmdResult`] needed to reorder and export
    /// modes.
    pub fn to_result(&self, modes: CMat) -> DmdResult {
        let mut r = DmdResult::empty(modes.nrows(), 0);
        r.lambdas = self.eigenvalues.iter().map(|p| c64::new(p[0], p[1])).collect();
        r.modes = modes;
        r.eigenfunctions = CMat::zeros(0, 0);
        r.coefficients = CMat::zeros(0, 0);
        r.residuals = self.residuals.clone();
        r.residual_floors = self.residual_floors.clone();
        r.order = self.computed_order.clone();
        r.sorted = self.sorted;
        r.zero_flags = self.zero_flags.clone();
        r.real_data = self.real_data;
        r.pivots = self.pivots.clone();
        r
    }
}

/// Writes the result document and its two matrix files.
pub fn save_result(output: &Path, file: &ResultFile, result: &DmdResult) -> Result<()> {
    save_matrix(result.modes.as_ref(), &sibling(output, "modes").0)?;
    save_matrix(result.eigenfunctions.as_ref(), &sibling(output, "eigenfunctions").0)?;
    write_json(output, file)
}

pub fn load_result(path: &Path) -> Result<(ResultFile, CMat)> {
    let file: ResultFile = read_json(path)?;
    let modes = load_matrix(path.with_file_name(&file.modes_file))?;
    if modes.ncols() != file.rank || file.eigenvalues.len() != file.rank || file.residuals.len() != file.rank {
        return Err(Error::MalformedHeader(format!("{}: mode count does not match rank", path.display())));
    }
    if file.residual_floors.len() != file.rank
        || file.computed_order.len() != file.rank
        || file.zero_flags.len() != file.rank
    {
        return Err(Error::MalformedHeader(format!("{}: per-mode arrays do not match rank", path.display())));
    }
    Ok((file, modes))
}

/// Writes `modes.csv` (every mode in residual order) and the first `count`
/// modes as `mode_<k>.rkdm`, each an `N x 2` matrix of real and imaginary
/// parts. Returns the number of mode files written.
pub fn export_modes(file: &ResultFile, modes: CMat, count: usize, out_dir: &Path) -> Result<usize> {
    fs::create_dir_all(out_dir)?;
    let result = file.to_result(modes).sorted_by_residual();
    let count = if count > result.rank() {
        log::warn!("mode count {count} clipped to rank {}", result.rank());
        result.rank()
    } else {
        count
    };
    let mut csv = String::from("index,re,im,residual\n");
    for (k, (l, r)) in result.lambdas.iter().zip(&result.residuals).enumerate() {
        csv.push_str(&format!("{k},{:?},{:?},{:?}\n", l.re, l.im, r));
    }
    fs::write(out_dir.join("modes.csv"), csv)?;
    for k in 0..count {
        let col = gather_cols(result.modes.as_ref(), &[k]);
        let parts =
            Mat::from_fn(col.nrows(), 2, |i, j| c64::new(if j == 0 { col[(i, 0)].re } else { col[(i, 0)].im }, 0.0));
        save_matrix(parts.as_ref(), out_dir.join(format!("mode_{k}.rkdm")))?;
    }
    Ok(count)
}
