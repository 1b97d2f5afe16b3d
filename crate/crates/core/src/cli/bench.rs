use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::run::{execute, Algorithm, RunConfig, VERSION};
use crate::datasets::synthetic::{gaussian_matrix, seeded_rng};
use crate::dmd::{reconstruct, reconstruction_error, SnapshotPair, StageTimings};
use crate::error::{invalid, Error, Result};
use crate::kernels::KernelSpec;
use crate::numerics::DEFAULT_REL_TOL;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub algorithm: Algorithm,
    pub samples: usize,
    pub seed: u64,
    pub tau: f64,
    pub elapsed_ms: f64,
}

fn tau_of(config: &RunConfig, pair: &SnapshotPair) -> Result<(f64, f64)> {
    let start = Instant::now();
    let (result, _) = execute(config, pair)?;
    let elapsed = start.elapsed().as_secs_f64() * 1e3;
    let xhat = reconstruct(&result, result.rank())?;
    Ok((reconstruction_error(pair.x().as_ref(), xhat.as_ref())?, elapsed))
}

/// Reconstruction error over all retained modes for every sample count and
/// seeds `base.seed .. base.seed + repeats`, optionally followed by an
/// exact kernel DMD row reported at `S = M`.
pub fn sweep_rows(
    base: &RunConfig,
    pair: &SnapshotPair,
    samples_list: &[usize],
    repeats: usize,
    include_exact: bool,
) -> Result<Vec<SweepRow>> {
    if !base.algorithm.uses_samples() {
        return Err(invalid(format!("sweep needs a sampling algorithm, got {}", base.algorithm.name())));
    }
    if repeats == 0 || samples_list.is_empty() {
        return Err(invalid("sweep needs at least one repeat and one sample count"));
    }
    let mut rows = Vec::new();
    for &s in samples_list {
        for r in 0..repeats as u64 {
            let config = RunConfig { samples: Some(s), seed: base.seed + r, mode_count: None, ..base.clone() };
            let (tau, elapsed_ms) = tau_of(&config, pair)?;
            rows.push(SweepRow { algorithm: base.algorithm, samples: s, seed: config.seed, tau, elapsed_ms });
        }
    }
    if include_exact {
        let config = RunConfig { algorithm: Algorithm::KdmdExact, samples: None, mode_count: None, ..base.clone() };
        let (tau, elapsed_ms) = tau_of(&config, pair)?;
        rows.push(SweepRow { algorithm: Algorithm::KdmdExact, samples: pair.len(), seed: base.seed, tau, elapsed_ms });
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("algorithm,S,seed,tau,elapsed_ms\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{:?},{:.3}\n", r.algorithm.name(), r.samples, r.seed, r.tau, r.elapsed_ms));
    }
    out
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub algorithms: Vec<Algorithm>,
    pub m_list: Vec<usize>,
    /// The first entry is used for the sweep over `M`; the sweep over `S`
    /// runs at the first `M`.
    pub s_list: Vec<usize>,
    pub dim: usize,
    pub repeats: usize,
    pub timeout: Duration,
    pub seed: u64,
    pub kernel: KernelSpec,
    pub rel_tol: f64,
}

impl BenchConfig {
    pub fn new(algorithms: Vec<Algorithm>, m_list: Vec<usize>, s_list: Vec<usize>, dim: usize) -> Self {
        Self {
            algorithms,
            m_list,
            s_list,
            dim,
            repeats: 3,
            timeout: Duration::from_secs(60),
            seed: 0,
            kernel: KernelSpec::default(),
            rel_tol: DEFAULT_REL_TOL,
        }
    }
}

/// Wall-clock seconds of one run, split like the three cost columns:
/// observables or kernel factorization, operator `K^`, modes and residuals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageSeconds {
    pub observables: f64,
    pub operator: f64,
    pub modes: f64,
    pub total: f64,
    /// Measured around the whole call, for checking the split.
    pub end_to_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchEntry {
    pub algorithm: Algorithm,
    pub n: usize,
    pub m: usize,
    pub s: Option<usize>,
    pub median: StageSeconds,
    pub runs: Vec<StageSeconds>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slope {
    pub algorithm: Algorithm,
    /// `"m"` or `"s"`.
    pub versus: String,
    /// The parameter held fixed (`S` for slopes in `M`, and vice versa).
    pub fixed: Option<usize>,
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub version: String,
    pub dim: usize,
    pub repeats: usize,
    pub seed: u64,
    pub timeout_ms: u64,
    pub entries: Vec<BenchEntry>,
    pub slopes: Vec<Slope>,
}

#[derive(Debug)]
pub enum BenchError {
    Timeout { algorithm: Algorithm, m: usize, s: Option<usize>, limit: Duration },
    Failed(Error),
}

impl From<Error> for BenchError {
    fn from(e: Error) -> Self {
        BenchError::Failed(e)
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn fit_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn seconds(t: &StageTimings, end_to_end: Duration) -> StageSeconds {
    StageSeconds {
        observables: t.observables.as_secs_f64(),
        operator: t.operator.as_secs_f64(),
        modes: t.modes.as_secs_f64(),
        total: t.total().as_secs_f64(),
        end_to_end: end_to_end.as_secs_f64(),
    }
}

/// One timed run on a worker thread. A run that outlives `limit` is
/// abandoned and reported as a timeout.
fn timed_run(
    config: RunConfig,
    pair: Arc<SnapshotPair>,
    limit: Duration,
) -> std::result::Result<StageSeconds, BenchError> {
    let (tx, rx) = mpsc::channel();
    let algorithm = config.algorithm;
    let s = config.samples;
    let m = pair.len();
    thread::spawn(move || {
        let start = Instant::now();
        let out = execute(&config, &pair).map(|(_, t)| seconds(&t, start.elapsed()));
        let _ = tx.send(out);
    });
    match rx.recv_timeout(limit) {
        Ok(r) => Ok(r?),
        Err(_) => Err(BenchError::Timeout { algorithm, m, s, limit }),
    }
}

fn bench_entry(
    cfg: &BenchConfig,
    algorithm: Algorithm,
    pair: &Arc<SnapshotPair>,
    s: Option<usize>,
) -> std::result::Result<BenchEntry, BenchError> {
    let config =
        RunConfig { kernel: cfg.kernel, samples: s, seed: cfg.seed, rel_tol: cfg.rel_tol, ..RunConfig::new(algorithm) };
    config.validate()?;
    // One untimed run first so that allocation and cache warm-up do not land
    // on the smallest size.
    timed_run(config.clone(), Arc::clone(pair), cfg.timeout)?;
    let runs = (0..cfg.repeats)
        .map(|_| timed_run(config.clone(), Arc::clone(pair), cfg.timeout))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let pick = |f: fn(&StageSeconds) -> f64| median(&runs.iter().map(f).collect::<Vec<_>>());
    let median = StageSeconds {
        observables: pick(|r| r.observables),
        operator: pick(|r| r.operator),
        modes: pick(|r| r.modes),
        total: pick(|r| r.total),
        end_to_end: pick(|r| r.end_to_end),
    };
    Ok(BenchEntry { algorithm, n: cfg.dim, m: pair.len(), s, median, runs })
}

/// `m + 1` independent standard Gaussian snapshots in `dim` dimensions. The
/// Gaussian kernel matrix of such data has full numerical rank, which is the
/// worst case for the exact method.
pub fn bench_pair(dim: usize, m: usize, seed: u64) -> Result<SnapshotPair> {
    SnapshotPair::from_trajectory(gaussian_matrix(dim, m + 1, &mut seeded_rng(seed)))
}

/// Times every algorithm over `m_list` (and over `s_list` for sampling
/// algorithms) and fits log-log slopes of the median total time.
pub fn bench_report(cfg: &BenchConfig) -> std::result::Result<BenchReport, BenchError> {
    if cfg.repeats == 0 {
        return Err(invalid("repeats must be at least 1").into());
    }
    if cfg.algorithms.is_empty() || cfg.m_list.is_empty() || cfg.dim == 0 {
        return Err(invalid("bench needs algorithms, sizes and a positive dimension").into());
    }
    if cfg.m_list.contains(&0) || cfg.s_list.contains(&0) {
        return Err(invalid("sizes and sample counts must be positive").into());
    }
    let needs_s = cfg.algorithms.iter().any(|a| a.uses_samples());
    if needs_s && cfg.s_list.is_empty() {
        return Err(invalid("sampling algorithms need at least one sample count").into());
    }
    let pairs: Vec<Arc<SnapshotPair>> =
        cfg.m_list.iter().map(|&m| bench_pair(cfg.dim, m, cfg.seed).map(Arc::new)).collect::<Result<_>>()?;
    let mut entries = Vec::new();
    let mut slopes = Vec::new();
    for &algorithm in &cfg.algorithms {
        let s0 = algorithm.uses_samples().then(|| cfg.s_list[0]);
        let mut points = Vec::new();
        for pair in &pairs {
            let e = bench_entry(cfg, algorithm, pair, s0)?;
            points.push((e.m as f64, e.median.total));
            entries.push(e);
        }
        if points.len() > 1 {
            slopes.push(Slope { algorithm, versus: "m".into(), fixed: s0, slope: fit_slope(&points) });
        }
        if algorithm.uses_samples() && cfg.s_list.len() > 1 {
            let mut points = vec![(cfg.s_list[0] as f64, entries[entries.len() - pairs.len()].median.total)];
            for &s in &cfg.s_list[1..] {
                let e = bench_entry(cfg, algorithm, &pairs[0], Some(s))?;
                points.push((s as f64, e.median.total));
                entries.push(e);
            }
            slopes.push(Slope { algorithm, versus: "s".into(), fixed: Some(cfg.m_list[0]), slope: fit_slope(&points) });
        }
    }
    Ok(BenchReport {
        version: VERSION.into(),
        dim: cfg.dim,
        repeats: cfg.repeats,
        seed: cfg.seed,
        timeout_ms: cfg.timeout.as_millis() as u64,
        entries,
        slopes,
    })
}
