//! Dynamic mode decomposition: SVD-based DMD, EDMD, exact kernel DMD and
//! kernel DMD on a partial Cholesky / Nyström factor, with data-driven
//! residuals for ranking modes.

mod kernel;
mod linear;

use std::time::Duration;

use faer::{c64, Mat, MatRef};

use crate::datasets::TrajectoryBatch;
use crate::error::{invalid, Error, Result};
use crate::numerics::{gather_cols, is_real, vec_norm, CMat};

pub use kernel::{
    dense_residuals, kdmd_exact, kdmd_exact_timed, kdmd_randomized, kdmd_randomized_timed, sequential_factor_split,
    RandomizedConfig, SplitFactor,
};
pub use linear::{edmd, edmd_timed, svd_dmd, svd_dmd_timed, ObservableMap};

pub use crate::lowrank::FactorMethod;

/// Eigenvalues below this fraction of the largest modulus are flagged as zero.
pub const ZERO_EIGENVALUE_TOL: f64 = 1e-12;

/// Residuals within this many machine epsilons of the size of the terms they
/// are computed from are indistinguishable from zero and tie when sorting.
pub const RESIDUAL_NOISE_FACTOR: f64 = 1e3;

/// Two eigenvalues `a`, `b` form a conjugate pair when `|a - conj(b)|` is
/// below this times `max(1, |a|)`.
const PAIR_TOL: f64 = 1e-8;

/// Snapshot pairs `(x_m, y_m)` referencing columns of one stored matrix.
///
/// For a single trajectory `D` the store is `D` itself and `X`, `Y` are the
/// overlapping slices `D[:, 0..M]` and `D[:, 1..M+1]`.
#[derive(Debug, Clone)]
pub struct SnapshotPair {
    store: CMat,
    x_cols: Vec<usize>,
    y_cols: Vec<usize>,
    sequential: bool,
}

impl SnapshotPair {
    /// Pairs consecutive snapshots of one trajectory.
    pub fn from_trajectory(d: CMat) -> Result<Self> {
        if d.ncols() < 2 {
            return Err(invalid("a trajectory needs at least two snapshots"));
        }
        let m = d.ncols() - 1;
        Ok(Self { store: d, x_cols: (0..m).collect(), y_cols: (1..=m).collect(), sequential: true })
    }

    /// Pairs consecutive snapshots inside each trajectory of a concatenation
    /// of equally long trajectories. Never pairs across a boundary.
    pub fn from_trajectories(data: CMat, trajectory_length: usize) -> Result<Self> {
        if trajectory_length < 2 || !data.ncols().is_multiple_of(trajectory_length) || data.ncols() == 0 {
            return Err(invalid(format!(
                "{} columns do not split into trajectories of length {trajectory_length}",
                data.ncols()
            )));
        }
        if data.ncols() == trajectory_length {
            return Self::from_trajectory(data);
        }
        let (mut x_cols, mut y_cols) = (Vec::new(), Vec::new());
        for start in (0..data.ncols()).step_by(trajectory_length) {
            for k in start..start + trajectory_length - 1 {
                x_cols.push(k);
                y_cols.push(k + 1);
            }
        }
        Ok(Self { store: data, x_cols, y_cols, sequential: false })
    }

    pub fn from_batch(batch: &TrajectoryBatch) -> Result<Self> {
        Self::from_trajectories(batch.data.clone(), batch.trajectory_length)
    }

    /// Explicit `X` and `Y` of equal shape.
    pub fn from_matrices(x: CMat, y: CMat) -> Result<Self> {
        if x.nrows() != y.nrows() || x.ncols() != y.ncols() {
            return Err(invalid(format!("X is {}x{} but Y is {}x{}", x.nrows(), x.ncols(), y.nrows(), y.ncols())));
        }
        if x.ncols() == 0 {
            return Err(invalid("at least one snapshot pair is required"));
        }
        let m = x.ncols();
        let store = Mat::from_fn(x.nrows(), 2 * m, |i, j| if j < m { x[(i, j)] } else { y[(i, j - m)] });
        Ok(Self { store, x_cols: (0..m).collect(), y_cols: (m..2 * m).collect(), sequential: false })
    }

    /// State dimension `N`.
    pub fn dim(&self) -> usize {
        self.store.nrows()
    }

    /// Number of pairs `M`.
    pub fn len(&self) -> usize {
        self.x_cols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_cols.is_empty()
    }

    pub fn is_sequential(&self) -> bool {
        self.sequential
    }

    /// All stored snapshots.
    pub fn store(&self) -> &CMat {
        &self.store
    }

    pub fn x_cols(&self) -> &[usize] {
        &self.x_cols
    }

    pub fn y_cols(&self) -> &[usize] {
        &self.y_cols
    }

    pub fn x(&self) -> CMat {
        gather_cols(self.store.as_ref(), &self.x_cols)
    }

    pub fn y(&self) -> CMat {
        gather_cols(self.store.as_ref(), &self.y_cols)
    }

    pub fn is_real(&self) -> bool {
        is_real(self.store.as_ref())
    }
}

/// Wall-clock time spent in the three pipeline stages: observables or
/// kernel data, assembly of the reduced operator, and eigenpairs/modes.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub observables: Duration,
    pub operator: Duration,
    pub modes: Duration,
}

impl StageTimings {
    pub fn total(&self) -> Duration {
        self.observables + self.operator + self.modes
    }
}

/// Eigenvalues, modes, eigenfunctions at the data and residuals of a DMD run.
#[derive(Debug, Clone)]
pub struct DmdResult {
    pub lambdas: Vec<c64>,
    /// `N x R`, column `i` is mode `xi_i`.
    pub modes: CMat,
    /// `M x R`, column `i` is `phi_i(X)`. Has no columns for SVD-based DMD.
    pub eigenfunctions: CMat,
    pub residuals: Vec<f64>,
    /// Rounding level of each residual. Residuals at or below it sort as
    /// zero, ties falling back to the computed order.
    pub residual_floors: Vec<f64>,
    /// Coefficient vectors entering the residual (`U Sigma^+ w_i` for the
    /// kernel methods), `M x R`; empty for SVD-based DMD.
    pub coefficients: CMat,
    /// `order[k]` is the position in computed (eigensolver) order of the
    /// mode stored at `k`.
    pub order: Vec<usize>,
    pub sorted: bool,
    /// Pivots of the factorization behind a randomized run (store indices).
    pub pivots: Vec<usize>,
    /// Modes with `|lambda| < 1e-12 max |lambda|`.
    pub zero_flags: Vec<bool>,
    /// Stored positions whose left eigenvector could not be scaled.
    pub degenerate: Vec<usize>,
    pub defective: bool,
    /// Whether the input data was real; conjugate pairs are grouped only then.
    pub real_data: bool,
    pub warnings: Vec<String>,
}

impl DmdResult {
    /// Number of modes `R`.
    pub fn rank(&self) -> usize {
        self.lambdas.len()
    }

    pub(crate) fn empty(n: usize, m: usize) -> Self {
        Self {
            lambdas: Vec::new(),
            modes: CMat::zeros(n, 0),
            eigenfunctions: CMat::zeros(m, 0),
            residuals: Vec::new(),
            residual_floors: Vec::new(),
            coefficients: CMat::zeros(m, 0),
            order: Vec::new(),
            sorted: false,
            pivots: Vec::new(),
            zero_flags: Vec::new(),
            degenerate: Vec::new(),
            defective: false,
            real_data: true,
            warnings: Vec::new(),
        }
    }

    /// Modes rearranged so that stored mode `k` becomes `self[perm[k]]`.
    pub fn permuted(&self, perm: &[usize]) -> DmdResult {
        let pick_cols = |m: &CMat| if m.ncols() == 0 { m.clone() } else { gather_cols(m.as_ref(), perm) };
        let mut inverse = vec![usize::MAX; self.rank()];
        for (k, &p) in perm.iter().enumerate() {
            inverse[p] = k;
        }
        DmdResult {
            lambdas: perm.iter().map(|&p| self.lambdas[p]).collect(),
            modes: pick_cols(&self.modes),
            eigenfunctions: pick_cols(&self.eigenfunctions),
            residuals: perm.iter().map(|&p| self.residuals[p]).collect(),
            residual_floors: perm.iter().map(|&p| self.residual_floors[p]).collect(),
            coefficients: pick_cols(&self.coefficients),
            order: perm.iter().map(|&p| self.order[p]).collect(),
            sorted: false,
            pivots: self.pivots.clone(),
            zero_flags: perm.iter().map(|&p| self.zero_flags[p]).collect(),
            degenerate: self
                .degenerate
                .iter()
                .filter_map(|&d| (inverse[d] != usize::MAX).then_some(inverse[d]))
                .collect(),
            defective: self.defective,
            real_data: self.real_data,
            warnings: self.warnings.clone(),
        }
    }

    /// Modes in ascending residual order, conjugate pairs kept adjacent.
    pub fn sorted_by_residual(&self) -> DmdResult {
        let mut out = self.permuted(&self.residual_order());
        out.sorted = true;
        out
    }

    /// Modes in the order the eigensolver produced them.
    pub fn in_computed_order(&self) -> DmdResult {
        let mut perm: Vec<usize> = (0..self.rank()).collect();
        perm.sort_by_key(|&k| self.order[k]);
        self.permuted(&perm)
    }

    fn pairs_conjugates(&self) -> bool {
        self.real_data
    }

    /// Residuals with values under their rounding floor replaced by zero.
    pub fn sort_keys(&self) -> Vec<f64> {
        self.residuals.iter().zip(&self.residual_floors).map(|(&r, &f)| if r <= f { 0.0 } else { r }).collect()
    }

    fn residual_order(&self) -> Vec<usize> {
        residual_order(&self.lambdas, &self.sort_keys(), &self.order, self.pairs_conjugates())
    }
}

fn is_pair(a: c64, b: c64) -> bool {
    a.im.abs() > PAIR_TOL * a.norm().max(1.0) && (a - b.conj()).norm() <= PAIR_TOL * a.norm().max(1.0)
}

/// Groups of mode indices: conjugate pairs (positive imaginary part first)
/// or singletons, in order of first appearance.
pub(crate) fn conjugate_groups(lambdas: &[c64], pair_up: bool) -> Vec<Vec<usize>> {
    let mut used = vec![false; lambdas.len()];
    let mut groups = Vec::new();
    for i in 0..lambdas.len() {
        if used[i] {
            continue;
        }
        used[i] = true;
        let partner =
            if pair_up { (i + 1..lambdas.len()).find(|&j| !used[j] && is_pair(lambdas[i], lambdas[j])) } else { None };
        match partner {
            Some(j) => {
                used[j] = true;
                if lambdas[i].im >= 0.0 {
                    groups.push(vec![i, j]);
                } else {
                    groups.push(vec![j, i]);
                }
            }
            None => groups.push(vec![i]),
        }
    }
    groups
}

/// Permutation sorting modes by ascending key; a conjugate pair moves as one
/// unit keyed by its smaller key. Ties go by computed position.
pub(crate) fn residual_order(lambdas: &[c64], keys: &[f64], order: &[usize], pair_up: bool) -> Vec<usize> {
    let mut groups = conjugate_groups(lambdas, pair_up);
    let key = |g: &Vec<usize>| {
        let k = g.iter().map(|&i| keys[i]).fold(f64::INFINITY, f64::min);
        let o = g.iter().map(|&i| order[i]).min().unwrap_or(0);
        (k, o)
    };
    groups.sort_by(|a, b| {
        let (ka, oa) = key(a);
        let (kb, ob) = key(b);
        ka.total_cmp(&kb).then(oa.cmp(&ob))
    });
    groups.into_iter().flatten().collect()
}

/// Raw pipeline output in computed order.
pub(crate) struct RawModes {
    pub lambdas: Vec<c64>,
    pub modes: CMat,
    pub eigenfunctions: CMat,
    pub residuals: Vec<f64>,
    pub residual_floors: Vec<f64>,
    pub coefficients: CMat,
    pub degenerate: Vec<usize>,
    pub defective: bool,
}

pub(crate) fn finish(
    raw: RawModes,
    pivots: Vec<usize>,
    mut warnings: Vec<String>,
    sort: bool,
    real_data: bool,
) -> DmdResult {
    let r = raw.lambdas.len();
    let top = raw.lambdas.iter().map(|l| l.norm()).fold(0.0, f64::max);
    let zero_flags: Vec<bool> = raw.lambdas.iter().map(|l| l.norm() < ZERO_EIGENVALUE_TOL * top).collect();
    if raw.defective {
        warnings.push(format!("{} eigenpair(s) could not be biorthogonally scaled", raw.degenerate.len()));
    }
    let result = DmdResult {
        lambdas: raw.lambdas,
        modes: raw.modes,
        eigenfunctions: raw.eigenfunctions,
        residuals: raw.residuals,
        residual_floors: raw.residual_floors,
        coefficients: raw.coefficients,
        order: (0..r).collect(),
        sorted: false,
        pivots,
        zero_flags,
        degenerate: raw.degenerate,
        defective: raw.defective,
        real_data,
        warnings,
    };
    if sort {
        let mut s = result.permuted(&result.residual_order());
        s.sorted = true;
        s
    } else {
        result
    }
}

/// `X^ = sum_{i < mode_count} xi_i phi_i(X)*` over the first stored modes.
pub fn reconstruct(result: &DmdResult, mode_count: usize) -> Result<CMat> {
    if mode_count > result.rank() {
        return Err(invalid(format!("mode_count {mode_count} exceeds rank {}", result.rank())));
    }
    if mode_count > 0 && result.eigenfunctions.ncols() < result.rank() {
        return Err(invalid("this result carries no eigenfunctions to reconstruct from"));
    }
    let n = result.modes.nrows();
    let m = result.eigenfunctions.nrows();
    if mode_count == 0 {
        return Ok(CMat::zeros(n, m));
    }
    Ok(result.modes.subcols(0, mode_count) * result.eigenfunctions.subcols(0, mode_count).adjoint())
}

/// `tau = sum_m |x_m - x^_m| / |x_m|` over the nonzero columns of `x`.
pub fn reconstruction_error(x: MatRef<'_, c64>, xhat: MatRef<'_, c64>) -> Result<f64> {
    if x.nrows() != xhat.nrows() || x.ncols() != xhat.ncols() {
        return Err(invalid("data and reconstruction shapes differ"));
    }
    let mut tau = 0.0;
    let mut skipped = 0;
    for j in 0..x.ncols() {
        let xj: Vec<c64> = (0..x.nrows()).map(|i| x[(i, j)]).collect();
        let norm = vec_norm(&xj);
        if norm == 0.0 {
            skipped += 1;
            continue;
        }
        let diff: Vec<c64> = (0..x.nrows()).map(|i| x[(i, j)] - xhat[(i, j)]).collect();
        tau += vec_norm(&diff) / norm;
    }
    if skipped == x.ncols() {
        return Err(Error::UndefinedMetric);
    }
    if skipped > 0 {
        log::warn!("reconstruction error skipped {skipped} zero snapshot(s)");
    }
    Ok(tau)
}

/// The `count` modes of smallest residual, conjugate pairs kept together
/// when both members fit. Splitting a pair adds a warning.
pub fn select_dominant(result: &DmdResult, count: usize) -> Result<DmdResult> {
    if count > result.rank() {
        return Err(invalid(format!("count {count} exceeds rank {}", result.rank())));
    }
    let pair_up = result.pairs_conjugates();
    let groups = {
        let order = result.residual_order();
        let mut g = conjugate_groups(&order.iter().map(|&i| result.lambdas[i]).collect::<Vec<_>>(), pair_up);
        g.iter_mut().for_each(|grp| grp.iter_mut().for_each(|k| *k = order[*k]));
        g
    };
    let mut chosen = Vec::with_capacity(count);
    let mut split = false;
    for grp in groups {
        let room = count - chosen.len();
        if room == 0 {
            break;
        }
        if grp.len() > room {
            split = true;
        }
        chosen.extend(grp.into_iter().take(room));
    }
    let mut out = result.permuted(&chosen);
    out.sorted = true;
    if split {
        out.warnings.push("selection splits a conjugate pair".into());
    }
    Ok(out)
}
