use std::fmt;
use std::time::Instant;

use faer::{c64, Mat, MatRef};

use super::{finish, DmdResult, RawModes, SnapshotPair, StageTimings, RESIDUAL_NOISE_FACTOR};
use crate::error::{invalid, Result};
use crate::kernels::{rff_features, RffFeatures};
use crate::numerics::{general_eig_pairs, truncated_svd, CMat};

type FeatureFn = dyn Fn(&[c64]) -> Vec<c64> + Send + Sync;

/// Observables `Psi: C^N -> C^{1 x L}` evaluated snapshot by snapshot.
pub enum ObservableMap {
    /// `Psi(x) = x^T`.
    Identity,
    /// Random Fourier features.
    Rff(RffFeatures),
    /// A user-supplied list of `count` functions.
    Explicit { count: usize, eval: Box<FeatureFn> },
}

impl fmt::Debug for ObservableMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObservableMap::Identity => write!(f, "Identity"),
            ObservableMap::Rff(r) => write!(f, "Rff({} samples)", r.samples),
            ObservableMap::Explicit { count, .. } => write!(f, "Explicit({count})"),
        }
    }
}

impl ObservableMap {
    pub fn explicit(count: usize, eval: impl Fn(&[c64]) -> Vec<c64> + Send + Sync + 'static) -> Self {
        ObservableMap::Explicit { count, eval: Box::new(eval) }
    }

    /// Number of observables `L` for `dim`-dimensional states.
    pub fn len(&self, dim: usize) -> usize {
        match self {
            ObservableMap::Identity => dim,
            ObservableMap::Rff(r) => r.samples,
            ObservableMap::Explicit { count, .. } => *count,
        }
    }

    /// `M x L` matrix whose row `m` is `Psi(x_m)` for the columns `x_m`.
    pub fn evaluate(&self, x: MatRef<'_, c64>) -> Result<CMat> {
        match self {
            ObservableMap::Identity => Ok(x.transpose().to_owned()),
            ObservableMap::Rff(r) => rff_features(r, x),
            ObservableMap::Explicit { count, eval } => {
                let mut out = CMat::zeros(x.ncols(), *count);
                for m in 0..x.ncols() {
                    let xm: Vec<c64> = (0..x.nrows()).map(|i| x[(i, m)]).collect();
                    let row = eval(&xm);
                    if row.len() != *count {
                        return Err(invalid(format!("observable map returned {} values, expected {count}", row.len())));
                    }
                    for (l, v) in row.into_iter().enumerate() {
                        out[(m, l)] = v;
                    }
                }
                Ok(out)
            }
        }
    }
}

fn scale_cols(a: &CMat, s: &[f64]) -> CMat {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * s[j])
}

/// SVD-based DMD on the projected operator `K = U* Y V Sigma^+` with
/// residuals `|Y V Sigma^+ w_i - lambda_i U w_i|` for unit right eigenvectors.
pub fn svd_dmd(pair: &SnapshotPair, rel_tol: f64) -> Result<DmdResult> {
    svd_dmd_timed(pair, rel_tol).map(|r| r.0)
}

pub fn svd_dmd_timed(pair: &SnapshotPair, rel_tol: f64) -> Result<(DmdResult, StageTimings)> {
    let mut t = StageTimings::default();
    let start = Instant::now();
    let (x, y) = (pair.x(), pair.y());
    t.observables = start.elapsed();

    let start = Instant::now();
    let svd = truncated_svd(x.as_ref(), rel_tol)?;
    if svd.rank == 0 {
        return Ok((DmdResult::empty(pair.dim(), pair.len()), t));
    }
    let inv: Vec<f64> = svd.sigma.iter().map(|s| 1.0 / s).collect();
    let yvs = &y * scale_cols(&svd.v, &inv);
    let k = svd.u.adjoint() * &yvs;
    t.operator = start.elapsed();

    let start = Instant::now();
    let eig = general_eig_pairs(k.as_ref())?;
    let modes = &svd.u * &eig.right;
    let lhs = &yvs * &eig.right;
    let (residuals, residual_floors) = feature_residuals_plain(&lhs, &modes, &eig.lambdas);
    let raw = RawModes {
        lambdas: eig.lambdas.clone(),
        modes,
        eigenfunctions: CMat::zeros(pair.len(), 0),
        residuals,
        residual_floors,
        coefficients: CMat::zeros(pair.len(), 0),
        degenerate: eig.degenerate.clone(),
        defective: eig.defective,
    };
    let result = finish(raw, Vec::new(), Vec::new(), true, pair.is_real());
    t.modes = start.elapsed();
    Ok((result, t))
}

/// Extended DMD with observables `psi`.
///
/// Works in the coordinates of the truncated SVD `Psi_X = U Sigma V*`:
/// `K_r = Sigma^+ U* Psi_Y V` carries the nonzero spectrum of
/// `Psi_X^+ Psi_Y`. With right/left eigenvectors `v_i`, `w_i` of `K_r`,
/// `phi_i(X) = U Sigma v_i`, `xi_i = X U Sigma^+ w_i` and the residual is
/// `|Psi_Y* c_i - conj(lambda_i) Psi_X* c_i|` with `c_i = U Sigma^+ w_i`.
pub fn edmd(pair: &SnapshotPair, psi: &ObservableMap, rel_tol: f64) -> Result<DmdResult> {
    edmd_timed(pair, psi, rel_tol).map(|r| r.0)
}

pub fn edmd_timed(pair: &SnapshotPair, psi: &ObservableMap, rel_tol: f64) -> Result<(DmdResult, StageTimings)> {
    if psi.len(pair.dim()) == 0 {
        return Err(invalid("at least one observable is required"));
    }
    let mut t = StageTimings::default();
    let start = Instant::now();
    let (x, y) = (pair.x(), pair.y());
    let psi_x = psi.evaluate(x.as_ref())?;
    let psi_y = psi.evaluate(y.as_ref())?;
    t.observables = start.elapsed();

    let start = Instant::now();
    let svd = truncated_svd(psi_x.as_ref(), rel_tol)?;
    if svd.rank == 0 {
        return Ok((DmdResult::empty(pair.dim(), pair.len()), t));
    }
    let inv: Vec<f64> = svd.sigma.iter().map(|s| 1.0 / s).collect();
    let u_inv = scale_cols(&svd.u, &inv);
    let k = u_inv.adjoint() * (&psi_y * &svd.v);
    t.operator = start.elapsed();

    let start = Instant::now();
    let eig = general_eig_pairs(k.as_ref())?;
    let eigenfunctions = scale_cols(&svd.u, &svd.sigma) * &eig.right;
    let coefficients = &u_inv * &eig.left;
    let modes = &x * &coefficients;
    let ay = psi_y.adjoint() * &coefficients;
    let gx = psi_x.adjoint() * &coefficients;
    let (residuals, residual_floors) = feature_residuals(&ay, &gx, &eig.lambdas);
    let raw = RawModes {
        lambdas: eig.lambdas.clone(),
        modes,
        eigenfunctions,
        residuals,
        residual_floors,
        coefficients,
        degenerate: eig.degenerate.clone(),
        defective: eig.defective,
    };
    let result = finish(raw, Vec::new(), Vec::new(), true, pair.is_real());
    t.modes = start.elapsed();
    Ok((result, t))
}

/// Column norms of `a - b diag(s)` and their rounding floors.
fn residual_columns(a: &CMat, b: &CMat, s: impl Fn(usize) -> c64) -> (Vec<f64>, Vec<f64>) {
    (0..a.ncols())
        .map(|i| {
            let si = s(i);
            let col = |m: &CMat| (0..m.nrows()).map(|r| m[(r, i)].norm_sqr()).sum::<f64>().sqrt();
            let r = (0..a.nrows()).map(|r| (a[(r, i)] - si * b[(r, i)]).norm_sqr()).sum::<f64>().sqrt();
            let floor = RESIDUAL_NOISE_FACTOR * f64::EPSILON * (col(a) + si.norm() * col(b));
            (r, floor)
        })
        .unzip()
}

/// Column norms of `a - b diag(conj(lambda))` and their rounding floors.
pub(super) fn feature_residuals(a: &CMat, b: &CMat, lambdas: &[c64]) -> (Vec<f64>, Vec<f64>) {
    residual_columns(a, b, |i| lambdas[i].conj())
}

fn feature_residuals_plain(a: &CMat, b: &CMat, lambdas: &[c64]) -> (Vec<f64>, Vec<f64>) {
    residual_columns(a, b, |i| lambdas[i])
}
