use std::time::Instant;

use faer::Mat;

use super::linear::feature_residuals;
use super::{finish, DmdResult, FactorMethod, RawModes, SnapshotPair, StageTimings};
use crate::error::{invalid, Result};
use crate::kernels::{KernelOracle, KernelSpec};
use crate::lowrank::{greedy_pivoted_cholesky, oasis_nystrom, rpcholesky};
use crate::numerics::{
    gather_cols, gather_rows, general_eig_pairs, gram_rank, hermitian_eig, orthonormalize_tracked, CMat,
    DEFAULT_REL_TOL,
};

/// Settings for [`kdmd_randomized`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomizedConfig {
    /// Number of pivots `S`; clipped to the number of stored snapshots.
    pub samples: usize,
    pub seed: u64,
    pub rel_tol: f64,
    pub method: FactorMethod,
    /// Early-stopping threshold on the residual trace (0 runs all steps).
    pub stop_tol: f64,
    /// Force residual sorting on or off. By default oASIS results keep the
    /// computed order and everything else is sorted.
    pub sort: Option<bool>,
}

impl RandomizedConfig {
    pub fn new(samples: usize, method: FactorMethod) -> Self {
        Self { samples, seed: 0, rel_tol: DEFAULT_REL_TOL, method, stop_tol: 0.0, sort: None }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

fn check_rel_tol(rel_tol: f64) -> Result<()> {
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return Err(invalid(format!("rel_tol must lie in (0, 1), got {rel_tol}")));
    }
    Ok(())
}

fn scale_cols(a: &CMat, s: &[f64]) -> CMat {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * s[j])
}

fn recip(s: &[f64]) -> Vec<f64> {
    s.iter().map(|v| 1.0 / v).collect()
}

struct KernelModes {
    raw: RawModes,
}

/// Eigenpairs of `K^` and the quantities built from them, given `U`, `Sigma`.
fn kernel_modes(x: &CMat, u: &CMat, sigma: &[f64], khat: &CMat) -> Result<KernelModes> {
    let eig = general_eig_pairs(khat.as_ref())?;
    let eigenfunctions = scale_cols(u, sigma) * &eig.right;
    let coefficients = scale_cols(u, &recip(sigma)) * &eig.left;
    let modes = x * &coefficients;
    Ok(KernelModes {
        raw: RawModes {
            lambdas: eig.lambdas,
            modes,
            eigenfunctions,
            residuals: Vec::new(),
            residual_floors: Vec::new(),
            coefficients,
            degenerate: eig.degenerate,
            defective: eig.defective,
        },
    })
}

fn dense_gramians(oracle: &KernelOracle<'_>, pair: &SnapshotPair) -> Result<(CMat, CMat)> {
    let m = pair.len();
    if pair.is_sequential() {
        let full = oracle.full();
        let g = full.submatrix(0, 0, m, m).to_owned();
        let a = full.submatrix(1, 0, m, m).to_owned();
        Ok((g, a))
    } else {
        Ok((oracle.matrix(pair.x_cols(), pair.x_cols())?, oracle.matrix(pair.y_cols(), pair.x_cols())?))
    }
}

/// Kernel DMD on the full Gramians `G = k(X, X)` and `A` with
/// `A[i, j] = k(y_i, x_j)`.
///
/// From `G = U Sigma^2 U*` (truncated), `K^ = Sigma^+ U* A U Sigma^+`;
/// eigenfunctions `U Sigma V`, modes `X U Sigma^+ W` and residuals
/// `|A* c_i - conj(lambda_i) G c_i|` with `c_i = U Sigma^+ w_i`.
pub fn kdmd_exact(pair: &SnapshotPair, spec: &KernelSpec, rel_tol: f64) -> Result<DmdResult> {
    kdmd_exact_timed(pair, spec, rel_tol).map(|r| r.0)
}

pub fn kdmd_exact_timed(pair: &SnapshotPair, spec: &KernelSpec, rel_tol: f64) -> Result<(DmdResult, StageTimings)> {
    check_rel_tol(rel_tol)?;
    let mut t = StageTimings::default();
    let start = Instant::now();
    let oracle = KernelOracle::new(pair.store(), *spec)?;
    let (g, a) = dense_gramians(&oracle, pair)?;
    t.observables = start.elapsed();

    let start = Instant::now();
    let m = pair.len();
    let eig = hermitian_eig(g.as_ref())?;
    let r = gram_rank(&eig.values, rel_tol, m);
    if r == 0 {
        return Ok((DmdResult::empty(pair.dim(), m), t));
    }
    let u = eig.vectors.subcols(0, r).to_owned();
    let sigma: Vec<f64> = eig.values[..r].iter().map(|v| v.sqrt()).collect();
    let us = scale_cols(&u, &recip(&sigma));
    let khat = us.adjoint() * &a * &us;
    t.operator = start.elapsed();

    let start = Instant::now();
    let mut km = kernel_modes(&pair.x(), &u, &sigma, &khat)?;
    let c = &km.raw.coefficients;
    (km.raw.residuals, km.raw.residual_floors) = feature_residuals(&(a.adjoint() * c), &(&g * c), &km.raw.lambdas);
    let result = finish(km.raw, Vec::new(), Vec::new(), true, pair.is_real());
    t.modes = start.elapsed();
    Ok((result, t))
}

/// The factor produced by one of the column-sampling methods on `k(D, D)`.
struct Factorization {
    factor: CMat,
    columns: CMat,
    pivots: Vec<usize>,
}

fn factorize(
    oracle: &KernelOracle<'_>,
    method: FactorMethod,
    samples: usize,
    seed: u64,
    stop_tol: f64,
) -> Result<Factorization> {
    match method {
        FactorMethod::RpCholesky | FactorMethod::Greedy => {
            let f = if method == FactorMethod::RpCholesky {
                rpcholesky(oracle, samples, seed, stop_tol)?
            } else {
                greedy_pivoted_cholesky(oracle, samples, stop_tol)?
            };
            Ok(Factorization { factor: f.factor, columns: f.columns, pivots: f.pivots })
        }
        FactorMethod::Oasis => {
            let n = oasis_nystrom(oracle, samples, stop_tol)?;
            Ok(Factorization { factor: n.factor()?, columns: n.columns, pivots: n.pivots })
        }
    }
}

/// Row slices of a single factorization of `k(D, D)` for a trajectory `D`.
#[derive(Debug, Clone)]
pub struct SplitFactor {
    /// Rows `0..M`: `G ~ F_X F_X*`.
    pub f_x: CMat,
    /// Rows `1..M+1`: `A ~ F_Y F_X*`.
    pub f_y: CMat,
    pub pivots: Vec<usize>,
    /// Kernel evaluations spent.
    pub evaluations: u64,
}

/// Factors `k(D, D)` once and slices the factor into the parts that
/// approximate `G = k(X, X)` and `A`.
pub fn sequential_factor_split(
    d: &CMat,
    spec: &KernelSpec,
    samples: usize,
    seed: u64,
    method: FactorMethod,
) -> Result<SplitFactor> {
    if d.ncols() < 2 {
        return Err(invalid("a trajectory needs at least two snapshots"));
    }
    let oracle = KernelOracle::new(d, *spec)?;
    let f = factorize(&oracle, method, samples, seed, 0.0)?;
    let m = d.ncols() - 1;
    Ok(SplitFactor {
        f_x: f.factor.subrows(0, m).to_owned(),
        f_y: f.factor.subrows(1, m).to_owned(),
        pivots: f.pivots,
        evaluations: oracle.evaluations(),
    })
}

/// Kernel DMD on a low-rank factor of `k(D, D)` over all stored snapshots.
///
/// With `F_X`, `F_Y` the factor rows of the `X` and `Y` snapshots,
/// `F_X* F_X = U^ Sigma^2 U^*`, `U = orth(F_X U^)` and
/// `K^ = Sigma^+ (U* F_Y)(F_X* U) Sigma^+`. Residuals use only the stored
/// pivot columns: `|A[:, I]* c_i - conj(lambda_i) G[:, I]* c_i|`, where `I`
/// are the pivots that are `X` snapshots.
pub fn kdmd_randomized(pair: &SnapshotPair, spec: &KernelSpec, config: &RandomizedConfig) -> Result<DmdResult> {
    kdmd_randomized_timed(pair, spec, config).map(|r| r.0)
}

pub fn kdmd_randomized_timed(
    pair: &SnapshotPair,
    spec: &KernelSpec,
    config: &RandomizedConfig,
) -> Result<(DmdResult, StageTimings)> {
    check_rel_tol(config.rel_tol)?;
    if config.samples == 0 {
        return Err(invalid("sample count must be at least 1"));
    }
    let mut warnings = Vec::new();
    let stored = pair.store().ncols();
    if config.samples > stored {
        warnings.push(format!("samples clipped from {} to {stored}", config.samples));
    }
    let mut t = StageTimings::default();
    let start = Instant::now();
    let oracle = KernelOracle::new(pair.store(), *spec)?;
    let f = factorize(&oracle, config.method, config.samples.min(stored), config.seed, config.stop_tol)?;
    let f_x = gather_rows(f.factor.as_ref(), pair.x_cols());
    let f_y = gather_rows(f.factor.as_ref(), pair.y_cols());
    t.observables = start.elapsed();

    let start = Instant::now();
    let m = pair.len();
    let h = f_x.adjoint() * &f_x;
    let eig = hermitian_eig(h.as_ref())?;
    let r = gram_rank(&eig.values, config.rel_tol, m);
    let b = &f_x * eig.vectors.subcols(0, r);
    let (u, kept) = orthonormalize_tracked(b.as_ref());
    if u.ncols() == 0 {
        let mut empty = DmdResult::empty(pair.dim(), m);
        empty.pivots = f.pivots;
        empty.warnings = warnings;
        return Ok((empty, t));
    }
    let sigma: Vec<f64> = kept.iter().map(|&k| eig.values[k].sqrt()).collect();
    let inv = recip(&sigma);
    let left = scale_cols(&(f_y.adjoint() * &u), &inv).adjoint().to_owned();
    let right = scale_cols(&(f_x.adjoint() * &u), &inv);
    let khat = &left * &right;
    t.operator = start.elapsed();

    let start = Instant::now();
    let mut km = kernel_modes(&pair.x(), &u, &sigma, &khat)?;
    let coef = &km.raw.coefficients;

    let mut x_pos = vec![usize::MAX; stored];
    for (i, &p) in pair.x_cols().iter().enumerate() {
        x_pos[p] = i;
    }
    let usable: Vec<usize> = (0..f.pivots.len()).filter(|&l| x_pos[f.pivots[l]] != usize::MAX).collect();
    (km.raw.residuals, km.raw.residual_floors) = if usable.is_empty() {
        warnings.push("no pivot is an X snapshot; residuals use the factor instead of stored columns".into());
        let a_c = &f_x * (f_y.adjoint() * coef);
        let g_c = &f_x * (f_x.adjoint() * coef);
        feature_residuals(&a_c, &g_c, &km.raw.lambdas)
    } else {
        let cols = gather_cols(f.columns.as_ref(), &usable);
        let g_i = gather_rows(cols.as_ref(), pair.x_cols());
        let a_i = gather_rows(cols.as_ref(), pair.y_cols());
        feature_residuals(&(a_i.adjoint() * coef), &(g_i.adjoint() * coef), &km.raw.lambdas)
    };
    let sort = config.sort.unwrap_or(config.method != FactorMethod::Oasis);
    let result = finish(km.raw, f.pivots, warnings, sort, pair.is_real());
    t.modes = start.elapsed();
    Ok((result, t))
}

/// Full-Gramian residuals `|A* c_i - conj(lambda_i) G c_i|` for the
/// coefficient vectors stored in `result`.
pub fn dense_residuals(pair: &SnapshotPair, spec: &KernelSpec, result: &DmdResult) -> Result<Vec<f64>> {
    if result.coefficients.ncols() != result.rank() || result.coefficients.nrows() != pair.len() {
        return Err(invalid("result carries no kernel coefficients for this data"));
    }
    let oracle = KernelOracle::new(pair.store(), *spec)?;
    let (g, a) = dense_gramians(&oracle, pair)?;
    let c = &result.coefficients;
    Ok(feature_residuals(&(a.adjoint() * c), &(&g * c), &result.lambdas).0)
}

#[cfg(test)]
mod tests {
    use faer::c64;

    use super::*;
    use crate::datasets::duffing_generate;
    use crate::datasets::synthetic::{gaussian_matrix, linear_trajectory, seeded_rng, tanh_map_trajectory};
    use crate::dmd::{edmd, svd_dmd, ObservableMap};

    fn c(re: f64) -> c64 {
        c64::new(re, 0.0)
    }

    fn poly2() -> KernelSpec {
        KernelSpec::Polynomial { degree: 2, offset: 1.0 }
    }

    /// Feature map of `(1 + <x, y>)^2` on the plane.
    fn monomials() -> ObservableMap {
        let r2 = std::f64::consts::SQRT_2;
        ObservableMap::explicit(6, move |x| {
            vec![c(1.0), x[0] * r2, x[1] * r2, x[0] * x[0], x[0] * x[1] * r2, x[1] * x[1]]
        })
    }

    fn linear_pair(n: usize, steps: usize, seed: u64) -> SnapshotPair {
        let mut rng = seeded_rng(seed);
        let a = gaussian_matrix(n, n, &mut rng) * faer::Scale(c(0.9 / (n as f64).sqrt()));
        let d = linear_trajectory(a.as_ref(), gaussian_matrix(n, 1, &mut rng).as_ref(), steps);
        SnapshotPair::from_trajectory(d).unwrap()
    }

    fn duffing_pair(steps: usize) -> SnapshotPair {
        SnapshotPair::from_trajectory(duffing_generate(1, steps, 0.25, 3).unwrap().data).unwrap()
    }

    fn assert_same_nonzero(a: &[c64], b: &[c64], tol: f64) {
        let top = a.iter().chain(b).map(|l| l.norm()).fold(0.0, f64::max);
        let nonzero = |v: &[c64]| v.iter().copied().filter(|l| l.norm() > 1e-10 * top).collect::<Vec<_>>();
        let (a, b) = (nonzero(a), nonzero(b));
        assert_eq!(a.len(), b.len(), "{a:?} vs {b:?}");
        for l in &a {
            let d = b.iter().map(|m| (l - m).norm()).fold(f64::INFINITY, f64::min);
            assert!(d <= tol * l.norm().max(1.0), "{l:?} unmatched by {d:e}");
        }
    }

    /// Two damped rotations seen through a random change of basis, so the
    /// snapshots stay well conditioned.
    fn rotation_pair(steps: usize, seed: u64) -> SnapshotPair {
        let mut rng = seeded_rng(seed);
        let mut block = CMat::zeros(4, 4);
        for (b, (r, t)) in [(0.99f64, 0.4f64), (0.97, 1.1)].into_iter().enumerate() {
            let (s, co) = t.sin_cos();
            block[(2 * b, 2 * b)] = c(r * co);
            block[(2 * b, 2 * b + 1)] = c(-r * s);
            block[(2 * b + 1, 2 * b)] = c(r * s);
            block[(2 * b + 1, 2 * b + 1)] = c(r * co);
        }
        let basis = gaussian_matrix(4, 4, &mut rng);
        let a = &basis * &block * faer::linalg::solvers::DenseSolveCore::inverse(&basis.partial_piv_lu());
        let d = linear_trajectory(a.as_ref(), gaussian_matrix(4, 1, &mut rng).as_ref(), steps);
        SnapshotPair::from_trajectory(d).unwrap()
    }

    #[test]
    fn linear_kernel_reproduces_svd_dmd() {
        let pair = rotation_pair(30, 11);
        let k = kdmd_exact(&pair, &KernelSpec::Linear, 1e-10).unwrap();
        let s = svd_dmd(&pair, 1e-10).unwrap();
        assert_same_nonzero(&k.lambdas, &s.lambdas, 1e-8);
    }

    #[test]
    fn polynomial_kernel_matches_monomial_features() {
        let pair = duffing_pair(50);
        let k = kdmd_exact(&pair, &poly2(), 1e-10).unwrap();
        let e = edmd(&pair, &monomials(), 1e-10).unwrap();
        assert_eq!(k.rank(), 6);
        assert_same_nonzero(&k.lambdas, &e.lambdas, 1e-8);
        assert_same_nonzero(&e.lambdas, &k.lambdas, 1e-8);
    }

    #[test]
    fn constant_data_has_unit_eigenvalue() {
        let d = CMat::from_fn(3, 12, |i, _| c([0.3, -1.0, 2.0][i]));
        let pair = SnapshotPair::from_trajectory(d).unwrap();
        let spec = KernelSpec::default();
        let mut results = vec![kdmd_exact(&pair, &spec, 1e-10).unwrap()];
        for method in [FactorMethod::RpCholesky, FactorMethod::Greedy, FactorMethod::Oasis] {
            for seed in 0..3 {
                results.push(kdmd_randomized(&pair, &spec, &RandomizedConfig::new(5, method).seed(seed)).unwrap());
            }
        }
        for r in results {
            assert_eq!(r.rank(), 1);
            assert!((r.lambdas[0] - c(1.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn enough_samples_reproduce_exact_eigenvalues() {
        let pair = linear_pair(4, 40, 12);
        let exact = kdmd_exact(&pair, &KernelSpec::Linear, 1e-10).unwrap();
        assert_eq!(exact.rank(), 4);
        for method in [FactorMethod::RpCholesky, FactorMethod::Greedy, FactorMethod::Oasis] {
            for s in [4, 10] {
                let r = kdmd_randomized(&pair, &KernelSpec::Linear, &RandomizedConfig::new(s, method).seed(s as u64))
                    .unwrap();
                assert_same_nonzero(&r.lambdas, &exact.lambdas, 1e-8);
                assert_same_nonzero(&exact.lambdas, &r.lambdas, 1e-8);
            }
        }
    }

    #[test]
    fn split_slices_rebuild_both_gramians() {
        let pair = duffing_pair(30);
        let d = pair.store().clone();
        let oracle = KernelOracle::new(&d, poly2()).unwrap();
        let (g, a) = dense_gramians(&oracle, &pair).unwrap();
        for method in [FactorMethod::RpCholesky, FactorMethod::Greedy, FactorMethod::Oasis] {
            let f = sequential_factor_split(&d, &poly2(), 6, 1, method).unwrap();
            assert_eq!((f.f_x.nrows(), f.f_x.ncols()), (29, 6));
            assert_eq!((f.f_y.nrows(), f.f_y.ncols()), (29, 6));
            let mut p = f.pivots.clone();
            p.sort_unstable();
            p.dedup();
            assert_eq!(p.len(), f.pivots.len());
            assert!(p.iter().all(|&i| i < 30));
            let g_err = (&f.f_x * f.f_x.adjoint() - &g).norm_l2() / g.norm_l2();
            let a_err = (&f.f_y * f.f_x.adjoint() - &a).norm_l2() / a.norm_l2();
            assert!(g_err < 1e-8 && a_err < 1e-8, "{method:?}: {g_err:e} {a_err:e}");
            assert!(f.evaluations <= 6 * 30 + 30);
        }
    }

    #[test]
    fn split_orientation_follows_the_dense_cross_gramian() {
        let d = tanh_map_trajectory(3, 10, 1.5, 4);
        let pair = SnapshotPair::from_trajectory(d.clone()).unwrap();
        let spec = KernelSpec::default();
        let oracle = KernelOracle::new(&d, spec).unwrap();
        let (_, a) = dense_gramians(&oracle, &pair).unwrap();
        let f = sequential_factor_split(&d, &spec, 10, 0, FactorMethod::Greedy).unwrap();
        let chosen = (&f.f_y * f.f_x.adjoint() - &a).norm_l2();
        let swapped = (&f.f_x * f.f_y.adjoint() - &a).norm_l2();
        assert!(chosen < 1e-8 * a.norm_l2() && swapped > 1e-3 * a.norm_l2(), "{chosen:e} {swapped:e}");
    }

    #[test]
    fn residuals_agree_with_explicit_features() {
        let pair = duffing_pair(60);
        let r = kdmd_exact(&pair, &poly2(), 0.1).unwrap();
        assert_eq!(r.rank(), 4);
        let psi = monomials();
        let psi_x = psi.evaluate(pair.x().as_ref()).unwrap();
        let psi_y = psi.evaluate(pair.y().as_ref()).unwrap();
        let u = &r.coefficients;
        let inner_y = psi_y.adjoint() * u;
        let inner_x = psi_x.adjoint() * u;
        let mut largest = 0.0f64;
        for i in 0..r.rank() {
            let lc = r.lambdas[i].conj();
            let v = CMat::from_fn(6, 1, |k, _| inner_y[(k, i)] - lc * inner_x[(k, i)]);
            let brute = (&psi_x * &v).norm_l2();
            largest = largest.max(brute);
            assert!((brute - r.residuals[i]).abs() <= 1e-10 * brute.max(1.0), "{brute:e} vs {:e}", r.residuals[i]);
        }
        assert!(largest > 1e-6);
    }

    #[test]
    fn all_pivots_reduce_column_residuals_to_full_ones() {
        let pair = SnapshotPair::from_trajectory(tanh_map_trajectory(10, 41, 2.0, 1)).unwrap();
        let spec = KernelSpec::default();
        let mut cfg = RandomizedConfig::new(41, FactorMethod::RpCholesky);
        cfg.rel_tol = 1e-2;
        let r = kdmd_randomized(&pair, &spec, &cfg).unwrap();
        assert_eq!(r.pivots.len(), 41);
        assert!(r.rank() < 40);
        let full = dense_residuals(&pair, &spec, &r).unwrap();
        assert!(full.iter().any(|&v| v > 1e-4));
        for (a, b) in r.residuals.iter().zip(&full) {
            assert!((a - b).abs() <= 1e-8 * b.max(1.0));
        }
    }

    #[test]
    fn oasis_keeps_computed_order_unless_told() {
        let pair = SnapshotPair::from_trajectory(tanh_map_trajectory(4, 30, 1.5, 2)).unwrap();
        let spec = KernelSpec::default();
        let r = kdmd_randomized(&pair, &spec, &RandomizedConfig::new(12, FactorMethod::Oasis)).unwrap();
        assert!(!r.sorted);
        assert_eq!(r.order, (0..r.rank()).collect::<Vec<_>>());
        let mut cfg = RandomizedConfig::new(12, FactorMethod::Oasis);
        cfg.sort = Some(true);
        let s = kdmd_randomized(&pair, &spec, &cfg).unwrap();
        assert!(s.sorted);
        let keys = s.sort_keys();
        let groups = crate::dmd::conjugate_groups(&s.lambdas, true);
        let mins: Vec<f64> = groups.iter().map(|g| g.iter().map(|&i| keys[i]).fold(f64::INFINITY, f64::min)).collect();
        assert!(mins.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn oversized_sample_counts_are_clipped() {
        let pair = duffing_pair(8);
        let r =
            kdmd_randomized(&pair, &KernelSpec::default(), &RandomizedConfig::new(50, FactorMethod::Greedy)).unwrap();
        assert!(r.pivots.len() <= 8);
        assert!(r.warnings.iter().any(|w| w.contains("clipped")));
        assert!(
            kdmd_randomized(&pair, &KernelSpec::default(), &RandomizedConfig::new(0, FactorMethod::Greedy)).is_err()
        );
        assert!(kdmd_exact(&pair, &KernelSpec::default(), 0.0).is_err());
    }
}
