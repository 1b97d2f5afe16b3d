use faer::{c64, Scale};
use proptest::prelude::*;

use rkdmd::datasets::synthetic::{gaussian_matrix, linear_trajectory, random_psd, seeded_rng, tanh_map_trajectory};
use rkdmd::datasets::{duffing_generate, read_matrix, write_matrix};
use rkdmd::dmd::{
    kdmd_exact, kdmd_randomized, reconstruct, svd_dmd, DmdResult, FactorMethod, RandomizedConfig, SnapshotPair,
};
use rkdmd::kernels::{DenseOracle, KernelSpec};
use rkdmd::lowrank::{greedy_pivoted_cholesky, rpcholesky};
use rkdmd::numerics::{truncated_svd, DEFAULT_REL_TOL};
use rkdmd::{CMat, Error};

fn method(k: u8) -> FactorMethod {
    [FactorMethod::RpCholesky, FactorMethod::Greedy, FactorMethod::Oasis][k as usize % 3]
}

/// Conjugate partners sit next to each other, positive imaginary part first.
fn pairs_adjacent(r: &DmdResult) -> bool {
    let l = &r.lambdas;
    let top = l.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
    let mut k = 0;
    while k < l.len() {
        if l[k].im.abs() <= 1e-9 * top {
            k += 1;
        } else if k + 1 < l.len() && l[k].im > 0.0 && (l[k + 1] - l[k].conj()).norm() <= 1e-8 * top {
            k += 2;
        } else {
            return false;
        }
    }
    true
}

fn group_keys_ascend(r: &DmdResult) -> bool {
    let keys = r.sort_keys();
    let mut mins = Vec::new();
    let mut k = 0;
    while k < keys.len() {
        let pair = r.lambdas[k].im > 0.0 && k + 1 < keys.len();
        mins.push(if pair { keys[k].min(keys[k + 1]) } else { keys[k] });
        k += if pair { 2 } else { 1 };
    }
    mins.windows(2).all(|w| w[0] <= w[1])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn svd_factors_are_orthonormal(seed in 0u64..1000, rows in 1usize..12, cols in 1usize..12) {
        let a = gaussian_matrix(rows, cols, &mut seeded_rng(seed));
        let s = truncated_svd(a.as_ref(), DEFAULT_REL_TOL).unwrap();
        let r = s.sigma.len();
        let eye = CMat::identity(r, r);
        prop_assert!((s.u.adjoint() * &s.u - &eye).norm_max() <= 1e-10);
        prop_assert!((s.v.adjoint() * &s.v - &eye).norm_max() <= 1e-10);
        prop_assert!(s.sigma.windows(2).all(|w| w[0] >= w[1] && w[1] >= 0.0));
    }

    #[test]
    fn sorted_results_keep_pairs_and_order(seed in 0u64..500, n in 2usize..6, k in 0u8..3, samples in 4usize..20) {
        let pair = SnapshotPair::from_trajectory(tanh_map_trajectory(n, 25, 1.5, seed)).unwrap();
        let spec = KernelSpec::default();
        let mut cfg = RandomizedConfig::new(samples, method(k)).seed(seed);
        cfg.sort = Some(true);
        let mut results = vec![kdmd_exact(&pair, &spec, DEFAULT_REL_TOL).unwrap()];
        match kdmd_randomized(&pair, &spec, &cfg) {
            Ok(r) => results.push(r),
            // oASIS may lose positivity of its Schur complement
            Err(Error::Breakdown { .. }) if cfg.method == FactorMethod::Oasis => {}
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        }
        for r in results {
            prop_assert!(r.sorted);
            prop_assert!(pairs_adjacent(&r));
            prop_assert!(group_keys_ascend(&r));
            let mut order = r.order.clone();
            order.sort_unstable();
            prop_assert_eq!(order, (0..r.rank()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn real_data_reconstructs_to_real_matrices(seed in 0u64..500, n in 2usize..6) {
        let pair = SnapshotPair::from_trajectory(tanh_map_trajectory(n, 30, 1.5, seed)).unwrap();
        let r = kdmd_exact(&pair, &KernelSpec::default(), DEFAULT_REL_TOL).unwrap();
        let xhat = reconstruct(&r, r.rank()).unwrap();
        let imag = CMat::from_fn(xhat.nrows(), xhat.ncols(), |i, j| c64::new(xhat[(i, j)].im, 0.0));
        prop_assert!(imag.norm_l2() <= 1e-8 * xhat.norm_l2().max(1e-300));
    }

    #[test]
    fn full_rank_samples_match_exact(seed in 0u64..500, rank in 2usize..5, greedy in any::<bool>()) {
        let mut rng = seeded_rng(seed);
        let a = gaussian_matrix(rank, rank, &mut rng);
        let a = &a * Scale(c64::new(0.8 / (rank as f64).sqrt(), 0.0));
        let d = linear_trajectory(a.as_ref(), gaussian_matrix(rank, 1, &mut rng).as_ref(), 3 * rank + 4);
        let pair = SnapshotPair::from_trajectory(d).unwrap();
        let exact = kdmd_exact(&pair, &KernelSpec::Linear, DEFAULT_REL_TOL).unwrap();
        prop_assume!(exact.rank() == rank);
        let m = if greedy { FactorMethod::Greedy } else { FactorMethod::RpCholesky };
        let r = kdmd_randomized(&pair, &KernelSpec::Linear, &RandomizedConfig::new(rank, m).seed(seed)).unwrap();
        prop_assert_eq!(r.rank(), rank);
        let top = exact.lambdas.iter().map(|l| l.norm()).fold(0.0, f64::max).max(1.0);
        for l in &exact.lambdas {
            let d = r.lambdas.iter().map(|m| (l - m).norm()).fold(f64::INFINITY, f64::min);
            prop_assert!(d <= 1e-8 * top, "{:?} off by {:e}", l, d);
        }
    }

    #[test]
    fn factors_are_deterministic_and_exact(seed in 0u64..500, rank in 1usize..8) {
        let g = random_psd(30, rank, &mut seeded_rng(seed));
        let oracle = DenseOracle(g.as_ref());
        let trace: f64 = (0..30).map(|i| g[(i, i)].re).sum();
        let a = rpcholesky(&oracle, rank, seed, 0.0).unwrap();
        let b = rpcholesky(&oracle, rank, seed, 0.0).unwrap();
        prop_assert_eq!(&a.pivots, &b.pivots);
        prop_assert!(a.factor == b.factor);
        for f in [a, greedy_pivoted_cholesky(&oracle, rank, 0.0).unwrap()] {
            prop_assert!(f.pivots.iter().all(|&p| f.residual_diag[p] == 0.0));
            prop_assert!((&g - f.approximant()).norm_l2() <= 1e-8 * trace);
        }
    }

    #[test]
    fn matrix_files_round_trip(seed in 0u64..1000, rows in 0usize..6, cols in 0usize..6) {
        let m = gaussian_matrix(rows, cols, &mut seeded_rng(seed));
        let m = CMat::from_fn(rows, cols, |i, j| m[(i, j)] * c64::new(1.0, (i + j) as f64 * 0.5));
        let mut buf = Vec::new();
        write_matrix(m.as_ref(), &mut buf).unwrap();
        prop_assert!(read_matrix(buf.as_slice()).unwrap() == m);
    }

    #[test]
    fn duffing_batches_are_seeded(seed in 0u64..1000) {
        let a = duffing_generate(3, 4, 0.25, seed).unwrap();
        let b = duffing_generate(3, 4, 0.25, seed).unwrap();
        let c = duffing_generate(3, 4, 0.25, seed + 1).unwrap();
        prop_assert!(a.data == b.data);
        prop_assert!(a.data != c.data);
    }
}

#[test]
fn svd_dmd_recovers_excited_eigenvalues() {
    for seed in 0..5 {
        let mut rng = seeded_rng(seed);
        let a = gaussian_matrix(5, 5, &mut rng);
        let a = &a * Scale(c64::new(0.4, 0.0));
        let d = linear_trajectory(a.as_ref(), gaussian_matrix(5, 1, &mut rng).as_ref(), 20);
        let r = svd_dmd(&SnapshotPair::from_trajectory(d).unwrap(), DEFAULT_REL_TOL).unwrap();
        let truth = rkdmd::numerics::general_eig_pairs(a.as_ref()).unwrap().lambdas;
        for l in &truth {
            let d = r.lambdas.iter().map(|m| (l - m).norm()).fold(f64::INFINITY, f64::min);
            assert!(d <= 1e-8, "seed {seed}: {l:?} off by {d:e}");
        }
    }
}
