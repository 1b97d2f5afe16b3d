//! Seeded synthetic problems for tests, benchmarks and examples.

use faer::{c64, Mat, MatRef};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::numerics::CMat;

/// Generator used by every seeded routine in the crate.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Real matrix with i.i.d. standard normal entries.
pub fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> CMat {
    let mut m = CMat::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            m[(i, j)] = c64::new(StandardNormal.sample(rng), 0.0);
        }
    }
    m
}

/// Real matrix with i.i.d. entries uniform on `[lo, hi)`.
pub fn uniform_matrix(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> CMat {
    let dist = Uniform::new(lo, hi).expect("valid uniform range");
    let mut m = CMat::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            m[(i, j)] = c64::new(dist.sample(rng), 0.0);
        }
    }
    m
}

/// `B B*` for a Gaussian `m x rank` factor `B`.
pub fn random_psd(m: usize, rank: usize, rng: &mut ChaCha8Rng) -> CMat {
    let b = gaussian_matrix(m, rank, rng);
    &b * b.adjoint()
}

/// Snapshots `x0, A x0, A^2 x0, ...` (`steps` columns).
pub fn linear_trajectory(a: MatRef<'_, c64>, x0: MatRef<'_, c64>, steps: usize) -> CMat {
    let n = a.nrows();
    let mut out = CMat::zeros(n, steps);
    let mut x = x0.to_owned();
    for k in 0..steps {
        out.col_mut(k).copy_from(x.col(0));
        x = a * &x;
    }
    out
}

/// Trajectory of the map `x -> tanh(W x)` with `W` Gaussian scaled by
/// `gain / sqrt(n)`. For gains above one the orbit stays irregular, which
/// gives well-conditioned kernel matrices at any length.
pub fn tanh_map_trajectory(n: usize, steps: usize, gain: f64, seed: u64) -> CMat {
    let mut rng = seeded_rng(seed);
    let w = gaussian_matrix(n, n, &mut rng) * faer::Scale(c64::new(gain / (n as f64).sqrt(), 0.0));
    let x0 = gaussian_matrix(n, 1, &mut rng);
    let mut out = CMat::zeros(n, steps);
    let mut x = x0;
    for k in 0..steps {
        out.col_mut(k).copy_from(x.col(0));
        let wx = &w * &x;
        x = Mat::from_fn(n, 1, |i, _| c64::new(wx[(i, 0)].re.tanh(), 0.0));
    }
    out
}
