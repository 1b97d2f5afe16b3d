//! Benchmark data: the damped Duffing oscillator, row tiling, synthetic test
//! problems and matrix persistence.

pub mod io;
pub mod synthetic;

use faer::{c64, Mat, MatRef};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::numerics::CMat;

pub use io::{load_csv, load_matrix, read_matrix, save_csv, save_matrix, write_matrix};

/// Default time between stored Duffing snapshots.
pub const DEFAULT_DT: f64 = 0.25;

/// Runge-Kutta steps taken between two stored snapshots.
pub const DEFAULT_SUBSTEPS: usize = 10;

/// Several trajectories stored side by side, one snapshot per column.
#[derive(Debug, Clone)]
pub struct TrajectoryBatch {
    pub data: CMat,
    /// Snapshots per trajectory, including the initial state.
    pub trajectory_length: usize,
    pub initial_count: usize,
    pub dt: f64,
}

impl TrajectoryBatch {
    /// Column ranges `[start, end)` of each trajectory.
    pub fn boundaries(&self) -> Vec<(usize, usize)> {
        (0..self.initial_count).map(|i| (i * self.trajectory_length, (i + 1) * self.trajectory_length)).collect()
    }
}

/// Vector field of `x'' = -x'/2 - x(x^2 - 1)` written as a first-order system.
pub fn duffing_rhs(s: [f64; 2]) -> [f64; 2] {
    let [x, v] = s;
    [v, -0.5 * v - x * (-1.0 + x * x)]
}

/// One classical Runge-Kutta step.
pub fn rk4_step<const N: usize>(f: impl Fn([f64; N]) -> [f64; N], s: [f64; N], dt: f64) -> [f64; N] {
    let axpy = |a: [f64; N], h: f64, b: [f64; N]| std::array::from_fn(|i| a[i] + h * b[i]);
    let k1 = f(s);
    let k2 = f(axpy(s, 0.5 * dt, k1));
    let k3 = f(axpy(s, 0.5 * dt, k2));
    let k4 = f(axpy(s, dt, k3));
    std::array::from_fn(|i| s[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
}

/// `steps` states of the Duffing oscillator starting at `x0` (included).
pub fn duffing_trajectory(x0: [f64; 2], steps: usize, dt: f64) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(steps);
    let mut s = x0;
    for k in 0..steps {
        if k > 0 {
            s = rk4_step(duffing_rhs, s, dt);
        }
        out.push(s);
    }
    out
}

/// `steps` states `dt` apart, each interval covered by `substeps` RK4 steps.
pub fn duffing_sampled(x0: [f64; 2], steps: usize, dt: f64, substeps: usize) -> Vec<[f64; 2]> {
    let h = dt / substeps.max(1) as f64;
    let mut out = Vec::with_capacity(steps);
    let mut s = x0;
    for k in 0..steps {
        if k > 0 {
            for _ in 0..substeps.max(1) {
                s = rk4_step(duffing_rhs, s, h);
            }
        }
        out.push(s);
    }
    out
}

/// Duffing trajectories from initial states drawn uniformly on `[-2, 2]^2`,
/// sampled every `dt` and integrated with [`DEFAULT_SUBSTEPS`] RK4 steps per
/// sample.
///
/// Trajectory `i` draws its initial state from stream `i` of a generator
/// seeded with `seed`, so the result does not depend on generation order.
pub fn duffing_generate(initial_count: usize, steps: usize, dt: f64, seed: u64) -> Result<TrajectoryBatch> {
    if initial_count == 0 {
        return Err(invalid("initial_count must be at least 1"));
    }
    if steps < 2 {
        return Err(invalid("steps must be at least 2"));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid(format!("dt must be positive, got {dt}")));
    }
    let mut data = CMat::zeros(2, initial_count * steps);
    for i in 0..initial_count {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let x0 = [rng.random_range(-2.0..=2.0), rng.random_range(-2.0..=2.0)];
        for (k, s) in duffing_sampled(x0, steps, dt, DEFAULT_SUBSTEPS).into_iter().enumerate() {
            data[(0, i * steps + k)] = c64::new(s[0], 0.0);
            data[(1, i * steps + k)] = c64::new(s[1], 0.0);
        }
    }
    Ok(TrajectoryBatch { data, trajectory_length: steps, initial_count, dt })
}

/// Stacks copies of the state block until the matrix has `target_rows` rows,
/// cutting the last copy short if needed.
pub fn tile_rows(data: MatRef<'_, c64>, target_rows: usize) -> Result<CMat> {
    let n = data.nrows();
    if n == 0 || target_rows < n {
        return Err(invalid(format!("target_rows ({target_rows}) must be at least the state dimension ({n})")));
    }
    Ok(Mat::from_fn(target_rows, data.ncols(), |i, j| data[(i % n, j)]))
}
