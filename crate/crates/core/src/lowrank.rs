//! Column-sampling low-rank approximations of PSD matrices: randomly pivoted
//! Cholesky, greedy diagonally pivoted Cholesky and oASIS Nyström.
//!
//! All three touch the matrix only through a [`PsdOracle`]: one pass over the
//! diagonal plus one column per step.

use faer::{c64, Mat, MatRef};
use rand_distr::{weighted::WeightedIndex, Distribution};
use serde::{Deserialize, Serialize};

use crate::datasets::synthetic::seeded_rng;
use crate::error::{invalid, Error, Result};
use crate::kernels::PsdOracle;
use crate::numerics::{hermitian_eig, CMat};

/// Residual diagonal entries at or below `EXHAUSTED * trace` count as zero.
const EXHAUSTED: f64 = 1e-14;

/// Partial Cholesky factor `G ~ F F*`.
#[derive(Debug, Clone)]
pub struct PartialFactor {
    /// `M x S`; column `k` was added at step `k`.
    pub factor: CMat,
    pub pivots: Vec<usize>,
    /// Diagonal of `G - F F*`, clamped at zero.
    pub residual_diag: Vec<f64>,
    pub source_trace: f64,
    /// Residual trace before the first step and after every step.
    pub trace_history: Vec<f64>,
    /// Raw columns `G[:, pivots]`.
    pub columns: CMat,
}

impl PartialFactor {
    pub fn rank(&self) -> usize {
        self.pivots.len()
    }

    pub fn residual_trace(&self) -> f64 {
        self.residual_diag.iter().sum()
    }

    pub fn approximant(&self) -> CMat {
        &self.factor * self.factor.adjoint()
    }
}

/// Which factorization produces the pivots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorMethod {
    #[serde(rename = "rpcholesky")]
    RpCholesky,
    Greedy,
    Oasis,
}

enum Rule {
    Sampled(Box<rand_chacha::ChaCha8Rng>),
    Greedy,
}

fn argmax_smallest_index(d: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in d.iter().enumerate() {
        if best.is_none_or(|b| v > d[b]) {
            best = Some(i);
        }
    }
    best
}

fn check_request(samples: usize, stop_tol: f64) -> Result<()> {
    if samples == 0 {
        return Err(invalid("sample count must be at least 1"));
    }
    if !(stop_tol >= 0.0 && stop_tol.is_finite()) {
        return Err(invalid(format!("stop_tol must be nonnegative, got {stop_tol}")));
    }
    Ok(())
}

fn pivoted_cholesky(oracle: &dyn PsdOracle, samples: usize, stop_tol: f64, mut rule: Rule) -> Result<PartialFactor> {
    check_request(samples, stop_tol)?;
    let m = oracle.size();
    let mut d: Vec<f64> = oracle.diagonal().into_iter().map(|v| v.max(0.0)).collect();
    let trace: f64 = d.iter().sum();
    let floor = EXHAUSTED * trace;
    let mut f_cols: Vec<Vec<c64>> = Vec::new();
    let mut raw_cols: Vec<Vec<c64>> = Vec::new();
    let mut pivots = Vec::new();
    let mut history = vec![trace];
    let samples = samples.min(m);

    while pivots.len() < samples {
        let mass: f64 = d.iter().sum();
        if mass <= 0.0 || (stop_tol > 0.0 && mass <= stop_tol * trace) {
            break;
        }
        let j = match &mut rule {
            Rule::Greedy => {
                let j = argmax_smallest_index(&d).expect("nonempty");
                if d[j] <= floor || (stop_tol > 0.0 && d[j] <= stop_tol * trace) {
                    break;
                }
                j
            }
            Rule::Sampled(rng) => {
                // drawing from the clamped weights is the same as redrawing
                // until the pivot clears the floor
                let weights: Vec<f64> = d.iter().map(|&v| if v > floor { v } else { 0.0 }).collect();
                match WeightedIndex::new(&weights) {
                    Ok(dist) => dist.sample(rng),
                    Err(_) => break,
                }
            }
        };
        let col = oracle.column(j)?;
        let mut g = col.clone();
        for fl in &f_cols {
            let s = fl[j].conj();
            for (gi, fi) in g.iter_mut().zip(fl) {
                *gi -= fi * s;
            }
        }
        let pivot = g[j].re;
        if pivot <= floor {
            // rounding left less mass here than the diagonal claimed
            d[j] = 0.0;
            continue;
        }
        let scale = 1.0 / pivot.sqrt();
        g.iter_mut().for_each(|z| *z *= scale);
        for (di, gi) in d.iter_mut().zip(&g) {
            *di = (*di - gi.norm_sqr()).max(0.0);
        }
        d[j] = 0.0;
        for &p in &pivots {
            d[p] = 0.0;
        }
        pivots.push(j);
        f_cols.push(g);
        raw_cols.push(col);
        history.push(d.iter().sum());
    }

    let k = pivots.len();
    Ok(PartialFactor {
        factor: Mat::from_fn(m, k, |i, l| f_cols[l][i]),
        columns: Mat::from_fn(m, k, |i, l| raw_cols[l][i]),
        pivots,
        residual_diag: d,
        source_trace: trace,
        trace_history: history,
    })
}

/// Randomly pivoted partial Cholesky: pivot `j` is drawn with probability
/// proportional to the residual diagonal. Stops early once the residual
/// trace falls to `stop_tol * trace(G)`.
pub fn rpcholesky(oracle: &dyn PsdOracle, samples: usize, seed: u64, stop_tol: f64) -> Result<PartialFactor> {
    pivoted_cholesky(oracle, samples, stop_tol, Rule::Sampled(Box::new(seeded_rng(seed))))
}

/// Partial Cholesky with the largest residual diagonal as pivot (smallest
/// index on ties).
pub fn greedy_pivoted_cholesky(oracle: &dyn PsdOracle, samples: usize, stop_tol: f64) -> Result<PartialFactor> {
    pivoted_cholesky(oracle, samples, stop_tol, Rule::Greedy)
}

/// Nyström approximation `G ~ C W C*` with `C = G[:, I]`, `W = G[I, I]^{-1}`.
#[derive(Debug, Clone)]
pub struct NystromApprox {
    pub columns: CMat,
    pub core_inverse: CMat,
    pub pivots: Vec<usize>,
    /// Diagonal of `G - C W C*` as tracked by the method.
    pub residual_diag: Vec<f64>,
    pub source_trace: f64,
    pub trace_history: Vec<f64>,
}

impl NystromApprox {
    pub fn approximant(&self) -> CMat {
        &self.columns * &self.core_inverse * self.columns.adjoint()
    }

    /// `F` with `F F* = C W C*`, from the Hermitian square root of `W`
    /// (negative eigenvalues of `W` are dropped).
    pub fn factor(&self) -> Result<CMat> {
        let k = self.core_inverse.nrows();
        if k == 0 {
            return Ok(CMat::zeros(self.columns.nrows(), 0));
        }
        let w = &self.core_inverse;
        let sym = Mat::from_fn(k, k, |i, j| (w[(i, j)] + w[(j, i)].conj()) * 0.5);
        let e = hermitian_eig(sym.as_ref())?;
        let z = Mat::from_fn(k, k, |i, j| e.vectors[(i, j)] * e.values[j].max(0.0).sqrt());
        Ok(&self.columns * z)
    }
}

/// oASIS: greedy column selection for the Nyström approximation with
/// `G[I, I]^{-1}` and `C G[I, I]^{-1}` grown by block-inverse updates rather
/// than refactorization.
///
/// Returns [`Error::Breakdown`] when the Schur complement of a new pivot
/// falls below `1e-14 trace(G)` although its residual diagonal did not.
pub fn oasis_nystrom(oracle: &dyn PsdOracle, samples: usize, stop_tol: f64) -> Result<NystromApprox> {
    check_request(samples, stop_tol)?;
    let m = oracle.size();
    let d0: Vec<f64> = oracle.diagonal();
    let trace: f64 = d0.iter().map(|v| v.max(0.0)).sum();
    let floor = EXHAUSTED * trace;
    let samples = samples.min(m);

    let mut delta: Vec<f64> = d0.iter().map(|v| v.max(0.0)).collect();
    let mut history = vec![trace];
    let mut c_cols: Vec<Vec<c64>> = Vec::new();
    let mut r_cols: Vec<Vec<c64>> = Vec::new();
    let mut w = CMat::zeros(0, 0);
    let mut pivots: Vec<usize> = Vec::new();

    while pivots.len() < samples {
        let Some(j) = argmax_smallest_index(&delta) else { break };
        if delta[j] <= floor || (stop_tol > 0.0 && delta[j] <= stop_tol * trace) {
            break;
        }
        let c = oracle.column(j)?;
        let k = pivots.len();
        let g: Vec<c64> = pivots.iter().map(|&p| c[p]).collect();
        let b: Vec<c64> = (0..k).map(|r| (0..k).map(|l| w[(r, l)] * g[l]).sum()).collect();
        let s = (c[j] - g.iter().zip(&b).map(|(gi, bi)| gi.conj() * bi).sum::<c64>()).re;
        if s < floor {
            return Err(Error::Breakdown { step: k, value: s });
        }
        // e = c - R g, the new column of the Schur complement
        let mut e = c.clone();
        for (rl, gl) in r_cols.iter().zip(&g) {
            for (ei, ri) in e.iter_mut().zip(rl) {
                *ei -= ri * gl;
            }
        }
        for (rl, bl) in r_cols.iter_mut().zip(&b) {
            let coef = bl.conj() / s;
            for (ri, ei) in rl.iter_mut().zip(&e) {
                *ri -= ei * coef;
            }
        }
        r_cols.push(e.iter().map(|z| z / s).collect());
        w = Mat::from_fn(k + 1, k + 1, |r, l| match (r < k, l < k) {
            (true, true) => w[(r, l)] + b[r] * b[l].conj() / s,
            (true, false) => -b[r] / s,
            (false, true) => -b[l].conj() / s,
            (false, false) => c64::new(1.0 / s, 0.0),
        });
        c_cols.push(c);
        pivots.push(j);

        for i in 0..m {
            let approx: c64 = r_cols.iter().zip(&c_cols).map(|(rl, cl)| rl[i] * cl[i].conj()).sum();
            delta[i] = (d0[i] - approx.re).max(0.0);
        }
        for &p in &pivots {
            delta[p] = 0.0;
        }
        history.push(delta.iter().sum());
    }

    Ok(NystromApprox {
        columns: Mat::from_fn(m, pivots.len(), |i, l| c_cols[l][i]),
        core_inverse: w,
        pivots,
        residual_diag: delta,
        source_trace: trace,
        trace_history: history,
    })
}

/// Dense check of a factor: `(trace(G - F F*), |G - F F*|_F)`.
pub fn factor_error(g: MatRef<'_, c64>, factor: MatRef<'_, c64>) -> Result<(f64, f64)> {
    if g.nrows() != g.ncols() || factor.nrows() != g.nrows() {
        return Err(invalid("factor and matrix shapes do not match"));
    }
    let e = g - factor * factor.adjoint();
    let trace = (0..e.nrows()).map(|i| e[(i, i)].re).sum();
    Ok((trace, e.norm_l2()))
}
