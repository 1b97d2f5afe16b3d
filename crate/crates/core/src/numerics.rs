//! Dense complex linear algebra used by every DMD pipeline.
//!
//! Everything here works on [`CMat`] (a column-major `faer` matrix of
//! complex doubles) even when the data is real, so eigenvalues on the unit
//! circle and their eigenvectors flow through the same code path.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::evd::{self, ComputeEigenvectors};
use faer::{c64, Mat, MatRef, Par, Side};

use crate::error::{invalid, Error, Result};

/// Dense complex matrix. Column `j` of a snapshot matrix is snapshot `j`.
pub type CMat = Mat<c64>;

/// Default relative truncation threshold on singular values.
pub const DEFAULT_REL_TOL: f64 = 1e-10;

/// Gramian eigenvalues below `GRAM_NOISE_FACTOR * dim * eps * lambda_max`
/// are rounding noise from the eigensolver and are never retained.
pub const GRAM_NOISE_FACTOR: f64 = 10.0;

/// Singular values closer than this (relative) are treated as one cluster
/// when deciding where to cut.
const CLUSTER_GAP: f64 = 1e-8;

/// Inner products `|w* v|` below this fraction of `|w||v|` mark a pair as
/// degenerate.
pub const DEGENERATE_PAIR_TOL: f64 = 1e-14;

/// Builds a complex matrix from real column-major data.
pub fn from_real(rows: usize, cols: usize, data: &[f64]) -> Result<CMat> {
    if data.len() != rows * cols {
        return Err(invalid(format!(
            "expected {} entries for a {rows}x{cols} matrix, got {}",
            rows * cols,
            data.len()
        )));
    }
    let m = Mat::from_fn(rows, cols, |i, j| c64::new(data[j * rows + i], 0.0));
    ensure_finite(m.as_ref())?;
    Ok(m)
}

/// Rejects matrices with NaN or infinite entries.
pub fn ensure_finite(a: MatRef<'_, c64>) -> Result<()> {
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            let z = a[(i, j)];
            if !(z.re.is_finite() && z.im.is_finite()) {
                return Err(invalid(format!("non-finite entry at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

/// True when every imaginary part is exactly zero.
pub fn is_real(a: MatRef<'_, c64>) -> bool {
    (0..a.ncols()).all(|j| (0..a.nrows()).all(|i| a[(i, j)].im == 0.0))
}

/// Copies the listed columns of `a` into a new matrix.
pub fn gather_cols(a: MatRef<'_, c64>, cols: &[usize]) -> CMat {
    Mat::from_fn(a.nrows(), cols.len(), |i, j| a[(i, cols[j])])
}

/// Copies the listed rows of `a` into a new matrix.
pub fn gather_rows(a: MatRef<'_, c64>, rows: &[usize]) -> CMat {
    Mat::from_fn(rows.len(), a.ncols(), |i, j| a[(rows[i], j)])
}

/// Euclidean norm of a complex slice.
pub fn vec_norm(v: &[c64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Largest singular value.
pub fn spectral_norm(a: MatRef<'_, c64>) -> Result<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Ok(0.0);
    }
    let s = a.singular_values().map_err(|e| Error::NoConvergence(format!("singular values: {e:?}")))?;
    Ok(s.into_iter().fold(0.0, f64::max))
}

/// Truncated singular value decomposition `A ~ U diag(sigma) V*`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: CMat,
    /// Retained singular values, nonincreasing.
    pub sigma: Vec<f64>,
    pub v: CMat,
    /// Number of retained triplets.
    pub rank: usize,
    /// Singular values that were cut off.
    pub discarded: Vec<f64>,
}

/// Number of leading values to keep: everything at or above `cut`, extended
/// across a cluster of (near-)equal values that straddles the cut.
fn retained_count(values: &[f64], cut: f64) -> usize {
    if values.first().is_none_or(|&v| v <= 0.0) {
        return 0;
    }
    let mut r = values.iter().take_while(|&&v| v > 0.0 && v >= cut).count();
    while r > 0 && r < values.len() && values[r] > 0.0 && values[r] >= values[r - 1] * (1.0 - CLUSTER_GAP) {
        r += 1;
    }
    r
}

fn check_rel_tol(rel_tol: f64) -> Result<()> {
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return Err(invalid(format!("rel_tol must lie in (0, 1), got {rel_tol}")));
    }
    Ok(())
}

/// SVD truncated to `R = #{i : sigma_i >= rel_tol * sigma_1}`.
pub fn truncated_svd(a: MatRef<'_, c64>, rel_tol: f64) -> Result<SvdResult> {
    check_rel_tol(rel_tol)?;
    ensure_finite(a)?;
    let (m, n) = (a.nrows(), a.ncols());
    if m == 0 || n == 0 {
        return Ok(SvdResult {
            u: Mat::zeros(m, 0),
            sigma: Vec::new(),
            v: Mat::zeros(n, 0),
            rank: 0,
            discarded: Vec::new(),
        });
    }
    let svd = a.thin_svd().map_err(|e| Error::NoConvergence(format!("svd: {e:?}")))?;
    let s = svd.S().column_vector();
    let k = m.min(n);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| s[j].re.total_cmp(&s[i].re));
    let values: Vec<f64> = order.iter().map(|&i| s[i].re.max(0.0)).collect();
    let rank = retained_count(&values, rel_tol * values[0]);
    let keep = &order[..rank];
    Ok(SvdResult {
        u: gather_cols(svd.U(), keep),
        sigma: values[..rank].to_vec(),
        v: gather_cols(svd.V(), keep),
        rank,
        discarded: values[rank..].to_vec(),
    })
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues in descending order.
#[derive(Debug, Clone)]
pub struct HermitianEig {
    pub values: Vec<f64>,
    pub vectors: CMat,
}

/// Eigendecomposition `G = Q diag(values) Q*` of a Hermitian matrix.
///
/// The input is symmetrized as `(G + G*)/2`; asymmetry above `1e-10 ||G||_F`
/// is rejected.
pub fn hermitian_eig(g: MatRef<'_, c64>) -> Result<HermitianEig> {
    let n = g.nrows();
    if g.ncols() != n {
        return Err(invalid(format!("expected a square matrix, got {}x{}", n, g.ncols())));
    }
    ensure_finite(g)?;
    if n == 0 {
        return Ok(HermitianEig { values: Vec::new(), vectors: Mat::zeros(0, 0) });
    }
    let scale = g.norm_l2();
    let mut asym = 0.0f64;
    for j in 0..n {
        for i in 0..j {
            asym = asym.max((g[(i, j)] - g[(j, i)].conj()).norm());
        }
    }
    if asym > 1e-10 * scale {
        return Err(invalid(format!("matrix is not Hermitian (asymmetry {asym:e})")));
    }
    let h = Mat::from_fn(n, n, |i, j| (g[(i, j)] + g[(j, i)].conj()) * 0.5);
    let eig =
        h.self_adjoint_eigen(Side::Lower).map_err(|e| Error::NoConvergence(format!("hermitian eigensolver: {e:?}")))?;
    let s = eig.S().column_vector();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| s[j].re.total_cmp(&s[i].re));
    Ok(HermitianEig { values: order.iter().map(|&i| s[i].re).collect(), vectors: gather_cols(eig.U(), &order) })
}

/// Numerical rank of a Gramian from its descending eigenvalues.
///
/// Retains eigenvalue `l` when `sqrt(l) >= rel_tol * sqrt(l_max)` and `l`
/// clears the eigensolver noise floor `GRAM_NOISE_FACTOR * dim * eps * l_max`.
pub fn gram_rank(values: &[f64], rel_tol: f64, dim: usize) -> usize {
    let Some(&top) = values.first() else { return 0 };
    if top <= 0.0 {
        return 0;
    }
    let noise = GRAM_NOISE_FACTOR * dim.max(1) as f64 * f64::EPSILON * top;
    let cut = (rel_tol * rel_tol * top).max(noise);
    let roots: Vec<f64> = values.iter().map(|&v| v.max(0.0).sqrt()).collect();
    retained_count(&roots, cut.sqrt())
}

/// Eigenvalues with paired right and left eigenvectors.
///
/// Right vectors have unit norm; left vectors are scaled so that
/// `w_i* v_i = 1` except for the pairs listed in `degenerate`.
#[derive(Debug, Clone)]
pub struct EigPairs {
    pub lambdas: Vec<c64>,
    pub right: CMat,
    pub left: CMat,
    /// Pairs whose inner product `w_i* v_i` vanished; left vectors left unscaled.
    pub degenerate: Vec<usize>,
    /// Set when the matrix looks non-diagonalizable.
    pub defective: bool,
}

impl EigPairs {
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }
}

/// Deterministic eigenvalue order: descending modulus, then descending real
/// part, then descending imaginary part.
pub fn eigenvalue_order(lambdas: &[c64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..lambdas.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (lambdas[i], lambdas[j]);
        b.norm().total_cmp(&a.norm()).then(b.re.total_cmp(&a.re)).then(b.im.total_cmp(&a.im))
    });
    order
}

/// Right and left eigenpairs of a general square matrix with biorthogonal
/// scaling `w_i* v_j = delta_ij`.
pub fn general_eig_pairs(k: MatRef<'_, c64>) -> Result<EigPairs> {
    let n = k.nrows();
    if k.ncols() != n {
        return Err(invalid(format!("expected a square matrix, got {}x{}", n, k.ncols())));
    }
    ensure_finite(k)?;
    if n == 0 {
        return Ok(EigPairs {
            lambdas: Vec::new(),
            right: Mat::zeros(0, 0),
            left: Mat::zeros(0, 0),
            degenerate: Vec::new(),
            defective: false,
        });
    }

    let par = Par::Seq;
    let mut s = faer::diag::Diag::<c64>::zeros(n);
    let mut ul = CMat::zeros(n, n);
    let mut ur = CMat::zeros(n, n);
    let req = evd::evd_scratch::<c64>(n, ComputeEigenvectors::Yes, ComputeEigenvectors::Yes, par, Default::default());
    let mut buf = MemBuffer::new(req);
    evd::evd_cplx::<f64>(
        k,
        s.as_mut(),
        Some(ul.as_mut()),
        Some(ur.as_mut()),
        par,
        MemStack::new(&mut buf),
        Default::default(),
    )
    .map_err(|e| Error::NoConvergence(format!("eigensolver: {e:?}")))?;

    let raw: Vec<c64> = (0..n).map(|i| s.column_vector()[i]).collect();
    let order = eigenvalue_order(&raw);
    let lambdas: Vec<c64> = order.iter().map(|&i| raw[i]).collect();
    let mut right = gather_cols(ur.as_ref(), &order);
    let mut left = gather_cols(ul.as_ref(), &order);

    let mut degenerate = Vec::new();
    for i in 0..n {
        let vn = vec_norm(right.col_as_slice(i));
        if vn > 0.0 {
            right.col_as_slice_mut(i).iter_mut().for_each(|z| *z /= vn);
        }
        let wn = vec_norm(left.col_as_slice(i));
        let alpha: c64 = left.col_as_slice(i).iter().zip(right.col_as_slice(i)).map(|(w, v)| w.conj() * v).sum();
        if alpha.norm() <= DEGENERATE_PAIR_TOL * wn || wn == 0.0 {
            degenerate.push(i);
            continue;
        }
        let scale = alpha.conj();
        left.col_as_slice_mut(i).iter_mut().for_each(|z| *z /= scale);
    }
    let defective = !degenerate.is_empty();
    Ok(EigPairs { lambdas, right, left, degenerate, defective })
}

/// Orthonormal basis for the column span of `b`, dropping dependent columns.
pub fn orthonormalize(b: MatRef<'_, c64>) -> CMat {
    orthonormalize_tracked(b).0
}

/// As [`orthonormalize`], also returning which input columns produced an
/// output column. Columns are processed in order with two passes of
/// classical Gram-Schmidt, so the output keeps the input ordering.
pub fn orthonormalize_tracked(b: MatRef<'_, c64>) -> (CMat, Vec<usize>) {
    const DROP_TOL: f64 = 1e-10;
    let m = b.nrows();
    let max_norm = (0..b.ncols()).map(|j| (0..m).map(|i| b[(i, j)].norm_sqr()).sum::<f64>().sqrt()).fold(0.0, f64::max);
    let mut basis: Vec<Vec<c64>> = Vec::new();
    let mut kept = Vec::new();
    for j in 0..b.ncols() {
        let mut v: Vec<c64> = (0..m).map(|i| b[(i, j)]).collect();
        let n0 = vec_norm(&v);
        if n0 == 0.0 || n0 <= f64::EPSILON * max_norm {
            continue;
        }
        for _ in 0..2 {
            for q in &basis {
                let proj: c64 = q.iter().zip(&v).map(|(a, x)| a.conj() * x).sum();
                v.iter_mut().zip(q).for_each(|(x, a)| *x -= proj * a);
            }
        }
        let n1 = vec_norm(&v);
        if n1 <= DROP_TOL * n0 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= n1);
        basis.push(v);
        kept.push(j);
    }
    let q = Mat::from_fn(m, basis.len(), |i, j| basis[j][i]);
    (q, kept)
}
