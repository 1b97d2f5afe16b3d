//! Kernel functions, on-demand Gram matrix access and random Fourier features.
//!
//! Kernels follow the feature-space convention `k(x, y) = Psi(x) Psi(y)*`,
//! so the inner product is `<x, y> = sum_k x_k conj(y_k)` and
//! `k(y, x) = conj(k(x, y))`.

use std::sync::atomic::{AtomicU64, Ordering};

use faer::{c64, MatRef};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datasets::synthetic::seeded_rng;
use crate::error::{invalid, Error, Result};
use crate::numerics::{is_real, CMat};

/// Kernel family and parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum KernelSpec {
    /// `exp(-sigma |x - y|^2)`; `sigma = None` means `1/N` for `N`-dimensional data.
    Gaussian { sigma: Option<f64> },
    /// `(offset + <x, y>)^degree`
    Polynomial { degree: u32, offset: f64 },
    /// `<x, y>`
    Linear,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::Gaussian { sigma: None }
    }
}

impl KernelSpec {
    pub fn gaussian(sigma: f64) -> Self {
        KernelSpec::Gaussian { sigma: Some(sigma) }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Gaussian { sigma: Some(s) } if !(s > 0.0 && s.is_finite()) => {
                Err(invalid(format!("gaussian sigma must be positive, got {s}")))
            }
            KernelSpec::Polynomial { degree: 0, .. } => Err(invalid("polynomial degree must be at least 1")),
            KernelSpec::Polynomial { offset, .. } if !offset.is_finite() => {
                Err(invalid("polynomial offset must be finite"))
            }
            _ => Ok(()),
        }
    }

    /// Fills in the default Gaussian scale for `dim`-dimensional data.
    pub fn resolve(&self, dim: usize) -> KernelSpec {
        match *self {
            KernelSpec::Gaussian { sigma: None } => KernelSpec::gaussian(1.0 / dim.max(1) as f64),
            other => other,
        }
    }
}

fn inner(x: &[c64], y: &[c64]) -> c64 {
    x.iter().zip(y).map(|(a, b)| a * b.conj()).sum()
}

/// Evaluation without dimension checks; `spec` must be resolved.
fn eval_resolved(spec: &KernelSpec, x: &[c64], y: &[c64]) -> c64 {
    match *spec {
        KernelSpec::Gaussian { sigma } => {
            let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b).norm_sqr()).sum();
            c64::new((-sigma.unwrap_or(1.0 / x.len().max(1) as f64) * d2).exp(), 0.0)
        }
        KernelSpec::Polynomial { degree, offset } => (c64::new(offset, 0.0) + inner(x, y)).powi(degree as i32),
        KernelSpec::Linear => inner(x, y),
    }
}

/// Evaluates `k(x, y)`.
pub fn kernel_eval(spec: &KernelSpec, x: &[c64], y: &[c64]) -> Result<c64> {
    spec.validate()?;
    if x.len() != y.len() {
        return Err(invalid(format!("dimension mismatch: {} vs {}", x.len(), y.len())));
    }
    Ok(eval_resolved(&spec.resolve(x.len()), x, y))
}

/// Column access to a Hermitian positive semidefinite matrix.
pub trait PsdOracle {
    /// Matrix dimension.
    fn size(&self) -> usize;
    /// Real diagonal.
    fn diagonal(&self) -> Vec<f64>;
    /// Column `j`.
    fn column(&self, j: usize) -> Result<Vec<c64>>;
}

/// Entries of the Gram matrix `k(D, D)` computed on demand from snapshot
/// data `D`. Counts scalar kernel evaluations.
#[derive(Debug)]
pub struct KernelOracle<'a> {
    data: &'a CMat,
    spec: KernelSpec,
    evals: AtomicU64,
}

impl<'a> KernelOracle<'a> {
    pub fn new(data: &'a CMat, spec: KernelSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self { data, spec: spec.resolve(data.nrows()), evals: AtomicU64::new(0) })
    }

    /// Kernel with all defaults filled in.
    pub fn spec(&self) -> KernelSpec {
        self.spec
    }

    pub fn data(&self) -> &CMat {
        self.data
    }

    /// Number of scalar kernel evaluations so far.
    pub fn evaluations(&self) -> u64 {
        self.evals.load(Ordering::Relaxed)
    }

    pub fn reset_evaluations(&self) {
        self.evals.store(0, Ordering::Relaxed);
    }

    fn check(&self, j: usize) -> Result<()> {
        if j >= self.data.ncols() {
            return Err(Error::IndexOutOfRange { index: j, len: self.data.ncols() });
        }
        Ok(())
    }

    fn raw(&self, i: usize, j: usize) -> c64 {
        eval_resolved(&self.spec, self.data.col_as_slice(i), self.data.col_as_slice(j))
    }

    pub fn entry(&self, i: usize, j: usize) -> Result<c64> {
        self.check(i)?;
        self.check(j)?;
        self.evals.fetch_add(1, Ordering::Relaxed);
        Ok(self.raw(i, j))
    }

    /// Submatrix `k(D[:, rows], D[:, cols])`.
    pub fn matrix(&self, rows: &[usize], cols: &[usize]) -> Result<CMat> {
        rows.iter().chain(cols).try_for_each(|&j| self.check(j))?;
        self.evals.fetch_add((rows.len() * cols.len()) as u64, Ordering::Relaxed);
        Ok(CMat::from_fn(rows.len(), cols.len(), |i, j| self.raw(rows[i], cols[j])))
    }

    /// The whole Gram matrix, evaluating each unordered pair once.
    pub fn full(&self) -> CMat {
        let m = self.data.ncols();
        let mut g = CMat::zeros(m, m);
        for j in 0..m {
            for i in 0..=j {
                let v = self.raw(i, j);
                g[(i, j)] = v;
                g[(j, i)] = v.conj();
            }
        }
        self.evals.fetch_add((m * (m + 1) / 2) as u64, Ordering::Relaxed);
        g
    }
}

impl PsdOracle for KernelOracle<'_> {
    fn size(&self) -> usize {
        self.data.ncols()
    }

    fn diagonal(&self) -> Vec<f64> {
        let m = self.data.ncols();
        self.evals.fetch_add(m as u64, Ordering::Relaxed);
        (0..m).map(|j| self.raw(j, j).re).collect()
    }

    fn column(&self, j: usize) -> Result<Vec<c64>> {
        self.check(j)?;
        let m = self.data.ncols();
        self.evals.fetch_add(m as u64, Ordering::Relaxed);
        Ok((0..m).map(|i| self.raw(i, j)).collect())
    }
}

/// A dense Hermitian matrix seen through the oracle interface.
#[derive(Debug, Clone, Copy)]
pub struct DenseOracle<'a>(pub MatRef<'a, c64>);

impl PsdOracle for DenseOracle<'_> {
    fn size(&self) -> usize {
        self.0.nrows()
    }

    fn diagonal(&self) -> Vec<f64> {
        (0..self.0.nrows()).map(|i| self.0[(i, i)].re).collect()
    }

    fn column(&self, j: usize) -> Result<Vec<c64>> {
        if j >= self.0.ncols() {
            return Err(Error::IndexOutOfRange { index: j, len: self.0.ncols() });
        }
        Ok((0..self.0.nrows()).map(|i| self.0[(i, j)]).collect())
    }
}

/// Random Fourier features for the Gaussian kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct RffFeatures {
    /// `samples x dim` frequencies, row-major.
    frequencies: Vec<f64>,
    pub dim: usize,
    pub samples: usize,
    pub sigma: f64,
    pub seed: u64,
}

impl RffFeatures {
    /// Frequency vector `z_l`.
    pub fn frequency(&self, l: usize) -> &[f64] {
        &self.frequencies[l * self.dim..(l + 1) * self.dim]
    }
}

/// Draws `samples` frequencies `z ~ N(0, 2 sigma I)`, for which
/// `E[exp(i <x - y, z>)] = exp(-sigma |x - y|^2)`.
pub fn rff_sample(spec: &KernelSpec, dim: usize, samples: usize, seed: u64) -> Result<RffFeatures> {
    spec.validate()?;
    let KernelSpec::Gaussian { .. } = spec else {
        return Err(Error::UnsupportedKernel(format!("random Fourier features need a gaussian kernel, got {spec:?}")));
    };
    if samples == 0 {
        return Err(invalid("sample count must be at least 1"));
    }
    if dim == 0 {
        return Err(invalid("dimension must be at least 1"));
    }
    let KernelSpec::Gaussian { sigma: Some(sigma) } = spec.resolve(dim) else { unreachable!() };
    let normal = Normal::new(0.0, (2.0 * sigma).sqrt()).map_err(|e| invalid(e.to_string()))?;
    let mut rng = seeded_rng(seed);
    let frequencies = (0..samples * dim).map(|_| normal.sample(&mut rng)).collect();
    Ok(RffFeatures { frequencies, dim, samples, sigma, seed })
}

fn real_parts(x: &[c64]) -> Result<Vec<f64>> {
    if x.iter().any(|z| z.im != 0.0) {
        return Err(invalid("random Fourier features require real data"));
    }
    Ok(x.iter().map(|z| z.re).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Feature matrix with entry `(m, l) = exp(i <x_m, z_l>) / sqrt(S)` for the
/// snapshots `x_m` (columns of `x`).
pub fn rff_features(feats: &RffFeatures, x: MatRef<'_, c64>) -> Result<CMat> {
    if x.nrows() != feats.dim {
        return Err(invalid(format!("data dimension {} does not match {}", x.nrows(), feats.dim)));
    }
    if !is_real(x) {
        return Err(invalid("random Fourier features require real data"));
    }
    let scale = 1.0 / (feats.samples as f64).sqrt();
    let cols: Vec<Vec<f64>> = (0..x.ncols()).map(|m| (0..x.nrows()).map(|i| x[(i, m)].re).collect()).collect();
    Ok(CMat::from_fn(x.ncols(), feats.samples, |m, l| {
        let t = dot(&cols[m], feats.frequency(l));
        c64::new(t.cos() * scale, t.sin() * scale)
    }))
}

/// Sample average `(1/S) sum_l exp(i <x - y, z_l>)`.
pub fn rff_kernel_estimate(feats: &RffFeatures, x: &[c64], y: &[c64]) -> Result<c64> {
    if x.len() != feats.dim || y.len() != feats.dim {
        return Err(invalid(format!("dimensions {} and {} do not match {}", x.len(), y.len(), feats.dim)));
    }
    let (x, y) = (real_parts(x)?, real_parts(y)?);
    let delta: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
    let mut acc = c64::new(0.0, 0.0);
    for l in 0..feats.samples {
        let t = dot(&delta, feats.frequency(l));
        acc += c64::new(t.cos(), t.sin());
    }
    Ok(acc / feats.samples as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::synthetic::{gaussian_matrix, seeded_rng};
    use crate::numerics::hermitian_eig;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> Vec<c64> {
        xs.iter().map(|&x| c64::new(x, 0.0)).collect()
    }

    #[test]
    fn gaussian_values() {
        let g = KernelSpec::gaussian(0.25);
        assert_eq!(kernel_eval(&g, &v(&[1.0, 2.0]), &v(&[1.0, 2.0])).unwrap(), c64::new(1.0, 0.0));
        let k = kernel_eval(&g, &v(&[0.0]), &v(&[2.0])).unwrap();
        assert!((k.re - (-1.0f64).exp()).abs() < 1e-15);
        assert!((k.re - 0.3678794).abs() < 1e-7);
        // default scale is 1/N
        let d = kernel_eval(&KernelSpec::default(), &v(&[0.0, 0.0]), &v(&[1.0, 1.0])).unwrap();
        assert!((d.re - (-1.0f64).exp()).abs() < 1e-15);
        assert!(kernel_eval(&g, &v(&[0.0]), &v(&[0.0, 1.0])).is_err());
    }

    #[test]
    fn polynomial_and_linear_values() {
        let p = KernelSpec::Polynomial { degree: 2, offset: 1.0 };
        assert_eq!(kernel_eval(&p, &v(&[1.0, 2.0]), &v(&[3.0, -1.0])).unwrap(), c64::new(4.0, 0.0));
        let x = [c64::new(1.0, 1.0)];
        let y = [c64::new(0.0, 1.0)];
        // <x, y> = (1 + i)(-i) = 1 - i
        assert_eq!(kernel_eval(&KernelSpec::Linear, &x, &y).unwrap(), c64::new(1.0, -1.0));
        assert!(KernelSpec::Polynomial { degree: 0, offset: 1.0 }.validate().is_err());
        assert!(KernelSpec::gaussian(-1.0).validate().is_err());
    }

    #[test]
    fn columns_agree_with_dense_assembly() {
        let data = gaussian_matrix(3, 12, &mut seeded_rng(5));
        let oracle = KernelOracle::new(&data, KernelSpec::default()).unwrap();
        let g = oracle.full();
        for j in 0..12 {
            let col = oracle.column(j).unwrap();
            assert!(col[j].re > 0.0 && col[j].im == 0.0);
            for i in 0..12 {
                assert!(col[i].re > 0.0 && col[i].re <= 1.0);
                assert_eq!(col[i], g[(i, j)]);
            }
        }
        assert!(oracle.column(12).is_err());
        let sub = oracle.matrix(&[1, 4], &[0, 11, 3]).unwrap();
        assert_eq!(sub[(1, 2)], g[(4, 3)]);
    }

    #[test]
    fn constant_data_gives_all_ones() {
        let data = CMat::from_fn(2, 3, |i, _| c64::new(i as f64 + 0.5, 0.0));
        let oracle = KernelOracle::new(&data, KernelSpec::default()).unwrap();
        let g = oracle.full();
        assert!((0..3).all(|i| (0..3).all(|j| g[(i, j)] == c64::new(1.0, 0.0))));
        let e = hermitian_eig(g.as_ref()).unwrap();
        assert!((e.values[0] - 3.0).abs() < 1e-12 && e.values[1].abs() < 1e-12);
    }

    #[test]
    fn gram_matrices_are_psd() {
        let data = gaussian_matrix(4, 20, &mut seeded_rng(6));
        for spec in [KernelSpec::default(), KernelSpec::Polynomial { degree: 3, offset: 1.0 }, KernelSpec::Linear] {
            let g = KernelOracle::new(&data, spec).unwrap().full();
            let trace: f64 = (0..20).map(|i| g[(i, i)].re).sum();
            let e = hermitian_eig(g.as_ref()).unwrap();
            assert!(*e.values.last().unwrap() >= -1e-10 * trace);
        }
    }

    #[test]
    fn evaluation_counter() {
        let data = gaussian_matrix(2, 7, &mut seeded_rng(7));
        let oracle = KernelOracle::new(&data, KernelSpec::default()).unwrap();
        oracle.diagonal();
        oracle.column(3).unwrap();
        assert_eq!(oracle.evaluations(), 14);
    }

    #[test]
    fn rff_sampling_is_seeded() {
        let spec = KernelSpec::gaussian(0.25);
        let a = rff_sample(&spec, 3, 16, 42).unwrap();
        assert_eq!(a, rff_sample(&spec, 3, 16, 42).unwrap());
        assert_ne!(a, rff_sample(&spec, 3, 16, 43).unwrap());
        assert!(rff_sample(&spec, 3, 0, 1).is_err());
        assert!(matches!(rff_sample(&KernelSpec::Linear, 3, 4, 1), Err(Error::UnsupportedKernel(_))));
    }

    #[test]
    fn rff_frequency_variance() {
        let f = rff_sample(&KernelSpec::gaussian(0.25), 1, 100_000, 3).unwrap();
        let n = f.samples as f64;
        let mean: f64 = (0..f.samples).map(|l| f.frequency(l)[0]).sum::<f64>() / n;
        let var: f64 = (0..f.samples).map(|l| (f.frequency(l)[0] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var - 0.5).abs() <= 0.02 * 0.5, "variance {var}");
    }

    #[test]
    fn rff_feature_matrix_identities() {
        let spec = KernelSpec::gaussian(0.5);
        let f = rff_sample(&spec, 2, 50, 1).unwrap();
        let mut x = gaussian_matrix(2, 6, &mut seeded_rng(8));
        x[(0, 0)] = c64::new(0.0, 0.0);
        x[(1, 0)] = c64::new(0.0, 0.0);
        let psi = rff_features(&f, x.as_ref()).unwrap();
        let s = 1.0 / 50f64.sqrt();
        for l in 0..50 {
            assert!((psi[(0, l)] - c64::new(s, 0.0)).norm() < 1e-15);
            for m in 0..6 {
                assert!((psi[(m, l)].norm() - s).abs() < 1e-15);
            }
        }
        for m in 0..6 {
            for mp in 0..6 {
                let dotp: c64 = (0..50).map(|l| psi[(m, l)] * psi[(mp, l)].conj()).sum();
                let est = rff_kernel_estimate(&f, x.col_as_slice(m), x.col_as_slice(mp)).unwrap();
                assert!((dotp - est).norm() < 1e-12);
            }
        }
        assert_eq!(rff_kernel_estimate(&f, x.col_as_slice(3), x.col_as_slice(3)).unwrap(), c64::new(1.0, 0.0));
        let complex = CMat::from_fn(2, 1, |_, _| c64::new(0.0, 1.0));
        assert!(rff_features(&f, complex.as_ref()).is_err());
    }

    #[test]
    fn rff_error_shrinks_with_samples() {
        let spec = KernelSpec::gaussian(0.25);
        let pts = gaussian_matrix(2, 20, &mut seeded_rng(9));
        let oracle = KernelOracle::new(&pts, spec).unwrap();
        let exact = oracle.full();
        let mut rms = Vec::new();
        for s in [64, 256, 1024] {
            let mut per_seed: Vec<f64> = (0..15)
                .map(|seed| {
                    let f = rff_sample(&spec, 2, s, seed).unwrap();
                    let mut acc = 0.0;
                    for i in 0..20 {
                        for j in 0..20 {
                            let e = rff_kernel_estimate(&f, pts.col_as_slice(i), pts.col_as_slice(j)).unwrap();
                            acc += (e - exact[(i, j)]).norm_sqr();
                        }
                    }
                    (acc / 400.0).sqrt()
                })
                .collect();
            per_seed.sort_by(f64::total_cmp);
            rms.push(per_seed[per_seed.len() / 2]);
        }
        assert!(rms[0] > rms[1] && rms[1] > rms[2], "{rms:?}");
    }

    proptest! {
        #[test]
        fn kernels_are_hermitian(xs in proptest::collection::vec(-3.0f64..3.0, 6), sigma in 0.01f64..2.0) {
            let (x, y) = (v(&xs[..3]), v(&xs[3..]));
            for spec in [KernelSpec::gaussian(sigma), KernelSpec::Polynomial { degree: 3, offset: 0.5 }, KernelSpec::Linear] {
                let a = kernel_eval(&spec, &x, &y).unwrap();
                let b = kernel_eval(&spec, &y, &x).unwrap();
                prop_assert_eq!(a, b.conj());
            }
        }
    }
}
