//! Canonical correlation analysis between paired text and image features.
//!
//! Directions come from the whitened cross-covariance
//! `K = Σ_TT^{-1/2} Σ_TI Σ_II^{-1/2}`. The left singular vectors of `K` are
//! the eigenvectors of `Σ_TT^{-1/2} Σ_TI Σ_II^{-1} Σ_IT Σ_TT^{-1/2}`, the right
//! ones those of the mirrored product, and the singular values are the
//! canonical correlations. Taking both sides from one decomposition keeps the
//! k-th text and image directions paired even when correlations repeat.

mod io;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{standardize, Standardizer};

pub use self::io::{ModelSummary, MODEL_MAGIC, MODEL_VERSION};

pub const DEFAULT_DIM: usize = 28;
pub const DEFAULT_LAMBDA: f64 = 1e-4;
/// Threshold used by automatic dimension selection.
pub const AUTO_D_MIN_RHO: f64 = 0.1;
/// Eigenvalue floor for inverse square roots.
const EIG_FLOOR: f64 = 1e-12;

/// How subspace coordinates of an image map onto text subspace coordinates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossMap {
    #[default]
    Identity,
    /// Scale each component by its canonical correlation.
    Rho,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CcaOptions {
    pub d: usize,
    pub lambda: f64,
    #[serde(default)]
    pub cross_map: CrossMap,
}

impl Default for CcaOptions {
    fn default() -> Self {
        CcaOptions {
            d: DEFAULT_DIM,
            lambda: DEFAULT_LAMBDA,
            cross_map: CrossMap::Identity,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSet {
    pub sigma_tt: DMatrix<f64>,
    pub sigma_ii: DMatrix<f64>,
    pub sigma_ti: DMatrix<f64>,
}

impl CovarianceSet {
    pub fn sigma_it(&self) -> DMatrix<f64> {
        self.sigma_ti.transpose()
    }
}

/// `Σ_AB = Z_Aᵀ Z_B / n` on centered inputs, with the auto-covariances
/// shrunk toward `lambda · tr(Σ)/p · I`.
pub fn covariances(zt: &DMatrix<f64>, zi: &DMatrix<f64>, lambda: f64) -> Result<CovarianceSet> {
    let n = zt.nrows();
    if zi.nrows() != n {
        return Err(Error::RowCountMismatch {
            left: n,
            right: zi.nrows(),
        });
    }
    if n < 2 {
        return Err(Error::TooFewRows { needed: 2, got: n });
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    let nf = n as f64;
    let mut sigma_tt = zt.tr_mul(zt) / nf;
    let mut sigma_ii = zi.tr_mul(zi) / nf;
    let sigma_ti = zt.tr_mul(zi) / nf;
    symmetrize(&mut sigma_tt);
    symmetrize(&mut sigma_ii);
    ridge(&mut sigma_tt, lambda);
    ridge(&mut sigma_ii, lambda);
    Ok(CovarianceSet {
        sigma_tt,
        sigma_ii,
        sigma_ti,
    })
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

fn ridge(m: &mut DMatrix<f64>, lambda: f64) {
    if lambda == 0.0 || m.nrows() == 0 {
        return;
    }
    let shift = lambda * m.trace() / m.nrows() as f64;
    for k in 0..m.nrows() {
        m[(k, k)] += shift;
    }
}

/// Symmetric `m^{power}` through an eigendecomposition with floored eigenvalues.
fn sym_power(m: &DMatrix<f64>, power: f64, which: &'static str) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(max > 0.0) || min <= EIG_FLOOR * max {
        return Err(Error::SingularCovariance { which, min_eig: min });
    }
    let scaled = eig.eigenvalues.map(|l| l.max(EIG_FLOOR).powf(power));
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&scaled) * v.transpose())
}

pub fn inv_sqrt(m: &DMatrix<f64>, which: &'static str) -> Result<DMatrix<f64>> {
    sym_power(m, -0.5, which)
}

/// Eigenvalues of `Σ_TT^{-1/2} Σ_TI Σ_II^{-1} Σ_IT Σ_TT^{-1/2}`, descending.
///
/// This is the squared canonical spectrum computed without the SVD; it exists
/// for diagnostics and cross-checks.
pub fn whitened_product_eigenvalues(cov: &CovarianceSet) -> Result<Vec<f64>> {
    let wt = inv_sqrt(&cov.sigma_tt, "text")?;
    let ii_inv = sym_power(&cov.sigma_ii, -1.0, "image")?;
    let mut m = &wt * &cov.sigma_ti * ii_inv * cov.sigma_it() * &wt;
    symmetrize(&mut m);
    let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    Ok(ev)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CcaModel {
    pub lambda: f64,
    pub cross_map: CrossMap,
    /// Canonical correlations, descending.
    pub rho: Vec<f64>,
    /// `text_dim × d`
    pub text_proj: DMatrix<f64>,
    /// `image_dim × d`
    pub image_proj: DMatrix<f64>,
    /// `d × d` map from image subspace coordinates to text subspace coordinates.
    pub cross: DMatrix<f64>,
    pub text_stats: Standardizer,
    pub image_stats: Standardizer,
}

fn identity_stats(p: usize) -> Standardizer {
    Standardizer {
        means: vec![0.0; p],
        stds: vec![1.0; p],
    }
}

impl CcaModel {
    /// Fit on already standardized, row-aligned matrices.
    pub fn fit(zt: &DMatrix<f64>, zi: &DMatrix<f64>, opts: &CcaOptions) -> Result<Self> {
        Self::fit_with_stats(zt, zi, opts, identity_stats(zt.ncols()), identity_stats(zi.ncols()))
    }

    /// Standardize raw features, then fit. The stats are stored for projection.
    pub fn fit_raw(t: &DMatrix<f64>, i: &DMatrix<f64>, opts: &CcaOptions) -> Result<Self> {
        if t.nrows() != i.nrows() {
            return Err(Error::RowCountMismatch {
                left: t.nrows(),
                right: i.nrows(),
            });
        }
        let (zt, ts) = standardize(t)?;
        let (zi, is) = standardize(i)?;
        Self::fit_with_stats(&zt, &zi, opts, ts, is)
    }

    fn fit_with_stats(
        zt: &DMatrix<f64>,
        zi: &DMatrix<f64>,
        opts: &CcaOptions,
        text_stats: Standardizer,
        image_stats: Standardizer,
    ) -> Result<Self> {
        let cov = covariances(zt, zi, opts.lambda)?;
        let max_d = max_dim(zt.ncols(), zi.ncols(), zt.nrows());
        if opts.d == 0 {
            return Err(Error::InvalidArgument("d must be at least 1".into()));
        }
        if opts.d > max_d {
            return Err(Error::DimensionTooLarge { d: opts.d, max: max_d });
        }
        let wt = inv_sqrt(&cov.sigma_tt, "text")?;
        let wi = inv_sqrt(&cov.sigma_ii, "image")?;
        let k = &wt * &cov.sigma_ti * &wi;
        let svd = k.svd(true, true);
        let u = svd.u.as_ref().expect("u requested");
        let v_t = svd.v_t.as_ref().expect("v_t requested");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| {
            svd.singular_values[b]
                .total_cmp(&svd.singular_values[a])
                .then(a.cmp(&b))
        });

        let d = opts.d;
        let mut text_proj = DMatrix::zeros(zt.ncols(), d);
        let mut image_proj = DMatrix::zeros(zi.ncols(), d);
        let mut rho = Vec::with_capacity(d);
        for (col, &idx) in order.iter().take(d).enumerate() {
            let mut a: DVector<f64> = &wt * u.column(idx);
            let mut b: DVector<f64> = &wi * v_t.row(idx).transpose();
            // Deterministic sign: largest-magnitude text weight is positive.
            let pivot = a
                .iter()
                .enumerate()
                .fold((0, 0.0f64), |best, (j, x)| if x.abs() > best.1.abs() + 1e-12 { (j, *x) } else { best })
                .1;
            if pivot < 0.0 {
                a.neg_mut();
                b.neg_mut();
            }
            // Keep the training-sample correlation of the pair nonnegative.
            let c = (a.transpose() * &cov.sigma_ti * &b)[(0, 0)];
            if c < 0.0 {
                b.neg_mut();
            }
            text_proj.set_column(col, &a);
            image_proj.set_column(col, &b);
            rho.push(svd.singular_values[idx].clamp(0.0, 1.0));
        }
        let cross = cross_matrix(opts.cross_map, &rho);
        Ok(CcaModel {
            lambda: opts.lambda,
            cross_map: opts.cross_map,
            rho,
            text_proj,
            image_proj,
            cross,
            text_stats,
            image_stats,
        })
    }

    pub fn d(&self) -> usize {
        self.rho.len()
    }

    pub fn text_dim(&self) -> usize {
        self.text_proj.nrows()
    }

    pub fn image_dim(&self) -> usize {
        self.image_proj.nrows()
    }

    pub fn canonical_correlations(&self) -> &[f64] {
        &self.rho
    }

    pub fn leading_rho(&self) -> f64 {
        self.rho.first().copied().unwrap_or(0.0)
    }

    pub fn mean_rho(&self) -> f64 {
        if self.rho.is_empty() {
            0.0
        } else {
            self.rho.iter().sum::<f64>() / self.rho.len() as f64
        }
    }

    /// Keep only the leading `d` components.
    pub fn truncate(&self, d: usize) -> Result<Self> {
        if d == 0 || d > self.d() {
            return Err(Error::DimensionTooLarge { d, max: self.d() });
        }
        let rho = self.rho[..d].to_vec();
        Ok(CcaModel {
            lambda: self.lambda,
            cross_map: self.cross_map,
            text_proj: self.text_proj.columns(0, d).into_owned(),
            image_proj: self.image_proj.columns(0, d).into_owned(),
            cross: cross_matrix(self.cross_map, &rho),
            rho,
            text_stats: self.text_stats.clone(),
            image_stats: self.image_stats.clone(),
        })
    }

    pub fn project_text_standardized(&self, z: &[f64]) -> Result<Vec<f64>> {
        project(&self.text_proj, z)
    }

    pub fn project_image_standardized(&self, z: &[f64]) -> Result<Vec<f64>> {
        project(&self.image_proj, z)
    }

    /// Project raw text features (standardized with the stored stats).
    pub fn project_text(&self, t: &[f64]) -> Result<Vec<f64>> {
        self.project_text_standardized(&self.text_stats.apply(t)?)
    }

    pub fn project_image(&self, i: &[f64]) -> Result<Vec<f64>> {
        self.project_image_standardized(&self.image_stats.apply(i)?)
    }

    pub fn summary(&self) -> ModelSummary {
        ModelSummary::of(self)
    }
}

fn project(proj: &DMatrix<f64>, z: &[f64]) -> Result<Vec<f64>> {
    if z.len() != proj.nrows() {
        return Err(Error::LengthMismatch {
            expected: proj.nrows(),
            got: z.len(),
        });
    }
    let v = proj.tr_mul(&DVector::from_column_slice(z));
    Ok(v.iter().copied().collect())
}

fn cross_matrix(map: CrossMap, rho: &[f64]) -> DMatrix<f64> {
    match map {
        CrossMap::Identity => DMatrix::identity(rho.len(), rho.len()),
        CrossMap::Rho => DMatrix::from_diagonal(&DVector::from_column_slice(rho)),
    }
}

/// Largest admissible subspace dimension.
pub fn max_dim(text_dim: usize, image_dim: usize, n: usize) -> usize {
    text_dim.min(image_dim).min(n.saturating_sub(1))
}

/// Largest `d` whose canonical correlation is at least `threshold`, never below 1.
pub fn auto_dim(rho: &[f64], threshold: f64) -> usize {
    rho.iter().take_while(|r| **r >= threshold).count().max(1)
}

/// Fit at the maximal dimension and keep components with rho ≥ [`AUTO_D_MIN_RHO`].
pub fn fit_auto_d(t: &DMatrix<f64>, i: &DMatrix<f64>, lambda: f64, cross_map: CrossMap) -> Result<CcaModel> {
    let opts = CcaOptions {
        d: max_dim(t.ncols(), i.ncols(), t.nrows()),
        lambda,
        cross_map,
    };
    let full = CcaModel::fit_raw(t, i, &opts)?;
    full.truncate(auto_dim(&full.rho, AUTO_D_MIN_RHO))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use rand_distr::StandardNormal;

    fn gauss(rng: &mut ChaCha20Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    fn sample_corr(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for (a, b) in x.iter().zip(y) {
            sxy += (a - mx) * (b - my);
            sxx += (a - mx).powi(2);
            syy += (b - my).powi(2);
        }
        sxy / (sxx * syy).sqrt()
    }

    #[test]
    fn antisymmetric_two_rows() {
        let v = [1.0, -2.0, 0.5];
        let z = DMatrix::from_row_slice(2, 3, &[v[0], v[1], v[2], -v[0], -v[1], -v[2]]);
        let cov = covariances(&z, &z, 0.0).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                assert!((cov.sigma_tt[(a, b)] - v[a] * v[b]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn identical_modalities_give_unit_rho() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let x = gauss(&mut rng, 300, 5);
        let m = CcaModel::fit_raw(&x, &x, &CcaOptions { d: 5, lambda: 0.0, cross_map: CrossMap::Identity }).unwrap();
        for r in &m.rho {
            assert!((r - 1.0).abs() < 1e-6, "{r}");
        }
    }

    #[test]
    fn invertible_map_gives_unit_rho() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let x = gauss(&mut rng, 300, 4);
        let a = gauss(&mut rng, 4, 4) + DMatrix::identity(4, 4) * 3.0;
        let y = &x * a;
        let m = CcaModel::fit_raw(&x, &y, &CcaOptions { d: 4, lambda: 0.0, cross_map: CrossMap::Identity }).unwrap();
        assert!(m.rho.iter().all(|r| (r - 1.0).abs() < 1e-6), "{:?}", m.rho);
    }

    #[test]
    fn projections_correlate_at_rho() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let z = gauss(&mut rng, 800, 2);
        let t = DMatrix::from_fn(800, 4, |i, j| if j < 2 { z[(i, j)] } else { 0.0 }) + gauss(&mut rng, 800, 4) * 0.7;
        let im = DMatrix::from_fn(800, 3, |i, j| if j < 2 { z[(i, j)] } else { 0.0 }) + gauss(&mut rng, 800, 3) * 0.7;
        let m = CcaModel::fit_raw(&t, &im, &CcaOptions { d: 3, lambda: 0.0, cross_map: CrossMap::Identity }).unwrap();
        for k in 0..3 {
            let pt: Vec<f64> = (0..800).map(|r| m.project_text(t.row(r).iter().copied().collect::<Vec<_>>().as_slice()).unwrap()[k]).collect();
            let pi: Vec<f64> = (0..800).map(|r| m.project_image(im.row(r).iter().copied().collect::<Vec<_>>().as_slice()).unwrap()[k]).collect();
            assert!((sample_corr(&pt, &pi) - m.rho[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_input_projects_to_zero() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let t = gauss(&mut rng, 100, 3);
        let i = gauss(&mut rng, 100, 3);
        let m = CcaModel::fit(&t, &i, &CcaOptions { d: 2, lambda: 0.0, cross_map: CrossMap::Identity }).unwrap();
        assert_eq!(m.project_text_standardized(&[0.0; 3]).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(m.project_text(&[0.0; 2]), Err(Error::LengthMismatch { .. })));
    }

    /// Closed-form 2-D oracle: for d = 1 the text direction maximizes the
    /// Rayleigh quotient of `Σ_TI Σ_II^{-1} Σ_IT` against `Σ_TT`, which for
    /// 2×2 blocks is the top root of a quadratic.
    #[test]
    fn two_by_two_closed_form() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let n = 500;
        let lat = gauss(&mut rng, n, 1);
        let noise = gauss(&mut rng, n, 4);
        let t = DMatrix::from_fn(n, 2, |i, j| if j == 0 { lat[(i, 0)] + noise[(i, 0)] } else { 0.5 * lat[(i, 0)] + noise[(i, 1)] });
        let im = DMatrix::from_fn(n, 2, |i, j| if j == 0 { -lat[(i, 0)] + noise[(i, 2)] } else { noise[(i, 3)] });
        let (zt, _) = standardize(&t).unwrap();
        let (zi, _) = standardize(&im).unwrap();
        let m = CcaModel::fit(&zt, &zi, &CcaOptions { d: 1, lambda: 0.0, cross_map: CrossMap::Identity }).unwrap();

        let nf = n as f64;
        let s = |a: &DMatrix<f64>, b: &DMatrix<f64>| a.tr_mul(b) / nf;
        let (stt, sii, sti) = (s(&zt, &zt), s(&zi, &zi), s(&zt, &zi));
        let sii_inv = sii.clone().try_inverse().unwrap();
        let b_mat = &sti * sii_inv * sti.transpose();
        // det(B − μ A) = 0 → quadratic in μ
        let a = &stt;
        let qa = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
        let qb = -(b_mat[(0, 0)] * a[(1, 1)] + b_mat[(1, 1)] * a[(0, 0)] - b_mat[(0, 1)] * a[(1, 0)] - b_mat[(1, 0)] * a[(0, 1)]);
        let qc = b_mat[(0, 0)] * b_mat[(1, 1)] - b_mat[(0, 1)] * b_mat[(1, 0)];
        let mu = (-qb + (qb * qb - 4.0 * qa * qc).sqrt()) / (2.0 * qa);
        assert!((m.rho[0] - mu.sqrt()).abs() < 1e-9, "{} vs {}", m.rho[0], mu.sqrt());
        // direction: (B − μA) w = 0, normalized to wᵀAw = 1, sign-matched
        let w = DVector::from_column_slice(&[-(b_mat[(0, 1)] - mu * a[(0, 1)]), b_mat[(0, 0)] - mu * a[(0, 0)]]);
        let w = &w / (w.transpose() * a * &w)[(0, 0)].sqrt();
        let coord = m.project_text_standardized(&[zt[(0, 0)], zt[(0, 1)]]).unwrap()[0];
        let oracle = w[0] * zt[(0, 0)] + w[1] * zt[(0, 1)];
        assert!((coord.abs() - oracle.abs()).abs() < 1e-6, "{coord} vs {oracle}");
    }

    #[test]
    fn eigen_route_matches_svd_route() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let t = gauss(&mut rng, 400, 6);
        let i = &t.columns(0, 3) * 0.8 + gauss(&mut rng, 400, 3);
        let (zt, _) = standardize(&t).unwrap();
        let (zi, _) = standardize(&i).unwrap();
        let m = CcaModel::fit(&zt, &zi, &CcaOptions { d: 3, lambda: 1e-3, cross_map: CrossMap::Identity }).unwrap();
        let ev = whitened_product_eigenvalues(&covariances(&zt, &zi, 1e-3).unwrap()).unwrap();
        for (r, e) in m.rho.iter().zip(&ev) {
            assert!((r - e.max(0.0).sqrt()).abs() < 1e-9);
        }
    }

    #[test]
    fn singular_without_ridge() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let x = gauss(&mut rng, 50, 2);
        let t = DMatrix::from_fn(50, 3, |i, j| if j < 2 { x[(i, j)] } else { x[(i, 0)] + x[(i, 1)] });
        let i = gauss(&mut rng, 50, 2);
        let opts = CcaOptions { d: 1, lambda: 0.0, cross_map: CrossMap::Identity };
        assert!(matches!(CcaModel::fit(&t, &i, &opts), Err(Error::SingularCovariance { which: "text", .. })));
        let opts = CcaOptions { lambda: 1e-4, ..opts };
        assert!(CcaModel::fit(&t, &i, &opts).is_ok());
    }

    #[test]
    fn dimension_limits() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let t = gauss(&mut rng, 4, 3);
        let i = gauss(&mut rng, 4, 5);
        let opts = CcaOptions { d: 4, lambda: 1e-3, cross_map: CrossMap::Identity };
        assert!(matches!(CcaModel::fit(&t, &i, &opts), Err(Error::DimensionTooLarge { max: 3, .. })));
        assert!(matches!(covariances(&t, &gauss(&mut rng, 5, 2), 0.0), Err(Error::RowCountMismatch { .. })));
    }

    #[test]
    fn auto_dim_threshold() {
        assert_eq!(auto_dim(&[0.9, 0.5, 0.1, 0.05], 0.1), 3);
        assert_eq!(auto_dim(&[0.05], 0.1), 1);
    }

    #[test]
    fn rho_cross_map() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let t = gauss(&mut rng, 100, 3);
        let i = &t + gauss(&mut rng, 100, 3);
        let m = CcaModel::fit_raw(&t, &i, &CcaOptions { d: 2, lambda: 0.0, cross_map: CrossMap::Rho }).unwrap();
        assert_eq!(m.cross[(0, 0)], m.rho[0]);
        assert_eq!(m.cross[(0, 1)], 0.0);
        let tr = m.truncate(1).unwrap();
        assert_eq!(tr.rho, vec![m.rho[0]]);
        assert_eq!(tr.cross.shape(), (1, 1));
    }
}
