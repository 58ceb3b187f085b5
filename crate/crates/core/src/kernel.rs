//! Multiscale Gaussian basis and the matrices built from it.

use nalgebra::{DMatrix, DVector};

use crate::clustering::{sq_dist, ClusterResult, ScaleConfig};
use crate::dataset::Points;
use crate::par::if_parallel;
#[cfg(feature = "parallel")]
use crate::par::*;
use crate::{Error, Result};

/// D Gaussian basis functions, each with its own center and width.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSet {
    centers: Vec<f64>,
    dim: usize,
    scales: Vec<f64>,
    /// 1-based scale index of each center; informational only.
    scale_index: Vec<usize>,
}

impl BasisSet {
    pub fn new(centers: Vec<f64>, dim: usize, scales: Vec<f64>) -> Result<Self> {
        let idx = vec![1; scales.len()];
        Self::with_scale_index(centers, dim, scales, idx)
    }

    pub fn with_scale_index(
        centers: Vec<f64>,
        dim: usize,
        scales: Vec<f64>,
        scale_index: Vec<usize>,
    ) -> Result<Self> {
        if dim == 0 || scales.is_empty() {
            return Err(Error::invalid("a basis needs at least one center of positive dimension"));
        }
        if centers.len() != scales.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: scales.len() * dim,
                found: centers.len(),
            });
        }
        if scale_index.len() != scales.len() {
            return Err(Error::DimensionMismatch {
                expected: scales.len(),
                found: scale_index.len(),
            });
        }
        if let Some(h) = scales.iter().find(|h| !(**h > 0.0 && h.is_finite())) {
            return Err(Error::invalid(format!("basis scale must be positive, got {h}")));
        }
        Ok(Self {
            centers,
            dim,
            scales,
            scale_index,
        })
    }

    /// Copies the selected training rows as centers, each with the width of its scale.
    pub fn from_clusters(points: Points<'_>, clusters: &ClusterResult, cfg: &ScaleConfig) -> Result<Self> {
        let centers = clusters
            .centers
            .iter()
            .flat_map(|c| points.get(c.row).iter().copied())
            .collect();
        let scales = clusters.centers.iter().map(|c| cfg.scale(c.scale)).collect();
        let idx = clusters.centers.iter().map(|c| c.scale).collect();
        Self::with_scale_index(centers, points.dim(), scales, idx)
    }

    /// One center per point, all with width `h`.
    pub fn full(points: Points<'_>, h: f64) -> Result<Self> {
        Self::new(points.as_slice().to_vec(), points.dim(), vec![h; points.len()])
    }

    pub fn size(&self) -> usize {
        self.scales.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn center(&self, j: usize) -> &[f64] {
        &self.centers[j * self.dim..(j + 1) * self.dim]
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn scale_index(&self) -> &[usize] {
        &self.scale_index
    }

    pub fn max_scale(&self) -> f64 {
        self.scales.iter().copied().fold(0.0, f64::max)
    }

    /// φ(q) into `out` (length D).
    #[inline]
    pub fn eval_into(&self, q: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = gaussian(sq_dist(q, self.center(j)), self.scales[j]);
        }
    }

    pub fn eval(&self, q: &[f64]) -> DVector<f64> {
        let mut v = DVector::zeros(self.size());
        self.eval_into(q, v.as_mut_slice());
        v
    }

    pub(crate) fn check_dim(&self, found: usize) -> Result<()> {
        if found != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found,
            });
        }
        Ok(())
    }
}

#[inline]
fn gaussian(sq: f64, h: f64) -> f64 {
    (-sq / (h * h)).exp()
}

/// `exp(-||q - center||² / h²)`.
pub fn basis_eval(q: &[f64], center: &[f64], h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::invalid(format!("basis width must be positive, got {h}")));
    }
    if q.len() != center.len() {
        return Err(Error::DimensionMismatch {
            expected: center.len(),
            found: q.len(),
        });
    }
    Ok(gaussian(sq_dist(q, center), h))
}

/// Φ, the D×N matrix with entry (j, n) = φ_j(q_n).
pub fn design_matrix(points: Points<'_>, basis: &BasisSet) -> Result<DMatrix<f64>> {
    basis.check_dim(points.dim())?;
    let d = basis.size();
    let mut phi = DMatrix::zeros(d, points.len());
    // column-major: column n is a contiguous run of D entries
    if_parallel!(
        phi.as_mut_slice().par_chunks_mut(d).with_min_len(16),
        phi.as_mut_slice().chunks_mut(d)
    )
    .enumerate()
    .for_each(|(n, col)| basis.eval_into(points.get(n), col));
    Ok(phi)
}

/// Copies the upper triangle onto the lower one.
pub(crate) fn mirror_upper(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in j + 1..n {
            m[(i, j)] = m[(j, i)];
        }
    }
}

/// ΦΦᵀ, exactly symmetric.
pub fn gram(phi: &DMatrix<f64>) -> DMatrix<f64> {
    let mut g = phi * phi.transpose();
    mirror_upper(&mut g);
    g
}

/// `σ_p² ΦᵀΦ` from a precomputed design matrix.
pub fn kernel_from_design(phi: &DMatrix<f64>, sigma_p: f64) -> DMatrix<f64> {
    let mut k = phi.tr_mul(phi);
    k *= sigma_p * sigma_p;
    mirror_upper(&mut k);
    k
}

/// K with `K_mn = σ_p² Σ_j φ_j(q_m) φ_j(q_n)`.
pub fn kernel_matrix(points: Points<'_>, basis: &BasisSet, sigma_p: f64) -> Result<DMatrix<f64>> {
    check_sigma_p(sigma_p)?;
    let phi = design_matrix(points, basis)?;
    Ok(kernel_from_design(&phi, sigma_p))
}

/// `k_*` with entries `k(q_n, q_test)`.
pub fn kstar(q_test: &[f64], points: Points<'_>, basis: &BasisSet, sigma_p: f64) -> Result<DVector<f64>> {
    check_sigma_p(sigma_p)?;
    basis.check_dim(q_test.len())?;
    let phi = design_matrix(points, basis)?;
    Ok(kstar_from_design(&phi, &basis.eval(q_test), sigma_p))
}

/// `σ_p² Φᵀ φ(q_*)`.
pub fn kstar_from_design(phi: &DMatrix<f64>, phi_star: &DVector<f64>, sigma_p: f64) -> DVector<f64> {
    let mut k = phi.tr_mul(phi_star);
    k *= sigma_p * sigma_p;
    k
}

fn check_sigma_p(sigma_p: f64) -> Result<()> {
    if !(sigma_p > 0.0 && sigma_p.is_finite()) {
        return Err(Error::invalid(format!("sigma_p must be positive, got {sigma_p}")));
    }
    Ok(())
}
