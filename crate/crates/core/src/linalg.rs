//! Dense SPD factorization, triangular solves and log-determinants.

use nalgebra::{DMatrix, DMatrixViewMut, DVector};

use crate::par::if_parallel;
#[cfg(feature = "parallel")]
use crate::par::*;
use crate::{Error, Result};

/// Column block width of the blocked factorization.
const BLOCK: usize = 64;

/// What to do when a pivot fails.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JitterPolicy {
    /// Fail on the first non-positive pivot.
    None,
    /// Retry with `δ = epsilon * mean(diag)` added to the diagonal, doubling δ
    /// on each further retry.
    Relative { epsilon: f64, max_retries: u32 },
}

impl Default for JitterPolicy {
    fn default() -> Self {
        JitterPolicy::Relative {
            epsilon: 1e-10,
            max_retries: 5,
        }
    }
}

/// Lower-triangular `L` with `M + δI = L Lᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    lower: DMatrix<f64>,
    jitter: f64,
}

impl CholeskyFactor {
    /// Wraps an existing lower factor; the strict upper triangle is cleared.
    pub fn from_lower(mut lower: DMatrix<f64>, jitter: f64) -> Result<Self> {
        if !lower.is_square() {
            return Err(Error::DimensionMismatch {
                expected: lower.nrows(),
                found: lower.ncols(),
            });
        }
        if let Some(p) = (0..lower.nrows()).find(|&i| !(lower[(i, i)] > 0.0)) {
            return Err(Error::NotPositiveDefinite { pivot: p, jitter });
        }
        lower.fill_upper_triangle(0.0, 1);
        Ok(Self { lower, jitter })
    }

    pub fn order(&self) -> usize {
        self.lower.nrows()
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    /// Diagonal shift that was added before the factorization succeeded.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.order() {
            return Err(Error::DimensionMismatch {
                expected: self.order(),
                found: len,
            });
        }
        Ok(())
    }

    /// Forward substitution, `L x = b`.
    pub fn solve_lower(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(b.len())?;
        let mut x = b.clone();
        self.solve_lower_in_place(x.as_mut_slice());
        Ok(x)
    }

    pub(crate) fn solve_lower_in_place(&self, x: &mut [f64]) {
        let n = self.order();
        let l = self.lower.as_slice();
        for j in 0..n {
            let col = &l[j * n..(j + 1) * n];
            let xj = x[j] / col[j];
            x[j] = xj;
            for (xi, lij) in x[j + 1..].iter_mut().zip(&col[j + 1..]) {
                *xi -= lij * xj;
            }
        }
    }

    /// Back substitution, `Lᵀ x = b`.
    pub fn solve_upper(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(b.len())?;
        let mut x = b.clone();
        self.solve_upper_in_place(x.as_mut_slice());
        Ok(x)
    }

    pub(crate) fn solve_upper_in_place(&self, x: &mut [f64]) {
        let n = self.order();
        let l = self.lower.as_slice();
        for j in (0..n).rev() {
            let col = &l[j * n..(j + 1) * n];
            let s: f64 = x[j + 1..].iter().zip(&col[j + 1..]).map(|(a, b)| a * b).sum();
            x[j] = (x[j] - s) / col[j];
        }
    }

    /// `(L Lᵀ) x = b`.
    pub fn solve_spd(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(b.len())?;
        let mut x = b.clone();
        self.solve_lower_in_place(x.as_mut_slice());
        self.solve_upper_in_place(x.as_mut_slice());
        Ok(x)
    }

    /// `log |L Lᵀ| = 2 Σ log L_ii`.
    pub fn logdet(&self) -> f64 {
        2.0 * self.log_diag_sum()
    }

    /// `Σ log L_ii`, i.e. `log |L|`.
    pub fn log_diag_sum(&self) -> f64 {
        self.lower.diagonal().iter().map(|v| v.ln()).sum()
    }

    /// `L Lᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.lower * self.lower.transpose()
    }
}

/// `log |M|` from a factor of `M`.
pub fn logdet(factor: &CholeskyFactor) -> f64 {
    factor.logdet()
}

/// Largest `|m_ij - m_ji|`.
fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in j + 1..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Factors a symmetric positive-definite matrix, optionally retrying with a
/// growing diagonal shift.
pub fn cholesky(m: &DMatrix<f64>, policy: JitterPolicy) -> Result<CholeskyFactor> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    let asym = asymmetry(m);
    if asym > 1e-10 * m.norm() || asym.is_nan() {
        return Err(Error::AsymmetricInput { asymmetry: asym });
    }
    let n = m.nrows();
    let (base, retries) = match policy {
        JitterPolicy::None => (0.0, 0),
        JitterPolicy::Relative { epsilon, max_retries } => {
            let mean = if n == 0 { 0.0 } else { m.diagonal().mean().abs() };
            (epsilon * if mean > 0.0 { mean } else { 1.0 }, max_retries)
        }
    };
    let mut jitter = 0.0;
    let mut attempt = 0;
    loop {
        let mut a = m.clone();
        if jitter > 0.0 {
            for i in 0..n {
                a[(i, i)] += jitter;
            }
        }
        match factor_in_place(&mut a) {
            Ok(()) => {
                a.fill_upper_triangle(0.0, 1);
                return Ok(CholeskyFactor { lower: a, jitter });
            }
            Err(pivot) if attempt >= retries => {
                return Err(Error::NotPositiveDefinite { pivot, jitter });
            }
            Err(_) => {
                jitter = if attempt == 0 { base } else { 2.0 * jitter };
                attempt += 1;
            }
        }
    }
}

/// Right-looking blocked factorization on the lower triangle of `a`.
/// On failure returns the index of the first bad pivot.
fn factor_in_place(a: &mut DMatrix<f64>) -> std::result::Result<(), usize> {
    let n = a.nrows();
    let mut k0 = 0;
    while k0 < n {
        let k1 = (k0 + BLOCK).min(n);
        factor_panel(a.as_mut_slice(), n, k0, k1)?;
        if k1 < n {
            trailing_update(a, k0, k1);
        }
        k0 = k1;
    }
    Ok(())
}

/// Unblocked factorization of columns `k0..k1`, rows `k0..n`.
fn factor_panel(a: &mut [f64], n: usize, k0: usize, k1: usize) -> std::result::Result<(), usize> {
    for j in k0..k1 {
        let (head, tail) = a.split_at_mut((j + 1) * n);
        let col = &mut head[j * n..];
        let d = col[j];
        if !(d > 0.0) || !d.is_finite() {
            return Err(j);
        }
        let ljj = d.sqrt();
        col[j] = ljj;
        for v in &mut col[j + 1..n] {
            *v /= ljj;
        }
        let col = &*col;
        for c in j + 1..k1 {
            let lcj = col[c];
            let target = &mut tail[(c - j - 1) * n..(c - j) * n];
            for (t, s) in target[c..].iter_mut().zip(&col[c..n]) {
                *t -= s * lcj;
            }
        }
    }
    Ok(())
}

/// `A22 -= L21 L21ᵀ` on the lower part of the trailing columns `k1..n`.
fn trailing_update(a: &mut DMatrix<f64>, k0: usize, k1: usize) {
    let n = a.nrows();
    let panel = a.view((k1, k0), (n - k1, k1 - k0)).clone_owned();
    let panel_t = panel.transpose();
    let trailing = &mut a.as_mut_slice()[k1 * n..];
    if_parallel!(
        trailing.par_chunks_mut(BLOCK * n),
        trailing.chunks_mut(BLOCK * n)
    )
    .enumerate()
    .for_each(|(b, chunk)| {
        let cols = chunk.len() / n;
        let c0 = k1 + b * BLOCK;
        let mut block = DMatrixViewMut::from_slice(chunk, n, cols);
        let mut target = block.rows_mut(c0, n - c0);
        let left = panel.rows(c0 - k1, n - c0);
        let right = panel_t.columns(c0 - k1, cols);
        target.gemm(-1.0, &left, &right, 1.0);
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn random_spd(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
        let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let mut m = &b * b.transpose() + DMatrix::identity(n, n) * (n as f64 * 0.1);
        crate::kernel::mirror_upper(&mut m);
        m
    }

    #[test]
    fn two_by_two() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 3.0]);
        let f = cholesky(&m, JitterPolicy::None).unwrap();
        let l = f.lower();
        assert_eq!(l[(0, 0)], 2.0);
        assert_eq!(l[(1, 0)], 1.0);
        assert_eq!(l[(0, 1)], 0.0);
        assert!((l[(1, 1)] - 2f64.sqrt()).abs() < 1e-15);
        assert!((f.logdet() - 8f64.ln()).abs() < 1e-14);
        assert_eq!(f.jitter(), 0.0);

        let b = DVector::from_vec(vec![2.0, 3.0]);
        let x = f.solve_spd(&b).unwrap();
        assert!((&m * &x - &b).norm() < 1e-12);
    }

    #[test]
    fn identity_factors_to_identity() {
        for n in [1, 5, 70, 130] {
            let f = cholesky(&DMatrix::identity(n, n), JitterPolicy::None).unwrap();
            assert_eq!(f.lower(), &DMatrix::identity(n, n));
            assert_eq!(f.logdet(), 0.0);
            let b = DVector::from_fn(n, |i, _| i as f64);
            assert_eq!(f.solve_lower(&b).unwrap(), b);
            assert_eq!(f.solve_upper(&b).unwrap(), b);
        }
    }

    #[test]
    fn indefinite_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            cholesky(&m, JitterPolicy::None),
            Err(Error::NotPositiveDefinite { pivot: 1, .. })
        ));
        // jitter of order 1e-10 cannot rescue an eigenvalue of -1
        assert!(cholesky(&m, JitterPolicy::default()).is_err());
    }

    #[test]
    fn asymmetric_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.1, 3.0]);
        assert!(matches!(
            cholesky(&m, JitterPolicy::None),
            Err(Error::AsymmetricInput { .. })
        ));
        assert!(cholesky(&DMatrix::zeros(2, 3), JitterPolicy::None).is_err());
    }

    #[test]
    fn jitter_rescues_singular_psd() {
        // rank-one PSD matrix: exact factorization fails at the second pivot
        let v = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let m = &v * v.transpose();
        assert!(cholesky(&m, JitterPolicy::None).is_err());
        let f = cholesky(&m, JitterPolicy::default()).unwrap();
        assert!(f.jitter() > 0.0);
        let expected = &m + DMatrix::identity(3, 3) * f.jitter();
        assert!((f.reconstruct() - expected).norm() <= 1e-10 * m.norm());
    }

    #[test]
    fn dimension_mismatch() {
        let f = cholesky(&DMatrix::identity(3, 3), JitterPolicy::None).unwrap();
        let b = DVector::zeros(2);
        assert!(f.solve_lower(&b).is_err());
        assert!(f.solve_upper(&b).is_err());
        assert!(f.solve_spd(&b).is_err());
    }

    #[test]
    fn residual_random_16() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(16);
        let m = random_spd(&mut rng, 16);
        let b = DVector::from_fn(16, |_, _| rng.random_range(-1.0..1.0));
        let f = cholesky(&m, JitterPolicy::None).unwrap();
        let x = f.solve_spd(&b).unwrap();
        assert!((&m * &x - &b).norm() <= 1e-10 * b.norm());
    }

    #[test]
    fn logdet_matches_eigenvalues() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(12);
        let m = random_spd(&mut rng, 12);
        let f = cholesky(&m, JitterPolicy::None).unwrap();
        let oracle: f64 = m.clone().symmetric_eigenvalues().iter().map(|l| l.ln()).sum();
        assert!((f.logdet() - oracle).abs() <= 1e-8 * oracle.abs().max(1.0));
    }

    #[test]
    fn reconstruction_up_to_256() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(256);
        for n in [1, 2, 63, 64, 65, 129, 256] {
            let m = random_spd(&mut rng, n);
            let f = cholesky(&m, JitterPolicy::None).unwrap();
            assert!((f.reconstruct() - &m).norm() <= 1e-10 * m.norm(), "n = {n}");
            let l = f.lower();
            for i in 0..n {
                assert!(l[(i, i)] > 0.0);
                for j in i + 1..n {
                    assert_eq!(l[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn ill_conditioned_residual() {
        // condition number 1e8 via a prescribed spectrum
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(99);
        let n = 40;
        let q = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0)).qr().q();
        let spectrum = DVector::from_fn(n, |i, _| 10f64.powf(-8.0 * i as f64 / (n - 1) as f64));
        let mut m = &q * DMatrix::from_diagonal(&spectrum) * q.transpose();
        crate::kernel::mirror_upper(&mut m);
        let f = cholesky(&m, JitterPolicy::None).unwrap();
        let b = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let x = f.solve_spd(&b).unwrap();
        assert!((&m * &x - &b).norm() <= 1e-9 * b.norm());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn logdet_scales(seed in any::<u64>(), n in 1usize..40, c in 0.01..100.0f64) {
                let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
                let m = random_spd(&mut rng, n);
                let a = cholesky(&m, JitterPolicy::None).unwrap().logdet();
                let b = cholesky(&(&m * c), JitterPolicy::None).unwrap().logdet();
                prop_assert!((b - (n as f64 * c.ln() + a)).abs() <= 1e-10 * (1.0 + b.abs()));
            }
        }
    }
}
