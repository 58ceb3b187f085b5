//! Weight-space ("method D") and function-space ("method N") regression over
//! a multiscale basis.
//!
//! Method D works with the D×D posterior precision
//! `Σ⁻¹ = ΦΦᵀ/σ² + I/σ_p²` and costs O(ND²) to train and O(D) per predicted
//! mean. Method N works with the N×N covariance `K + σ²I`, `K = σ_p² ΦᵀΦ`, and
//! costs O(N³) to train and O(ND) per mean. Both give the same predictive
//! distribution and the same log-marginal likelihood; the D-path evaluates the
//! latter through the determinant identity
//! `σ^(-2N) |Σ| / |Σ_p| = 1 / |K + σ²I|`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::clustering::ScaleConfig;
use crate::dataset::{Dataset, NormalizationStats, Points};
use crate::kernel::{design_matrix, gram, kernel_from_design, kstar_from_design, BasisSet};
use crate::linalg::{cholesky, CholeskyFactor, JitterPolicy};
use crate::par::if_parallel;
#[cfg(feature = "parallel")]
use crate::par::*;
use crate::{Error, Result};

/// Method N refuses larger training sets unless told otherwise.
pub const DEFAULT_MAX_N: usize = 20_000;

/// Largest N for which [`logdet_identity_residual`] builds the dense N×N side.
pub const LOGDET_CHECK_MAX_N: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparameters {
    /// Noise standard deviation.
    pub sigma: f64,
    /// Prior weight standard deviation (`Σ_p = σ_p² I`).
    pub sigma_p: f64,
    pub scales: ScaleConfig,
}

impl Hyperparameters {
    pub fn new(sigma: f64, sigma_p: f64, scales: ScaleConfig) -> Result<Self> {
        let h = Self { sigma, sigma_p, scales };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.sigma_p > 0.0 && self.sigma_p.is_finite()) {
            return Err(Error::invalid(format!("sigma_p must be positive, got {}", self.sigma_p)));
        }
        self.scales.validate()
    }

    fn noise_var(&self) -> f64 {
        self.sigma * self.sigma
    }

    fn prior_var(&self) -> f64 {
        self.sigma_p * self.sigma_p
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub jitter: JitterPolicy,
    /// Upper bound on N for method N.
    pub max_n: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            jitter: JitterPolicy::default(),
            max_n: DEFAULT_MAX_N,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    D,
    N,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::D => "D",
            Method::N => "N",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "D" | "d" => Ok(Method::D),
            "N" | "n" => Ok(Method::N),
            other => Err(Error::invalid(format!("unknown method {other:?} (expected D or N)"))),
        }
    }
}

/// Predictive distribution `y_* ~ N(mean, variance)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
}

/// Common prediction surface of both trained models.
pub trait Regressor: Sync {
    fn dim(&self) -> usize;
    fn basis(&self) -> &BasisSet;
    fn hyper(&self) -> &Hyperparameters;
    fn normalization(&self) -> &NormalizationStats;
    fn lml(&self) -> f64;
    /// Diagonal shift applied during factorization.
    fn jitter(&self) -> f64;

    /// Mean and variance at a point in the model's (normalized) input space.
    fn predict(&self, q: &[f64]) -> Result<Prediction>;

    fn predict_mean(&self, q: &[f64]) -> Result<f64>;

    /// Predicts every point, fanning out across workers when enabled.
    fn predict_batch(&self, points: Points<'_>) -> Result<Vec<Prediction>> {
        if_parallel!(
            (0..points.len()).into_par_iter().with_min_len(32),
            0..points.len()
        )
        .map(|i| self.predict(points.get(i)))
        .collect()
    }

    fn predict_mean_batch(&self, points: Points<'_>) -> Result<Vec<f64>> {
        if_parallel!(
            (0..points.len()).into_par_iter().with_min_len(64),
            0..points.len()
        )
        .map(|i| self.predict_mean(points.get(i)))
        .collect()
    }

    /// Predicts at a point given in original units and maps the result back.
    fn predict_original(&self, q: &[f64]) -> Result<Prediction> {
        let norm = self.normalization();
        if q.len() != norm.dim() {
            return Err(Error::DimensionMismatch {
                expected: norm.dim(),
                found: q.len(),
            });
        }
        let p = self.predict(&norm.normalize_point(q))?;
        Ok(Prediction {
            mean: norm.denormalize_mean(p.mean),
            variance: norm.denormalize_variance(p.variance),
        })
    }
}

fn check_training(data: &Dataset, basis: &BasisSet) -> Result<()> {
    if data.count() == 0 {
        return Err(Error::invalid("training set is empty"));
    }
    basis.check_dim(data.dim_in())
}

/// Weight-space model: factor `L_D` of `Σ⁻¹` and posterior weight mean `w̄`.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodDModel {
    basis: BasisSet,
    chol_precision: CholeskyFactor,
    weights: DVector<f64>,
    hyper: Hyperparameters,
    norm: NormalizationStats,
    lml: f64,
}

pub fn train_d(data: &Dataset, basis: BasisSet, hyper: &Hyperparameters) -> Result<MethodDModel> {
    train_d_with(data, basis, hyper, &TrainOptions::default())
}

pub fn train_d_with(
    data: &Dataset,
    basis: BasisSet,
    hyper: &Hyperparameters,
    opts: &TrainOptions,
) -> Result<MethodDModel> {
    hyper.validate()?;
    check_training(data, &basis)?;
    let phi = design_matrix(data.points(), &basis)?;
    let mut precision = gram(&phi);
    precision /= hyper.noise_var();
    let inv_prior = 1.0 / hyper.prior_var();
    for j in 0..basis.size() {
        precision[(j, j)] += inv_prior;
    }
    let chol = cholesky(&precision, opts.jitter)?;
    let y = DVector::from_column_slice(data.targets());
    let mut weights = chol.solve_spd(&(&phi * &y))?;
    weights /= hyper.noise_var();
    let lml = lml_d(&phi, &y, &weights, &chol, hyper);
    Ok(MethodDModel {
        basis,
        chol_precision: chol,
        weights,
        hyper: *hyper,
        norm: NormalizationStats::identity(data.dim_in()),
        lml,
    })
}

/// Log-marginal likelihood from the method-D quantities:
/// `-(y - Φᵀw̄)ᵀy / (2σ²) - Σ_j log L_D,jj - (D/2) log σ_p² - (N/2) log(2πσ²)`.
pub fn lml_d(
    phi: &DMatrix<f64>,
    y: &DVector<f64>,
    weights: &DVector<f64>,
    chol_precision: &CholeskyFactor,
    hyper: &Hyperparameters,
) -> f64 {
    let n = y.len() as f64;
    let d = weights.len() as f64;
    let fitted = phi.tr_mul(weights);
    let quad = (y - fitted).dot(y);
    -quad / (2.0 * hyper.noise_var())
        - chol_precision.log_diag_sum()
        - 0.5 * d * hyper.prior_var().ln()
        - 0.5 * n * (2.0 * PI * hyper.noise_var()).ln()
}

impl MethodDModel {
    /// Reassembles a model from stored parts.
    pub fn from_parts(
        basis: BasisSet,
        chol_precision: CholeskyFactor,
        weights: DVector<f64>,
        hyper: Hyperparameters,
        norm: NormalizationStats,
        lml: f64,
    ) -> Result<Self> {
        if chol_precision.order() != basis.size() || weights.len() != basis.size() {
            return Err(Error::DimensionMismatch {
                expected: basis.size(),
                found: weights.len(),
            });
        }
        if norm.dim() != basis.dim() {
            return Err(Error::DimensionMismatch {
                expected: basis.dim(),
                found: norm.dim(),
            });
        }
        Ok(Self {
            basis,
            chol_precision,
            weights,
            hyper,
            norm,
            lml,
        })
    }

    pub fn with_normalization(mut self, norm: NormalizationStats) -> Self {
        self.norm = norm;
        self
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn chol_precision(&self) -> &CholeskyFactor {
        &self.chol_precision
    }
}

impl Regressor for MethodDModel {
    fn dim(&self) -> usize {
        self.basis.dim()
    }

    fn basis(&self) -> &BasisSet {
        &self.basis
    }

    fn hyper(&self) -> &Hyperparameters {
        &self.hyper
    }

    fn normalization(&self) -> &NormalizationStats {
        &self.norm
    }

    fn lml(&self) -> f64 {
        self.lml
    }

    fn jitter(&self) -> f64 {
        self.chol_precision.jitter()
    }

    fn predict(&self, q: &[f64]) -> Result<Prediction> {
        self.basis.check_dim(q.len())?;
        let mut phi = vec![0.0; self.basis.size()];
        self.basis.eval_into(q, &mut phi);
        let mean = phi.iter().zip(self.weights.iter()).map(|(a, b)| a * b).sum();
        // φᵀ Σ φ = |L_D⁻¹ φ|²
        self.chol_precision.solve_lower_in_place(&mut phi);
        let spread: f64 = phi.iter().map(|v| v * v).sum();
        Ok(Prediction {
            mean,
            variance: spread + self.hyper.noise_var(),
        })
    }

    fn predict_mean(&self, q: &[f64]) -> Result<f64> {
        self.basis.check_dim(q.len())?;
        let mut acc = 0.0;
        for j in 0..self.basis.size() {
            let h = self.basis.scales()[j];
            let sq = crate::clustering::sq_dist(q, self.basis.center(j));
            acc += (-sq / (h * h)).exp() * self.weights[j];
        }
        Ok(acc)
    }
}

/// Function-space model: factor `L_N` of `K + σ²I` and dual weights `α`.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodNModel {
    chol_cov: CholeskyFactor,
    alpha: DVector<f64>,
    training_inputs: Vec<f64>,
    basis: BasisSet,
    hyper: Hyperparameters,
    norm: NormalizationStats,
    lml: f64,
    /// Φ over the retained inputs, rebuilt on load.
    phi: DMatrix<f64>,
}

pub fn train_n(data: &Dataset, basis: BasisSet, hyper: &Hyperparameters) -> Result<MethodNModel> {
    train_n_with(data, basis, hyper, &TrainOptions::default())
}

pub fn train_n_with(
    data: &Dataset,
    basis: BasisSet,
    hyper: &Hyperparameters,
    opts: &TrainOptions,
) -> Result<MethodNModel> {
    hyper.validate()?;
    check_training(data, &basis)?;
    if data.count() > opts.max_n {
        return Err(Error::TooLarge {
            n: data.count(),
            limit: opts.max_n,
        });
    }
    let phi = design_matrix(data.points(), &basis)?;
    let mut cov = kernel_from_design(&phi, hyper.sigma_p);
    for i in 0..data.count() {
        cov[(i, i)] += hyper.noise_var();
    }
    let chol = cholesky(&cov, opts.jitter)?;
    let y = DVector::from_column_slice(data.targets());
    let alpha = chol.solve_spd(&y)?;
    let lml = lml_n(&y, &alpha, &chol);
    Ok(MethodNModel {
        chol_cov: chol,
        alpha,
        training_inputs: data.inputs().to_vec(),
        basis,
        hyper: *hyper,
        norm: NormalizationStats::identity(data.dim_in()),
        lml,
        phi,
    })
}

/// `-½ yᵀα - log|L_N| - (N/2) log 2π`.
pub fn lml_n(y: &DVector<f64>, alpha: &DVector<f64>, chol_cov: &CholeskyFactor) -> f64 {
    -0.5 * y.dot(alpha) - chol_cov.log_diag_sum() - 0.5 * y.len() as f64 * (2.0 * PI).ln()
}

impl MethodNModel {
    pub fn from_parts(
        chol_cov: CholeskyFactor,
        alpha: DVector<f64>,
        training_inputs: Vec<f64>,
        basis: BasisSet,
        hyper: Hyperparameters,
        norm: NormalizationStats,
        lml: f64,
    ) -> Result<Self> {
        let points = Points::new(&training_inputs, basis.dim())?;
        if chol_cov.order() != points.len() || alpha.len() != points.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                found: alpha.len(),
            });
        }
        if norm.dim() != basis.dim() {
            return Err(Error::DimensionMismatch {
                expected: basis.dim(),
                found: norm.dim(),
            });
        }
        let phi = design_matrix(points, &basis)?;
        Ok(Self {
            chol_cov,
            alpha,
            training_inputs,
            basis,
            hyper,
            norm,
            lml,
            phi,
        })
    }

    pub fn with_normalization(mut self, norm: NormalizationStats) -> Self {
        self.norm = norm;
        self
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn chol_cov(&self) -> &CholeskyFactor {
        &self.chol_cov
    }

    pub fn training_inputs(&self) -> Points<'_> {
        Points::new(&self.training_inputs, self.basis.dim()).expect("validated at construction")
    }

    fn kstar(&self, q: &[f64]) -> Result<(DVector<f64>, f64)> {
        self.basis.check_dim(q.len())?;
        let phi_star = self.basis.eval(q);
        let kss = self.hyper.prior_var() * phi_star.norm_squared();
        Ok((kstar_from_design(&self.phi, &phi_star, self.hyper.sigma_p), kss))
    }
}

impl Regressor for MethodNModel {
    fn dim(&self) -> usize {
        self.basis.dim()
    }

    fn basis(&self) -> &BasisSet {
        &self.basis
    }

    fn hyper(&self) -> &Hyperparameters {
        &self.hyper
    }

    fn normalization(&self) -> &NormalizationStats {
        &self.norm
    }

    fn lml(&self) -> f64 {
        self.lml
    }

    fn jitter(&self) -> f64 {
        self.chol_cov.jitter()
    }

    fn predict(&self, q: &[f64]) -> Result<Prediction> {
        let (mut ks, kss) = self.kstar(q)?;
        let mean = ks.dot(&self.alpha);
        self.chol_cov.solve_lower_in_place(ks.as_mut_slice());
        let explained = ks.norm_squared();
        Ok(Prediction {
            mean,
            variance: (kss - explained).max(0.0) + self.hyper.noise_var(),
        })
    }

    fn predict_mean(&self, q: &[f64]) -> Result<f64> {
        let (ks, _) = self.kstar(q)?;
        Ok(ks.dot(&self.alpha))
    }
}

/// A trained model of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    D(MethodDModel),
    N(MethodNModel),
}

impl Model {
    pub fn method(&self) -> Method {
        match self {
            Model::D(_) => Method::D,
            Model::N(_) => Method::N,
        }
    }

    fn inner(&self) -> &dyn Regressor {
        match self {
            Model::D(m) => m,
            Model::N(m) => m,
        }
    }

    pub fn with_normalization(self, norm: NormalizationStats) -> Self {
        match self {
            Model::D(m) => Model::D(m.with_normalization(norm)),
            Model::N(m) => Model::N(m.with_normalization(norm)),
        }
    }
}

impl Regressor for Model {
    fn dim(&self) -> usize {
        self.inner().dim()
    }
    fn basis(&self) -> &BasisSet {
        self.inner().basis()
    }
    fn hyper(&self) -> &Hyperparameters {
        self.inner().hyper()
    }
    fn normalization(&self) -> &NormalizationStats {
        self.inner().normalization()
    }
    fn lml(&self) -> f64 {
        self.inner().lml()
    }
    fn jitter(&self) -> f64 {
        self.inner().jitter()
    }
    fn predict(&self, q: &[f64]) -> Result<Prediction> {
        self.inner().predict(q)
    }
    fn predict_mean(&self, q: &[f64]) -> Result<f64> {
        self.inner().predict_mean(q)
    }
}

pub fn train(
    method: Method,
    data: &Dataset,
    basis: BasisSet,
    hyper: &Hyperparameters,
    opts: &TrainOptions,
) -> Result<Model> {
    Ok(match method {
        Method::D => Model::D(train_d_with(data, basis, hyper, opts)?),
        Method::N => Model::N(train_n_with(data, basis, hyper, opts)?),
    })
}

/// `|LHS - RHS|` of the log-space determinant identity
/// `-2N log σ - log|Σ⁻¹| - D log σ_p² = -log|K + σ²I|`.
pub fn logdet_identity_residual(data: &Dataset, basis: &BasisSet, hyper: &Hyperparameters) -> Result<f64> {
    hyper.validate()?;
    check_training(data, basis)?;
    if data.count() > LOGDET_CHECK_MAX_N {
        return Err(Error::TooLarge {
            n: data.count(),
            limit: LOGDET_CHECK_MAX_N,
        });
    }
    let n = data.count() as f64;
    let d = basis.size() as f64;
    let phi = design_matrix(data.points(), basis)?;

    let mut precision = gram(&phi) / hyper.noise_var();
    for j in 0..basis.size() {
        precision[(j, j)] += 1.0 / hyper.prior_var();
    }
    let lhs = -2.0 * n * hyper.sigma.ln()
        - cholesky(&precision, JitterPolicy::None)?.logdet()
        - d * hyper.prior_var().ln();

    let mut cov = kernel_from_design(&phi, hyper.sigma_p);
    for i in 0..data.count() {
        cov[(i, i)] += hyper.noise_var();
    }
    let rhs = -cholesky(&cov, JitterPolicy::None)?.logdet();
    Ok((lhs - rhs).abs())
}

/// Conventional GP with the Gaussian kernel `exp(-|q - q'|² / h²)` over all
/// training points; the reference the sparse model is compared against.
#[derive(Debug, Clone)]
pub struct StandardGp {
    chol: CholeskyFactor,
    alpha: DVector<f64>,
    inputs: Vec<f64>,
    dim: usize,
    pub h: f64,
    pub sigma: f64,
    pub lml: f64,
}

impl StandardGp {
    pub fn train(data: &Dataset, h: f64, sigma: f64, jitter: JitterPolicy) -> Result<Self> {
        if !(h > 0.0 && sigma > 0.0) {
            return Err(Error::invalid("kernel width and noise must be positive"));
        }
        if data.count() == 0 {
            return Err(Error::invalid("training set is empty"));
        }
        let pts = data.points();
        let n = data.count();
        let mut k = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in j..n {
                let v = (-crate::clustering::sq_dist(pts.get(i), pts.get(j)) / (h * h)).exp();
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
            k[(j, j)] += sigma * sigma;
        }
        let chol = cholesky(&k, jitter)?;
        let y = DVector::from_column_slice(data.targets());
        let alpha = chol.solve_spd(&y)?;
        let lml = lml_n(&y, &alpha, &chol);
        Ok(Self {
            chol,
            alpha,
            inputs: data.inputs().to_vec(),
            dim: data.dim_in(),
            h,
            sigma,
            lml,
        })
    }

    pub fn predict(&self, q: &[f64]) -> Prediction {
        let h2 = self.h * self.h;
        let mut ks: DVector<f64> = DVector::from_iterator(
            self.alpha.len(),
            self.inputs
                .chunks_exact(self.dim)
                .map(|p| (-crate::clustering::sq_dist(p, q) / h2).exp()),
        );
        let mean = ks.dot(&self.alpha);
        self.chol.solve_lower_in_place(ks.as_mut_slice());
        Prediction {
            mean,
            variance: (1.0 - ks.norm_squared()).max(0.0) + self.sigma * self.sigma,
        }
    }
}
