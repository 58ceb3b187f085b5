//! End-to-end fitting: normalize, optionally optimize, cluster, train.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::clustering::{cluster_multiscale, ClusterResult, ScaleConfig};
use crate::dataset::{normalize, Dataset, NormalizationStats, Points};
use crate::hyperopt::{optimize, OptimizationReport, OptimizerConfig};
use crate::kernel::BasisSet;
use crate::regression::{train, Hyperparameters, Method, Model, Regressor, TrainOptions};
use crate::Result;

/// Clusters `points` with a fresh PRNG seeded by `seed` and builds the basis.
pub fn build_basis(points: Points<'_>, scales: &ScaleConfig, seed: u64) -> Result<(BasisSet, ClusterResult)> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let clusters = cluster_multiscale(points, scales, &mut rng)?;
    let basis = BasisSet::from_clusters(points, &clusters, scales)?;
    Ok((basis, clusters))
}

#[derive(Debug, Clone)]
pub struct FitConfig {
    pub method: Method,
    pub initial: Hyperparameters,
    /// When set, hyperparameters are optimized before the final training.
    pub optimizer: Option<OptimizerConfig>,
    /// Clustering seed when not optimizing.
    pub cluster_seed: u64,
    pub train: TrainOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReport {
    pub method: Method,
    pub n: usize,
    pub d: usize,
    pub per_scale_counts: Vec<usize>,
    pub lml: f64,
    pub jitter: f64,
    pub cluster_seed: u64,
}

#[derive(Debug, Clone)]
pub struct Fit {
    pub model: Model,
    pub clusters: ClusterResult,
    pub report: TrainingReport,
    pub optimization: Option<OptimizationReport>,
    pub normalization: NormalizationStats,
}

impl Fit {
    /// Noise standard deviation in target units.
    pub fn sigma_original(&self) -> f64 {
        self.normalization.denormalize_std(self.model.hyper().sigma)
    }
}

/// Fits a model to raw (unnormalized) data. Predictions from the returned model
/// via [`Regressor::predict_original`] are in the data's own units.
pub fn fit(raw: &Dataset, cfg: &FitConfig) -> Result<Fit> {
    let (data, stats) = normalize(raw);
    fit_normalized(&data, stats, cfg)
}

/// Like [`fit`], for data already mapped by `stats`.
pub fn fit_normalized(data: &Dataset, stats: NormalizationStats, cfg: &FitConfig) -> Result<Fit> {
    cfg.initial.validate()?;
    let (hyper, seed, optimization) = match &cfg.optimizer {
        Some(opt) => {
            let mut opt = opt.clone();
            opt.train = cfg.train;
            let r = optimize(data, &cfg.initial, cfg.method, &opt)?;
            (r.best_hyper, r.cluster_seed, Some(r))
        }
        None => (cfg.initial, cfg.cluster_seed, None),
    };
    let (basis, clusters) = build_basis(data.points(), &hyper.scales, seed)?;
    let model = train(cfg.method, data, basis, &hyper, &cfg.train)?.with_normalization(stats.clone());
    let report = TrainingReport {
        method: cfg.method,
        n: data.count(),
        d: model.basis().size(),
        per_scale_counts: clusters.per_scale_counts.clone(),
        lml: model.lml(),
        jitter: model.jitter(),
        cluster_seed: seed,
    };
    Ok(Fit {
        model,
        clusters,
        report,
        optimization,
        normalization: stats,
    })
}
