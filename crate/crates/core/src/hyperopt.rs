//! Derivative-free maximization of the log-marginal likelihood.
//!
//! The objective re-runs the hierarchical clustering on every call, since the
//! centers depend on the scales and on `gamma`. The clustering seed is fixed
//! for a whole optimization run, which makes the objective a deterministic
//! function of the parameters.

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::dataset::Dataset;
use crate::par::if_parallel;
#[cfg(feature = "parallel")]
use crate::par::*;
use crate::pipeline::build_basis;
use crate::regression::{train, Hyperparameters, Method, Regressor, StandardGp, TrainOptions};
use crate::{Error, Result};

/// Hyperparameters the simplex may move. The scale count is never free.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FreeParam {
    Sigma,
    SigmaP,
    H1,
    Beta,
    Gamma,
}

impl FreeParam {
    pub fn name(self) -> &'static str {
        match self {
            FreeParam::Sigma => "sigma",
            FreeParam::SigmaP => "sigma_p",
            FreeParam::H1 => "h1",
            FreeParam::Beta => "beta",
            FreeParam::Gamma => "gamma",
        }
    }

    fn get(self, h: &Hyperparameters) -> f64 {
        match self {
            FreeParam::Sigma => h.sigma,
            FreeParam::SigmaP => h.sigma_p,
            FreeParam::H1 => h.scales.h1,
            FreeParam::Beta => h.scales.beta,
            FreeParam::Gamma => h.scales.gamma,
        }
    }

    fn set(self, h: &mut Hyperparameters, v: f64) {
        match self {
            FreeParam::Sigma => h.sigma = v,
            FreeParam::SigmaP => h.sigma_p = v,
            FreeParam::H1 => h.scales.h1 = v,
            FreeParam::Beta => h.scales.beta = v,
            FreeParam::Gamma => h.scales.gamma = v,
        }
    }

    /// Positive parameters are mapped by `ln`, unit-interval ones by logit.
    fn is_unit_interval(self) -> bool {
        matches!(self, FreeParam::Beta | FreeParam::Gamma)
    }
}

impl std::str::FromStr for FreeParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigma" => Ok(FreeParam::Sigma),
            "sigma_p" | "sigma-p" => Ok(FreeParam::SigmaP),
            "h1" => Ok(FreeParam::H1),
            "beta" => Ok(FreeParam::Beta),
            "gamma" => Ok(FreeParam::Gamma),
            other => Err(Error::invalid(format!("unknown hyperparameter {other:?}"))),
        }
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Maps the free parameters to unconstrained coordinates.
pub fn transform(hyper: &Hyperparameters, free: &[FreeParam]) -> Result<Vec<f64>> {
    hyper.validate()?;
    Ok(free
        .iter()
        .map(|p| {
            let v = p.get(hyper);
            if p.is_unit_interval() {
                logit(v)
            } else {
                v.ln()
            }
        })
        .collect())
}

/// Inverse of [`transform`]; parameters not listed in `free` are taken from `base`.
pub fn untransform(base: &Hyperparameters, free: &[FreeParam], x: &[f64]) -> Hyperparameters {
    let mut h = *base;
    for (p, &v) in free.iter().zip(x) {
        p.set(&mut h, if p.is_unit_interval() { logistic(v) } else { v.exp() });
    }
    h
}

/// Negative log-marginal likelihood; +∞ when the hyperparameters are invalid
/// or the factorization fails.
pub fn objective(data: &Dataset, hyper: &Hyperparameters, method: Method, cluster_seed: u64) -> f64 {
    objective_with(data, hyper, method, cluster_seed, &TrainOptions::default())
}

pub fn objective_with(
    data: &Dataset,
    hyper: &Hyperparameters,
    method: Method,
    cluster_seed: u64,
    opts: &TrainOptions,
) -> f64 {
    if hyper.validate().is_err() {
        return f64::INFINITY;
    }
    let Ok((basis, _)) = build_basis(data.points(), &hyper.scales, cluster_seed) else {
        return f64::INFINITY;
    };
    match train(method, data, basis, hyper, opts) {
        Ok(m) if m.lml().is_finite() => -m.lml(),
        _ => f64::INFINITY,
    }
}

/// Simplex coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmCoefficients {
    pub reflection: f64,
    pub expansion: f64,
    pub contraction: f64,
    pub shrink: f64,
}

impl Default for NmCoefficients {
    fn default() -> Self {
        Self {
            reflection: 1.0,
            expansion: 2.0,
            contraction: 0.5,
            shrink: 0.5,
        }
    }
}

impl NmCoefficients {
    fn validate(&self) -> Result<()> {
        let ok = self.reflection > 0.0
            && self.expansion > 1.0
            && self.expansion > self.reflection
            && self.contraction > 0.0
            && self.contraction < 1.0
            && self.shrink > 0.0
            && self.shrink < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("Nelder-Mead coefficients out of range"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadConfig {
    pub max_iters: usize,
    pub f_tol: f64,
    pub x_tol: f64,
    pub coefficients: NmCoefficients,
}

impl Default for NelderMeadConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            f_tol: 1e-6,
            x_tol: 1e-6,
            coefficients: NmCoefficients::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    FTol,
    XTol,
    Budget,
}

impl Termination {
    pub fn name(self) -> &'static str {
        match self {
            Termination::FTol => "f_tol",
            Termination::XTol => "x_tol",
            Termination::Budget => "budget",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    /// Best objective value after each iteration (non-increasing).
    pub history: Vec<f64>,
}

/// Minimizes `f` from `x0`. The initial simplex adds `0.05 * (1 + |x0_i|)`
/// along each coordinate. Runs until the spread of simplex values drops below
/// `f_tol`, its extent (∞-norm distance from the best vertex) drops below
/// `x_tol`, or `max_iters` iterations have been spent.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], cfg: &NelderMeadConfig) -> Result<NelderMeadResult>
where
    F: FnMut(&[f64]) -> f64,
{
    cfg.coefficients.validate()?;
    if x0.is_empty() || x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("starting point must be finite and nonempty"));
    }
    let NmCoefficients {
        reflection,
        expansion,
        contraction,
        shrink,
    } = cfg.coefficients;
    let n = x0.len();
    let mut evaluations = 0;
    let mut eval = |x: &[f64]| {
        evaluations += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), eval(x0)));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += 0.05 * (1.0 + x0[i].abs());
        let fx = eval(&x);
        simplex.push((x, fx));
    }
    let order = |s: &mut Vec<(Vec<f64>, f64)>| s.sort_by(|a, b| a.1.total_cmp(&b.1));
    order(&mut simplex);

    let mut history = Vec::new();
    let mut iterations = 0;
    let termination = loop {
        let spread = simplex[n].1 - simplex[0].1;
        if spread < cfg.f_tol || (simplex[n].1 == simplex[0].1) {
            break Termination::FTol;
        }
        let extent = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if extent < cfg.x_tol {
            break Termination::XTol;
        }
        if iterations >= cfg.max_iters {
            break Termination::Budget;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / n as f64;
            }
        }
        let toward = |t: f64, from: &[f64]| -> Vec<f64> {
            // centroid + t * (from - centroid)
            centroid.iter().zip(from).map(|(c, v)| c + t * (v - c)).collect()
        };
        let worst = simplex[n].0.clone();
        let (f_best, f_second, f_worst) = (simplex[0].1, simplex[n - 1].1, simplex[n].1);

        let xr = toward(-reflection, &worst);
        let fr = eval(&xr);
        let mut replacement = None;
        if fr < f_best {
            let xe = toward(-reflection * expansion, &worst);
            let fe = eval(&xe);
            replacement = Some(if fe < fr { (xe, fe) } else { (xr, fr) });
        } else if fr < f_second {
            replacement = Some((xr, fr));
        } else if fr < f_worst {
            let xc = toward(-reflection * contraction, &worst);
            let fc = eval(&xc);
            if fc <= fr {
                replacement = Some((xc, fc));
            }
        } else {
            let xcc = toward(contraction, &worst);
            let fcc = eval(&xcc);
            if fcc < f_worst {
                replacement = Some((xcc, fcc));
            }
        }

        match replacement {
            Some(v) => simplex[n] = v,
            None => {
                let best = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    for (v, b) in vertex.0.iter_mut().zip(&best) {
                        *v = b + shrink * (*v - b);
                    }
                    vertex.1 = eval(&vertex.0);
                }
            }
        }
        order(&mut simplex);
        history.push(simplex[0].1);
    };

    let (x, fx) = simplex.swap_remove(0);
    Ok(NelderMeadResult {
        x,
        f: fx,
        iterations,
        evaluations,
        termination,
        history,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub nelder_mead: NelderMeadConfig,
    /// Master seed; clustering seeds and start perturbations derive from it.
    pub seed: u64,
    pub free_params: Vec<FreeParam>,
    /// Independent restarts; the first starts at the given point.
    pub n_starts: usize,
    /// Standard deviation of start perturbations in transformed coordinates.
    pub start_spread: f64,
    pub train: TrainOptions,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            nelder_mead: NelderMeadConfig::default(),
            seed: 0,
            free_params: vec![FreeParam::Sigma, FreeParam::H1, FreeParam::Beta, FreeParam::Gamma],
            n_starts: 3,
            start_spread: 0.5,
            train: TrainOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationReport {
    pub best_hyper: Hyperparameters,
    pub best_lml: f64,
    /// Clustering seed under which `best_hyper` was evaluated.
    pub cluster_seed: u64,
    pub iterations: usize,
    /// Objective evaluations summed over all starts.
    pub evaluations: usize,
    pub d_at_optimum: usize,
    pub termination: Termination,
    /// Best LML after each iteration of the winning start (non-decreasing).
    pub lml_history: Vec<f64>,
}

/// splitmix64 step, used to derive per-start seeds from the master seed.
pub fn derive_seed(master: u64, k: u64) -> u64 {
    let mut z = master.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(k + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Multi-start Nelder-Mead over the free hyperparameters of `initial`.
pub fn optimize(
    data: &Dataset,
    initial: &Hyperparameters,
    method: Method,
    cfg: &OptimizerConfig,
) -> Result<OptimizationReport> {
    if cfg.free_params.is_empty() {
        return Err(Error::invalid("no free hyperparameters to optimize"));
    }
    let mut free = cfg.free_params.clone();
    free.sort();
    free.dedup();
    // with a single scale the ratio never enters the objective
    if initial.scales.n_scales == 1 && free.len() > 1 {
        free.retain(|p| *p != FreeParam::Beta);
    }
    let x0 = transform(initial, &free)?;
    let starts = cfg.n_starts.max(1);

    let runs: Vec<(u64, NelderMeadResult)> = if_parallel!(
        (0..starts).into_par_iter(),
        0..starts
    )
    .map(|k| {
        let cluster_seed = derive_seed(cfg.seed, 2 * k as u64);
        let start = if k == 0 {
            x0.clone()
        } else {
            let mut rng = Xoshiro256PlusPlus::seed_from_u64(derive_seed(cfg.seed, 2 * k as u64 + 1));
            x0.iter()
                .map(|v| v + cfg.start_spread * rng.sample::<f64, _>(StandardNormal))
                .collect()
        };
        let f = |x: &[f64]| objective_with(data, &untransform(initial, &free, x), method, cluster_seed, &cfg.train);
        nelder_mead(f, &start, &cfg.nelder_mead).map(|r| (cluster_seed, r))
    })
    .collect::<Result<_>>()?;

    let evaluations = runs.iter().map(|(_, r)| r.evaluations).sum();
    let (cluster_seed, best) = runs
        .into_iter()
        .min_by(|a, b| a.1.f.total_cmp(&b.1.f))
        .expect("at least one start");
    if !best.f.is_finite() {
        return Err(Error::NotPositiveDefinite { pivot: 0, jitter: f64::NAN });
    }
    let best_hyper = untransform(initial, &free, &best.x);
    let (basis, _) = build_basis(data.points(), &best_hyper.scales, cluster_seed)?;
    Ok(OptimizationReport {
        best_hyper,
        best_lml: -best.f,
        cluster_seed,
        iterations: best.iterations,
        evaluations,
        d_at_optimum: basis.size(),
        termination: best.termination,
        lml_history: best.history.iter().map(|f| -f).collect(),
    })
}

/// Fits the conventional GP by maximizing its LML over `(sigma, h)` in log
/// coordinates, with the same multi-start scheme as [`optimize`].
pub fn optimize_standard_gp(data: &Dataset, sigma0: f64, h0: f64, cfg: &OptimizerConfig) -> Result<StandardGp> {
    if !(sigma0 > 0.0 && h0 > 0.0) {
        return Err(Error::invalid("initial noise and width must be positive"));
    }
    let x0 = [sigma0.ln(), h0.ln()];
    let jitter = cfg.train.jitter;
    let runs: Vec<NelderMeadResult> = if_parallel!(
        (0..cfg.n_starts.max(1)).into_par_iter(),
        0..cfg.n_starts.max(1)
    )
    .map(|k| {
        let start: Vec<f64> = if k == 0 {
            x0.to_vec()
        } else {
            let mut rng = Xoshiro256PlusPlus::seed_from_u64(derive_seed(cfg.seed, 2 * k as u64 + 1));
            x0.iter()
                .map(|v| v + cfg.start_spread * rng.sample::<f64, _>(StandardNormal))
                .collect()
        };
        let f = |x: &[f64]| match StandardGp::train(data, x[1].exp(), x[0].exp(), jitter) {
            Ok(gp) if gp.lml.is_finite() => -gp.lml,
            _ => f64::INFINITY,
        };
        nelder_mead(f, &start, &cfg.nelder_mead)
    })
    .collect::<Result<_>>()?;
    let best = runs
        .into_iter()
        .min_by(|a, b| a.f.total_cmp(&b.f))
        .expect("at least one start");
    if !best.f.is_finite() {
        return Err(Error::NotPositiveDefinite { pivot: 0, jitter: f64::NAN });
    }
    StandardGp::train(data, best.x[1].exp(), best.x[0].exp(), jitter)
}
