//! Benchmark harness: timing, log-log scaling fits and the experiment drivers
//! behind `mgp bench`.
//!
//! Timings are medians over repeated runs after one discarded warm-up run.
//! Experiments run their configurations one after another so that timings do
//! not compete for cores.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::clustering::ScaleConfig;
use crate::dataset::{
    generate_split, normalize, normalized_error, Dataset, Points, SyntheticKind, SyntheticSpec,
};
use crate::hyperopt::{optimize_standard_gp, FreeParam, OptimizerConfig};
use crate::kernel::BasisSet;
use crate::pipeline::{fit_normalized, FitConfig};
use crate::regression::{train, Hyperparameters, Method, Model, Regressor, TrainOptions};
use crate::{Error, Result};

/// Median wall time in seconds of `reps` runs of `f`, after one warm-up run.
/// Returns the output of the last run.
pub fn time_median<T>(reps: usize, mut f: impl FnMut() -> T) -> (f64, T) {
    let mut out = f();
    let mut times = Vec::with_capacity(reps.max(1));
    for _ in 0..reps.max(1) {
        let t = Instant::now();
        out = f();
        times.push(t.elapsed().as_secs_f64());
    }
    (median(&mut times), out)
}

/// Like [`time_median`], but each timed sample repeats `f` until it spans at
/// least `min_secs`, so calls far shorter than the timer resolution or the
/// scheduler noise still measure reliably. Returns seconds per call.
pub fn time_per_call<T>(reps: usize, min_secs: f64, mut f: impl FnMut() -> T) -> f64 {
    let mut inner = 1usize;
    loop {
        let t = Instant::now();
        for _ in 0..inner {
            std::hint::black_box(f());
        }
        if t.elapsed().as_secs_f64() >= min_secs || inner >= 1 << 20 {
            break;
        }
        inner *= 2;
    }
    let mut times: Vec<f64> = (0..reps.max(1))
        .map(|_| {
            let t = Instant::now();
            for _ in 0..inner {
                std::hint::black_box(f());
            }
            t.elapsed().as_secs_f64() / inner as f64
        })
        .collect();
    median(&mut times)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `y ≈ prefactor · x^exponent`, fitted by least squares in log-log space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerFit {
    pub exponent: f64,
    pub prefactor: f64,
    pub r_squared: f64,
}

pub fn power_fit(xs: &[f64], ys: &[f64]) -> Result<PowerFit> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            found: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::invalid("a power fit needs at least two points"));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::invalid("power fit needs positive finite values"));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("power fit needs distinct abscissas"));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let icept = my - slope * mx;
    let ss_tot: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - icept - slope * x).powi(2))
        .sum();
    Ok(PowerFit {
        exponent: slope,
        prefactor: icept.exp(),
        r_squared: if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot },
    })
}

/// One measured configuration. Times are in seconds; prediction times are per
/// point. `error` is NaN when the experiment has no test set.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub label: String,
    pub n: usize,
    pub d: usize,
    pub train_secs: f64,
    pub predict_mean_secs: f64,
    pub predict_var_secs: f64,
    pub error: f64,
    pub lml: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchReport {
    pub experiment: String,
    pub rows: Vec<BenchRow>,
    pub fits: Vec<(String, PowerFit)>,
    /// Named scalar results (ratios, residuals, fitted scales).
    pub summary: Vec<(String, f64)>,
}

impl BenchReport {
    fn new(experiment: &str) -> Self {
        Self {
            experiment: experiment.to_string(),
            ..Self::default()
        }
    }

    pub fn summary_value(&self, key: &str) -> Option<f64> {
        self.summary.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    pub fn fit(&self, key: &str) -> Option<PowerFit> {
        self.fits.iter().find(|(k, _)| k == key).map(|(_, f)| *f)
    }

    pub fn rows_with_label<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a BenchRow> + 'a {
        self.rows.iter().filter(move |r| r.label == label)
    }

    /// Human-readable table.
    pub fn table(&self) -> String {
        let mut s = format!("experiment: {}\n", self.experiment);
        if !self.rows.is_empty() {
            s += &format!(
                "{:<10} {:>6} {:>6} {:>12} {:>12} {:>12} {:>10} {:>12}\n",
                "label", "N", "D", "train_s", "mean_s/pt", "var_s/pt", "error", "lml"
            );
            for r in &self.rows {
                s += &format!(
                    "{:<10} {:>6} {:>6} {:>12.4e} {:>12.4e} {:>12.4e} {:>10.4} {:>12.4}\n",
                    r.label, r.n, r.d, r.train_secs, r.predict_mean_secs, r.predict_var_secs, r.error, r.lml
                );
            }
        }
        for (k, f) in &self.fits {
            s += &format!("fit {k}: exponent {:.3} (R² {:.4})\n", f.exponent, f.r_squared);
        }
        for (k, v) in &self.summary {
            s += &format!("{k}: {v:.6e}\n");
        }
        s
    }

    /// Rows as CSV; fits and summary follow as `#` comment lines.
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "label,n,d,train_secs,predict_mean_secs,predict_var_secs,error,lml")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{:?},{:?},{:?},{:?},{:?}",
                r.label, r.n, r.d, r.train_secs, r.predict_mean_secs, r.predict_var_secs, r.error, r.lml
            )?;
        }
        for (k, f) in &self.fits {
            writeln!(out, "# fit,{k},{:?},{:?},{:?}", f.exponent, f.prefactor, f.r_squared)?;
        }
        for (k, v) in &self.summary {
            writeln!(out, "# summary,{k},{v:?}")?;
        }
        Ok(())
    }
}

/// Per-point prediction cost of a model, (mean, mean+variance), on `points`.
fn predict_times(model: &dyn Regressor, points: Points<'_>, reps: usize) -> (f64, f64) {
    const MIN_SAMPLE_SECS: f64 = 0.01;
    let n = points.len().max(1) as f64;
    let tm = time_per_call(reps, MIN_SAMPLE_SECS, || {
        points
            .iter()
            .map(|q| model.predict_mean(q).unwrap_or(f64::NAN))
            .sum::<f64>()
    });
    let tv = time_per_call(reps, MIN_SAMPLE_SECS, || {
        points
            .iter()
            .map(|q| model.predict(q).map(|p| p.variance).unwrap_or(f64::NAN))
            .sum::<f64>()
    });
    (tm / n, tv / n)
}

fn test_error(model: &dyn Regressor, test: &Dataset) -> Result<f64> {
    let pred: Vec<f64> = test
        .points()
        .iter()
        .map(|q| model.predict_original(q).map(|p| p.mean))
        .collect::<Result<_>>()?;
    normalized_error(&pred, test.targets())
}

/// First `k` rows of a dataset's inputs, used for prediction timing.
fn head(points: Points<'_>, k: usize) -> Points<'_> {
    let k = k.min(points.len());
    Points::new(&points.as_slice()[..k * points.dim()], points.dim()).expect("prefix of a valid view")
}

/// Starting point for the optimizer in normalized coordinates.
pub fn default_initial(n_scales: usize) -> Hyperparameters {
    let scales = ScaleConfig::new(0.1, 0.5, n_scales.max(1), 0.5).expect("valid constants");
    Hyperparameters::new(0.1, 1.0, scales).expect("valid constants")
}

/// Size-sweep experiment on a synthetic function (`step` or `sine` in the CLI).
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub kind: SyntheticKind,
    pub ns: Vec<usize>,
    pub noise: f64,
    pub seed: u64,
    pub n_scales: usize,
    pub free_params: Vec<FreeParam>,
    pub n_starts: usize,
    pub reps: usize,
    /// The conventional GP is fitted only up to this many points.
    pub full_gp_max: usize,
    pub test_points: usize,
}

impl SweepConfig {
    pub fn new(kind: SyntheticKind) -> Self {
        Self {
            kind,
            ns: vec![128, 256, 512, 1024, 2048, 4096],
            noise: 0.01,
            seed: 0,
            n_scales: 1,
            free_params: vec![FreeParam::Sigma, FreeParam::H1, FreeParam::Gamma],
            n_starts: 3,
            reps: 5,
            full_gp_max: 1024,
            test_points: 1000,
        }
    }
}

/// For each N: the optimized sparse model (row `mgp_d`), the function-space
/// path on the same basis and hyperparameters (`mgp_n`), and the conventional
/// GP with its own optimized width and noise (`gp`, up to `full_gp_max`).
pub fn sweep(cfg: &SweepConfig) -> Result<BenchReport> {
    let mut report = BenchReport::new(match cfg.kind {
        SyntheticKind::Step => "step",
        SyntheticKind::VarFreqSine => "sine",
        SyntheticKind::NonuniformStep => "nonuniform-step",
    });
    let mut ds = Vec::new();
    for &n in &cfg.ns {
        let split = generate_split(&SyntheticSpec::new(cfg.kind, n, cfg.noise, cfg.seed))?;
        let (train_set, stats) = normalize(&split.train);
        let opt = OptimizerConfig {
            seed: cfg.seed,
            free_params: cfg.free_params.clone(),
            n_starts: cfg.n_starts,
            ..OptimizerConfig::default()
        };
        let fit_cfg = FitConfig {
            method: Method::D,
            initial: default_initial(cfg.n_scales),
            optimizer: Some(opt.clone()),
            cluster_seed: 0,
            train: TrainOptions::default(),
        };
        let fit = fit_normalized(&train_set, stats.clone(), &fit_cfg)?;
        let hyper = *fit.model.hyper();
        let basis = fit.model.basis().clone();
        let timing_pts = head(split.test.points(), cfg.test_points);
        let timing_pts = stats.apply(&Dataset::new(
            timing_pts.as_slice().to_vec(),
            timing_pts.dim(),
            vec![0.0; timing_pts.len()],
        )?);
        ds.push(basis.size() as f64);

        for method in [Method::D, Method::N] {
            let (t_train, model) = time_median(cfg.reps, || {
                train(method, &train_set, basis.clone(), &hyper, &TrainOptions::default())
            });
            let model: Model = model?.with_normalization(stats.clone());
            let (tm, tv) = predict_times(&model, timing_pts.points(), cfg.reps);
            report.rows.push(BenchRow {
                label: format!("mgp_{}", method.tag().to_lowercase()),
                n,
                d: basis.size(),
                train_secs: t_train,
                predict_mean_secs: tm,
                predict_var_secs: tv,
                error: test_error(&model, &split.test)?,
                lml: model.lml(),
            });
        }

        if n <= cfg.full_gp_max {
            let gp = optimize_standard_gp(&train_set, hyper.sigma, hyper.scales.h1 * 2f64.sqrt(), &opt)?;
            let (t_train, _) = time_median(cfg.reps, || {
                crate::regression::StandardGp::train(&train_set, gp.h, gp.sigma, Default::default())
            });
            let q = timing_pts.points();
            let k = q.len().max(1) as f64;
            let tm = time_per_call(cfg.reps, 0.01, || q.iter().map(|p| gp.predict(p).mean).sum::<f64>());
            let pred: Vec<f64> = split
                .test
                .points()
                .iter()
                .map(|p| stats.denormalize_mean(gp.predict(&stats.normalize_point(p)).mean))
                .collect();
            report.rows.push(BenchRow {
                label: "gp".into(),
                n,
                d: n,
                train_secs: t_train,
                predict_mean_secs: tm / k,
                predict_var_secs: tm / k,
                error: normalized_error(&pred, split.test.targets())?,
                lml: gp.lml,
            });
            report.summary.push((format!("gp_h_over_h1.n{n}"), gp.h / hyper.scales.h1));
        }
        report.summary.push((format!("sigma.n{n}"), fit.sigma_original()));
    }
    let max = ds.iter().cloned().fold(f64::MIN, f64::max);
    let min = ds.iter().cloned().fold(f64::MAX, f64::min);
    report.summary.push(("d_max_over_min".into(), max / min));
    Ok(report)
}

/// Multiscale against single-scale fits on the non-uniform step.
#[derive(Debug, Clone)]
pub struct NonuniformConfig {
    pub n: usize,
    pub noise: f64,
    pub h_t: f64,
    pub seed: u64,
    pub scale_counts: Vec<usize>,
    pub n_starts: usize,
}

impl Default for NonuniformConfig {
    fn default() -> Self {
        Self {
            n: 101,
            noise: 0.03,
            h_t: 0.1,
            seed: 0,
            scale_counts: vec![1, 6],
            n_starts: 3,
        }
    }
}

pub fn nonuniform(cfg: &NonuniformConfig) -> Result<BenchReport> {
    let mut report = BenchReport::new("nonuniform-step");
    let mut spec = SyntheticSpec::new(SyntheticKind::NonuniformStep, cfg.n, cfg.noise, cfg.seed);
    spec.h_t = cfg.h_t;
    let split = generate_split(&spec)?;
    let (train_set, stats) = normalize(&split.train);
    for &s in &cfg.scale_counts {
        let mut free = vec![FreeParam::Sigma, FreeParam::H1, FreeParam::Gamma];
        if s > 1 {
            free.push(FreeParam::Beta);
        }
        let fit_cfg = FitConfig {
            method: Method::D,
            initial: default_initial(s),
            optimizer: Some(OptimizerConfig {
                seed: cfg.seed,
                free_params: free,
                n_starts: cfg.n_starts,
                ..OptimizerConfig::default()
            }),
            cluster_seed: 0,
            train: TrainOptions::default(),
        };
        let t = Instant::now();
        let fit = fit_normalized(&train_set, stats.clone(), &fit_cfg)?;
        let t_opt = t.elapsed().as_secs_f64();
        let (tm, tv) = predict_times(&fit.model, train_set.points(), 3);
        report.rows.push(BenchRow {
            label: format!("S={s}"),
            n: cfg.n,
            d: fit.report.d,
            train_secs: t_opt,
            predict_mean_secs: tm,
            predict_var_secs: tv,
            error: test_error(&fit.model, &split.test)?,
            lml: fit.report.lml,
        });
        let sc = fit.model.hyper().scales;
        for k in 1..=s {
            report.summary.push((format!("S{s}.h{k}"), sc.scale(k)));
            report
                .summary
                .push((format!("S{s}.k{k}"), fit.report.per_scale_counts[k - 1] as f64));
        }
    }
    Ok(report)
}

/// Training and prediction cost against N with the basis held fixed.
#[derive(Debug, Clone)]
pub struct ScalingConfig {
    pub ns: Vec<usize>,
    pub d: usize,
    pub noise: f64,
    pub seed: u64,
    pub reps: usize,
    pub test_points: usize,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            ns: vec![512, 1024, 2048, 4096],
            d: 32,
            noise: 0.1,
            seed: 0,
            reps: 5,
            test_points: 500,
        }
    }
}

/// `d` evenly spaced unit-interval centers whose width matches their spacing.
pub fn uniform_basis(d: usize) -> Result<BasisSet> {
    if d == 0 {
        return Err(Error::invalid("basis size must be positive"));
    }
    let step = 1.0 / d as f64;
    let centers = (0..d).map(|j| (j as f64 + 0.5) * step).collect();
    BasisSet::new(centers, 1, vec![2.0 * step; d])
}

/// Per-call seconds of each task, timed in interleaved rounds.
///
/// Every task first gets an inner repeat count so one sample spans at least
/// `min_secs`. Each of the `reps` rounds then samples every task once, so slow
/// periods of a shared machine land on all tasks alike rather than on
/// whichever happened to be running. The fastest sample of each task is its
/// estimate, as noise only ever adds time.
pub fn time_interleaved(reps: usize, min_secs: f64, tasks: &mut [Box<dyn FnMut() + '_>]) -> Vec<f64> {
    let sample = |f: &mut Box<dyn FnMut() + '_>, inner: usize| {
        let t = Instant::now();
        for _ in 0..inner {
            f();
        }
        t.elapsed().as_secs_f64() / inner as f64
    };
    let inner: Vec<usize> = tasks
        .iter_mut()
        .map(|f| {
            let mut k = 1usize;
            while sample(f, k) * (k as f64) < min_secs && k < 1 << 20 {
                k *= 2;
            }
            k
        })
        .collect();
    let mut best = vec![f64::INFINITY; tasks.len()];
    for _ in 0..reps.max(1) {
        for (i, f) in tasks.iter_mut().enumerate() {
            best[i] = best[i].min(sample(f, inner[i]));
        }
    }
    best
}

pub fn scaling(cfg: &ScalingConfig) -> Result<BenchReport> {
    const MIN_SAMPLE_SECS: f64 = 0.01;
    let mut report = BenchReport::new("scaling");
    let basis = uniform_basis(cfg.d)?;
    let hyper = Hyperparameters::new(cfg.noise.max(1e-3), 1.0, ScaleConfig::new(2.0 / cfg.d as f64, 0.5, 1, 0.5)?)?;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(cfg.seed);
    let probe: Vec<f64> = (0..cfg.test_points.max(1)).map(|_| rng.random::<f64>()).collect();
    let probe = Points::new(&probe, 1)?;
    let opts = TrainOptions {
        max_n: usize::MAX,
        ..TrainOptions::default()
    };
    let methods = [Method::D, Method::N];
    let splits = cfg
        .ns
        .iter()
        .map(|&n| generate_split(&SyntheticSpec::new(SyntheticKind::Step, n, cfg.noise, cfg.seed)))
        .collect::<Result<Vec<_>>>()?;
    let cases: Vec<(usize, Method)> = (0..splits.len())
        .flat_map(|i| methods.iter().map(move |&m| (i, m)))
        .collect();
    let models = cases
        .iter()
        .map(|&(i, m)| train(m, &splits[i].train, basis.clone(), &hyper, &opts))
        .collect::<Result<Vec<_>>>()?;

    let mut tasks: Vec<Box<dyn FnMut() + '_>> = Vec::new();
    for &(i, m) in &cases {
        let (data, basis, hyper, opts) = (&splits[i].train, &basis, &hyper, &opts);
        tasks.push(Box::new(move || {
            std::hint::black_box(train(m, data, basis.clone(), hyper, opts).ok());
        }));
    }
    let train_secs = time_interleaved(cfg.reps, MIN_SAMPLE_SECS, &mut tasks);

    // Mean prediction is cheap, so it gets its own group with many short
    // rounds; the variance path is timed separately.
    let per_point = probe.len() as f64;
    let mut tasks: Vec<Box<dyn FnMut() + '_>> = Vec::new();
    for model in &models {
        tasks.push(Box::new(move || {
            std::hint::black_box(probe.iter().map(|q| model.predict_mean(q).unwrap_or(f64::NAN)).sum::<f64>());
        }));
    }
    let mean_secs = time_interleaved(4 * cfg.reps, MIN_SAMPLE_SECS, &mut tasks);
    let mut tasks: Vec<Box<dyn FnMut() + '_>> = Vec::new();
    for model in &models {
        tasks.push(Box::new(move || {
            std::hint::black_box(
                probe
                    .iter()
                    .map(|q| model.predict(q).map(|p| p.variance).unwrap_or(f64::NAN))
                    .sum::<f64>(),
            );
        }));
    }
    let var_secs = time_interleaved(cfg.reps, MIN_SAMPLE_SECS, &mut tasks);

    let mut series: Vec<(String, Vec<f64>)> = ["train_d", "train_n", "mean_d", "mean_n"]
        .iter()
        .map(|k| (k.to_string(), Vec::new()))
        .collect();
    for (c, (&(i, method), model)) in cases.iter().zip(&models).enumerate() {
        let m = methods.iter().position(|&x| x == method).expect("listed method");
        let (tm, tv) = (mean_secs[c] / per_point, var_secs[c] / per_point);
        series[m].1.push(train_secs[c]);
        series[2 + m].1.push(tm);
        report.rows.push(BenchRow {
            label: format!("method_{}", method.tag().to_lowercase()),
            n: cfg.ns[i],
            d: basis.size(),
            train_secs: train_secs[c],
            predict_mean_secs: tm,
            predict_var_secs: tv,
            error: test_error(model, &splits[i].test)?,
            lml: model.lml(),
        });
    }
    let xs: Vec<f64> = cfg.ns.iter().map(|&n| n as f64).collect();
    for (k, ys) in &series {
        report.fits.push((k.clone(), power_fit(&xs, ys)?));
        let max = ys.iter().cloned().fold(f64::MIN, f64::max);
        let min = ys.iter().cloned().fold(f64::MAX, f64::min);
        report.summary.push((format!("{k}_max_over_min"), max / min));
        report
            .summary
            .push((format!("{k}_last_over_first"), ys[ys.len() - 1] / ys[0]));
    }
    Ok(report)
}

/// Random small problem used to compare the two solution paths.
#[derive(Debug, Clone)]
pub struct EquivalenceInstance {
    pub data: Dataset,
    pub basis: BasisSet,
    pub hyper: Hyperparameters,
    pub probe: Vec<f64>,
}

/// Draws a problem with N ≤ `max_n`, d ≤ 3, mixed scales and D ≤ N.
pub fn random_instance(rng: &mut impl Rng, max_n: usize) -> Result<EquivalenceInstance> {
    let dim = rng.random_range(1..=3usize);
    let n = rng.random_range(2..=max_n.max(2));
    let inputs: Vec<f64> = (0..n * dim).map(|_| rng.random::<f64>()).collect();
    let targets: Vec<f64> = (0..n)
        .map(|i| (4.0 * inputs[i * dim]).sin() + rng.random_range(-0.3..0.3))
        .collect();
    let data = Dataset::new(inputs, dim, targets)?;
    let sigma = 10f64.powf(rng.random_range(-2.0..0.0));
    let sigma_p = rng.random_range(0.5..2.0);
    let n_scales = rng.random_range(1..=3usize);
    let scales = ScaleConfig::new(
        rng.random_range(0.2..0.8),
        rng.random_range(0.4..0.8),
        n_scales,
        rng.random_range(0.3..0.9),
    )?;
    let hyper = Hyperparameters::new(sigma, sigma_p, scales)?;
    let (basis, _) = crate::pipeline::build_basis(data.points(), &scales, rng.random())?;
    let probe = (0..8 * dim).map(|_| rng.random_range(-0.2..1.2)).collect();
    Ok(EquivalenceInstance {
        data,
        basis,
        hyper,
        probe,
    })
}

/// Largest disagreements between the two paths on one instance:
/// (|ΔLML|, max relative Δmean, max relative Δvariance).
pub fn path_discrepancy(inst: &EquivalenceInstance) -> Result<(f64, f64, f64)> {
    let opts = TrainOptions::default();
    let d = train(Method::D, &inst.data, inst.basis.clone(), &inst.hyper, &opts)?;
    let n = train(Method::N, &inst.data, inst.basis.clone(), &inst.hyper, &opts)?;
    let probe = Points::new(&inst.probe, inst.data.dim_in())?;
    let pd = d.predict_batch(probe)?;
    let pn = n.predict_batch(probe)?;
    // means near zero are compared on the scale of the targets
    let y_scale = inst.data.targets().iter().fold(0.0f64, |m, y| m.max(y.abs())).max(1e-300);
    let rel = |a: f64, b: f64, floor: f64| (a - b).abs() / a.abs().max(b.abs()).max(floor);
    let mut dm: f64 = 0.0;
    let mut dv: f64 = 0.0;
    for (a, b) in pd.iter().zip(&pn) {
        dm = dm.max(rel(a.mean, b.mean, y_scale));
        dv = dv.max(rel(a.variance, b.variance, 0.0));
    }
    Ok(((d.lml() - n.lml()).abs(), dm, dv))
}

pub fn equivalence(instances: usize, max_n: usize, seed: u64) -> Result<BenchReport> {
    let mut report = BenchReport::new("equivalence");
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let (mut worst_lml, mut worst_mean, mut worst_var) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..instances {
        let inst = random_instance(&mut rng, max_n)?;
        let (l, m, v) = path_discrepancy(&inst)?;
        worst_lml = worst_lml.max(l);
        worst_mean = worst_mean.max(m);
        worst_var = worst_var.max(v);
    }
    report.summary.push(("instances".into(), instances as f64));
    report.summary.push(("max_lml_diff".into(), worst_lml));
    report.summary.push(("max_mean_rel_diff".into(), worst_mean));
    report.summary.push(("max_var_rel_diff".into(), worst_var));
    Ok(report)
}
