//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Run with `cargo test -p mgp-core --test acceptance`.

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use mgp::bench::{scaling, ScalingConfig};
use mgp::clustering::{cluster_multiscale, min_pairwise_distance, ScaleConfig};
use mgp::dataset::{
    generate_split, normalize, normalized_error, Dataset, Points, SyntheticKind, SyntheticSpec,
};
use mgp::hyperopt::{optimize_standard_gp, FreeParam, OptimizerConfig};
use mgp::kernel::BasisSet;
use mgp::pipeline::{build_basis, fit_normalized, Fit, FitConfig};
use mgp::regression::{
    logdet_identity_residual, train, Hyperparameters, Method, Model, Regressor, TrainOptions,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn median(v: &[f64]) -> f64 {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Random regression problem with the basis drawn by the library's clustering.
struct Instance {
    data: Dataset,
    basis: BasisSet,
    hyper: Hyperparameters,
}

fn instance(rng: &mut Xoshiro256PlusPlus, max_n: usize) -> Instance {
    let dim = rng.random_range(1..=3usize);
    let n = rng.random_range(2..=max_n);
    let inputs: Vec<f64> = (0..n * dim).map(|_| rng.random::<f64>()).collect();
    let targets: Vec<f64> = (0..n)
        .map(|i| (3.0 * inputs[i * dim]).cos() + 0.2 * rng.random_range(-1.0..1.0))
        .collect();
    let data = Dataset::new(inputs, dim, targets).unwrap();
    let sigma = 10f64.powf(rng.random_range(-2.0..0.0));
    let sigma_p = rng.random_range(0.5..2.0);
    let scales = ScaleConfig::new(
        rng.random_range(0.2..0.9),
        rng.random_range(0.3..0.8),
        rng.random_range(1..=3usize),
        rng.random_range(0.2..0.9),
    )
    .unwrap();
    let hyper = Hyperparameters::new(sigma, sigma_p, scales).unwrap();
    let (basis, _) = build_basis(data.points(), &scales, rng.random()).unwrap();
    Instance { data, basis, hyper }
}

/// Dense Φ (D×N) computed directly from the basis definition.
fn dense_phi(inst: &Instance) -> DMatrix<f64> {
    let pts = inst.data.points();
    DMatrix::from_fn(inst.basis.size(), pts.len(), |j, n| {
        let c = inst.basis.center(j);
        let h = inst.basis.scales()[j];
        let r2: f64 = pts.get(n).iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
        (-r2 / (h * h)).exp()
    })
}

/// `log N(y | 0, σ_p² ΦᵀΦ + σ²I)` via an explicit inverse and determinant.
fn dense_lml(inst: &Instance) -> f64 {
    let phi = dense_phi(inst);
    let n = inst.data.count();
    let s2 = inst.hyper.sigma.powi(2);
    let cov = phi.transpose() * &phi * inst.hyper.sigma_p.powi(2) + DMatrix::identity(n, n) * s2;
    let y = DVector::from_column_slice(inst.data.targets());
    let inv = cov.clone().try_inverse().expect("invertible covariance");
    let det = cov.determinant();
    -0.5 * y.dot(&(inv * &y)) - 0.5 * det.ln() - 0.5 * n as f64 * (2.0 * PI).ln()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(101);
    let (mut d_lml, mut d_mean, mut d_var) = (0.0f64, 0.0f64, 0.0f64);
    let opts = TrainOptions::default();
    for _ in 0..100 {
        let inst = instance(&mut rng, 64);
        let md = train(Method::D, &inst.data, inst.basis.clone(), &inst.hyper, &opts).unwrap();
        let mn = train(Method::N, &inst.data, inst.basis.clone(), &inst.hyper, &opts).unwrap();
        d_lml = d_lml.max((md.lml() - mn.lml()).abs());
        let y_scale = inst.data.targets().iter().fold(0.0f64, |m, y| m.max(y.abs()));
        let dim = inst.data.dim_in();
        for _ in 0..10 {
            let q: Vec<f64> = (0..dim).map(|_| rng.random_range(-0.2..1.2)).collect();
            let a = md.predict(&q).unwrap();
            let b = mn.predict(&q).unwrap();
            d_mean = d_mean.max((a.mean - b.mean).abs() / a.mean.abs().max(b.mean.abs()).max(y_scale));
            d_var = d_var.max((a.variance - b.variance).abs() / a.variance.max(b.variance));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        d_lml <= 1e-6 && d_mean <= 1e-8 && d_var <= 1e-8 && secs < 30.0,
        format!("max |dLML| {d_lml:.2e}, max rel dmean {d_mean:.2e}, max rel dvar {d_var:.2e}, {secs:.1}s"),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(202);
    let (mut lib, mut oracle) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let inst = instance(&mut rng, 32);
        lib = lib.max(logdet_identity_residual(&inst.data, &inst.basis, &inst.hyper).unwrap());
        // independent evaluation with nalgebra's own factorization
        let phi = dense_phi(&inst);
        let (n, d) = (inst.data.count() as f64, inst.basis.size());
        let (s2, p2) = (inst.hyper.sigma.powi(2), inst.hyper.sigma_p.powi(2));
        let prec = &phi * phi.transpose() / s2 + DMatrix::identity(d, d) / p2;
        let cov = phi.transpose() * &phi * p2 + DMatrix::identity(phi.ncols(), phi.ncols()) * s2;
        let logdet = |m: DMatrix<f64>| {
            let l = m.cholesky().expect("SPD").l();
            2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>()
        };
        let lhs = -n * s2.ln() - logdet(prec) - d as f64 * p2.ln();
        let rhs = -logdet(cov);
        oracle = oracle.max((lhs - rhs).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        lib <= 1e-8 && oracle <= 1e-8 && secs < 10.0,
        format!("max residual {lib:.2e} (independent oracle {oracle:.2e}), {secs:.1}s"),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(303);
    let (mut dd, mut dn) = (0.0f64, 0.0f64);
    let opts = TrainOptions::default();
    for _ in 0..25 {
        let inst = instance(&mut rng, 32);
        let want = dense_lml(&inst);
        let md = train(Method::D, &inst.data, inst.basis.clone(), &inst.hyper, &opts).unwrap();
        let mn = train(Method::N, &inst.data, inst.basis.clone(), &inst.hyper, &opts).unwrap();
        dd = dd.max((md.lml() - want).abs());
        dn = dn.max((mn.lml() - want).abs());
    }
    outcome(
        dd <= 1e-6 && dn <= 1e-6,
        format!("max |lml_d - dense| {dd:.2e}, max |lml_n - dense| {dn:.2e}"),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(404);
    let mut failures = Vec::new();
    for set in 0..50 {
        let coords: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
        let pts = Points::new(&coords, 2).unwrap();
        let dist = |a: usize, b: usize| {
            let (p, q) = (pts.get(a), pts.get(b));
            ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
        };
        let cfg = ScaleConfig::new(
            rng.random_range(0.1..0.6),
            rng.random_range(0.3..0.8),
            rng.random_range(1..=4usize),
            rng.random_range(0.2..0.9),
        )
        .unwrap();
        let res = cluster_multiscale(pts, &cfg, &mut rng).unwrap();
        let mut candidates: Vec<usize> = (0..500).collect();
        let mut seen = std::collections::HashSet::new();
        for s in 1..=cfg.n_scales {
            let a = cfg.radius(s);
            let centers: Vec<usize> = res.centers_at(s).collect();
            let assigned = &res.assignments[s - 1];
            let mut covered: Vec<usize> = assigned.iter().map(|&(p, _)| p).collect();
            covered.sort_unstable();
            if covered != candidates {
                failures.push(format!("set {set} scale {s}: assignment is not a partition"));
            }
            if assigned.iter().any(|&(p, c)| dist(p, c) > a) {
                failures.push(format!("set {set} scale {s}: point outside radius"));
            }
            for (i, &c) in centers.iter().enumerate() {
                if !seen.insert(c) {
                    failures.push(format!("set {set}: center {c} reused across scales"));
                }
                if centers[i + 1..].iter().any(|&o| dist(c, o) <= a) {
                    failures.push(format!("set {set} scale {s}: centers closer than radius"));
                }
            }
            candidates.retain(|p| !centers.contains(p));
        }
        // full-rank degenerate case on the same points
        let gap = min_pairwise_distance(pts);
        let tiny = ScaleConfig::new(gap, 0.5, 2, 0.9).unwrap();
        let res = cluster_multiscale(pts, &tiny, &mut rng).unwrap();
        if res.total() != 500 {
            failures.push(format!("set {set}: radius below min gap gave D = {}", res.total()));
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            "coverage, separation, disjointness and D = N hold on 50 sets of 500 points".into()
        } else {
            format!("{} violations, first: {}", failures.len(), failures[0])
        },
    )
}

/// Optimized S = 1 sparse fit, as in the step and sine experiments.
fn mgp_fit(train_set: &Dataset, stats: mgp::dataset::NormalizationStats, seed: u64, free: Vec<FreeParam>, starts: usize) -> Fit {
    let initial = Hyperparameters::new(0.1, 1.0, ScaleConfig::new(0.1, 0.5, 1, 0.5).unwrap()).unwrap();
    let cfg = FitConfig {
        method: Method::D,
        initial,
        optimizer: Some(OptimizerConfig {
            seed,
            free_params: free,
            n_starts: starts,
            ..OptimizerConfig::default()
        }),
        cluster_seed: 0,
        train: TrainOptions::default(),
    };
    fit_normalized(train_set, stats, &cfg).unwrap()
}

fn test_error(model: &Model, test: &Dataset) -> f64 {
    let pred: Vec<f64> = test
        .points()
        .iter()
        .map(|q| model.predict_original(q).unwrap().mean)
        .collect();
    normalized_error(&pred, test.targets()).unwrap()
}

const STEP_FREE: [FreeParam; 3] = [FreeParam::Sigma, FreeParam::H1, FreeParam::Gamma];

struct StepRun {
    d: usize,
    err_mgp: f64,
    err_full: f64,
    sigma: f64,
    h1: f64,
    h_gp: f64,
}

/// Ten-seed step experiment at one noise level.
fn step_runs(noise: f64) -> Vec<StepRun> {
    (0..10u64)
        .map(|seed| {
            let split = generate_split(&SyntheticSpec::new(SyntheticKind::Step, 128, noise, seed)).unwrap();
            let (train_set, stats) = normalize(&split.train);
            let fit = mgp_fit(&train_set, stats.clone(), seed, STEP_FREE.to_vec(), 3);

            // full-rank reference: one center per training point, method N
            let full_init = Hyperparameters::new(0.1, 1.0, ScaleConfig::new(0.1, 0.5, 1, 1e-6).unwrap()).unwrap();
            let full_cfg = FitConfig {
                method: Method::N,
                initial: full_init,
                optimizer: Some(OptimizerConfig {
                    seed,
                    free_params: vec![FreeParam::Sigma, FreeParam::H1],
                    ..OptimizerConfig::default()
                }),
                cluster_seed: 0,
                train: TrainOptions::default(),
            };
            let full = fit_normalized(&train_set, stats.clone(), &full_cfg).unwrap();
            assert_eq!(full.report.d, 128);

            let gp = optimize_standard_gp(&train_set, 0.1, 0.1, &OptimizerConfig {
                seed,
                ..OptimizerConfig::default()
            })
            .unwrap();
            StepRun {
                d: fit.report.d,
                err_mgp: test_error(&fit.model, &split.test),
                err_full: test_error(&full.model, &split.test),
                sigma: fit.sigma_original(),
                h1: fit.model.hyper().scales.h1,
                h_gp: gp.h,
            }
        })
        .collect()
}

fn criterion_5(runs: &[StepRun], secs: f64) -> Outcome {
    let d: Vec<f64> = runs.iter().map(|r| r.d as f64).collect();
    let em = median(&runs.iter().map(|r| r.err_mgp).collect::<Vec<_>>());
    let ef = median(&runs.iter().map(|r| r.err_full).collect::<Vec<_>>());
    let md = median(&d);
    outcome(
        (20.0..=70.0).contains(&md) && em <= 1.5 * ef && secs < 300.0,
        format!(
            "noise 0.01: median D {md} (per seed {:?}), median error {em:.4} vs full {ef:.4}, {secs:.0}s",
            d.iter().map(|v| *v as usize).collect::<Vec<_>>()
        ),
    )
}

fn criterion_6() -> Outcome {
    let ns = [128usize, 256, 512, 1024];
    let free = vec![FreeParam::Sigma, FreeParam::SigmaP, FreeParam::H1, FreeParam::Gamma];
    let mut med = Vec::new();
    for &n in &ns {
        let ds: Vec<f64> = (0..3u64)
            .map(|seed| {
                let split = generate_split(&SyntheticSpec::new(SyntheticKind::VarFreqSine, n, 0.01, seed)).unwrap();
                let (train_set, stats) = normalize(&split.train);
                mgp_fit(&train_set, stats, seed, free.clone(), 8).report.d as f64
            })
            .collect();
        med.push(median(&ds));
    }
    let ratio = med.iter().cloned().fold(f64::MIN, f64::max) / med.iter().cloned().fold(f64::MAX, f64::min);
    outcome(
        ratio <= 2.0,
        format!("median D over 3 seeds at N = {ns:?}: {med:?}, max/min {ratio:.2}"),
    )
}

fn criterion_7(runs: &[StepRun]) -> Outcome {
    let ratios: Vec<f64> = runs.iter().map(|r| r.h_gp / r.h1).collect();
    let m = median(&ratios);
    outcome(
        (1.2..=1.6).contains(&m),
        format!(
            "noise 0.1: median kernel/basis width ratio {m:.3} (per seed {})",
            ratios.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>().join(" ")
        ),
    )
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let r = scaling(&ScalingConfig::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let td = r.fit("train_d").unwrap();
    let tn = r.fit("train_n").unwrap();
    let flat = r.summary_value("mean_d_max_over_min").unwrap();
    let growth = r.summary_value("mean_n_last_over_first").unwrap();
    outcome(
        td.exponent < 1.5 && tn.exponent > 2.5 && flat <= 1.5 && growth >= 4.0 && secs < 600.0,
        format!(
            "train exponents D {:.2} (R² {:.3}), N {:.2} (R² {:.3}); predict-mean ratio D {flat:.2}, N {growth:.2}; {secs:.0}s",
            td.exponent, td.r_squared, tn.exponent, tn.r_squared
        ),
    )
}

fn criterion_9(runs_01: &[StepRun], runs_001: &[StepRun]) -> Outcome {
    let ok = |runs: &[StepRun], noise: f64| runs.iter().filter(|r| r.sigma / noise <= 2.0 && noise / r.sigma <= 2.0).count();
    let (a, b) = (ok(runs_01, 0.1), ok(runs_001, 0.01));
    let fmt = |runs: &[StepRun]| runs.iter().map(|r| format!("{:.3}", r.sigma)).collect::<Vec<_>>().join(" ");
    outcome(
        a >= 8 && b >= 8,
        format!(
            "within 2x: {a}/10 at noise 0.1 [{}], {b}/10 at noise 0.01 [{}]",
            fmt(runs_01),
            fmt(runs_001)
        ),
    )
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |k: usize, name: &'static str, o: Outcome| {
        println!("criterion {k} [{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((k, name, o));
    };

    report(1, "dual-path equivalence", criterion_1());
    report(2, "log-determinant identity", criterion_2());
    report(3, "dense likelihood oracle", criterion_3());
    report(4, "clustering invariants", criterion_4());

    let t = Instant::now();
    let low_noise = step_runs(0.01);
    let secs = t.elapsed().as_secs_f64();
    report(5, "step sparsity band", criterion_5(&low_noise, secs));
    report(6, "sine size plateau", criterion_6());
    let high_noise = step_runs(0.1);
    report(7, "kernel/basis width ratio", criterion_7(&high_noise));
    report(8, "complexity exponents", criterion_8());
    report(9, "noise recovery", criterion_9(&high_noise, &low_noise));
    println!("criterion 10 [EXCLUDED] seven-dimensional combustion data: dataset unavailable");

    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
