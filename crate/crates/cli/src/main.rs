use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mgp::bench::{self, BenchReport, NonuniformConfig, ScalingConfig, SweepConfig};
use mgp::clustering::ScaleConfig;
use mgp::dataset::{generate, load_csv, read_numeric_rows, write_atomic, SyntheticKind, SyntheticSpec};
use mgp::hyperopt::{FreeParam, NelderMeadConfig, OptimizerConfig};
use mgp::model_file;
use mgp::pipeline::{build_basis, fit, FitConfig};
use mgp::regression::{Hyperparameters, Method, Regressor, TrainOptions, DEFAULT_MAX_N};
use mgp::Error;

/// Multiscale sparse Gaussian-process regression.
///
/// Set MGP_THREADS to cap the number of worker threads (0 = one per core).
#[derive(Parser)]
#[command(name = "mgp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset as CSV.
    Generate(GenerateArgs),
    /// Select multiscale cluster centers and write them as CSV.
    Cluster(ClusterArgs),
    /// Fit a model (optionally optimizing hyperparameters) and save it.
    Train(TrainArgs),
    /// Predict with a saved model.
    Predict(PredictArgs),
    /// Run a benchmark experiment.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_parser = parse_kind)]
    kind: SyntheticKind,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Width of the point-density peak for nonuniform_step.
    #[arg(long = "h-t", default_value_t = 0.1)]
    h_t: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct ScaleArgs {
    /// Number of scales.
    #[arg(long = "S", default_value_t = 1)]
    s: usize,
    #[arg(long, default_value_t = 0.1)]
    h1: f64,
    /// Ratio between consecutive scales.
    #[arg(long, default_value_t = 0.5)]
    beta: f64,
    /// Cluster radius as a fraction of the scale.
    #[arg(long, default_value_t = 0.5)]
    gamma: f64,
}

impl ScaleArgs {
    fn config(&self) -> mgp::Result<ScaleConfig> {
        ScaleConfig::new(self.h1, self.beta, self.s, self.gamma)
    }
}

#[derive(Args)]
struct ClusterArgs {
    /// Dataset CSV; the last column is the target and is ignored.
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    scales: ScaleArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cluster in the normalized [0, 1] coordinates used for training.
    #[arg(long)]
    normalized: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "D", value_parser = parse_method)]
    method: Method,
    #[command(flatten)]
    scales: ScaleArgs,
    /// Noise standard deviation (normalized target units).
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    /// Prior weight standard deviation.
    #[arg(long = "sigma-p", default_value_t = 1.0)]
    sigma_p: f64,
    /// Maximize the marginal likelihood before the final fit.
    #[arg(long)]
    optimize: bool,
    /// Hyperparameters the optimizer may move.
    #[arg(long, value_delimiter = ',', value_parser = parse_free, default_value = "sigma,h1,beta,gamma")]
    free: Vec<FreeParam>,
    #[arg(long, default_value_t = 3)]
    starts: usize,
    #[arg(long = "max-iters", default_value_t = 500)]
    max_iters: usize,
    #[arg(long = "f-tol", default_value_t = 1e-6)]
    f_tol: f64,
    #[arg(long = "x-tol", default_value_t = 1e-6)]
    x_tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Permit the function-space method above the default size guard.
    #[arg(long = "allow-large-n")]
    allow_large_n: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// CSV with d input columns; a trailing target column is ignored.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "with-variance")]
    with_variance: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Experiment {
    Step,
    Sine,
    #[value(name = "nonuniform-step")]
    NonuniformStep,
    Scaling,
    Equivalence,
}

impl Experiment {
    fn name(self) -> &'static str {
        match self {
            Experiment::Step => "step",
            Experiment::Sine => "sine",
            Experiment::NonuniformStep => "nonuniform-step",
            Experiment::Scaling => "scaling",
            Experiment::Equivalence => "equivalence",
        }
    }
}

#[derive(Args)]
struct BenchArgs {
    #[arg(value_enum)]
    experiment: Experiment,
    /// Training-set sizes (comma separated).
    #[arg(long, value_delimiter = ',')]
    ns: Option<Vec<usize>>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Timed repetitions after the warm-up run.
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long, default_value_t = 3)]
    starts: usize,
    /// Number of scales for the step and sine sweeps.
    #[arg(long = "S", default_value_t = 1)]
    s: usize,
    /// Also optimize the prior weight scale in the sweeps.
    #[arg(long = "free-sigma-p")]
    free_sigma_p: bool,
    /// Basis size for the scaling experiment.
    #[arg(long, default_value_t = 32)]
    d: usize,
    /// Largest N at which the conventional GP is fitted in the sweeps.
    #[arg(long = "full-gp-max", default_value_t = 1024)]
    full_gp_max: usize,
    /// Random problems for the equivalence experiment.
    #[arg(long, default_value_t = 100)]
    instances: usize,
    /// Where to write the CSV report (default: bench-<experiment>.csv).
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn parse_kind(s: &str) -> Result<SyntheticKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_free(s: &str) -> Result<FreeParam, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_io() {
            2
        } else if e.is_numerical() {
            3
        } else {
            1
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

type CmdResult = Result<(), Failure>;

fn configure_threads() -> CmdResult {
    let Ok(raw) = std::env::var("MGP_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| usage(format!("MGP_THREADS must be a non-negative integer, got {raw:?}")))?;
    #[cfg(feature = "parallel")]
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| usage(format!("cannot size the thread pool: {e}")))?;
    }
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn cmd_generate(a: &GenerateArgs) -> CmdResult {
    let mut spec = SyntheticSpec::new(a.kind, a.n, a.noise, a.seed);
    spec.h_t = a.h_t;
    let data = generate(&spec)?;
    let mut buf = Vec::new();
    data.write_csv(&mut buf).expect("writing to memory");
    write_atomic(&a.out, &buf)?;
    Ok(())
}

fn cmd_cluster(a: &ClusterArgs) -> CmdResult {
    let raw = load_csv(&a.input)?;
    let cfg = a.scales.config()?;
    let (data, stats) = mgp::dataset::normalize(&raw);
    let pts = data.points();
    let (_, res) = build_basis(pts, &cfg, a.seed)?;
    let mut out = String::new();
    for c in &res.centers {
        let coords = if a.normalized {
            pts.get(c.row).to_vec()
        } else {
            stats.denormalize_point(pts.get(c.row))
        };
        for v in coords {
            write!(out, "{v:?},").unwrap();
        }
        writeln!(out, "{},{}", c.scale, c.row).unwrap();
    }
    write_atomic(&a.out, out.as_bytes())?;
    let counts: Vec<String> = res.per_scale_counts.iter().map(|k| k.to_string()).collect();
    println!("D {} k_s {}", res.total(), counts.join(" "));
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> CmdResult {
    let raw = load_csv(&a.input)?;
    let hyper = Hyperparameters::new(a.sigma, a.sigma_p, a.scales.config()?)?;
    let train = TrainOptions {
        max_n: if a.allow_large_n { usize::MAX } else { DEFAULT_MAX_N },
        ..TrainOptions::default()
    };
    let optimizer = a.optimize.then(|| OptimizerConfig {
        nelder_mead: NelderMeadConfig {
            max_iters: a.max_iters,
            f_tol: a.f_tol,
            x_tol: a.x_tol,
            ..NelderMeadConfig::default()
        },
        seed: a.seed,
        free_params: a.free.clone(),
        n_starts: a.starts,
        train,
        ..OptimizerConfig::default()
    });
    let cfg = FitConfig {
        method: a.method,
        initial: hyper,
        optimizer,
        cluster_seed: a.seed,
        train,
    };
    let fit = fit(&raw, &cfg)?;
    model_file::save(&fit.model, &a.out)?;

    let r = &fit.report;
    let h = fit.model.hyper();
    let counts: Vec<String> = r.per_scale_counts.iter().map(|k| k.to_string()).collect();
    println!("method {}", r.method.tag());
    println!("N {}", r.n);
    println!("D {}", r.d);
    println!("k_s {}", counts.join(" "));
    println!("lml {:.10e}", r.lml);
    println!("jitter {:e}", r.jitter);
    println!(
        "sigma {:.6e} (target units {:.6e})",
        h.sigma,
        fit.sigma_original()
    );
    println!("sigma_p {:.6e}", h.sigma_p);
    println!(
        "h1 {:.6e} beta {:.6e} gamma {:.6e} S {}",
        h.scales.h1, h.scales.beta, h.scales.gamma, h.scales.n_scales
    );
    if let Some(o) = &fit.optimization {
        println!(
            "optimizer iterations {} evaluations {} termination {}",
            o.iterations,
            o.evaluations,
            o.termination.name()
        );
    }
    Ok(())
}

fn cmd_predict(a: &PredictArgs) -> CmdResult {
    let model = model_file::load(&a.model)?;
    let rows = read_numeric_rows(&a.input)?;
    let d = model.dim();
    let mut out = String::new();
    for (line, row) in &rows {
        if row.len() != d && row.len() != d + 1 {
            return Err(usage(format!(
                "{}: line {line} has {} columns, the model expects {d} inputs (optionally followed by a target)",
                a.input.display(),
                row.len()
            )));
        }
        let q = &row[..d];
        let p = model.predict_original(q)?;
        for v in q {
            write!(out, "{v:?},").unwrap();
        }
        if a.with_variance {
            writeln!(out, "{:?},{:?}", p.mean, p.variance).unwrap();
        } else {
            writeln!(out, "{:?}", p.mean).unwrap();
        }
    }
    write_atomic(&a.out, out.as_bytes())?;
    Ok(())
}

fn cmd_bench(a: &BenchArgs) -> CmdResult {
    let report: BenchReport = match a.experiment {
        Experiment::Step | Experiment::Sine => {
            let kind = match a.experiment {
                Experiment::Step => SyntheticKind::Step,
                _ => SyntheticKind::VarFreqSine,
            };
            let mut cfg = SweepConfig::new(kind);
            if let Some(ns) = &a.ns {
                cfg.ns = ns.clone();
            }
            if let Some(noise) = a.noise {
                cfg.noise = noise;
            }
            cfg.seed = a.seed;
            cfg.reps = a.reps;
            cfg.n_starts = a.starts;
            cfg.n_scales = a.s;
            cfg.full_gp_max = a.full_gp_max;
            if a.free_sigma_p {
                cfg.free_params.push(FreeParam::SigmaP);
            }
            if a.s > 1 {
                cfg.free_params.push(FreeParam::Beta);
            }
            bench::sweep(&cfg)?
        }
        Experiment::NonuniformStep => {
            let mut cfg = NonuniformConfig {
                seed: a.seed,
                n_starts: a.starts,
                ..NonuniformConfig::default()
            };
            if let Some(ns) = &a.ns {
                cfg.n = *ns.first().ok_or_else(|| usage("--ns needs a value"))?;
            }
            if let Some(noise) = a.noise {
                cfg.noise = noise;
            }
            bench::nonuniform(&cfg)?
        }
        Experiment::Scaling => {
            let mut cfg = ScalingConfig {
                d: a.d,
                seed: a.seed,
                reps: a.reps,
                ..ScalingConfig::default()
            };
            if let Some(ns) = &a.ns {
                cfg.ns = ns.clone();
            }
            if let Some(noise) = a.noise {
                cfg.noise = noise;
            }
            bench::scaling(&cfg)?
        }
        Experiment::Equivalence => bench::equivalence(a.instances, 64, a.seed)?,
    };
    print!("{}", report.table());
    let path = a
        .csv
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("bench-{}.csv", a.experiment.name())));
    let mut buf = Vec::new();
    report.write_csv(&mut buf).expect("writing to memory");
    write_atomic(Path::new(&path), &buf)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = configure_threads().and_then(|_| match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Cluster(a) => cmd_cluster(a),
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Bench(a) => cmd_bench(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
