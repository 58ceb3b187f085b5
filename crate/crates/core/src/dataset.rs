//! Datasets: CSV ingestion, min-max normalization, synthetic generators and
//! the normalized error metric.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::{Error, Result};

/// Number of nodes in the uniform pool that step and sine samples are drawn from.
pub const GRID_SIZE: usize = 10_000;

/// Borrowed view of `len` points in R^dim stored row-major.
#[derive(Debug, Clone, Copy)]
pub struct Points<'a> {
    data: &'a [f64],
    dim: usize,
}

impl<'a> Points<'a> {
    pub fn new(data: &'a [f64], dim: usize) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::invalid(format!(
                "{} coordinates do not form points of dimension {dim}",
                data.len()
            )));
        }
        Ok(Self { data, dim })
    }

    #[inline]
    pub fn get(&self, i: usize) -> &'a [f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &'a [f64] {
        self.data
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &'a [f64]> + 'a {
        self.data.chunks_exact(self.dim)
    }
}

/// N samples in R^d with scalar targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<f64>,
    dim: usize,
    targets: Vec<f64>,
}

impl Dataset {
    /// `inputs` is row-major, `targets.len()` rows of `dim` values each.
    pub fn new(inputs: Vec<f64>, dim: usize, targets: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("input dimension must be positive"));
        }
        if inputs.len() != targets.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: targets.len() * dim,
                found: inputs.len(),
            });
        }
        if inputs.iter().chain(&targets).any(|v| !v.is_finite()) {
            return Err(Error::invalid("dataset contains NaN or infinite values"));
        }
        Ok(Self {
            inputs,
            dim,
            targets,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], targets: Vec<f64>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::invalid("rows have differing lengths"));
        }
        Self::new(rows.concat(), dim, targets)
    }

    pub fn count(&self) -> usize {
        self.targets.len()
    }

    pub fn dim_in(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> Points<'_> {
        Points {
            data: &self.inputs,
            dim: self.dim,
        }
    }

    pub fn input(&self, n: usize) -> &[f64] {
        self.points().get(n)
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Keeps the rows whose indices are listed, in that order.
    pub fn select(&self, rows: &[usize]) -> Dataset {
        let mut inputs = Vec::with_capacity(rows.len() * self.dim);
        let mut targets = Vec::with_capacity(rows.len());
        for &r in rows {
            inputs.extend_from_slice(self.input(r));
            targets.push(self.targets[r]);
        }
        Dataset {
            inputs,
            dim: self.dim,
            targets,
        }
    }

    /// Writes `x1,..,xd,y` rows with 17 significant digits.
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        for (q, y) in self.points().iter().zip(&self.targets) {
            for v in q {
                write!(out, "{},", fmt_real(*v))?;
            }
            writeln!(out, "{}", fmt_real(*y))?;
        }
        Ok(())
    }
}

/// Replaces `path` with `contents` via a temporary file in the same directory,
/// so readers never observe a partial write.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(contents)
        .and_then(|_| tmp.as_file().sync_all())
        .map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Shortest decimal that parses back to the same double.
pub(crate) fn fmt_real(v: f64) -> String {
    format!("{v:?}")
}

/// Parses comma-separated numeric rows; `#` lines and blank lines are skipped.
/// Returns each row with its 1-based line number.
pub fn read_numeric_rows(path: &Path) -> Result<Vec<(usize, Vec<f64>)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_numeric_rows(&text)
}

pub(crate) fn parse_numeric_rows(text: &str) -> Result<Vec<(usize, Vec<f64>)>> {
    let mut rows = Vec::new();
    let mut width = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut row = Vec::new();
        for field in trimmed.split(',') {
            let field = field.trim();
            let v: f64 = field.parse().map_err(|_| Error::NonNumeric {
                line,
                field: field.to_string(),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite { line });
            }
            row.push(v);
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::Ragged {
                    line,
                    expected: w,
                    found: row.len(),
                })
            }
            _ => {}
        }
        rows.push((line, row));
    }
    Ok(rows)
}

/// Loads a dataset whose last column is the target.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let rows = read_numeric_rows(path)?;
    dataset_from_rows(rows).ok_or_else(|| Error::EmptyFile(path.to_path_buf()))?
}

fn dataset_from_rows(rows: Vec<(usize, Vec<f64>)>) -> Option<Result<Dataset>> {
    let (first_line, first) = rows.first()?;
    if first.len() < 2 {
        return Some(Err(Error::Ragged {
            line: *first_line,
            expected: 2,
            found: first.len(),
        }));
    }
    let dim = first.len() - 1;
    let mut inputs = Vec::with_capacity(rows.len() * dim);
    let mut targets = Vec::with_capacity(rows.len());
    for (_, mut row) in rows {
        targets.push(row.pop().expect("row width checked"));
        inputs.extend(row);
    }
    Some(Dataset::new(inputs, dim, targets))
}

/// Per-column affine maps onto [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationStats {
    pub x_min: Vec<f64>,
    pub x_range: Vec<f64>,
    pub y_min: f64,
    pub y_range: f64,
}

#[inline]
fn forward(v: f64, min: f64, range: f64) -> f64 {
    if range > 0.0 {
        (v - min) / range
    } else {
        0.0
    }
}

impl NormalizationStats {
    /// The identity map for `dim` inputs.
    pub fn identity(dim: usize) -> Self {
        Self {
            x_min: vec![0.0; dim],
            x_range: vec![1.0; dim],
            y_min: 0.0,
            y_range: 1.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.x_min.len()
    }

    pub fn normalize_point(&self, q: &[f64]) -> Vec<f64> {
        q.iter()
            .zip(self.x_min.iter().zip(&self.x_range))
            .map(|(&v, (&m, &r))| forward(v, m, r))
            .collect()
    }

    pub fn normalize_target(&self, y: f64) -> f64 {
        forward(y, self.y_min, self.y_range)
    }

    pub fn denormalize_point(&self, q: &[f64]) -> Vec<f64> {
        q.iter()
            .zip(self.x_min.iter().zip(&self.x_range))
            .map(|(&v, (&m, &r))| v * r + m)
            .collect()
    }

    pub fn denormalize_mean(&self, m: f64) -> f64 {
        m * self.y_range + self.y_min
    }

    pub fn denormalize_variance(&self, v: f64) -> f64 {
        v * self.y_range * self.y_range
    }

    /// Maps a noise standard deviation back to target units.
    pub fn denormalize_std(&self, s: f64) -> f64 {
        s * self.y_range
    }

    /// Applies the maps to a dataset of matching dimension.
    pub fn apply(&self, data: &Dataset) -> Dataset {
        let inputs = data
            .points()
            .iter()
            .flat_map(|q| self.normalize_point(q))
            .collect();
        let targets = data
            .targets
            .iter()
            .map(|&y| self.normalize_target(y))
            .collect();
        Dataset {
            inputs,
            dim: data.dim,
            targets,
        }
    }

    pub fn denormalize(&self, data: &Dataset) -> Dataset {
        let inputs = data
            .points()
            .iter()
            .flat_map(|q| self.denormalize_point(q))
            .collect();
        let targets = data
            .targets
            .iter()
            .map(|&y| self.denormalize_mean(y))
            .collect();
        Dataset {
            inputs,
            dim: data.dim,
            targets,
        }
    }
}

fn min_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if lo.is_finite() {
        (lo, hi - lo)
    } else {
        (0.0, 0.0)
    }
}

/// Maps every input column and the target onto [0, 1]. Constant columns map to 0.
pub fn normalize(data: &Dataset) -> (Dataset, NormalizationStats) {
    let (x_min, x_range) = (0..data.dim)
        .map(|c| min_range(data.points().iter().map(|q| q[c])))
        .unzip();
    let (y_min, y_range) = min_range(data.targets.iter().copied());
    let stats = NormalizationStats {
        x_min,
        x_range,
        y_min,
        y_range,
    };
    (stats.apply(data), stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    /// `1{q > 0.5}` on uniformly sampled grid points.
    Step,
    /// Step sampled at `0.5 ± h_t ln z`, dense near the jump.
    NonuniformStep,
    /// `sin(2π q (4q + 1)^1.5)` on uniformly sampled grid points.
    VarFreqSine,
}

impl SyntheticKind {
    pub fn truth(self, q: f64) -> f64 {
        match self {
            SyntheticKind::Step | SyntheticKind::NonuniformStep => {
                if q > 0.5 {
                    1.0
                } else {
                    0.0
                }
            }
            SyntheticKind::VarFreqSine => {
                (2.0 * std::f64::consts::PI * q * (4.0 * q + 1.0).powf(1.5)).sin()
            }
        }
    }
}

impl std::str::FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "step" => Ok(SyntheticKind::Step),
            "nonuniform_step" | "nonuniform-step" => Ok(SyntheticKind::NonuniformStep),
            "varfreq_sine" | "sine" => Ok(SyntheticKind::VarFreqSine),
            other => Err(Error::invalid(format!("unknown synthetic kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub n_points: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Only used by [`SyntheticKind::NonuniformStep`].
    pub h_t: f64,
}

impl SyntheticSpec {
    pub fn new(kind: SyntheticKind, n_points: usize, noise_sigma: f64, seed: u64) -> Self {
        Self {
            kind,
            n_points,
            noise_sigma,
            seed,
            h_t: 0.1,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_points < 2 {
            return Err(Error::invalid("n_points must be at least 2"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid("noise_sigma must be finite and nonnegative"));
        }
        if self.kind != SyntheticKind::NonuniformStep && self.n_points > GRID_SIZE {
            return Err(Error::invalid(format!(
                "n_points {} exceeds the {GRID_SIZE}-point sampling pool",
                self.n_points
            )));
        }
        if self.kind == SyntheticKind::NonuniformStep && !(self.h_t > 0.0) {
            return Err(Error::invalid("h_t must be positive"));
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn grid_node(i: usize) -> f64 {
    i as f64 / (GRID_SIZE - 1) as f64
}

/// Abscissas `0.5 ± h_t ln z` over a regular z grid on `[exp(-0.5/h_t), 1]`,
/// sorted ascending. Both branches share the node at 0.5; for even `n` the
/// right branch loses its outermost node.
pub fn nonuniform_abscissas(n: usize, h_t: f64) -> Vec<f64> {
    let m = n / 2 + 1;
    let z_min = (-0.5 / h_t).exp();
    let z = |k: usize| z_min + (1.0 - z_min) * k as f64 / (m - 1) as f64;
    let mut q: Vec<f64> = (0..m)
        .map(|k| 0.5 + h_t * z(k).ln())
        .chain((0..m - 1).map(|k| 0.5 - h_t * z(k).ln()))
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    q.sort_by(f64::total_cmp);
    if q.len() > n {
        q.pop();
    }
    q
}

/// Training set and the noiseless held-out complement.
#[derive(Debug, Clone)]
pub struct SyntheticSplit {
    pub train: Dataset,
    pub test: Dataset,
}

/// Generates a synthetic training set; deterministic in `spec`.
pub fn generate(spec: &SyntheticSpec) -> Result<Dataset> {
    generate_split(spec).map(|s| s.train)
}

/// Generates the training set plus a noiseless test set: the unused grid nodes
/// for grid-sampled kinds, the full uniform grid for the non-uniform step.
pub fn generate_split(spec: &SyntheticSpec) -> Result<SyntheticSplit> {
    spec.validate()?;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(spec.seed);
    let (train_q, test_q): (Vec<f64>, Vec<f64>) = match spec.kind {
        SyntheticKind::Step | SyntheticKind::VarFreqSine => {
            let mut picked = index::sample(&mut rng, GRID_SIZE, spec.n_points).into_vec();
            picked.sort_unstable();
            let mut used = vec![false; GRID_SIZE];
            for &i in &picked {
                used[i] = true;
            }
            let train = picked.iter().map(|&i| grid_node(i)).collect();
            let test = (0..GRID_SIZE)
                .filter(|&i| !used[i])
                .map(grid_node)
                .collect();
            (train, test)
        }
        SyntheticKind::NonuniformStep => (
            nonuniform_abscissas(spec.n_points, spec.h_t),
            (0..GRID_SIZE).map(grid_node).collect(),
        ),
    };
    let train_y = train_q
        .iter()
        .map(|&q| {
            let y = spec.kind.truth(q);
            if spec.noise_sigma > 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                y + spec.noise_sigma * z
            } else {
                y
            }
        })
        .collect();
    let test_y = test_q.iter().map(|&q| spec.kind.truth(q)).collect();
    Ok(SyntheticSplit {
        train: Dataset::new(train_q, 1, train_y)?,
        test: Dataset::new(test_q, 1, test_y)?,
    })
}

/// `||truth - pred|| / ||truth||` in the Euclidean norm.
pub fn normalized_error(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            found: pred.len(),
        });
    }
    let norm = truth.iter().map(|t| t * t).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::invalid("truth vector has zero norm"));
    }
    let diff = truth
        .iter()
        .zip(pred)
        .map(|(t, p)| (t - p) * (t - p))
        .sum::<f64>()
        .sqrt();
    Ok(diff / norm)
}
