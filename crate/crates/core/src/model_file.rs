//! Versioned text serialization of trained models.
//!
//! Every real is written with 17 significant digits, which round-trips any
//! `f64` exactly, so a loaded model predicts bit-for-bit like the saved one.
//!
//! Layout (one record per line, `#` lines ignored):
//!
//! ```text
//! MGP-MODEL 1
//! method D
//! dim <d>
//! size <D or N>
//! scales <S>
//! hyper <sigma> <sigma_p> <h1> <beta> <gamma>
//! lml <value>
//! jitter <value>
//! x_min <d values>
//! x_range <d values>
//! y <y_min> <y_range>
//! centers <D>
//! <scale index> <width> <d coordinates>      (D lines)
//! weights <D> | alpha <N>
//! <value>                                    (one per line)
//! lower <order>
//! <row i: i+1 values>                        (order lines)
//! inputs <N>                                 (method N only)
//! <d coordinates>                            (N lines)
//! ```

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::clustering::ScaleConfig;
use crate::dataset::NormalizationStats;
use crate::kernel::BasisSet;
use crate::linalg::CholeskyFactor;
use crate::regression::{Hyperparameters, MethodDModel, MethodNModel, Model, Regressor};
use crate::{Error, Result};

pub const MAGIC: &str = "MGP-MODEL";
pub const VERSION: u32 = 1;

fn real(out: &mut String, v: f64) {
    write!(out, "{v:.16e}").expect("writing to a String");
}

fn real_line<'a>(out: &mut String, key: Option<&str>, values: impl IntoIterator<Item = &'a f64>) {
    let mut first = true;
    if let Some(k) = key {
        out.push_str(k);
        first = false;
    }
    for v in values {
        if !first {
            out.push(' ');
        }
        real(out, *v);
        first = false;
    }
    out.push('\n');
}

fn lower_block(out: &mut String, l: &DMatrix<f64>) {
    let n = l.nrows();
    writeln!(out, "lower {n}").unwrap();
    for i in 0..n {
        let row: Vec<f64> = (0..=i).map(|j| l[(i, j)]).collect();
        real_line(out, None, &row);
    }
}

/// Renders a model in the text format.
pub fn to_string(model: &Model) -> String {
    let basis = model.basis();
    let hyper = model.hyper();
    let norm = model.normalization();
    let d = basis.dim();
    let mut out = String::new();
    writeln!(out, "{MAGIC} {VERSION}").unwrap();
    writeln!(out, "method {}", model.method().tag()).unwrap();
    writeln!(out, "dim {d}").unwrap();
    let size = match model {
        Model::D(_) => basis.size(),
        Model::N(m) => m.alpha().len(),
    };
    writeln!(out, "size {size}").unwrap();
    writeln!(out, "scales {}", hyper.scales.n_scales).unwrap();
    let s = &hyper.scales;
    real_line(&mut out, Some("hyper"), &[hyper.sigma, hyper.sigma_p, s.h1, s.beta, s.gamma]);
    real_line(&mut out, Some("lml"), &[model.lml()]);
    real_line(&mut out, Some("jitter"), &[model.jitter()]);
    real_line(&mut out, Some("x_min"), &norm.x_min);
    real_line(&mut out, Some("x_range"), &norm.x_range);
    real_line(&mut out, Some("y"), &[norm.y_min, norm.y_range]);
    writeln!(out, "centers {}", basis.size()).unwrap();
    for j in 0..basis.size() {
        write!(out, "{} ", basis.scale_index()[j]).unwrap();
        real_line(&mut out, None, std::iter::once(&basis.scales()[j]).chain(basis.center(j)));
    }
    match model {
        Model::D(m) => {
            writeln!(out, "weights {}", m.weights().len()).unwrap();
            for w in m.weights().iter() {
                real_line(&mut out, None, [w]);
            }
            lower_block(&mut out, m.chol_precision().lower());
        }
        Model::N(m) => {
            writeln!(out, "alpha {}", m.alpha().len()).unwrap();
            for a in m.alpha().iter() {
                real_line(&mut out, None, [a]);
            }
            lower_block(&mut out, m.chol_cov().lower());
            let pts = m.training_inputs();
            writeln!(out, "inputs {}", pts.len()).unwrap();
            for p in pts.iter() {
                real_line(&mut out, None, p);
            }
        }
    }
    out
}

/// Writes the model to `path` atomically (temporary file, then rename).
pub fn save(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    crate::dataset::write_atomic(path.as_ref(), to_string(model).as_bytes())
}

pub fn load(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_str(&text)
}

struct Lines<'a> {
    inner: std::iter::Peekable<Box<dyn Iterator<Item = (usize, &'a str)> + 'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        let it: Box<dyn Iterator<Item = (usize, &'a str)>> = Box::new(
            text.lines()
                .enumerate()
                .map(|(i, l)| (i + 1, l.trim()))
                .filter(|(_, l)| !l.is_empty() && !l.starts_with('#')),
        );
        Self {
            inner: it.peekable(),
            last: 0,
        }
    }

    fn err(&self, line: usize, message: impl Into<String>) -> Error {
        Error::ModelFormat {
            line,
            message: message.into(),
        }
    }

    fn next_line(&mut self) -> Result<(usize, Vec<&'a str>)> {
        match self.inner.next() {
            Some((n, l)) => {
                self.last = n;
                Ok((n, l.split_whitespace().collect()))
            }
            None => Err(self.err(self.last + 1, "unexpected end of file")),
        }
    }

    /// Next line, which must start with `key`; returns the remaining fields.
    fn keyed(&mut self, key: &str) -> Result<(usize, Vec<&'a str>)> {
        let (n, mut fields) = self.next_line()?;
        if fields.first() != Some(&key) {
            return Err(self.err(n, format!("expected `{key}`, found `{}`", fields.join(" "))));
        }
        fields.remove(0);
        Ok((n, fields))
    }

    fn count(&mut self, key: &str) -> Result<usize> {
        let (n, f) = self.keyed(key)?;
        match f.as_slice() {
            [v] => v.parse().map_err(|_| self.err(n, format!("`{key}` needs a count, got {v:?}"))),
            _ => Err(self.err(n, format!("`{key}` takes exactly one value"))),
        }
    }

    fn reals(&self, n: usize, fields: &[&str], want: usize) -> Result<Vec<f64>> {
        if fields.len() != want {
            return Err(self.err(n, format!("expected {want} values, found {}", fields.len())));
        }
        fields
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| self.err(n, format!("not a number: {f:?}"))))
            .collect()
    }

    fn keyed_reals(&mut self, key: &str, want: usize) -> Result<Vec<f64>> {
        let (n, f) = self.keyed(key)?;
        self.reals(n, &f, want)
    }

    fn real_rows(&mut self, rows: usize, width: impl Fn(usize) -> usize) -> Result<Vec<Vec<f64>>> {
        (0..rows)
            .map(|i| {
                let (n, f) = self.next_line()?;
                self.reals(n, &f, width(i))
            })
            .collect()
    }

    fn lower(&mut self, order: usize) -> Result<DMatrix<f64>> {
        let found = self.count("lower")?;
        if found != order {
            return Err(self.err(self.last, format!("factor order {found}, expected {order}")));
        }
        let rows = self.real_rows(order, |i| i + 1)?;
        Ok(DMatrix::from_fn(order, order, |i, j| if j <= i { rows[i][j] } else { 0.0 }))
    }
}

/// Parses the text format.
pub fn from_str(text: &str) -> Result<Model> {
    let mut lines = Lines::new(text);
    let (n, head) = lines.keyed(MAGIC)?;
    match head.as_slice() {
        [v] if v.parse::<u32>() == Ok(VERSION) => {}
        _ => return Err(lines.err(n, format!("unsupported format version {:?}", head.join(" ")))),
    }
    let (n, m) = lines.keyed("method")?;
    let method: crate::regression::Method = match m.as_slice() {
        [t] => t.parse().map_err(|_| lines.err(n, format!("unknown method {t:?}")))?,
        _ => return Err(lines.err(n, "`method` takes one value")),
    };
    let dim = lines.count("dim")?;
    let size = lines.count("size")?;
    let n_scales = lines.count("scales")?;
    let line_hyper = lines.last + 1;
    let hv = lines.keyed_reals("hyper", 5)?;
    let scales = ScaleConfig::new(hv[2], hv[3], n_scales, hv[4]).map_err(|e| lines.err(line_hyper, e.to_string()))?;
    let hyper = Hyperparameters::new(hv[0], hv[1], scales).map_err(|e| lines.err(line_hyper, e.to_string()))?;
    let lml = lines.keyed_reals("lml", 1)?[0];
    let jitter = lines.keyed_reals("jitter", 1)?[0];
    let x_min = lines.keyed_reals("x_min", dim)?;
    let x_range = lines.keyed_reals("x_range", dim)?;
    let y = lines.keyed_reals("y", 2)?;
    let norm = NormalizationStats {
        x_min,
        x_range,
        y_min: y[0],
        y_range: y[1],
    };

    let line_centers = lines.last + 1;
    let n_centers = lines.count("centers")?;
    let mut centers = Vec::with_capacity(n_centers * dim);
    let mut widths = Vec::with_capacity(n_centers);
    let mut index = Vec::with_capacity(n_centers);
    for _ in 0..n_centers {
        let (n, f) = lines.next_line()?;
        let (s, rest) = f.split_first().ok_or_else(|| lines.err(n, "empty center line"))?;
        let s: usize = s.parse().map_err(|_| lines.err(n, format!("bad scale index {s:?}")))?;
        let vals = lines.reals(n, rest, dim + 1)?;
        index.push(s);
        widths.push(vals[0]);
        centers.extend_from_slice(&vals[1..]);
    }
    let basis = BasisSet::with_scale_index(centers, dim, widths, index)
        .map_err(|e| lines.err(line_centers, e.to_string()))?;
    let bad = |e: Error| match e {
        Error::ModelFormat { .. } => e,
        other => Error::ModelFormat {
            line: 0,
            message: other.to_string(),
        },
    };

    let model = match method {
        crate::regression::Method::D => {
            if size != n_centers {
                return Err(lines.err(line_centers, format!("size {size} but {n_centers} centers")));
            }
            let k = lines.count("weights")?;
            if k != size {
                return Err(lines.err(lines.last, format!("{k} weights, expected {size}")));
            }
            let w: Vec<f64> = lines.real_rows(k, |_| 1)?.into_iter().map(|r| r[0]).collect();
            let l = lines.lower(size)?;
            let chol = CholeskyFactor::from_lower(l, jitter).map_err(bad)?;
            Model::D(MethodDModel::from_parts(basis, chol, DVector::from_vec(w), hyper, norm, lml).map_err(bad)?)
        }
        crate::regression::Method::N => {
            let k = lines.count("alpha")?;
            if k != size {
                return Err(lines.err(lines.last, format!("{k} dual weights, expected {size}")));
            }
            let a: Vec<f64> = lines.real_rows(k, |_| 1)?.into_iter().map(|r| r[0]).collect();
            let l = lines.lower(size)?;
            let chol = CholeskyFactor::from_lower(l, jitter).map_err(bad)?;
            let k = lines.count("inputs")?;
            if k != size {
                return Err(lines.err(lines.last, format!("{k} inputs, expected {size}")));
            }
            let inputs: Vec<f64> = lines.real_rows(k, |_| dim)?.into_iter().flatten().collect();
            Model::N(
                MethodNModel::from_parts(chol, DVector::from_vec(a), inputs, basis, hyper, norm, lml)
                    .map_err(bad)?,
            )
        }
    };
    if let Some((n, l)) = lines.inner.next() {
        return Err(lines.err(n, format!("trailing content `{l}`")));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::normalize;
    use crate::pipeline::build_basis;
    use crate::regression::{train, Method, TrainOptions};
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn trained(method: Method, dim: usize) -> Model {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(17);
        let n = 60;
        let inputs: Vec<f64> = (0..n * dim).map(|_| rng.random::<f64>()).collect();
        let targets: Vec<f64> = (0..n).map(|i| (5.0 * inputs[i * dim]).sin() + 3.0).collect();
        let raw = crate::dataset::Dataset::new(inputs, dim, targets).unwrap();
        let (data, stats) = normalize(&raw);
        let scales = ScaleConfig::new(0.3, 0.6, 2, 0.5).unwrap();
        let hyper = Hyperparameters::new(0.05, 1.3, scales).unwrap();
        let (basis, _) = build_basis(data.points(), &scales, 3).unwrap();
        train(method, &data, basis, &hyper, &TrainOptions::default())
            .unwrap()
            .with_normalization(stats)
    }

    fn check_round_trip(model: &Model) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        save(model, &path).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(&back, model);
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(99);
        for _ in 0..100 {
            let q: Vec<f64> = (0..model.dim()).map(|_| rng.random_range(-0.5..1.5)).collect();
            let a = model.predict_original(&q).unwrap();
            let b = back.predict_original(&q).unwrap();
            assert_eq!(a.mean.to_bits(), b.mean.to_bits());
            assert_eq!(a.variance.to_bits(), b.variance.to_bits());
        }
    }

    #[test]
    fn method_d_round_trip_is_bit_exact() {
        check_round_trip(&trained(Method::D, 2));
    }

    #[test]
    fn method_n_round_trip_is_bit_exact() {
        check_round_trip(&trained(Method::N, 1));
    }

    #[test]
    fn header_is_versioned() {
        let text = to_string(&trained(Method::D, 1));
        assert!(text.starts_with("MGP-MODEL 1\nmethod D\ndim 1\n"));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = to_string(&trained(Method::D, 1));
        let broken = text.replacen("lml ", "lml x", 1);
        match from_str(&broken) {
            Err(Error::ModelFormat { line, .. }) => assert_eq!(line, 7),
            other => panic!("unexpected {other:?}"),
        }
        let truncated: String = text.lines().take(20).map(|l| format!("{l}\n")).collect();
        assert!(matches!(from_str(&truncated), Err(Error::ModelFormat { .. })));
        assert!(matches!(from_str("MGP-MODEL 2\n"), Err(Error::ModelFormat { line: 1, .. })));
        assert!(matches!(from_str(""), Err(Error::ModelFormat { line: 1, .. })));
    }

    #[test]
    fn trailing_content_is_rejected() {
        let mut text = to_string(&trained(Method::N, 1));
        text.push_str("extra 1\n");
        assert!(matches!(from_str(&text), Err(Error::ModelFormat { .. })));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load("/nonexistent/dir/model.txt").unwrap_err();
        assert!(err.is_io());
    }

    #[test]
    fn saving_over_existing_file_replaces_it() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        std::fs::write(&path, "old").unwrap();
        let model = trained(Method::D, 1);
        save(&model, &path).unwrap();
        assert_eq!(load(&path).unwrap(), model);
    }
}
