use mgp::bench::default_initial;
use mgp::dataset::{generate_split, normalized_error, SyntheticKind, SyntheticSpec};
use mgp::hyperopt::{FreeParam, OptimizerConfig};
use mgp::model_file;
use mgp::pipeline::{fit, FitConfig};
use mgp::regression::{Method, Regressor};

fn config(method: Method, optimize: bool) -> FitConfig {
    FitConfig {
        method,
        initial: default_initial(2),
        optimizer: optimize.then(|| OptimizerConfig {
            free_params: vec![FreeParam::Sigma, FreeParam::H1, FreeParam::Gamma],
            seed: 11,
            ..OptimizerConfig::default()
        }),
        cluster_seed: 4,
        train: Default::default(),
    }
}

#[test]
fn optimized_fit_predicts_held_out_sine() {
    let split = generate_split(&SyntheticSpec::new(SyntheticKind::VarFreqSine, 256, 0.01, 3)).unwrap();
    let f = fit(&split.train, &config(Method::D, true)).unwrap();
    assert!(f.report.d < f.report.n);
    assert_eq!(f.report.per_scale_counts.iter().sum::<usize>(), f.report.d);

    let pred: Vec<f64> = split
        .test
        .points()
        .iter()
        .map(|q| f.model.predict_original(q).unwrap().mean)
        .collect();
    let err = normalized_error(&pred, split.test.targets()).unwrap();
    assert!(err < 0.1, "held-out error {err}");
    let sigma = f.sigma_original();
    assert!(sigma > 0.002 && sigma < 0.05, "sigma {sigma}");
}

#[test]
fn saved_models_predict_identically_after_reload() {
    let split = generate_split(&SyntheticSpec::new(SyntheticKind::Step, 96, 0.05, 8)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for method in [Method::D, Method::N] {
        let f = fit(&split.train, &config(method, false)).unwrap();
        let path = dir.path().join(format!("{}.model", method.tag()));
        model_file::save(&f.model, &path).unwrap();
        let back = model_file::load(&path).unwrap();
        assert_eq!(back.method(), method);
        assert_eq!(back.lml(), f.model.lml());
        for q in split.test.points().iter().step_by(37) {
            assert_eq!(back.predict_original(q).unwrap(), f.model.predict_original(q).unwrap());
        }
    }
}

#[test]
fn methods_agree_end_to_end() {
    let split = generate_split(&SyntheticSpec::new(SyntheticKind::NonuniformStep, 101, 0.03, 2)).unwrap();
    let d = fit(&split.train, &config(Method::D, false)).unwrap();
    let n = fit(&split.train, &config(Method::N, false)).unwrap();
    assert_eq!(d.report.d, n.report.d);
    assert!((d.model.lml() - n.model.lml()).abs() < 1e-6);
    let batch_d = d.model.predict_batch(split.test.points()).unwrap();
    let batch_n = n.model.predict_batch(split.test.points()).unwrap();
    for (a, b) in batch_d.iter().zip(&batch_n) {
        assert!((a.mean - b.mean).abs() < 1e-8 * (1.0 + a.mean.abs()));
        assert!((a.variance - b.variance).abs() < 1e-8 * (1.0 + a.variance));
    }
}
