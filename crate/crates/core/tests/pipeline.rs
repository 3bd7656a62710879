use tabimpute::bench::{
    emit_report, run_imputation_experiment, run_post_imputation, DatasetSource, ExperimentConfig, SyntheticPreset,
    UNCORRUPTED,
};

fn synthetic(preset: SyntheticPreset, rows: usize, methods: &[&str]) -> ExperimentConfig {
    ExperimentConfig {
        dataset: DatasetSource::Synthetic { preset, rows, seed: 7 },
        methods: methods.iter().map(|m| m.to_string()).collect(),
        seed: 3,
        ..ExperimentConfig::default()
    }
}

#[test]
fn simple_auroc_is_one_half_in_all_fifty_runs() {
    let config = ExperimentConfig {
        rates: vec![0.1],
        ..synthetic(SyntheticPreset::FraminghamLike, 9310, &["simple"])
    };
    let report = run_imputation_experiment(&config).unwrap();
    assert_eq!(report.complete_rows, 9310);
    assert_eq!(report.runs.len(), 50);
    assert!(report.runs.iter().all(|r| r.auroc == Some(0.5)));
    assert_eq!(report.aggregate("simple", 0.1).unwrap().runs, 50);
}

#[test]
fn knn_beats_simple_when_a_column_is_duplicated() {
    let config = ExperimentConfig {
        rates: vec![0.2],
        repeats: 2,
        ..synthetic(SyntheticPreset::DuplicatePair, 400, &["simple", "knn"])
    };
    let report = run_imputation_experiment(&config).unwrap();
    let mean = |m| report.aggregate(m, 0.2).unwrap().nrmse.as_ref().unwrap().mean;
    assert!(mean("knn") < mean("simple"), "{} vs {}", mean("knn"), mean("simple"));
}

#[test]
fn report_row_arithmetic() {
    let config = synthetic(SyntheticPreset::DuplicatePair, 100, &["simple", "knn"]);
    let report = run_imputation_experiment(&config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_report(&report, dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("imputation_results.csv")).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("run,")).count(), 500);
    assert_eq!(text.lines().filter(|l| l.starts_with("aggregate,")).count(), 10);
    for a in &report.aggregates {
        assert_eq!(a.runs, 50);
    }
}

#[test]
fn imputation_does_not_add_predictive_information() {
    let config = ExperimentConfig {
        folds: 5,
        ..synthetic(SyntheticPreset::FraminghamLike, 1500, &["simple", "knn"])
    };
    let report = run_post_imputation(&config, 0.3).unwrap();
    let reference = report.post_f1(UNCORRUPTED).unwrap().mean;
    for m in ["simple", "knn"] {
        let f1 = report.post_f1(m).unwrap().mean;
        assert!(f1 <= reference + 0.02, "{m}: {f1} vs uncorrupted {reference}");
    }
}

#[test]
fn better_imputation_does_not_hurt_prediction() {
    let base = synthetic(SyntheticPreset::FraminghamLike, 1500, &["simple", "missforest"]);
    let imputation = run_imputation_experiment(&ExperimentConfig {
        rates: vec![0.3],
        repeats: 1,
        ..base.clone()
    })
    .unwrap();
    let agg = |m| imputation.aggregate(m, 0.3).unwrap();
    let (a, b) = (agg("missforest"), agg("simple"));
    assert!(a.nrmse.as_ref().unwrap().mean < b.nrmse.as_ref().unwrap().mean);
    assert!(a.auroc.as_ref().unwrap().mean > b.auroc.as_ref().unwrap().mean);

    let post = run_post_imputation(&base, 0.3).unwrap();
    let f1 = |m| post.post_f1(m).unwrap().mean;
    assert!(f1("missforest") >= f1("simple") - 0.01, "{} vs {}", f1("missforest"), f1("simple"));
}

#[test]
fn shipped_configs_validate() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["framingham.toml", "smoke.toml"] {
        let config = ExperimentConfig::load(root.join(name)).unwrap();
        config.validate().unwrap();
    }
    let full = ExperimentConfig::load(root.join("framingham.toml")).unwrap();
    assert_eq!((full.folds, full.repeats, full.rates.len(), full.methods.len()), (5, 10, 5, 7));
}
