use std::path::Path;
use std::process::{Command, Output};

fn tabimpute(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tabimpute"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path).unwrap().lines().map(String::from).collect()
}

#[test]
fn synth_inject_impute_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&tabimpute(d, &["synth", "--preset", "duplicate-pair", "--rows", "80", "-o", "data.csv", "--schema-out", "schema.toml"]));
    ok(&tabimpute(d, &["inject", "-i", "data.csv", "--schema", "schema.toml", "--rate", "0.25", "--seed", "2", "-o", "holes.csv", "--mask-out", "mask.csv"]));

    let data = lines(&d.join("data.csv"));
    let holes = lines(&d.join("holes.csv"));
    let mask = lines(&d.join("mask.csv"));
    assert_eq!(data.len(), 81);
    assert_eq!(mask[0], "x1,x2,z,b");
    for j in 0..4 {
        let missing = mask[1..].iter().filter(|l| l.split(',').nth(j) == Some("0")).count();
        assert_eq!(missing, 20);
        let empty = holes[1..].iter().filter(|l| l.split(',').nth(j) == Some("")).count();
        assert_eq!(empty, 20);
    }

    // The mask alone also marks the cells to fill.
    ok(&tabimpute(d, &["impute", "-m", "knn", "-i", "data.csv", "--mask", "mask.csv", "--schema", "schema.toml", "-o", "filled.csv", "--scores-out", "scores.csv", "--params", "k = 3"]));
    let filled = lines(&d.join("filled.csv"));
    assert_eq!(filled.len(), 81);
    for (f, h) in filled[1..].iter().zip(&holes[1..]) {
        for (fv, hv) in f.split(',').zip(h.split(',')) {
            assert!(!fv.is_empty());
            if !hv.is_empty() {
                assert_eq!(fv, hv);
            }
        }
    }
    assert_eq!(lines(&d.join("scores.csv"))[0], "b");
}

#[test]
fn bench_is_reproducible_and_report_renders() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("exp.toml"),
        "methods = [\"simple\", \"knn\", \"missforest\"]\nrates = [0.1, 0.3]\n\n[dataset]\nkind = \"synthetic\"\npreset = \"duplicate-pair\"\nrows = 60\n\n[params.missforest]\nn_trees = 5\n",
    )
    .unwrap();
    for out in ["a", "b"] {
        ok(&tabimpute(d, &["bench", "--config", "exp.toml", "--folds", "3", "--repeats", "2", "--seed", "9", "-o", out]));
    }
    let a = std::fs::read(d.join("a/imputation_results.csv")).unwrap();
    assert_eq!(a, std::fs::read(d.join("b/imputation_results.csv")).unwrap());
    assert_eq!(lines(&d.join("a/imputation_results.csv")).len(), 1 + 3 * 2 * 3 * 2 + 6);
    assert_eq!(lines(&d.join("a/series_auroc.csv"))[0], "rate,simple,knn,missforest");

    let out = tabimpute(d, &["report", "-i", "a/report.json"]);
    ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("aggregate,knn,0.3"));
}

#[test]
fn predict_writes_f1_table() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("exp.toml"),
        "methods = [\"simple\"]\nfolds = 3\n\n[dataset]\nkind = \"synthetic\"\npreset = \"framingham-like\"\nrows = 300\n",
    )
    .unwrap();
    ok(&tabimpute(d, &["predict", "--config", "exp.toml", "--rate", "0.2", "-o", "out"]));
    let table = lines(&d.join("out/post_f1.csv"));
    assert_eq!(table[0], "method,f1_mean,f1_std,runs");
    assert!(table[1].starts_with("uncorrupted,"));
    assert!(table[2].starts_with("simple,"));
}

#[test]
fn failures_exit_nonzero_with_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = tabimpute(d, &["bench", "--methods", "simple,mice", "-o", "out"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("mice"));
    assert!(!d.join("out").exists());

    let out = tabimpute(d, &["impute", "-m", "knn", "-i", "missing.csv", "-o", "x.csv"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.csv"));

    let out = tabimpute(d, &["bench", "--rates", "1.5"]);
    assert!(!out.status.success());
}
