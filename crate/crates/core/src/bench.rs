//! Experiment orchestration: the cross-validated imputation benchmark, the
//! downstream prediction benchmark, synthetic datasets and report files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::forest::{fit_forest, predict_labels, ForestConfig};
use crate::imputers::{build_imputer, uses_corruption_rate, Imputer, MethodParams, METHODS};
use crate::matrix::Matrix;
use crate::metrics::{categorical_auroc, f1, normalized_rmse, AurocAverage};
use crate::missingness::{assign_folds, inject_mcar, inject_mcar_excluding, FoldAssignment, MissSpec};
use crate::resample::{smote, SmoteConfig};
use crate::rng;
use crate::tabular::{complete_subset, fit_normalizer, load_csv, ColumnSchema, MixedTable, Schema};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticPreset {
    /// Fifteen columns shaped like the Framingham extract, label `CVD`.
    FraminghamLike,
    /// `x1`, an exact copy `x2`, a correlated `z` and a binary column tied
    /// to `x1`.
    DuplicatePair,
}

impl std::str::FromStr for SyntheticPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "framingham-like" => Ok(Self::FraminghamLike),
            "duplicate-pair" => Ok(Self::DuplicatePair),
            other => Err(Error::Config(format!("unknown synthetic preset `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Csv {
        path: PathBuf,
        /// Schema TOML; the Framingham schema when absent.
        #[serde(default)]
        schema: Option<PathBuf>,
    },
    Synthetic {
        preset: SyntheticPreset,
        rows: usize,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub methods: Vec<String>,
    pub rates: Vec<f64>,
    pub folds: usize,
    pub repeats: usize,
    pub seed: u64,
    pub auroc_average: AurocAverage,
    pub missing_token: String,
    /// Per-method overrides, keyed by method name.
    pub params: BTreeMap<String, MethodParams>,
    pub post_rate: f64,
    pub post_repeats: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::Synthetic {
                preset: SyntheticPreset::FraminghamLike,
                rows: 9310,
                seed: 0,
            },
            methods: METHODS.iter().map(|m| m.to_string()).collect(),
            rates: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            folds: 5,
            repeats: 10,
            seed: 0,
            auroc_average: AurocAverage::Macro,
            missing_token: String::new(),
            params: BTreeMap::new(),
            post_rate: 0.2,
            post_repeats: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: Self = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        // Relative dataset paths are relative to the config file.
        if let DatasetSource::Csv { path: data, schema } = &mut config.dataset {
            let base = path.parent().unwrap_or(Path::new("."));
            if data.is_relative() {
                *data = base.join(&*data);
            }
            if let Some(s) = schema {
                if s.is_relative() {
                    *s = base.join(&*s);
                }
            }
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    /// Rejects bad settings, including unknown method names and overrides,
    /// before any data is touched.
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        if self.rates.is_empty() {
            return Err(Error::Config("at least one missing rate is required".into()));
        }
        for &r in self.rates.iter().chain([&self.post_rate]) {
            MissSpec::new(r, 0)?;
        }
        if self.folds < 2 || self.repeats == 0 || self.post_repeats == 0 {
            return Err(Error::Config("need folds >= 2, repeats >= 1 and post_repeats >= 1".into()));
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                return Err(Error::Config(format!("method `{m}` listed twice")));
            }
            build_imputer(m, &self.method_params(m, None), 0)?;
        }
        if let Some(unused) = self.params.keys().find(|k| !self.methods.contains(k)) {
            return Err(Error::Config(format!("parameters given for unused method `{unused}`")));
        }
        if let DatasetSource::Synthetic { rows, .. } = self.dataset {
            if rows < self.folds {
                return Err(Error::Config(format!("{rows} synthetic rows cannot fill {} folds", self.folds)));
            }
        }
        Ok(())
    }

    /// Overrides for `method`; deep methods train at the experiment's rate
    /// unless a corruption rate is configured explicitly.
    pub fn method_params(&self, method: &str, rate: Option<f64>) -> MethodParams {
        let mut p = self.params.get(method).cloned().unwrap_or_default();
        if uses_corruption_rate(method) && p.corruption_rate.is_none() {
            p.corruption_rate = rate;
        }
        p
    }

    pub fn load_dataset(&self) -> Result<MixedTable> {
        match &self.dataset {
            DatasetSource::Csv { path, schema } => {
                let schema = match schema {
                    Some(p) => Schema::load(p)?,
                    None => Schema::framingham(),
                };
                load_csv(path, &schema, &self.missing_token)
            }
            DatasetSource::Synthetic { preset, rows, seed } => generate_preset(*preset, *rows, *seed),
        }
    }
}

/// Builds an unfitted imputer for `(method, rate, seed)`.
pub type ImputerFactory<'a> = dyn Fn(&str, f64, u64) -> Result<Box<dyn Imputer>> + Sync + 'a;

/// The factory used by the public entry points: [`build_imputer`] with the
/// config's per-method overrides.
pub fn default_factory(config: &ExperimentConfig) -> impl Fn(&str, f64, u64) -> Result<Box<dyn Imputer>> + Sync + '_ {
    move |method, rate, seed| build_imputer(method, &config.method_params(method, Some(rate)), seed)
}

/// One fit/impute/score cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: String,
    pub rate: f64,
    pub repeat: usize,
    pub fold: usize,
    pub nrmse: Option<f64>,
    pub auroc: Option<f64>,
    pub fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Summary {
    /// Mean and sample standard deviation; `None` for no values.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std, n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: String,
    pub rate: f64,
    pub runs: usize,
    pub nrmse: Option<Summary>,
    pub auroc: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostRecord {
    pub method: String,
    pub repeat: usize,
    pub fold: usize,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostAggregate {
    pub method: String,
    pub f1: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: ExperimentConfig,
    pub source_rows: usize,
    pub complete_rows: usize,
    pub runs: Vec<RunRecord>,
    pub aggregates: Vec<Aggregate>,
    #[serde(default)]
    pub post_runs: Vec<PostRecord>,
    #[serde(default)]
    pub post: Vec<PostAggregate>,
    #[serde(default)]
    pub post_rate: Option<f64>,
}

impl MetricsReport {
    pub fn aggregate(&self, method: &str, rate: f64) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.method == method && a.rate == rate)
    }

    pub fn post_f1(&self, method: &str) -> Option<&Summary> {
        self.post.iter().find(|p| p.method == method).map(|p| &p.f1)
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Serialization(e.to_string()))
    }
}

fn complete_rows(table: &MixedTable) -> Result<MixedTable> {
    let complete = complete_subset(table)?;
    if complete.n_rows() == 0 {
        return Err(Error::EmptySubset);
    }
    Ok(complete)
}

fn repeat_seed(master: u64, repeat: usize) -> u64 {
    rng::derive(master, &[repeat as u64])
}

fn fold_seed(master: u64, repeat: usize) -> u64 {
    rng::derive(repeat_seed(master, repeat), &[rng::label("folds")])
}

fn mask_seed(master: u64, repeat: usize, rate_index: usize) -> u64 {
    rng::derive(repeat_seed(master, repeat), &[rng::label("mcar"), rate_index as u64])
}

fn imputer_seed(master: u64, repeat: usize, method: &str, rate_index: usize, fold: usize) -> u64 {
    rng::derive(
        repeat_seed(master, repeat),
        &[rng::label(method), rate_index as u64, fold as u64],
    )
}

/// Loads the configured dataset and runs the cross-validated imputation benchmark.
pub fn run_imputation_experiment(config: &ExperimentConfig) -> Result<MetricsReport> {
    config.validate()?;
    let table = config.load_dataset()?;
    run_imputation_on(config, &table, &default_factory(config))
}

/// Cross-validated imputation benchmark on `table`'s complete rows.
///
/// For each repeat, folds and MCAR masks are redrawn from seeds derived from
/// the master seed. Each `(repeat, rate, method, fold)` cell fits on the
/// corrupted training rows, imputes the corrupted hold-out rows and scores
/// against the uncorrupted values. Cells run in parallel; results do not
/// depend on scheduling.
pub fn run_imputation_on(config: &ExperimentConfig, table: &MixedTable, factory: &ImputerFactory) -> Result<MetricsReport> {
    if config.methods.is_empty() {
        return Err(Error::Config("at least one method is required".into()));
    }
    let complete = complete_rows(table)?;
    let n = complete.n_rows();
    log::info!("{} of {} rows are complete", n, table.n_rows());

    let folds: Vec<FoldAssignment> = (0..config.repeats)
        .map(|r| assign_folds(n, config.folds, fold_seed(config.seed, r)))
        .collect::<Result<_>>()?;
    let corrupted: Vec<Vec<MixedTable>> = (0..config.repeats)
        .map(|r| {
            config
                .rates
                .iter()
                .enumerate()
                .map(|(ri, &rate)| Ok(inject_mcar(&complete, MissSpec::new(rate, mask_seed(config.seed, r, ri))?)?.0))
                .collect::<Result<_>>()
        })
        .collect::<Result<_>>()?;

    let mut cells = Vec::new();
    for r in 0..config.repeats {
        for ri in 0..config.rates.len() {
            for method in &config.methods {
                for f in 0..config.folds {
                    cells.push((r, ri, method.as_str(), f));
                }
            }
        }
    }

    let runs = cells
        .par_iter()
        .map(|&(r, ri, method, f)| {
            let rate = config.rates[ri];
            let train_rows = folds[r].train_rows(f);
            let test_rows = folds[r].test_rows(f);
            let train = corrupted[r][ri].select_rows(&train_rows);
            let test = corrupted[r][ri].select_rows(&test_rows);
            let truth = complete.select_rows(&test_rows);
            let context = || format!("method `{method}`, rate {rate}, repeat {r}, fold {f}");

            let mut imputer = factory(method, rate, imputer_seed(config.seed, r, method, ri, f))
                .map_err(|e| e.context(context()))?;
            imputer.fit(&train).map_err(|e| e.context(context()))?;
            let out = imputer.impute(&test).map_err(|e| e.context(context()))?;

            let mask = test.mask();
            let params = fit_normalizer(&complete.select_rows(&train_rows));
            let nrmse = match normalized_rmse(&truth, &out.table, &mask, &params) {
                Ok(v) => Some(v),
                Err(Error::UndefinedMetric(_)) => None,
                Err(e) => return Err(e.context(context())),
            };
            let auroc = match categorical_auroc(&truth, &out.scores, &mask, config.auroc_average) {
                Ok(a) => Some(a.overall),
                Err(Error::UndefinedMetric(msg)) => {
                    if truth.schema().categorical_indices().is_empty() {
                        None
                    } else {
                        log::warn!("{}: {msg}; AUROC recorded as 0.5", context());
                        Some(0.5)
                    }
                }
                Err(e) => return Err(e.context(context())),
            };
            Ok(RunRecord {
                method: method.to_owned(),
                rate,
                repeat: r,
                fold: f,
                nrmse,
                auroc,
                fallbacks: out.fallbacks,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut aggregates = Vec::new();
    for method in &config.methods {
        for &rate in &config.rates {
            let cell: Vec<&RunRecord> = runs.iter().filter(|x| &x.method == method && x.rate == rate).collect();
            let nrmse: Vec<f64> = cell.iter().filter_map(|x| x.nrmse).collect();
            let auroc: Vec<f64> = cell.iter().filter_map(|x| x.auroc).collect();
            aggregates.push(Aggregate {
                method: method.clone(),
                rate,
                runs: cell.len(),
                nrmse: Summary::of(&nrmse),
                auroc: Summary::of(&auroc),
            });
        }
    }

    Ok(MetricsReport {
        config: config.clone(),
        source_rows: table.n_rows(),
        complete_rows: n,
        runs,
        aggregates,
        post_runs: Vec::new(),
        post: Vec::new(),
        post_rate: None,
    })
}

/// Name of the reference row that skips corruption and imputation.
pub const UNCORRUPTED: &str = "uncorrupted";

/// `table` without column `drop`.
fn without_column(table: &MixedTable, drop: usize) -> Result<MixedTable> {
    let schema = table.schema();
    let columns: Vec<ColumnSchema> = schema
        .columns
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != drop)
        .map(|(_, c)| c.clone())
        .collect();
    let label = schema.label.as_deref().filter(|l| *l != schema.columns[drop].name);
    let reduced = Schema::new(columns, label)?;
    let cells = table
        .cells()
        .iter()
        .enumerate()
        .filter(|(idx, _)| idx % table.n_cols() != drop)
        .map(|(_, c)| *c)
        .collect();
    MixedTable::new(reduced, table.n_rows(), cells)
}

/// Loads the configured dataset and runs the downstream prediction benchmark.
pub fn run_post_imputation(config: &ExperimentConfig, rate: f64) -> Result<MetricsReport> {
    config.validate()?;
    let table = config.load_dataset()?;
    run_post_imputation_on(config, &table, rate, &default_factory(config))
}

/// Corrupts every feature except the label at `rate`, builds one imputed
/// dataset per method (fit and impute on the whole corrupted table), then
/// cross-validates a random forest on each with SMOTE applied to every
/// training fold. The label is kept out of the imputers' view. An
/// `uncorrupted` row scores the original data.
pub fn run_post_imputation_on(
    config: &ExperimentConfig,
    table: &MixedTable,
    rate: f64,
    factory: &ImputerFactory,
) -> Result<MetricsReport> {
    let spec = MissSpec::new(rate, 0)?;
    let label = table
        .schema()
        .label_index()
        .ok_or_else(|| Error::Config("prediction needs a label column in the schema".into()))?;
    if !table.schema().is_categorical(label) {
        return Err(Error::Config("the label column must be binary".into()));
    }
    let complete = complete_rows(table)?;
    let n = complete.n_rows();
    let labels: Vec<bool> = (0..n).map(|i| complete.get(i, label) == Some(1.0)).collect();
    let features = without_column(&complete, label)?;

    let mut post_runs = Vec::new();
    for rep in 0..config.post_repeats {
        let seed = rng::derive(config.seed, &[rng::label("post"), rep as u64]);
        let (corrupted_full, _) = inject_mcar_excluding(
            &complete,
            MissSpec { seed: rng::derive(seed, &[rng::label("mcar")]), ..spec },
            &[label],
        )?;
        if corrupted_full.missing_in_column(label) > 0 {
            return Err(Error::Config("label column was corrupted".into()));
        }
        let corrupted = without_column(&corrupted_full, label)?;
        let folds = assign_folds(n, config.folds, rng::derive(seed, &[rng::label("folds")]))?;

        let mut datasets = vec![(UNCORRUPTED.to_owned(), features.clone())];
        for method in &config.methods {
            let context = || format!("method `{method}`, post-imputation repeat {rep}");
            let mut imputer = factory(method, rate, rng::derive(seed, &[rng::label(method)])).map_err(|e| e.context(context()))?;
            imputer.fit(&corrupted).map_err(|e| e.context(context()))?;
            let out = imputer.impute(&corrupted).map_err(|e| e.context(context()))?;
            datasets.push((method.clone(), out.table));
        }

        let cells: Vec<(usize, usize)> = (0..datasets.len()).flat_map(|d| (0..config.folds).map(move |f| (d, f))).collect();
        let scored = cells
            .par_iter()
            .map(|&(d, f)| {
                let f1 = fold_f1(&datasets[d].1, &labels, &folds, f, rng::derive(seed, &[rng::label("predict"), f as u64]))
                    .map_err(|e| e.context(format!("prediction on `{}` fold {f}", datasets[d].0)))?;
                Ok(PostRecord {
                    method: datasets[d].0.clone(),
                    repeat: rep,
                    fold: f,
                    f1,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        post_runs.extend(scored);
    }

    let mut names = vec![UNCORRUPTED.to_owned()];
    names.extend(config.methods.iter().cloned());
    let post = names
        .into_iter()
        .map(|method| {
            let values: Vec<f64> = post_runs.iter().filter(|p| p.method == method).map(|p| p.f1).collect();
            PostAggregate {
                f1: Summary::of(&values).expect("at least one fold"),
                method,
            }
        })
        .collect();

    Ok(MetricsReport {
        config: config.clone(),
        source_rows: table.n_rows(),
        complete_rows: n,
        runs: Vec::new(),
        aggregates: Vec::new(),
        post_runs,
        post,
        post_rate: Some(rate),
    })
}

/// Normalizes with training-fold ranges, oversamples the training fold,
/// fits the classifier forest and scores F1 on the hold-out fold.
fn fold_f1(features: &MixedTable, labels: &[bool], folds: &FoldAssignment, fold: usize, seed: u64) -> Result<f64> {
    let train_rows = folds.train_rows(fold);
    let test_rows = folds.test_rows(fold);
    let params = fit_normalizer(&features.select_rows(&train_rows));
    let to_matrix = |rows: &[usize]| -> Result<Matrix> {
        let t = features.select_rows(rows);
        crate::tabular::normalize(&t, &params)?.to_matrix()
    };
    let x_train = to_matrix(&train_rows)?;
    let x_test = to_matrix(&test_rows)?;
    let y_train: Vec<bool> = train_rows.iter().map(|&i| labels[i]).collect();
    let y_test: Vec<bool> = test_rows.iter().map(|&i| labels[i]).collect();
    let smote_config = SmoteConfig {
        categorical_columns: features.schema().categorical_indices(),
        ..SmoteConfig::new(rng::derive(seed, &[rng::label("smote")]))
    };
    let (x_res, y_res) = smote(&x_train, &y_train, &smote_config)?;
    let y_num: Vec<f64> = y_res.iter().map(|&b| b as u8 as f64).collect();
    let model = fit_forest(&x_res, &y_num, &ForestConfig::classifier(), rng::derive(seed, &[rng::label("forest")]))?;
    f1(&predict_labels(&model, &x_test)?, &y_test)
}

/// Column of a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticColumn {
    /// Latent Gaussian min-max mapped onto `[min, max]`.
    Numerical { name: String, min: f64, max: f64 },
    /// Latent Gaussian above its `1 − prevalence` quantile.
    Binary { name: String, prevalence: f64 },
}

impl SyntheticColumn {
    fn name(&self) -> &str {
        match self {
            Self::Numerical { name, .. } | Self::Binary { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub columns: Vec<SyntheticColumn>,
    /// Latent correlation matrix, one row per column.
    pub correlation: Vec<Vec<f64>>,
    #[serde(default)]
    pub label: Option<String>,
}

/// Lower-triangular `L` with `L Lᵀ = a`, allowing positive semidefinite input.
fn cholesky_psd(a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let p = a.len();
    let mut l = vec![vec![0.0; p]; p];
    for j in 0..p {
        let d = a[j][j] - (0..j).map(|k| l[j][k] * l[j][k]).sum::<f64>();
        if d < -1e-10 {
            return Err(Error::Config("correlation matrix is not positive semidefinite".into()));
        }
        let ljj = d.max(0.0).sqrt();
        l[j][j] = ljj;
        for i in j + 1..p {
            let s = a[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            if ljj > 1e-10 {
                l[i][j] = s / ljj;
            } else if s.abs() > 1e-8 {
                return Err(Error::Config("correlation matrix is not positive semidefinite".into()));
            }
        }
    }
    Ok(l)
}

/// Draws `n_rows` rows from the latent Gaussian model of `spec`.
pub fn generate_synthetic(spec: &SyntheticSpec, n_rows: usize, seed: u64) -> Result<MixedTable> {
    let p = spec.columns.len();
    if p == 0 || n_rows == 0 {
        return Err(Error::Config("synthetic data needs columns and rows".into()));
    }
    if spec.correlation.len() != p || spec.correlation.iter().any(|r| r.len() != p) {
        return Err(Error::Dimension(format!("correlation must be {p}×{p}")));
    }
    for i in 0..p {
        if (spec.correlation[i][i] - 1.0).abs() > 1e-12 {
            return Err(Error::Config("correlation diagonal must be 1".into()));
        }
        for j in 0..i {
            let v = spec.correlation[i][j];
            if (v - spec.correlation[j][i]).abs() > 1e-12 || !(-1.0..=1.0).contains(&v) {
                return Err(Error::Config("correlation must be symmetric with entries in [-1, 1]".into()));
            }
        }
    }
    for c in &spec.columns {
        match c {
            SyntheticColumn::Numerical { min, max, .. } if !(min < max) => {
                return Err(Error::Config(format!("column `{}` needs min < max", c.name())))
            }
            SyntheticColumn::Binary { prevalence, .. } if !(*prevalence > 0.0 && *prevalence < 1.0) => {
                return Err(Error::Config(format!("column `{}` needs prevalence in (0, 1)", c.name())))
            }
            _ => {}
        }
    }
    let l = cholesky_psd(&spec.correlation)?;

    let mut r = rng::seeded(seed);
    let mut latent = vec![vec![0.0; p]; n_rows];
    for row in latent.iter_mut() {
        let z: Vec<f64> = (0..p).map(|_| StandardNormal.sample(&mut r)).collect();
        for i in 0..p {
            row[i] = (0..=i).map(|k| l[i][k] * z[k]).sum();
        }
    }

    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let mut cells = vec![None; n_rows * p];
    for (j, col) in spec.columns.iter().enumerate() {
        match col {
            SyntheticColumn::Numerical { min, max, .. } => {
                let lo = latent.iter().map(|row| row[j]).fold(f64::INFINITY, f64::min);
                let hi = latent.iter().map(|row| row[j]).fold(f64::NEG_INFINITY, f64::max);
                for i in 0..n_rows {
                    let u = if hi > lo { (latent[i][j] - lo) / (hi - lo) } else { 0.5 };
                    cells[i * p + j] = Some(min + u * (max - min));
                }
            }
            SyntheticColumn::Binary { prevalence, .. } => {
                let threshold = std_normal.inverse_cdf(1.0 - prevalence);
                for i in 0..n_rows {
                    cells[i * p + j] = Some((latent[i][j] > threshold) as u8 as f64);
                }
            }
        }
    }

    let columns = spec
        .columns
        .iter()
        .map(|c| match c {
            SyntheticColumn::Numerical { name, .. } => ColumnSchema::numerical(name),
            SyntheticColumn::Binary { name, .. } => ColumnSchema::categorical(name),
        })
        .collect();
    let schema = Schema::new(columns, spec.label.as_deref())?;
    MixedTable::new(schema, n_rows, cells)
}

/// Correlation `Λ Λᵀ` with unit diagonal from per-column factor loadings.
fn factor_correlation(loadings: &[&[f64]]) -> Vec<Vec<f64>> {
    let p = loadings.len();
    let mut c = vec![vec![0.0; p]; p];
    for i in 0..p {
        for j in 0..p {
            c[i][j] = if i == j {
                1.0
            } else {
                loadings[i].iter().zip(loadings[j]).map(|(a, b)| a * b).sum()
            };
        }
    }
    c
}

/// Columns, kinds and label of [`Schema::framingham`], with invented ranges,
/// prevalences and a three-factor (pressure/age, smoking, metabolic)
/// correlation structure.
pub fn framingham_like_spec() -> SyntheticSpec {
    use SyntheticColumn::{Binary, Numerical};
    let num = |name: &str, min: f64, max: f64| Numerical { name: name.into(), min, max };
    let bin = |name: &str, prevalence: f64| Binary { name: name.into(), prevalence };
    let columns = vec![
        bin("Sex", 0.44),
        num("Totchol", 107.0, 696.0),
        num("Age", 32.0, 81.0),
        num("SysBP", 83.5, 295.0),
        bin("Cursmoke", 0.49),
        num("Cigpday", 0.0, 70.0),
        num("Bmi", 14.4, 56.8),
        bin("Diabetes", 0.04),
        bin("Bpmeds", 0.03),
        num("Heartrate", 44.0, 143.0),
        num("Glucose", 40.0, 394.0),
        bin("Prevhyp", 0.31),
        bin("Prevstrk", 0.01),
        num("DiaBP", 48.0, 142.5),
        bin("CVD", 0.25),
    ];
    let loadings: [&[f64]; 15] = [
        &[0.0, 0.3, 0.0],
        &[0.3, 0.0, 0.2],
        &[0.6, 0.0, 0.1],
        &[0.85, 0.0, 0.1],
        &[-0.1, 0.9, 0.0],
        &[-0.1, 0.85, 0.0],
        &[0.3, 0.0, 0.5],
        &[0.2, 0.0, 0.6],
        &[0.5, 0.0, 0.0],
        &[0.15, 0.1, 0.1],
        &[0.15, 0.0, 0.7],
        &[0.8, 0.0, 0.1],
        &[0.3, 0.0, 0.0],
        &[0.8, 0.0, 0.2],
        &[0.45, 0.15, 0.25],
    ];
    SyntheticSpec {
        columns,
        correlation: factor_correlation(&loadings),
        label: Some("CVD".into()),
    }
}

pub fn duplicate_pair_spec() -> SyntheticSpec {
    use SyntheticColumn::{Binary, Numerical};
    let num = |name: &str| Numerical { name: name.into(), min: 0.0, max: 10.0 };
    let columns = vec![num("x1"), num("x2"), num("z"), Binary { name: "b".into(), prevalence: 0.3 }];
    let correlation = vec![
        vec![1.0, 1.0, 0.6, 0.7],
        vec![1.0, 1.0, 0.6, 0.7],
        vec![0.6, 0.6, 1.0, 0.42],
        vec![0.7, 0.7, 0.42, 1.0],
    ];
    SyntheticSpec {
        columns,
        correlation,
        label: None,
    }
}

pub fn generate_preset(preset: SyntheticPreset, n_rows: usize, seed: u64) -> Result<MixedTable> {
    let spec = match preset {
        SyntheticPreset::FraminghamLike => framingham_like_spec(),
        SyntheticPreset::DuplicatePair => duplicate_pair_spec(),
    };
    generate_synthetic(&spec, n_rows, seed)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Detail plus aggregate rows of the imputation benchmark.
pub fn results_table(report: &MetricsReport) -> String {
    let mut out = String::from("kind,method,rate,repeat,fold,nrmse,auroc,nrmse_std,auroc_std,runs,fallbacks\n");
    for r in &report.runs {
        let _ = writeln!(
            out,
            "run,{},{},{},{},{},{},,,1,{}",
            r.method,
            r.rate,
            r.repeat,
            r.fold,
            opt(r.nrmse),
            opt(r.auroc),
            r.fallbacks
        );
    }
    for a in &report.aggregates {
        let _ = writeln!(
            out,
            "aggregate,{},{},,,{},{},{},{},{},",
            a.method,
            a.rate,
            opt(a.nrmse.as_ref().map(|s| s.mean)),
            opt(a.auroc.as_ref().map(|s| s.mean)),
            opt(a.nrmse.as_ref().map(|s| s.std)),
            opt(a.auroc.as_ref().map(|s| s.std)),
            a.runs
        );
    }
    out
}

/// Rate versus per-method mean, one column per method.
pub fn series_table(report: &MetricsReport, metric: &str) -> String {
    let methods = &report.config.methods;
    let mut out = format!("rate,{}\n", methods.join(","));
    for &rate in &report.config.rates {
        let values: Vec<String> = methods
            .iter()
            .map(|m| {
                let a = report.aggregate(m, rate);
                let s = a.and_then(|a| if metric == "auroc" { a.auroc.as_ref() } else { a.nrmse.as_ref() });
                opt(s.map(|s| s.mean))
            })
            .collect();
        let _ = writeln!(out, "{rate},{}", values.join(","));
    }
    out
}

pub fn post_table(report: &MetricsReport) -> String {
    let mut out = String::from("method,f1_mean,f1_std,runs\n");
    for p in &report.post {
        let _ = writeln!(out, "{},{},{},{}", p.method, p.f1.mean, p.f1.std, p.f1.n);
    }
    out
}

/// Writes the report files into `dir`: `imputation_results.csv`,
/// `series_nrmse.csv`, `series_auroc.csv` (when the imputation benchmark
/// ran), `post_f1.csv` (when the prediction benchmark ran) and `report.json`.
pub fn emit_report(report: &MetricsReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    if report.config.methods.is_empty() {
        return Err(Error::Config("report has no methods".into()));
    }
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    let mut write = |name: &str, body: String| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        files.push(path);
        Ok(())
    };
    if !report.runs.is_empty() {
        write("imputation_results.csv", results_table(report))?;
        write("series_nrmse.csv", series_table(report, "nrmse"))?;
        write("series_auroc.csv", series_table(report, "auroc"))?;
    }
    if !report.post.is_empty() {
        write("post_f1.csv", post_table(report))?;
    }
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::Serialization(e.to_string()))?;
    write("report.json", json)?;
    Ok(files)
}

/// Combines an imputation report and a prediction report into one.
pub fn merge_reports(imputation: MetricsReport, post: MetricsReport) -> MetricsReport {
    MetricsReport {
        post_runs: post.post_runs,
        post: post.post,
        post_rate: post.post_rate,
        ..imputation
    }
}
