//! The imputer contract and the non-deep methods: mean/mode, KNN and MissForest.
//!
//! A table's missing cells are its mask, so `fit` and `impute` take plain
//! [`MixedTable`]s. Every imputer returns hard values for all missing cells
//! and, for categorical cells, the probability of class 1.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{fit_forest, predict_forest, FeatureSubset, ForestConfig, ForestModel, Task, TreeConfig};
use crate::matrix::Matrix;
use crate::rng;
use crate::tabular::{fit_normalizer, MixedTable, NormParams, Schema};

/// A complete table plus class-1 scores for categorical cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputationResult {
    pub table: MixedTable,
    /// Row-major; `Some` exactly on categorical cells. Observed cells carry
    /// their own value.
    pub scores: Vec<Option<f64>>,
    /// Cells that fell back to the column statistic.
    pub fallbacks: usize,
}

impl ImputationResult {
    pub fn score(&self, i: usize, j: usize) -> Option<f64> {
        self.scores[i * self.table.n_cols() + j]
    }

    /// Fills every missing cell of `target` with `fill(i, j)`: a value for
    /// numerical columns, a class-1 score for categorical ones.
    pub(crate) fn assemble(
        target: &MixedTable,
        fallbacks: usize,
        mut fill: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let schema = target.schema_arc();
        let m = target.n_cols();
        let mut cells = Vec::with_capacity(target.cells().len());
        let mut scores = Vec::with_capacity(target.cells().len());
        for (idx, cell) in target.cells().iter().enumerate() {
            let (i, j) = (idx / m, idx % m);
            let categorical = schema.is_categorical(j);
            match (*cell, categorical) {
                (Some(v), false) => {
                    cells.push(Some(v));
                    scores.push(None);
                }
                (Some(v), true) => {
                    cells.push(Some(v));
                    scores.push(Some(v));
                }
                (None, false) => {
                    let v = fill(i, j);
                    if !v.is_finite() {
                        return Err(Error::IncompleteOutput { row: i, col: j });
                    }
                    cells.push(Some(v));
                    scores.push(None);
                }
                (None, true) => {
                    let s = fill(i, j);
                    if !s.is_finite() {
                        return Err(Error::IncompleteOutput { row: i, col: j });
                    }
                    let s = s.clamp(0.0, 1.0);
                    cells.push(Some(hard_label(s)));
                    scores.push(Some(s));
                }
            }
        }
        Ok(Self {
            table: MixedTable::new(schema, target.n_rows(), cells)?,
            scores,
            fallbacks,
        })
    }
}

/// Score ≥ 0.5 maps to class 1, so an exact tie resolves to 1.
#[inline]
pub fn hard_label(score: f64) -> f64 {
    if score >= 0.5 {
        1.0
    } else {
        0.0
    }
}

pub trait Imputer: Send + Sync {
    fn name(&self) -> &str;

    /// Learns whatever state `impute` needs from `train`; its missing cells
    /// are the ones that were never observed.
    fn fit(&mut self, train: &MixedTable) -> Result<()>;

    /// Fills every missing cell of `target`. Observed cells are returned as is.
    fn impute(&self, target: &MixedTable) -> Result<ImputationResult>;
}

pub(crate) fn check_schema(fitted: &Schema, target: &MixedTable) -> Result<()> {
    if fitted.columns != target.schema().columns {
        return Err(Error::Schema(
            "target columns differ from the columns the imputer was fitted on".into(),
        ));
    }
    Ok(())
}

pub(crate) fn not_fitted(name: &str) -> Error {
    Error::Precondition(format!("{name} imputer used before fit"))
}

/// Per-column training statistic: mean for numerical columns, the mode for
/// categorical ones (with the positive-class fraction as score).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub fill: Vec<f64>,
    pub score: Vec<Option<f64>>,
}

impl ColumnStats {
    pub fn fit(train: &MixedTable) -> Result<Self> {
        let schema = train.schema();
        let mut fill = Vec::with_capacity(train.n_cols());
        let mut score = Vec::with_capacity(train.n_cols());
        for j in 0..train.n_cols() {
            let obs = train.observed_in_column(j);
            if obs.is_empty() {
                return Err(Error::NoObservedValues(schema.columns[j].name.clone()));
            }
            let mean = obs.iter().sum::<f64>() / obs.len() as f64;
            if schema.is_categorical(j) {
                fill.push(hard_label(mean));
                score.push(Some(mean));
            } else {
                fill.push(mean);
                score.push(None);
            }
        }
        Ok(Self { fill, score })
    }

    /// Value for numerical columns, score for categorical ones.
    #[inline]
    pub fn raw(&self, j: usize) -> f64 {
        self.score[j].unwrap_or(self.fill[j])
    }
}

#[derive(Debug, Clone, Default)]
pub struct SimpleImputer {
    fitted: Option<(Arc<Schema>, ColumnStats)>,
}

impl SimpleImputer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stats(&self) -> Option<&ColumnStats> {
        self.fitted.as_ref().map(|(_, s)| s)
    }
}

impl Imputer for SimpleImputer {
    fn name(&self) -> &str {
        "simple"
    }

    fn fit(&mut self, train: &MixedTable) -> Result<()> {
        self.fitted = Some((train.schema_arc(), ColumnStats::fit(train)?));
        Ok(())
    }

    fn impute(&self, target: &MixedTable) -> Result<ImputationResult> {
        let (schema, stats) = self.fitted.as_ref().ok_or_else(|| not_fitted("simple"))?;
        check_schema(schema, target)?;
        ImputationResult::assemble(target, 0, |_, j| stats.raw(j))
    }
}

/// Training rows in normalized form, searched by partial distance.
#[derive(Debug, Clone)]
pub struct KnnIndex {
    schema: Arc<Schema>,
    n_cols: usize,
    train: MixedTable,
    normalized: Vec<Option<f64>>,
    params: NormParams,
    stats: ColumnStats,
}

impl KnnIndex {
    pub fn new(train: &MixedTable) -> Result<Self> {
        if train.n_rows() == 0 {
            return Err(Error::Precondition("KNN needs at least one training row".into()));
        }
        let params = fit_normalizer(train);
        let normalized = crate::tabular::normalize(train, &params)?.cells().to_vec();
        Ok(Self {
            schema: train.schema_arc(),
            n_cols: train.n_cols(),
            train: train.clone(),
            normalized,
            params,
            stats: ColumnStats::fit(train)?,
        })
    }

    pub fn n_train(&self) -> usize {
        self.train.n_rows()
    }

    /// `sqrt(m / |D| · Σ_{j∈D} (a_j − b_j)²)` over the co-observed set `D`;
    /// `None` when the rows share no observed column.
    pub fn distance(&self, query: &[Option<f64>], train_row: usize) -> Option<f64> {
        let row = &self.normalized[train_row * self.n_cols..(train_row + 1) * self.n_cols];
        let mut sum = 0.0;
        let mut shared = 0usize;
        for (a, b) in query.iter().zip(row) {
            if let (Some(a), Some(b)) = (a, b) {
                let d = a - b;
                sum += d * d;
                shared += 1;
            }
        }
        (shared > 0).then(|| (self.n_cols as f64 / shared as f64 * sum).sqrt())
    }

    fn normalize_row(&self, row: &[Option<f64>]) -> Vec<Option<f64>> {
        row.iter()
            .enumerate()
            .map(|(j, c)| c.map(|v| self.params.scale(j, v)))
            .collect()
    }

    /// Mean (numerical) or class-1 fraction (categorical) of the `k` nearest
    /// training rows observing each missing cell. Equal distances resolve to
    /// the lower training index. A cell with no eligible neighbor takes the
    /// column statistic and is counted in `fallbacks`.
    pub fn impute(&self, target: &MixedTable, k: usize) -> Result<ImputationResult> {
        if k == 0 {
            return Err(Error::Config("KNN needs k >= 1".into()));
        }
        check_schema(&self.schema, target)?;
        let m = self.n_cols;
        let n_train = self.n_train();
        let per_row: Vec<(Vec<(usize, f64)>, usize)> = (0..target.n_rows())
            .into_par_iter()
            .map(|i| {
                let row = target.row(i);
                let missing: Vec<usize> = (0..m).filter(|&j| row[j].is_none()).collect();
                if missing.is_empty() {
                    return (Vec::new(), 0);
                }
                let query = self.normalize_row(row);
                let mut order: Vec<(f64, usize)> = (0..n_train)
                    .filter_map(|r| self.distance(&query, r).map(|d| (d, r)))
                    .collect();
                order.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let mut fills = Vec::with_capacity(missing.len());
                let mut fallbacks = 0;
                for j in missing {
                    let mut sum = 0.0;
                    let mut used = 0usize;
                    for &(_, r) in &order {
                        if let Some(v) = self.train.get(r, j) {
                            sum += v;
                            used += 1;
                            if used == k {
                                break;
                            }
                        }
                    }
                    if used == 0 {
                        fallbacks += 1;
                        fills.push((j, self.stats.raw(j)));
                    } else {
                        fills.push((j, sum / used as f64));
                    }
                }
                (fills, fallbacks)
            })
            .collect();
        let fallbacks = per_row.iter().map(|(_, f)| f).sum();
        if fallbacks > 0 {
            log::warn!("KNN fell back to column statistics for {fallbacks} cells");
        }
        ImputationResult::assemble(target, fallbacks, |i, j| {
            per_row[i]
                .0
                .iter()
                .find(|(c, _)| *c == j)
                .map(|&(_, v)| v)
                .expect("every missing cell was filled")
        })
    }
}

#[derive(Debug, Clone)]
pub struct KnnImputer {
    pub k: usize,
    index: Option<KnnIndex>,
}

impl KnnImputer {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("KNN needs k >= 1".into()));
        }
        Ok(Self { k, index: None })
    }
}

impl Imputer for KnnImputer {
    fn name(&self) -> &str {
        "knn"
    }

    fn fit(&mut self, train: &MixedTable) -> Result<()> {
        self.index = Some(KnnIndex::new(train)?);
        Ok(())
    }

    fn impute(&self, target: &MixedTable) -> Result<ImputationResult> {
        self.index.as_ref().ok_or_else(|| not_fitted("knn"))?.impute(target, self.k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MissForestConfig {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    /// `None` uses p/3 for regression and sqrt(p) for classification.
    pub features: Option<FeatureSubset>,
    pub max_iter: usize,
}

impl Default for MissForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 50,
            max_depth: None,
            min_samples_split: 5,
            features: None,
            max_iter: 10,
        }
    }
}

impl MissForestConfig {
    fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.max_iter == 0 {
            return Err(Error::Config("MissForest needs n_trees >= 1 and max_iter >= 1".into()));
        }
        if self.min_samples_split < 2 {
            return Err(Error::Config("min_samples_split must be at least 2".into()));
        }
        Ok(())
    }

    fn forest(&self, task: Task) -> ForestConfig {
        let default = match task {
            Task::Regression => FeatureSubset::Third,
            Task::Classification => FeatureSubset::Sqrt,
        };
        ForestConfig {
            tree: TreeConfig {
                max_depth: self.max_depth,
                min_samples_split: self.min_samples_split,
                features_per_split: self.features.unwrap_or(default),
                task,
            },
            n_trees: self.n_trees,
            bootstrap: true,
        }
    }
}

/// Sweep-by-sweep record of a MissForest run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MissForestTrace {
    /// `(Δ_num, Δ_cat)` after each sweep; `None` for a kind with no missing cells.
    pub deltas: Vec<(Option<f64>, Option<f64>)>,
    /// Sweeps whose result is in the returned table.
    pub accepted_sweeps: usize,
    pub stopped_early: bool,
}

/// Current working values plus categorical scores during a MissForest run.
#[derive(Clone)]
struct Iterate {
    values: Matrix,
    scores: Matrix,
}

fn feature_matrix(values: &Matrix, rows: &[usize], skip: usize) -> Matrix {
    let m = values.cols();
    let mut data = Vec::with_capacity(rows.len() * (m - 1));
    for &i in rows {
        let row = values.row(i);
        data.extend(row[..skip].iter().chain(&row[skip + 1..]));
    }
    Matrix::from_vec(rows.len(), m - 1, data).expect("shape by construction")
}

fn initial_iterate(table: &MixedTable, stats: &ColumnStats) -> Iterate {
    let (n, m) = (table.n_rows(), table.n_cols());
    let mut values = Matrix::zeros(n, m);
    let mut scores = Matrix::zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            let (v, s) = match table.get(i, j) {
                Some(v) => (v, v),
                None => (stats.fill[j], stats.raw(j)),
            };
            values[(i, j)] = v;
            scores[(i, j)] = s;
        }
    }
    Iterate { values, scores }
}

/// Columns with missing cells, fewest missing first.
fn sweep_order(table: &MixedTable) -> Vec<usize> {
    let mut order: Vec<usize> = (0..table.n_cols()).filter(|&j| table.missing_in_column(j) > 0).collect();
    order.sort_by_key(|&j| (table.missing_in_column(j), j));
    order
}

fn apply_prediction(it: &mut Iterate, categorical: bool, rows: &[usize], j: usize, preds: &[f64]) {
    for (&i, &p) in rows.iter().zip(preds) {
        if categorical {
            it.values[(i, j)] = hard_label(p);
            it.scores[(i, j)] = p;
        } else {
            it.values[(i, j)] = p;
            it.scores[(i, j)] = p;
        }
    }
}

fn column_task(schema: &Schema, j: usize) -> Task {
    if schema.is_categorical(j) {
        Task::Classification
    } else {
        Task::Regression
    }
}

fn fit_column(
    it: &Iterate,
    table: &MixedTable,
    j: usize,
    config: &MissForestConfig,
    seed: u64,
) -> Result<ForestModel> {
    let observed: Vec<usize> = (0..table.n_rows()).filter(|&i| table.get(i, j).is_some()).collect();
    if observed.is_empty() {
        return Err(Error::NoObservedValues(table.schema().columns[j].name.clone()));
    }
    let x = feature_matrix(&it.values, &observed, j);
    let y: Vec<f64> = observed.iter().map(|&i| it.values[(i, j)]).collect();
    fit_forest(&x, &y, &config.forest(column_task(table.schema(), j)), seed)
}

/// Transductive MissForest on `table`: mean/mode start, then per-column
/// forest sweeps until neither kind of change keeps shrinking.
pub fn missforest_impute(
    table: &MixedTable,
    config: &MissForestConfig,
    seed: u64,
) -> Result<(ImputationResult, MissForestTrace)> {
    let (result, trace, _) = run_missforest(table, config, seed)?;
    Ok((result, trace))
}

fn run_missforest(
    table: &MixedTable,
    config: &MissForestConfig,
    seed: u64,
) -> Result<(ImputationResult, MissForestTrace, Iterate)> {
    config.validate()?;
    let stats = ColumnStats::fit(table)?;
    let schema = table.schema_arc();
    let order = sweep_order(table);
    let mut current = initial_iterate(table, &stats);
    let mut trace = MissForestTrace::default();

    if !order.is_empty() {
        let params = fit_normalizer(table);
        let numerical = schema.numerical_indices();
        let missing_num: usize = numerical.iter().map(|&j| table.missing_in_column(j)).sum();
        let missing_cat: usize = schema.categorical_indices().iter().map(|&j| table.missing_in_column(j)).sum();
        let mut previous = (f64::INFINITY, f64::INFINITY);

        for sweep in 0..config.max_iter {
            let old = current.clone();
            for &j in &order {
                let model = fit_column(&current, table, j, config, rng::derive(seed, &[sweep as u64, j as u64]))?;
                let rows: Vec<usize> = (0..table.n_rows()).filter(|&i| table.get(i, j).is_none()).collect();
                let preds = predict_forest(&model, &feature_matrix(&current.values, &rows, j))?;
                apply_prediction(&mut current, schema.is_categorical(j), &rows, j, &preds);
            }

            let delta_num = (missing_num > 0).then(|| {
                let (mut num, mut den) = (0.0, 0.0);
                for i in 0..table.n_rows() {
                    for &j in &numerical {
                        let new = params.scale(j, current.values[(i, j)]);
                        let d = new - params.scale(j, old.values[(i, j)]);
                        num += d * d;
                        den += new * new;
                    }
                }
                if den > 0.0 {
                    num / den
                } else {
                    0.0
                }
            });
            let delta_cat = (missing_cat > 0).then(|| {
                let flips = current
                    .values
                    .as_slice()
                    .iter()
                    .zip(old.values.as_slice())
                    .enumerate()
                    .filter(|(idx, (a, b))| schema.is_categorical(idx % table.n_cols()) && a != b)
                    .count();
                flips as f64 / missing_cat as f64
            });
            trace.deltas.push((delta_num, delta_cat));

            let improved = delta_num.is_some_and(|d| d < previous.0) || delta_cat.is_some_and(|d| d < previous.1);
            if sweep + 1 == config.max_iter {
                trace.accepted_sweeps = sweep + 1;
                break;
            }
            if !improved {
                current = old;
                trace.accepted_sweeps = sweep;
                trace.stopped_early = true;
                break;
            }
            previous = (delta_num.unwrap_or(f64::INFINITY), delta_cat.unwrap_or(f64::INFINITY));
        }
    }

    let result = ImputationResult::assemble(table, 0, |i, j| current.scores[(i, j)])?;
    Ok((result, trace, current))
}

/// MissForest split into fit and impute: `fit` runs the iterative procedure
/// on the training table and then fits one forest per column on the
/// converged values; `impute` starts a target from the training statistics
/// and applies those forests for as many sweeps as training accepted.
#[derive(Debug, Clone)]
pub struct MissForestImputer {
    pub config: MissForestConfig,
    pub seed: u64,
    fitted: Option<FittedMissForest>,
}

#[derive(Debug, Clone)]
struct FittedMissForest {
    schema: Arc<Schema>,
    stats: ColumnStats,
    forests: Vec<ForestModel>,
    train_missing: Vec<usize>,
    sweeps: usize,
    trace: MissForestTrace,
}

impl MissForestImputer {
    pub fn new(config: MissForestConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            seed,
            fitted: None,
        })
    }

    pub fn trace(&self) -> Option<&MissForestTrace> {
        self.fitted.as_ref().map(|f| &f.trace)
    }
}

impl Imputer for MissForestImputer {
    fn name(&self) -> &str {
        "missforest"
    }

    fn fit(&mut self, train: &MixedTable) -> Result<()> {
        let (_, trace, converged) = run_missforest(train, &self.config, self.seed)?;
        let final_seed = rng::derive(self.seed, &[rng::label("final")]);
        let forests = (0..train.n_cols())
            .map(|j| fit_column(&converged, train, j, &self.config, rng::derive(final_seed, &[j as u64])))
            .collect::<Result<Vec<_>>>()?;
        self.fitted = Some(FittedMissForest {
            schema: train.schema_arc(),
            stats: ColumnStats::fit(train)?,
            forests,
            train_missing: (0..train.n_cols()).map(|j| train.missing_in_column(j)).collect(),
            sweeps: trace.accepted_sweeps.max(1),
            trace,
        });
        Ok(())
    }

    fn impute(&self, target: &MixedTable) -> Result<ImputationResult> {
        let f = self.fitted.as_ref().ok_or_else(|| not_fitted("missforest"))?;
        check_schema(&f.schema, target)?;
        let mut it = initial_iterate(target, &f.stats);
        let mut order: Vec<usize> = (0..target.n_cols()).filter(|&j| target.missing_in_column(j) > 0).collect();
        order.sort_by_key(|&j| (f.train_missing[j], j));
        for _ in 0..f.sweeps {
            for &j in &order {
                let rows: Vec<usize> = (0..target.n_rows()).filter(|&i| target.get(i, j).is_none()).collect();
                let preds = predict_forest(&f.forests[j], &feature_matrix(&it.values, &rows, j))?;
                apply_prediction(&mut it, f.schema.is_categorical(j), &rows, j, &preds);
            }
        }
        ImputationResult::assemble(target, 0, |i, j| it.scores[(i, j)])
    }
}

/// Names accepted by [`build_imputer`].
pub const METHODS: [&str; 7] = ["simple", "knn", "missforest", "naa", "inaa", "gain", "igain"];

/// Optional hyperparameter overrides; fields that do not apply to a method
/// are rejected rather than ignored.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodParams {
    pub k: Option<usize>,
    pub n_trees: Option<usize>,
    pub max_depth: Option<usize>,
    pub min_samples_split: Option<usize>,
    pub max_iter: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub corruption_rate: Option<f64>,
    pub hint_rate: Option<f64>,
    pub alpha: Option<f64>,
    pub noise: Option<f64>,
    pub rotation_period: Option<usize>,
    pub k_min: Option<usize>,
    pub k_max: Option<usize>,
}

impl MethodParams {
    /// Parses `key = value` overrides, rejecting unknown keys.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    fn set_fields(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        macro_rules! check {
            ($($f:ident),*) => { $( if self.$f.is_some() { out.push(stringify!($f)); } )* };
        }
        check!(k, n_trees, max_depth, min_samples_split, max_iter, epochs, batch_size, learning_rate,
            corruption_rate, hint_rate, alpha, noise, rotation_period, k_min, k_max);
        out
    }

    fn only(&self, method: &str, allowed: &[&str]) -> Result<()> {
        if let Some(bad) = self.set_fields().into_iter().find(|f| !allowed.contains(f)) {
            return Err(Error::Config(format!("parameter `{bad}` does not apply to `{method}`")));
        }
        Ok(())
    }

    fn rotation(&self, base: crate::deep_imputers::RotationSchedule) -> crate::deep_imputers::RotationSchedule {
        crate::deep_imputers::RotationSchedule {
            period: self.rotation_period.unwrap_or(base.period),
            k_min: self.k_min.unwrap_or(base.k_min),
            k_max: self.k_max.unwrap_or(base.k_max),
        }
    }

    /// Overlays `other` on `self`: fields set in `other` win.
    pub fn merged(&self, other: &MethodParams) -> MethodParams {
        macro_rules! pick {
            ($($f:ident),*) => { MethodParams { $( $f: other.$f.or(self.$f), )* } };
        }
        pick!(k, n_trees, max_depth, min_samples_split, max_iter, epochs, batch_size, learning_rate,
            corruption_rate, hint_rate, alpha, noise, rotation_period, k_min, k_max)
    }
}

const NEURAL: [&str; 4] = ["epochs", "batch_size", "learning_rate", "corruption_rate"];

/// Builds an unfitted imputer by name.
pub fn build_imputer(name: &str, params: &MethodParams, seed: u64) -> Result<Box<dyn Imputer>> {
    use crate::deep_imputers::{DaeConfig, DaeImputer, GainConfig, GainImputer};
    let with = |extra: &[&'static str]| -> Vec<&'static str> { NEURAL.iter().chain(extra).copied().collect() };
    Ok(match name {
        "simple" => {
            params.only(name, &[])?;
            Box::new(SimpleImputer::new())
        }
        "knn" => {
            params.only(name, &["k"])?;
            Box::new(KnnImputer::new(params.k.unwrap_or(5))?)
        }
        "missforest" => {
            params.only(name, &["n_trees", "max_depth", "min_samples_split", "max_iter"])?;
            let d = MissForestConfig::default();
            let config = MissForestConfig {
                n_trees: params.n_trees.unwrap_or(d.n_trees),
                max_depth: params.max_depth.or(d.max_depth),
                min_samples_split: params.min_samples_split.unwrap_or(d.min_samples_split),
                features: d.features,
                max_iter: params.max_iter.unwrap_or(d.max_iter),
            };
            Box::new(MissForestImputer::new(config, seed)?)
        }
        "naa" | "inaa" => {
            let base = if name == "naa" { DaeConfig::naa() } else { DaeConfig::inaa() };
            let allowed = if name == "naa" { with(&["k"]) } else { with(&["rotation_period", "k_min", "k_max"]) };
            params.only(name, &allowed)?;
            let mut config = base.clone();
            config.epochs = params.epochs.unwrap_or(base.epochs);
            config.batch_size = params.batch_size.unwrap_or(base.batch_size);
            config.adam.learning_rate = params.learning_rate.unwrap_or(base.adam.learning_rate);
            config.corruption_rate = params.corruption_rate.unwrap_or(base.corruption_rate);
            config.naa_k = params.k.unwrap_or(base.naa_k);
            config.rotation = params.rotation(base.rotation);
            Box::new(DaeImputer::new(config, seed)?)
        }
        "gain" | "igain" => {
            let base = if name == "gain" { GainConfig::gain() } else { GainConfig::igain() };
            let allowed = if name == "gain" {
                with(&["hint_rate", "alpha", "noise"])
            } else {
                with(&["hint_rate", "alpha", "rotation_period", "k_min", "k_max"])
            };
            params.only(name, &allowed)?;
            let mut config = base.clone();
            config.epochs = params.epochs.unwrap_or(base.epochs);
            config.batch_size = params.batch_size.unwrap_or(base.batch_size);
            config.adam.learning_rate = params.learning_rate.unwrap_or(base.adam.learning_rate);
            config.corruption_rate = params.corruption_rate.unwrap_or(base.corruption_rate);
            config.hint_rate = params.hint_rate.unwrap_or(base.hint_rate);
            config.alpha = params.alpha.unwrap_or(base.alpha);
            config.noise = params.noise.unwrap_or(base.noise);
            config.rotation = params.rotation(base.rotation);
            Box::new(GainImputer::new(config, seed)?)
        }
        other => return Err(Error::UnknownMethod(other.to_owned())),
    })
}

/// Whether a method trains with internal corruption (and so takes a rate).
pub fn uses_corruption_rate(name: &str) -> bool {
    matches!(name, "naa" | "inaa" | "gain" | "igain")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::ColumnSchema;
    use rand::Rng as _;

    fn table(kinds: &[bool], rows: &[Vec<Option<f64>>]) -> MixedTable {
        let cols = kinds
            .iter()
            .enumerate()
            .map(|(j, &cat)| {
                if cat {
                    ColumnSchema::categorical(&format!("c{j}"))
                } else {
                    ColumnSchema::numerical(&format!("x{j}"))
                }
            })
            .collect();
        let schema = Schema::new(cols, None).unwrap();
        MixedTable::new(schema, rows.len(), rows.concat()).unwrap()
    }

    #[test]
    fn registry_builds_every_method_and_rejects_unknowns() {
        for name in METHODS {
            let imp = build_imputer(name, &MethodParams::default(), 0).unwrap();
            assert_eq!(imp.name(), name);
        }
        assert!(matches!(build_imputer("mice", &MethodParams::default(), 0), Err(Error::UnknownMethod(_))));
        let k = MethodParams { k: Some(3), ..MethodParams::default() };
        assert!(build_imputer("knn", &k, 0).is_ok());
        assert!(matches!(build_imputer("simple", &k, 0), Err(Error::Config(_))));
        let merged = k.merged(&MethodParams { epochs: Some(4), k: Some(7), ..MethodParams::default() });
        assert_eq!((merged.k, merged.epochs), (Some(7), Some(4)));
    }

    #[test]
    fn simple_mean_and_mode() {
        let train = table(
            &[false, true],
            &[
                vec![Some(1.0), Some(0.0)],
                vec![Some(2.0), Some(0.0)],
                vec![Some(3.0), Some(1.0)],
                vec![None, None],
            ],
        );
        let mut imp = SimpleImputer::new();
        imp.fit(&train).unwrap();
        let out = imp.impute(&train).unwrap();
        assert_eq!(out.table.get(3, 0), Some(2.0));
        assert_eq!(out.table.get(3, 1), Some(0.0));
        assert!((out.score(3, 1).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(out.score(0, 1), Some(0.0));
        assert_eq!(out.score(3, 0), None);
    }

    #[test]
    fn simple_tie_goes_to_one_and_empty_column_errors() {
        let t = table(&[true], &[vec![Some(0.0)], vec![Some(1.0)], vec![None]]);
        let mut imp = SimpleImputer::new();
        imp.fit(&t).unwrap();
        assert_eq!(imp.impute(&t).unwrap().table.get(2, 0), Some(1.0));

        let empty = table(&[false, false], &[vec![Some(1.0), None], vec![Some(2.0), None]]);
        let err = SimpleImputer::new().fit(&empty).unwrap_err();
        assert!(matches!(err, Error::NoObservedValues(ref c) if c == "x1"));
        assert!(SimpleImputer::new().impute(&t).is_err());
    }

    #[test]
    fn simple_mean_is_best_constant() {
        let mut r = rng::seeded(5);
        let vals: Vec<f64> = (0..40).map(|_| r.random_range(-3.0..7.0)).collect();
        let t = table(&[false], &vals.iter().map(|v| vec![Some(*v)]).collect::<Vec<_>>());
        let mut imp = SimpleImputer::new();
        imp.fit(&t).unwrap();
        let c = imp.stats().unwrap().fill[0];
        let sse = |c: f64| vals.iter().map(|v| (v - c).powi(2)).sum::<f64>();
        for k in -100..=100 {
            let alt = c + k as f64 * 0.01;
            assert!(sse(c) <= sse(alt) + 1e-9);
        }
    }

    #[test]
    fn schema_mismatch_is_rejected() {
        let a = table(&[false], &[vec![Some(1.0)]]);
        let b = table(&[true], &[vec![None]]);
        let mut imp = SimpleImputer::new();
        imp.fit(&a).unwrap();
        assert!(matches!(imp.impute(&b), Err(Error::Schema(_))));
    }

    #[test]
    fn knn_k1_copies_identical_row() {
        let train = table(
            &[false, false, true],
            &[
                vec![Some(0.0), Some(10.0), Some(1.0)],
                vec![Some(5.0), Some(3.0), Some(0.0)],
                vec![Some(9.0), Some(-2.0), Some(1.0)],
            ],
        );
        let target = table(&[false, false, true], &[vec![Some(5.0), None, None]]);
        let mut imp = KnnImputer::new(1).unwrap();
        imp.fit(&train).unwrap();
        let out = imp.impute(&target).unwrap();
        assert_eq!(out.table.row(0), &[Some(5.0), Some(3.0), Some(0.0)]);
        assert_eq!(out.score(0, 2), Some(0.0));
    }

    #[test]
    fn knn_with_k_equal_to_train_size_is_observer_mean() {
        let train = table(
            &[false, true],
            &[
                vec![Some(1.0), Some(1.0)],
                vec![Some(2.0), None],
                vec![Some(6.0), Some(0.0)],
                vec![None, Some(1.0)],
            ],
        );
        let target = table(&[false, true], &[vec![None, Some(1.0)], vec![Some(3.0), None]]);
        let mut imp = KnnImputer::new(4).unwrap();
        imp.fit(&train).unwrap();
        let out = imp.impute(&target).unwrap();
        // Rows sharing no observed column with the query are not neighbors.
        assert!((out.table.get(0, 0).unwrap() - 3.5).abs() < 1e-12);
        assert!((out.score(1, 1).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(out.table.get(1, 1), Some(1.0));
        assert_eq!(out.fallbacks, 0);
    }

    #[test]
    fn knn_distance_rescales_by_coobserved_count() {
        let train = table(&[false, false], &[vec![Some(0.0), Some(0.0)], vec![Some(1.0), Some(1.0)]]);
        let idx = KnnIndex::new(&train).unwrap();
        // Only column 0 co-observed: sqrt(2/1 · 1²).
        assert!((idx.distance(&[Some(1.0), None], 0).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!((idx.distance(&[Some(1.0), Some(1.0)], 0).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(idx.distance(&[None, None], 0), None);
    }

    #[test]
    fn knn_falls_back_when_no_row_observes_feature_neighbors() {
        // Row 1 observes column 1 but shares nothing with the query.
        let train = table(&[false, false], &[vec![Some(1.0), None], vec![None, Some(4.0)]]);
        let target = table(&[false, false], &[vec![Some(1.0), None]]);
        let mut imp = KnnImputer::new(1).unwrap();
        imp.fit(&train).unwrap();
        let out = imp.impute(&target).unwrap();
        assert_eq!(out.fallbacks, 1);
        assert_eq!(out.table.get(0, 1), Some(4.0));
    }

    #[test]
    fn missforest_complete_table_is_unchanged() {
        let t = table(&[false, true], &[vec![Some(1.0), Some(0.0)], vec![Some(2.0), Some(1.0)]]);
        let (out, trace) = missforest_impute(&t, &MissForestConfig::default(), 0).unwrap();
        assert_eq!(out.table, t);
        assert!(trace.deltas.is_empty());
    }

    #[test]
    fn missforest_recovers_linear_relation() {
        let mut r = rng::seeded(17);
        let n = 200;
        let mut rows = Vec::new();
        for i in 0..n {
            let x: f64 = r.random_range(0.0..1.0);
            let y = if i % 5 == 0 { None } else { Some(2.0 * x) };
            rows.push(vec![Some(x), y]);
        }
        let t = table(&[false, false], &rows);
        let (out, trace) = missforest_impute(&t, &MissForestConfig::default(), 3).unwrap();
        assert!(!trace.deltas.is_empty());
        for i in (0..n).step_by(5) {
            let x = out.table.get(i, 0).unwrap();
            let y = out.table.get(i, 1).unwrap();
            assert!((y - 2.0 * x).abs() < 0.1, "row {i}: x={x} y={y}");
        }
    }

    #[test]
    fn missforest_stopping_returns_previous_iterate() {
        let mut r = rng::seeded(2);
        let rows: Vec<Vec<Option<f64>>> = (0..60)
            .map(|_| {
                (0..3)
                    .map(|_| if r.random_bool(0.25) { None } else { Some(r.random_range(0.0..1.0)) })
                    .collect()
            })
            .collect();
        let t = table(&[false, false, false], &rows);
        let cfg = MissForestConfig { n_trees: 5, ..MissForestConfig::default() };
        let (out, trace) = missforest_impute(&t, &cfg, 1).unwrap();
        if trace.stopped_early {
            let last = trace.deltas.len() - 1;
            assert!(trace.deltas[last].0.unwrap() >= trace.deltas[last - 1].0.unwrap());
            assert_eq!(trace.accepted_sweeps, last);
            // Re-running with the cap at the accepted count reproduces the table.
            let capped = MissForestConfig { max_iter: trace.accepted_sweeps.max(1), ..cfg.clone() };
            if trace.accepted_sweeps > 0 {
                assert_eq!(missforest_impute(&t, &capped, 1).unwrap().0, out);
            }
        } else {
            assert_eq!(trace.accepted_sweeps, cfg.max_iter);
        }
    }

    #[test]
    fn missforest_imputer_is_deterministic_and_preserves_observed() {
        let mut r = rng::seeded(8);
        let rows: Vec<Vec<Option<f64>>> = (0..50)
            .map(|_| {
                let x: f64 = r.random_range(0.0..1.0);
                vec![
                    Some(x),
                    if r.random_bool(0.2) { None } else { Some(x * 3.0 + 1.0) },
                    if r.random_bool(0.2) { None } else { Some((x > 0.5) as u8 as f64) },
                ]
            })
            .collect();
        let t = table(&[false, false, true], &rows);
        let cfg = MissForestConfig { n_trees: 10, ..MissForestConfig::default() };
        let mut a = MissForestImputer::new(cfg.clone(), 4).unwrap();
        let mut b = MissForestImputer::new(cfg, 4).unwrap();
        a.fit(&t).unwrap();
        b.fit(&t).unwrap();
        let oa = a.impute(&t).unwrap();
        assert_eq!(oa, b.impute(&t).unwrap());
        assert!(oa.table.is_complete());
        for i in 0..t.n_rows() {
            for j in 0..3 {
                if let Some(v) = t.get(i, j) {
                    assert_eq!(oa.table.get(i, j), Some(v));
                }
            }
        }
    }
}
