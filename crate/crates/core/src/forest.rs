//! CART trees and bagged random forests.
//!
//! Trees split on `x <= threshold`, with thresholds at midpoints between
//! consecutive distinct feature values. Regression trees minimize the summed
//! squared error, classification trees the weighted Gini impurity, and leaves
//! hold the mean target (for classification, the positive-class fraction).

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    Classification,
}

/// How many candidate features each node examines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSubset {
    All,
    Sqrt,
    /// `max(1, floor(p / 3))`, the usual regression-forest rule.
    Third,
    Count(usize),
}

impl FeatureSubset {
    pub fn resolve(self, n_features: usize) -> usize {
        let m = match self {
            FeatureSubset::All => n_features,
            FeatureSubset::Sqrt => (n_features as f64).sqrt().floor() as usize,
            FeatureSubset::Third => n_features / 3,
            FeatureSubset::Count(c) => c,
        };
        m.clamp(1, n_features.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub features_per_split: FeatureSubset,
    pub task: Task,
}

impl TreeConfig {
    pub fn new(task: Task) -> Self {
        Self {
            max_depth: None,
            min_samples_split: 2,
            features_per_split: FeatureSubset::All,
            task,
        }
    }

    fn validate(&self, n_features: usize) -> Result<()> {
        if self.min_samples_split < 2 {
            return Err(Error::Config("min_samples_split must be at least 2".into()));
        }
        if let FeatureSubset::Count(c) = self.features_per_split {
            if c == 0 || c > n_features {
                return Err(Error::Config(format!(
                    "{c} features per split with {n_features} features"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub tree: TreeConfig,
    pub n_trees: usize,
    pub bootstrap: bool,
}

impl ForestConfig {
    /// Downstream classifier defaults: 100 trees, sqrt(p) features, unlimited depth.
    pub fn classifier() -> Self {
        Self {
            tree: TreeConfig {
                max_depth: None,
                min_samples_split: 2,
                features_per_split: FeatureSubset::Sqrt,
                task: Task::Classification,
            },
            n_trees: 100,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
    n_features: usize,
}

impl Tree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    #[cfg(test)]
    pub(crate) fn from_nodes(nodes: Vec<Node>, n_features: usize) -> Self {
        Self { nodes, n_features }
    }
}

/// Running sums that give a node's total impurity in O(1).
#[derive(Clone, Copy, Default)]
struct Stats {
    n: f64,
    sum: f64,
    sum_sq: f64,
}

impl Stats {
    fn add(&mut self, y: f64) {
        self.n += 1.0;
        self.sum += y;
        self.sum_sq += y * y;
    }

    fn sub(&mut self, y: f64) {
        self.n -= 1.0;
        self.sum -= y;
        self.sum_sq -= y * y;
    }

    /// n × impurity: squared-error sum for regression, n·Gini for classification.
    fn weighted_impurity(&self, task: Task) -> f64 {
        if self.n == 0.0 {
            return 0.0;
        }
        match task {
            Task::Regression => (self.sum_sq - self.sum * self.sum / self.n).max(0.0),
            Task::Classification => {
                let pos = self.sum;
                let neg = self.n - pos;
                self.n - (pos * pos + neg * neg) / self.n
            }
        }
    }
}

struct Builder<'a> {
    x: &'a Matrix,
    y: &'a [f64],
    config: &'a TreeConfig,
    n_candidates: usize,
    rng: rng::Rng,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl Builder<'_> {
    fn build(&mut self, rows: &mut [usize], depth: usize) -> usize {
        let mut stats = Stats::default();
        for &r in rows.iter() {
            stats.add(self.y[r]);
        }
        let leaf_value = stats.sum / stats.n;
        let pure = rows.iter().all(|&r| self.y[r] == self.y[rows[0]]);
        let depth_reached = self.config.max_depth.is_some_and(|d| depth >= d);
        if pure || depth_reached || rows.len() < self.config.min_samples_split {
            return self.push(Node::Leaf { value: leaf_value });
        }

        let split = match self.find_split(rows, &stats) {
            Some(s) => s,
            None => return self.push(Node::Leaf { value: leaf_value }),
        };
        debug_assert!(split.gain >= -1e-9);

        let (feature, threshold) = (split.feature, split.threshold);
        let x = self.x;
        let mid = partition(rows, |r| x[(r, feature)] <= threshold);
        let id = self.push(Node::Leaf { value: leaf_value });
        let (left_rows, right_rows) = rows.split_at_mut(mid);
        let left = self.build(left_rows, depth + 1);
        let right = self.build(right_rows, depth + 1);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }

    fn push(&mut self, node: Node) -> usize {
        self.nodes.push(node);
        self.nodes.len() - 1
    }

    fn find_split(&mut self, rows: &[usize], parent: &Stats) -> Option<BestSplit> {
        let p = self.x.cols();
        let mut candidates: Vec<usize> = if self.n_candidates >= p {
            (0..p).collect()
        } else {
            index::sample(&mut self.rng, p, self.n_candidates).into_vec()
        };
        candidates.sort_unstable();
        if let Some(best) = self.best_over(rows, parent, &candidates) {
            return Some(best);
        }
        // Every sampled feature is constant in this node; look at the rest.
        let mut rest: Vec<usize> = (0..p).filter(|f| !candidates.contains(f)).collect();
        rest.shuffle(&mut self.rng);
        rest.into_iter()
            .find_map(|f| self.best_over(rows, parent, &[f]))
    }

    fn best_over(&self, rows: &[usize], parent: &Stats, features: &[usize]) -> Option<BestSplit> {
        let task = self.config.task;
        let parent_impurity = parent.weighted_impurity(task);
        let mut best: Option<BestSplit> = None;
        let mut order: Vec<usize> = rows.to_vec();
        for &f in features {
            order.sort_by(|&a, &b| self.x[(a, f)].total_cmp(&self.x[(b, f)]));
            let mut left = Stats::default();
            let mut right = *parent;
            for w in 0..order.len() - 1 {
                let r = order[w];
                left.add(self.y[r]);
                right.sub(self.y[r]);
                let (a, b) = (self.x[(r, f)], self.x[(order[w + 1], f)]);
                if a == b {
                    continue;
                }
                let gain = parent_impurity - left.weighted_impurity(task) - right.weighted_impurity(task);
                if best.as_ref().is_none_or(|s| gain > s.gain) {
                    best = Some(BestSplit {
                        feature: f,
                        threshold: midpoint(a, b),
                        gain,
                    });
                }
            }
        }
        best
    }
}

/// Midpoint of `a < b` that still separates them.
pub(crate) fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m >= b {
        a
    } else {
        m
    }
}

/// Moves elements satisfying `pred` to the front; returns how many there are.
fn partition(rows: &mut [usize], pred: impl Fn(usize) -> bool) -> usize {
    let mut k = 0;
    for i in 0..rows.len() {
        if pred(rows[i]) {
            rows.swap(i, k);
            k += 1;
        }
    }
    k
}

fn check_training_data(x: &Matrix, y: &[f64], task: Task) -> Result<()> {
    if x.rows() == 0 || x.cols() == 0 {
        return Err(Error::Precondition("cannot fit a tree on an empty matrix".into()));
    }
    if x.rows() != y.len() {
        return Err(Error::Dimension(format!("{} rows but {} targets", x.rows(), y.len())));
    }
    if x.as_slice().iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Precondition("training data contains non-finite values".into()));
    }
    if task == Task::Classification && y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Precondition("classification targets must be 0 or 1".into()));
    }
    Ok(())
}

/// Greedy CART on all rows of `x`.
pub fn fit_tree(x: &Matrix, y: &[f64], config: &TreeConfig, seed: u64) -> Result<Tree> {
    check_training_data(x, y, config.task)?;
    config.validate(x.cols())?;
    let mut rows: Vec<usize> = (0..x.rows()).collect();
    Ok(grow(x, y, config, seed, &mut rows))
}

fn grow(x: &Matrix, y: &[f64], config: &TreeConfig, seed: u64, rows: &mut [usize]) -> Tree {
    let mut builder = Builder {
        x,
        y,
        config,
        n_candidates: config.features_per_split.resolve(x.cols()),
        rng: rng::seeded(seed),
        nodes: Vec::new(),
    };
    builder.build(rows, 0);
    Tree {
        nodes: builder.nodes,
        n_features: x.cols(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub config: ForestConfig,
    pub seed: u64,
    n_features: usize,
}

/// Seed used for tree `t` of a forest seeded with `forest_seed`.
pub fn tree_seed(forest_seed: u64, t: usize) -> u64 {
    rng::derive(forest_seed, &[t as u64, 0])
}

fn bootstrap_seed(forest_seed: u64, t: usize) -> u64 {
    rng::derive(forest_seed, &[t as u64, 1])
}

/// Fits `config.n_trees` trees, each on its own bootstrap sample when enabled.
/// Trees are grown in parallel; each has a pre-derived seed so the model does
/// not depend on scheduling.
pub fn fit_forest(x: &Matrix, y: &[f64], config: &ForestConfig, seed: u64) -> Result<ForestModel> {
    if config.n_trees == 0 {
        return Err(Error::Config("a forest needs at least one tree".into()));
    }
    check_training_data(x, y, config.tree.task)?;
    config.tree.validate(x.cols())?;
    let n = x.rows();
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rows: Vec<usize> = if config.bootstrap {
                let mut r = rng::seeded(bootstrap_seed(seed, t));
                (0..n).map(|_| r.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            grow(x, y, &config.tree, tree_seed(seed, t), &mut rows)
        })
        .collect();
    Ok(ForestModel {
        trees,
        config: config.clone(),
        seed,
        n_features: x.cols(),
    })
}

impl ForestModel {
    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / self.trees.len() as f64
    }
}

/// Mean tree output per row: a value for regression, a positive-class
/// probability for classification.
pub fn predict_forest(model: &ForestModel, x: &Matrix) -> Result<Vec<f64>> {
    if x.cols() != model.n_features {
        return Err(Error::Dimension(format!(
            "model expects {} features, got {}",
            model.n_features,
            x.cols()
        )));
    }
    Ok((0..x.rows()).map(|i| model.predict_row(x.row(i))).collect())
}

/// Hard labels: score ≥ 0.5.
pub fn predict_labels(model: &ForestModel, x: &Matrix) -> Result<Vec<bool>> {
    Ok(predict_forest(model, x)?.into_iter().map(|s| s >= 0.5).collect())
}
