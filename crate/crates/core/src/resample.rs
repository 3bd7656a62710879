//! SMOTE oversampling of the minority class.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoteConfig {
    pub k_neighbors: usize,
    /// Minority/majority count ratio after resampling.
    pub ratio: f64,
    pub seed: u64,
    /// Columns whose synthetic values are copied from the base sample.
    pub categorical_columns: Vec<usize>,
}

impl SmoteConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            k_neighbors: 5,
            ratio: 1.0,
            seed,
            categorical_columns: Vec::new(),
        }
    }

    fn validate(&self, n_cols: usize) -> Result<()> {
        if self.k_neighbors == 0 {
            return Err(Error::Config("SMOTE needs k_neighbors >= 1".into()));
        }
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(Error::Config(format!("SMOTE ratio {} is not in (0, 1]", self.ratio)));
        }
        if let Some(&c) = self.categorical_columns.iter().find(|&&c| c >= n_cols) {
            return Err(Error::Dimension(format!("categorical column {c} outside {n_cols} features")));
        }
        Ok(())
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Appends synthetic minority rows after the original rows until the
/// minority count reaches `round(ratio · majority)`.
///
/// Each synthetic row is `a + u (b − a)` for a random minority row `a`, one
/// of its `k` nearest minority neighbors `b` (Euclidean, ties to the lower
/// index) and `u ~ U[0, 1]`; categorical columns keep `a`'s value.
pub fn smote(x: &Matrix, y: &[bool], config: &SmoteConfig) -> Result<(Matrix, Vec<bool>)> {
    if x.rows() != y.len() {
        return Err(Error::Dimension(format!("{} rows but {} labels", x.rows(), y.len())));
    }
    config.validate(x.cols())?;
    let positives = y.iter().filter(|&&v| v).count();
    let negatives = y.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Precondition("SMOTE needs both classes present".into()));
    }
    let minority_label = positives < negatives;
    let (n_min, n_maj) = if minority_label {
        (positives, negatives)
    } else {
        (negatives, positives)
    };
    let target = (config.ratio * n_maj as f64).round() as usize;
    if target <= n_min {
        return Ok((x.clone(), y.to_vec()));
    }
    if n_min < 2 {
        return Err(Error::Precondition("SMOTE needs at least two minority rows".into()));
    }
    let mut k = config.k_neighbors;
    if n_min <= k {
        k = n_min - 1;
        log::warn!("only {n_min} minority rows; SMOTE uses k = {k}");
    }

    let minority: Vec<usize> = (0..y.len()).filter(|&i| y[i] == minority_label).collect();
    let neighbors: Vec<Vec<usize>> = minority
        .iter()
        .map(|&a| {
            let mut d: Vec<(f64, usize)> = minority
                .iter()
                .filter(|&&b| b != a)
                .map(|&b| (squared_distance(x.row(a), x.row(b)), b))
                .collect();
            d.sort_unstable_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)));
            d.into_iter().take(k).map(|(_, b)| b).collect()
        })
        .collect();

    let n_new = target - n_min;
    let mut r = rng::seeded(config.seed);
    let mut data = x.as_slice().to_vec();
    data.reserve(n_new * x.cols());
    for _ in 0..n_new {
        let pick = r.random_range(0..minority.len());
        let a = x.row(minority[pick]);
        let b = x.row(neighbors[pick][r.random_range(0..k)]);
        let u: f64 = r.random_range(0.0..=1.0);
        for j in 0..x.cols() {
            data.push(if config.categorical_columns.contains(&j) {
                a[j]
            } else {
                a[j] + u * (b[j] - a[j])
            });
        }
    }
    let mut labels = y.to_vec();
    labels.resize(y.len() + n_new, minority_label);
    Ok((Matrix::from_vec(y.len() + n_new, x.cols(), data)?, labels))
}
