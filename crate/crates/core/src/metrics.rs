//! Imputation and prediction scores: normalized RMSE, AUROC, F1.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tabular::{Mask, MixedTable, NormParams};

/// How per-column categorical AUROCs are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AurocAverage {
    /// Mean of per-column AUROCs over columns whose missing cells contain both classes.
    #[default]
    Macro,
    /// One AUROC over all pooled categorical missing cells.
    Micro,
}

impl std::str::FromStr for AurocAverage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "macro" => Ok(Self::Macro),
            "micro" => Ok(Self::Micro),
            other => Err(Error::Config(format!("unknown AUROC average `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationScore {
    pub rmse_numerical: f64,
    pub auroc_categorical: f64,
    pub per_column: BTreeMap<String, f64>,
}

/// Root mean squared error over originally-missing numerical cells, after
/// normalizing both tables with `params`.
pub fn normalized_rmse(
    truth: &MixedTable,
    imputed: &MixedTable,
    mask: &Mask,
    params: &NormParams,
) -> Result<f64> {
    check_dims(truth, imputed, mask)?;
    let schema = truth.schema();
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..truth.n_rows() {
        for j in schema.numerical_indices() {
            if mask.is_observed(i, j) {
                continue;
            }
            let t = truth
                .get(i, j)
                .ok_or_else(|| Error::Precondition(format!("truth missing at ({i}, {j})")))?;
            let p = imputed
                .get(i, j)
                .ok_or(Error::IncompleteOutput { row: i, col: j })?;
            let d = params.scale(j, t) - params.scale(j, p);
            sum += d * d;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::UndefinedMetric(
            "no missing numerical cells to score".into(),
        ));
    }
    Ok((sum / count as f64).sqrt())
}

/// Per-column RMSE over missing numerical cells (columns with no missing cells omitted).
pub fn rmse_per_column(
    truth: &MixedTable,
    imputed: &MixedTable,
    mask: &Mask,
    params: &NormParams,
) -> Result<BTreeMap<String, f64>> {
    check_dims(truth, imputed, mask)?;
    let mut out = BTreeMap::new();
    for j in truth.schema().numerical_indices() {
        let mut sum = 0.0;
        let mut count = 0;
        for i in 0..truth.n_rows() {
            if mask.is_observed(i, j) {
                continue;
            }
            if let (Some(t), Some(p)) = (truth.get(i, j), imputed.get(i, j)) {
                let d = params.scale(j, t) - params.scale(j, p);
                sum += d * d;
                count += 1;
            }
        }
        if count > 0 {
            out.insert(truth.schema().columns[j].name.clone(), (sum / count as f64).sqrt());
        }
    }
    Ok(out)
}

fn check_dims(truth: &MixedTable, imputed: &MixedTable, mask: &Mask) -> Result<()> {
    if truth.n_rows() != imputed.n_rows() || truth.n_cols() != imputed.n_cols() {
        return Err(Error::Dimension("truth and imputed tables differ in shape".into()));
    }
    truth.check_mask(mask)
}

/// Area under the ROC curve as the Mann–Whitney statistic with half credit for
/// ties, computed from mid-ranks in O(n log n).
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "AUROC needs both positive and negative labels".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sum of (1-based) mid-ranks of the positives.
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let mid_rank = (start + 1 + end) as f64 / 2.0;
        let positives = order[start..end].iter().filter(|&&i| labels[i]).count();
        rank_sum += mid_rank * positives as f64;
        start = end;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalAuroc {
    pub overall: f64,
    pub per_column: BTreeMap<String, f64>,
}

/// AUROC of imputer scores against true labels over the missing cells of each
/// categorical column, averaged per `average`.
///
/// `scores` is a row-major grid aligned with `truth`; only categorical cells
/// with `mask = 0` are read.
pub fn categorical_auroc(
    truth: &MixedTable,
    scores: &[Option<f64>],
    mask: &Mask,
    average: AurocAverage,
) -> Result<CategoricalAuroc> {
    truth.check_mask(mask)?;
    if scores.len() != truth.n_rows() * truth.n_cols() {
        return Err(Error::Dimension("score grid does not match table".into()));
    }
    let n_cols = truth.n_cols();
    let mut per_column = BTreeMap::new();
    let mut pooled_scores = Vec::new();
    let mut pooled_labels = Vec::new();
    let mut any_missing = false;
    for j in truth.schema().categorical_indices() {
        let mut s = Vec::new();
        let mut l = Vec::new();
        for i in 0..truth.n_rows() {
            if mask.is_observed(i, j) {
                continue;
            }
            let label = truth
                .get(i, j)
                .ok_or_else(|| Error::Precondition(format!("truth missing at ({i}, {j})")))?;
            let score = scores[i * n_cols + j].ok_or_else(|| {
                Error::Precondition(format!("no categorical score at ({i}, {j})"))
            })?;
            s.push(score);
            l.push(label == 1.0);
        }
        if s.is_empty() {
            continue;
        }
        any_missing = true;
        if let Ok(a) = auroc(&s, &l) {
            per_column.insert(truth.schema().columns[j].name.clone(), a);
        }
        pooled_scores.extend(s);
        pooled_labels.extend(l);
    }
    if !any_missing {
        return Err(Error::UndefinedMetric(
            "no missing categorical cells to score".into(),
        ));
    }
    let overall = match average {
        AurocAverage::Macro => {
            if per_column.is_empty() {
                return Err(Error::UndefinedMetric(
                    "no categorical column has both classes among its missing cells".into(),
                ));
            }
            per_column.values().sum::<f64>() / per_column.len() as f64
        }
        AurocAverage::Micro => auroc(&pooled_scores, &pooled_labels)?,
    };
    Ok(CategoricalAuroc { overall, per_column })
}

/// F1 of the positive class; 0 when there are no positives predicted or present.
pub fn f1(predictions: &[bool], labels: &[bool]) -> Result<f64> {
    if predictions.len() != labels.len() || predictions.is_empty() {
        return Err(Error::Dimension(format!(
            "F1 needs equal nonempty vectors, got {} and {}",
            predictions.len(),
            labels.len()
        )));
    }
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    let denom = 2 * tp + fp + fneg;
    Ok(if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    })
}
