//! MCAR corruption and k-fold assignment.

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tabular::{Mask, MixedTable};

/// Fraction of cells to remove from every column, plus the seed that picks them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MissSpec {
    pub rate: f64,
    pub seed: u64,
}

impl MissSpec {
    pub fn new(rate: f64, seed: u64) -> Result<Self> {
        if !(rate > 0.0 && rate < 1.0) {
            return Err(Error::Config(format!("missing rate {rate} is not in (0, 1)")));
        }
        Ok(Self { rate, seed })
    }

    /// Cells removed from a column of `n_rows` rows.
    pub fn count(&self, n_rows: usize) -> usize {
        (self.rate * n_rows as f64).round() as usize
    }
}

/// Removes exactly `round(rate * n_rows)` cells from every column, chosen
/// uniformly without replacement and independently per column.
pub fn inject_mcar(table: &MixedTable, spec: MissSpec) -> Result<(MixedTable, Mask)> {
    inject_mcar_excluding(table, spec, &[])
}

/// Like [`inject_mcar`] but leaves the listed columns untouched.
pub fn inject_mcar_excluding(
    table: &MixedTable,
    spec: MissSpec,
    excluded: &[usize],
) -> Result<(MixedTable, Mask)> {
    MissSpec::new(spec.rate, spec.seed)?;
    if !table.is_complete() {
        return Err(Error::Precondition(
            "MCAR injection needs a complete table".into(),
        ));
    }
    let n = table.n_rows();
    let count = spec.count(n);
    let mut mask = Mask::all_observed(n, table.n_cols());
    let mut rng = rng::seeded(spec.seed);
    for j in 0..table.n_cols() {
        if excluded.contains(&j) {
            continue;
        }
        for i in index::sample(&mut rng, n, count) {
            mask.set(i, j, false);
        }
    }
    Ok((table.apply_mask(&mask)?, mask))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub assignment: Vec<usize>,
}

impl FoldAssignment {
    pub fn n_rows(&self) -> usize {
        self.assignment.len()
    }

    pub fn test_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == fold)
            .collect()
    }

    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] != fold)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignment {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Seeded shuffle of the row indices, then round-robin into `k` folds.
pub fn assign_folds(n_rows: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    if n_rows < k {
        return Err(Error::Config(format!("{n_rows} rows cannot fill {k} folds")));
    }
    let mut order: Vec<usize> = (0..n_rows).collect();
    order.shuffle(&mut rng::seeded(seed));
    let mut assignment = vec![0; n_rows];
    for (pos, &row) in order.iter().enumerate() {
        assignment[row] = pos % k;
    }
    Ok(FoldAssignment { k, assignment })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::{ColumnSchema, Schema};

    fn complete(n: usize, cols: usize) -> MixedTable {
        let schema = Schema::new(
            (0..cols).map(|j| ColumnSchema::numerical(&format!("x{j}"))).collect(),
            None,
        )
        .unwrap();
        MixedTable::new(schema, n, (0..n * cols).map(|v| Some(v as f64)).collect()).unwrap()
    }

    #[test]
    fn exact_counts_per_column() {
        let t = complete(10, 3);
        let (c, m) = inject_mcar(&t, MissSpec::new(0.5, 1).unwrap()).unwrap();
        for j in 0..3 {
            assert_eq!(c.missing_in_column(j), 5);
            assert_eq!(m.missing_in_column(j), 5);
        }
        assert_eq!(c.mask(), m);

        let big = complete(9310, 2);
        let (c, _) = inject_mcar(&big, MissSpec::new(0.1, 9).unwrap()).unwrap();
        assert_eq!(c.missing_in_column(0), 931);
        assert_eq!(c.missing_in_column(1), 931);
    }

    #[test]
    fn determinism_and_seed_sensitivity() {
        let t = complete(50, 4);
        for s in 0..100u64 {
            let a = inject_mcar(&t, MissSpec::new(0.2, s).unwrap()).unwrap().1;
            let b = inject_mcar(&t, MissSpec::new(0.2, s).unwrap()).unwrap().1;
            let c = inject_mcar(&t, MissSpec::new(0.2, s + 1000).unwrap()).unwrap().1;
            assert_eq!(a, b);
            assert_ne!(a, c);
        }
    }

    #[test]
    fn rejects_incomplete_input_and_bad_rates() {
        let t = complete(4, 1);
        let (holey, _) = inject_mcar(&t, MissSpec::new(0.5, 0).unwrap()).unwrap();
        assert!(matches!(
            inject_mcar(&holey, MissSpec { rate: 0.5, seed: 0 }),
            Err(Error::Precondition(_))
        ));
        assert!(MissSpec::new(0.0, 0).is_err());
        assert!(MissSpec::new(1.0, 0).is_err());
    }

    #[test]
    fn excluded_columns_stay_complete() {
        let t = complete(20, 3);
        let (c, _) = inject_mcar_excluding(&t, MissSpec::new(0.3, 4).unwrap(), &[2]).unwrap();
        assert_eq!(c.missing_in_column(2), 0);
        assert_eq!(c.missing_in_column(0), 6);
    }

    #[test]
    fn fold_sizes() {
        assert_eq!(assign_folds(10, 5, 0).unwrap().fold_sizes(), vec![2; 5]);
        let mut s = assign_folds(11, 5, 0).unwrap().fold_sizes();
        s.sort_unstable();
        assert_eq!(s, vec![2, 2, 2, 2, 3]);
        assert_eq!(assign_folds(9310, 5, 3).unwrap().fold_sizes(), vec![1862; 5]);
        assert!(assign_folds(3, 5, 0).is_err());
        assert!(assign_folds(10, 1, 0).is_err());
        assert_eq!(assign_folds(30, 3, 8).unwrap(), assign_folds(30, 3, 8).unwrap());
    }

    #[test]
    fn train_and_test_rows_partition() {
        let f = assign_folds(23, 4, 2).unwrap();
        for fold in 0..4 {
            let mut all = f.train_rows(fold);
            all.extend(f.test_rows(fold));
            all.sort_unstable();
            assert_eq!(all, (0..23).collect::<Vec<_>>());
        }
    }
}
