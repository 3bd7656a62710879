//! Mixed numerical / binary-categorical tables with per-cell missingness.
//!
//! A [`MixedTable`] stores every cell as `Option<f64>`: `None` is a missing
//! cell, categorical cells hold exactly `0.0` or `1.0`. The [`Mask`] of a table
//! is derived from it (`true` = observed), so the two can never disagree.

use std::collections::HashSet;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numerical,
    #[serde(alias = "categorical")]
    CategoricalBinary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
    /// Alternative header spellings accepted by [`load_csv`].
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<String>,
    /// Raw `[negative, positive]` codes of a binary column in source files,
    /// mapped to 0 and 1 on load. Plain 0/1 values are accepted too.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub codes: Option<[f64; 2]>,
}

impl ColumnSchema {
    pub fn numerical(name: &str) -> Self {
        Self {
            name: name.to_owned(),
            kind: ColumnKind::Numerical,
            aliases: Vec::new(),
            codes: None,
        }
    }

    pub fn categorical(name: &str) -> Self {
        Self {
            name: name.to_owned(),
            kind: ColumnKind::CategoricalBinary,
            aliases: Vec::new(),
            codes: None,
        }
    }

    fn with_alias(mut self, alias: &str) -> Self {
        self.aliases.push(alias.to_owned());
        self
    }

    fn with_codes(mut self, negative: f64, positive: f64) -> Self {
        self.codes = Some([negative, positive]);
        self
    }

    /// Maps a raw categorical value to 0/1, or `None` if it is not a valid code.
    fn decode(&self, v: f64) -> Option<f64> {
        match self.codes {
            Some([neg, _]) if v == neg => Some(0.0),
            Some([_, pos]) if v == pos => Some(1.0),
            _ if v == 0.0 || v == 1.0 => Some(v),
            _ => None,
        }
    }

    fn matches(&self, header: &str) -> bool {
        let header = header.trim();
        self.name.eq_ignore_ascii_case(header)
            || self.aliases.iter().any(|a| a.eq_ignore_ascii_case(header))
    }

    pub fn is_categorical(&self) -> bool {
        self.kind == ColumnKind::CategoricalBinary
    }
}

/// Ordered column list plus an optional prediction label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<ColumnSchema>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl Schema {
    pub fn new(columns: Vec<ColumnSchema>, label: Option<&str>) -> Result<Self> {
        let schema = Self {
            columns,
            label: label.map(str::to_owned),
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.columns.is_empty() {
            return Err(Error::Schema("schema has no columns".into()));
        }
        let mut seen = HashSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.to_ascii_lowercase()) {
                return Err(Error::Schema(format!("duplicate column `{}`", c.name)));
            }
        }
        if let Some(label) = &self.label {
            let idx = self
                .index_of(label)
                .ok_or_else(|| Error::Schema(format!("label `{label}` is not a column")))?;
            if !self.columns[idx].is_categorical() {
                return Err(Error::Schema(format!("label `{label}` must be categorical")));
            }
        }
        Ok(())
    }

    /// The 15-feature Framingham layout: 8 numerical, 7 binary, `CVD` as label.
    pub fn framingham() -> Self {
        use ColumnSchema as C;
        Self {
            columns: vec![
                // Source files code men as 1 and women as 2.
                C::categorical("Sex").with_codes(2.0, 1.0),
                C::numerical("Totchol"),
                C::numerical("Age"),
                C::numerical("SysBP"),
                C::categorical("Cursmoke"),
                C::numerical("Cigpday"),
                C::numerical("Bmi"),
                C::categorical("Diabetes"),
                C::categorical("Bpmeds"),
                C::numerical("Heartrate").with_alias("Heartrte"),
                C::numerical("Glucose"),
                C::categorical("Prevhyp"),
                C::categorical("Prevstrk"),
                C::numerical("DiaBP"),
                C::categorical("CVD"),
            ],
            label: Some("CVD".to_owned()),
        }
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns
            .iter()
            .position(|c| c.name.eq_ignore_ascii_case(name))
    }

    pub fn label_index(&self) -> Option<usize> {
        self.label.as_deref().and_then(|l| self.index_of(l))
    }

    pub fn numerical_indices(&self) -> Vec<usize> {
        self.indices_of(ColumnKind::Numerical)
    }

    pub fn categorical_indices(&self) -> Vec<usize> {
        self.indices_of(ColumnKind::CategoricalBinary)
    }

    fn indices_of(&self, kind: ColumnKind) -> Vec<usize> {
        self.columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.kind == kind)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn is_categorical(&self, j: usize) -> bool {
        self.columns[j].is_categorical()
    }

    /// Reads a schema file (TOML with `label` and a `[[columns]]` array).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let schema: Schema =
            toml::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = toml::to_string(self).map_err(|e| Error::Serialization(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Row-major observation matrix: `true` = observed, `false` = missing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    n_rows: usize,
    n_cols: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(n_rows: usize, n_cols: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != n_rows * n_cols {
            return Err(Error::Dimension(format!(
                "mask has {} bits for a {n_rows}x{n_cols} grid",
                bits.len()
            )));
        }
        Ok(Self { n_rows, n_cols, bits })
    }

    pub fn all_observed(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            bits: vec![true; n_rows * n_cols],
        }
    }

    pub fn all_missing(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            bits: vec![false; n_rows * n_cols],
        }
    }

    #[inline]
    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.n_cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, observed: bool) {
        self.bits[i * self.n_cols + j] = observed;
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn missing_count(&self) -> usize {
        self.bits.iter().filter(|b| !**b).count()
    }

    pub fn missing_in_column(&self, j: usize) -> usize {
        (0..self.n_rows).filter(|&i| !self.is_observed(i, j)).count()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut bits = Vec::with_capacity(rows.len() * self.n_cols);
        for &i in rows {
            bits.extend_from_slice(&self.bits[i * self.n_cols..(i + 1) * self.n_cols]);
        }
        Self {
            n_rows: rows.len(),
            n_cols: self.n_cols,
            bits,
        }
    }

    /// Mask as a 0/1 matrix.
    pub fn to_matrix(&self) -> Matrix {
        let data = self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Matrix::from_vec(self.n_rows, self.n_cols, data).expect("mask shape")
    }

    /// Writes the mask as CSV: header of column names, then 1/0 per cell.
    pub fn write_csv(&self, schema: &Schema, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(schema.columns.iter().map(|c| c.name.as_str()))?;
        for i in 0..self.n_rows {
            w.write_record((0..self.n_cols).map(|j| if self.is_observed(i, j) { "1" } else { "0" }))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(schema: &Schema, path: impl AsRef<Path>) -> Result<Self> {
        let table = load_csv(path, schema, "")?;
        let mut bits = Vec::with_capacity(table.n_rows() * table.n_cols());
        for i in 0..table.n_rows() {
            for j in 0..table.n_cols() {
                match table.get(i, j) {
                    Some(v) if v == 1.0 => bits.push(true),
                    Some(v) if v == 0.0 => bits.push(false),
                    other => {
                        return Err(Error::Schema(format!(
                            "mask cell ({i}, {j}) must be 0 or 1, found {other:?}"
                        )))
                    }
                }
            }
        }
        Mask::new(table.n_rows(), table.n_cols(), bits)
    }
}

/// Rectangular mixed-type table; `None` cells are missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedTable {
    schema: Arc<Schema>,
    n_rows: usize,
    cells: Vec<Option<f64>>,
}

impl MixedTable {
    /// Builds a table, checking grid shape and the categorical {0,1} domain.
    pub fn new(schema: impl Into<Arc<Schema>>, n_rows: usize, cells: Vec<Option<f64>>) -> Result<Self> {
        let schema = schema.into();
        let n_cols = schema.len();
        if cells.len() != n_rows * n_cols {
            return Err(Error::Dimension(format!(
                "{} cells do not fill {n_rows} rows of {n_cols} columns",
                cells.len()
            )));
        }
        for (idx, cell) in cells.iter().enumerate() {
            let j = idx % n_cols;
            if let Some(v) = *cell {
                if schema.is_categorical(j) && v != 0.0 && v != 1.0 {
                    return Err(Error::SchemaViolation {
                        row: idx / n_cols,
                        column: schema.columns[j].name.clone(),
                        value: v,
                    });
                }
                if !v.is_finite() {
                    return Err(Error::Schema(format!(
                        "non-finite value in row {}, column `{}`",
                        idx / n_cols,
                        schema.columns[j].name
                    )));
                }
            }
        }
        Ok(Self { schema, n_rows, cells })
    }

    /// Builds a complete table from a dense matrix.
    pub fn from_matrix(schema: impl Into<Arc<Schema>>, values: &Matrix) -> Result<Self> {
        let cells = values.as_slice().iter().map(|&v| Some(v)).collect();
        Self::new(schema, values.rows(), cells)
    }

    /// Builds a table from dense values, blanking cells the mask marks missing.
    pub fn from_matrix_masked(schema: impl Into<Arc<Schema>>, values: &Matrix, mask: &Mask) -> Result<Self> {
        if values.shape() != (mask.n_rows(), mask.n_cols()) {
            return Err(Error::Dimension("values and mask differ in shape".into()));
        }
        let cells = values
            .as_slice()
            .iter()
            .zip(mask.bits())
            .map(|(&v, &obs)| obs.then_some(v))
            .collect();
        Self::new(schema, values.rows(), cells)
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn schema_arc(&self) -> Arc<Schema> {
        Arc::clone(&self.schema)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.schema.len()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.cells[i * self.n_cols() + j]
    }

    /// Overwrites one cell; categorical values are checked against {0,1}.
    pub fn set(&mut self, i: usize, j: usize, value: Option<f64>) -> Result<()> {
        if let Some(v) = value {
            if self.schema.is_categorical(j) && v != 0.0 && v != 1.0 {
                return Err(Error::SchemaViolation {
                    row: i,
                    column: self.schema.columns[j].name.clone(),
                    value: v,
                });
            }
        }
        let n_cols = self.n_cols();
        self.cells[i * n_cols + j] = value;
        Ok(())
    }

    pub fn row(&self, i: usize) -> &[Option<f64>] {
        let n = self.n_cols();
        &self.cells[i * n..(i + 1) * n]
    }

    pub fn cells(&self) -> &[Option<f64>] {
        &self.cells
    }

    pub fn mask(&self) -> Mask {
        Mask {
            n_rows: self.n_rows,
            n_cols: self.n_cols(),
            bits: self.cells.iter().map(Option::is_some).collect(),
        }
    }

    pub fn is_complete(&self) -> bool {
        self.cells.iter().all(Option::is_some)
    }

    pub fn missing_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_none()).count()
    }

    pub fn missing_in_column(&self, j: usize) -> usize {
        (0..self.n_rows).filter(|&i| self.get(i, j).is_none()).count()
    }

    pub fn column(&self, j: usize) -> Vec<Option<f64>> {
        (0..self.n_rows).map(|i| self.get(i, j)).collect()
    }

    pub fn observed_in_column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows).filter_map(|i| self.get(i, j)).collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut cells = Vec::with_capacity(rows.len() * self.n_cols());
        for &i in rows {
            cells.extend_from_slice(self.row(i));
        }
        Self {
            schema: Arc::clone(&self.schema),
            n_rows: rows.len(),
            cells,
        }
    }

    /// Stacks `other` below `self`; schemas must be equal.
    pub fn vstack(&self, other: &MixedTable) -> Result<Self> {
        if self.schema != other.schema {
            return Err(Error::Schema("cannot stack tables with different schemas".into()));
        }
        let mut cells = self.cells.clone();
        cells.extend_from_slice(&other.cells);
        Ok(Self {
            schema: Arc::clone(&self.schema),
            n_rows: self.n_rows + other.n_rows,
            cells,
        })
    }

    /// Copy with every cell the mask marks missing set to `None`.
    pub fn apply_mask(&self, mask: &Mask) -> Result<Self> {
        self.check_mask(mask)?;
        let cells = self
            .cells
            .iter()
            .zip(mask.bits())
            .map(|(&c, &obs)| if obs { c } else { None })
            .collect();
        Ok(Self {
            schema: Arc::clone(&self.schema),
            n_rows: self.n_rows,
            cells,
        })
    }

    pub(crate) fn check_mask(&self, mask: &Mask) -> Result<()> {
        if mask.n_rows() != self.n_rows || mask.n_cols() != self.n_cols() {
            return Err(Error::Dimension(format!(
                "mask is {}x{}, table is {}x{}",
                mask.n_rows(),
                mask.n_cols(),
                self.n_rows,
                self.n_cols()
            )));
        }
        Ok(())
    }

    /// Dense copy with missing cells replaced by `fill`.
    pub fn to_matrix_filled(&self, fill: f64) -> Matrix {
        let data = self.cells.iter().map(|c| c.unwrap_or(fill)).collect();
        Matrix::from_vec(self.n_rows, self.n_cols(), data).expect("table shape")
    }

    /// Dense copy of a complete table.
    pub fn to_matrix(&self) -> Result<Matrix> {
        if let Some(idx) = self.cells.iter().position(Option::is_none) {
            return Err(Error::Precondition(format!(
                "table has a missing cell at ({}, {})",
                idx / self.n_cols(),
                idx % self.n_cols()
            )));
        }
        Ok(self.to_matrix_filled(0.0))
    }

    /// Writes the table as CSV, missing cells as `missing_token`.
    pub fn write_csv(&self, path: impl AsRef<Path>, missing_token: &str) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(self.schema.columns.iter().map(|c| c.name.as_str()))?;
        for i in 0..self.n_rows {
            w.write_record(self.row(i).iter().map(|c| match c {
                Some(v) => format!("{v}"),
                None => missing_token.to_owned(),
            }))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Reads a CSV whose header contains every schema column (any order, case
/// insensitive); extra columns are ignored. Empty fields and `missing_token`
/// are missing.
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema, missing_token: &str) -> Result<MixedTable> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema, missing_token)
}

pub fn read_csv(reader: impl std::io::Read, schema: &Schema, missing_token: &str) -> Result<MixedTable> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let positions = schema
        .columns
        .iter()
        .map(|c| {
            headers
                .iter()
                .position(|h| c.matches(h))
                .ok_or_else(|| Error::Schema(format!("CSV header lacks column `{}`", c.name)))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut cells = Vec::new();
    let mut n_rows = 0;
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        for (col, &pos) in schema.columns.iter().zip(&positions) {
            let raw = record.get(pos).unwrap_or("");
            if raw.is_empty() || raw == missing_token {
                cells.push(None);
                continue;
            }
            let v: f64 = raw.parse().map_err(|_| Error::Parse {
                row: r + 1,
                column: col.name.clone(),
                value: raw.to_owned(),
            })?;
            let v = if col.is_categorical() {
                col.decode(v).ok_or_else(|| Error::SchemaViolation {
                    row: r + 1,
                    column: col.name.clone(),
                    value: v,
                })?
            } else {
                v
            };
            cells.push(Some(v));
        }
        n_rows += 1;
    }
    MixedTable::new(schema.clone(), n_rows, cells)
}

/// Rows without any missing cell, in original order.
pub fn complete_subset(table: &MixedTable) -> Result<MixedTable> {
    let rows: Vec<usize> = (0..table.n_rows())
        .filter(|&i| table.row(i).iter().all(Option::is_some))
        .collect();
    if rows.is_empty() {
        return Err(Error::EmptySubset);
    }
    Ok(table.select_rows(&rows))
}

/// Observed min and max of each numerical column; `None` for categoricals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    ranges: Vec<Option<(f64, f64)>>,
}

impl NormParams {
    pub fn range(&self, j: usize) -> Option<(f64, f64)> {
        self.ranges[j]
    }

    pub fn is_constant(&self, j: usize) -> bool {
        matches!(self.ranges[j], Some((lo, hi)) if hi == lo)
    }

    pub fn n_cols(&self) -> usize {
        self.ranges.len()
    }

    #[inline]
    pub fn scale(&self, j: usize, v: f64) -> f64 {
        match self.ranges[j] {
            Some((lo, hi)) if hi > lo => (v - lo) / (hi - lo),
            Some(_) => 0.0,
            None => v,
        }
    }

    #[inline]
    pub fn unscale(&self, j: usize, v: f64) -> f64 {
        match self.ranges[j] {
            Some((lo, hi)) if hi > lo => lo + v * (hi - lo),
            Some((lo, _)) => lo,
            None => v,
        }
    }

    fn check(&self, table: &MixedTable) -> Result<()> {
        if self.ranges.len() != table.n_cols() {
            return Err(Error::Dimension(format!(
                "normalizer fitted on {} columns, table has {}",
                self.ranges.len(),
                table.n_cols()
            )));
        }
        Ok(())
    }
}

/// Fits min-max ranges on observed numerical cells. A column with no observed
/// cell gets the degenerate range (0, 0).
pub fn fit_normalizer(table: &MixedTable) -> NormParams {
    let ranges = table
        .schema()
        .columns
        .iter()
        .enumerate()
        .map(|(j, c)| {
            if c.is_categorical() {
                return None;
            }
            let observed = table.observed_in_column(j);
            if observed.is_empty() {
                return Some((0.0, 0.0));
            }
            let lo = observed.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = observed.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Some((lo, hi))
        })
        .collect();
    NormParams { ranges }
}

fn map_cells(table: &MixedTable, params: &NormParams, f: impl Fn(usize, f64) -> f64) -> Result<MixedTable> {
    params.check(table)?;
    let n_cols = table.n_cols();
    let cells = table
        .cells()
        .iter()
        .enumerate()
        .map(|(idx, c)| c.map(|v| f(idx % n_cols, v)))
        .collect();
    Ok(MixedTable {
        schema: table.schema_arc(),
        n_rows: table.n_rows(),
        cells,
    })
}

/// Maps numerical cells to `(v - min) / (max - min)`; no clipping.
pub fn normalize(table: &MixedTable, params: &NormParams) -> Result<MixedTable> {
    map_cells(table, params, |j, v| params.scale(j, v))
}

pub fn denormalize(table: &MixedTable, params: &NormParams) -> Result<MixedTable> {
    map_cells(table, params, |j, v| params.unscale(j, v))
}

/// `original ⊙ mask + (1 − mask) ⊙ model_output`, cell by cell.
pub fn combine_imputed(original: &MixedTable, mask: &Mask, model_output: &MixedTable) -> Result<MixedTable> {
    original.check_mask(mask)?;
    model_output.check_mask(mask)?;
    let n_cols = original.n_cols();
    let mut cells = Vec::with_capacity(original.cells.len());
    for (idx, (&orig, &out)) in original.cells.iter().zip(&model_output.cells).enumerate() {
        let (i, j) = (idx / n_cols, idx % n_cols);
        let value = if mask.is_observed(i, j) {
            orig.ok_or_else(|| {
                Error::Precondition(format!("cell ({i}, {j}) is marked observed but is missing"))
            })?
        } else {
            out.ok_or(Error::IncompleteOutput { row: i, col: j })?
        };
        cells.push(Some(value));
    }
    MixedTable::new(original.schema_arc(), original.n_rows(), cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_col_schema() -> Schema {
        Schema::new(
            vec![ColumnSchema::numerical("x"), ColumnSchema::categorical("c")],
            None,
        )
        .unwrap()
    }

    fn glucose_schema() -> Schema {
        Schema::new(
            vec![
                ColumnSchema::numerical("Age"),
                ColumnSchema::numerical("Glucose"),
                ColumnSchema::categorical("Sex"),
            ],
            None,
        )
        .unwrap()
    }

    #[test]
    fn framingham_schema_matches_table_one() {
        let s = Schema::framingham();
        assert_eq!(s.len(), 15);
        assert_eq!(s.numerical_indices().len(), 8);
        assert_eq!(s.categorical_indices().len(), 7);
        assert_eq!(s.label_index(), s.index_of("CVD"));
        s.validate().unwrap();
    }

    #[test]
    fn framingham_sex_codes_are_mapped() {
        let csv = "SEX,TOTCHOL,AGE,SYSBP,DIABP,CURSMOKE,CIGPDAY,BMI,DIABETES,BPMEDS,HEARTRTE,GLUCOSE,PREVSTRK,PREVHYP,CVD\n\
                   1,195,39,106,70,0,0,26.97,0,0,80,77,0,0,1\n\
                   2,250,46,121,81,0,0,28.73,0,0,95,76,0,0,0\n";
        let t = read_csv(csv.as_bytes(), &Schema::framingham(), "").unwrap();
        assert_eq!(t.get(0, 0), Some(1.0));
        assert_eq!(t.get(1, 0), Some(0.0));
        assert_eq!(t.get(0, 9), Some(80.0));
        let bad = csv.replacen("\n2,", "\n3,", 1);
        assert!(matches!(read_csv(bad.as_bytes(), &Schema::framingham(), ""), Err(Error::SchemaViolation { .. })));
    }

    #[test]
    fn schema_rejects_duplicates_and_empty() {
        assert!(Schema::new(vec![], None).is_err());
        let dup = vec![ColumnSchema::numerical("a"), ColumnSchema::numerical("A")];
        assert!(Schema::new(dup, None).is_err());
        let bad_label = vec![ColumnSchema::numerical("a")];
        assert!(Schema::new(bad_label, Some("a")).is_err());
    }

    #[test]
    fn csv_with_one_empty_glucose_field() {
        let csv = "Sex,Age,Glucose,Extra\n1,50,80,x\n0,61,,y\n1,44,77,z\n";
        let t = read_csv(csv.as_bytes(), &glucose_schema(), "").unwrap();
        assert_eq!(t.n_rows(), 3);
        assert_eq!(t.missing_count(), 1);
        assert_eq!(t.missing_in_column(1), 1);
        assert_eq!(t.get(1, 1), None);
        assert_eq!(t.get(1, 0), Some(61.0));
    }

    #[test]
    fn csv_missing_token_and_errors() {
        let csv = "Age,Glucose,Sex\n50,NA,1\n";
        let t = read_csv(csv.as_bytes(), &glucose_schema(), "NA").unwrap();
        assert_eq!(t.get(0, 1), None);

        let bad_sex = "Age,Glucose,Sex\n50,80,2\n";
        assert!(matches!(
            read_csv(bad_sex.as_bytes(), &glucose_schema(), ""),
            Err(Error::SchemaViolation { .. })
        ));

        let bad_num = "Age,Glucose,Sex\n50,eighty,1\n";
        match read_csv(bad_num.as_bytes(), &glucose_schema(), "") {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 1);
                assert_eq!(column, "Glucose");
            }
            other => panic!("expected parse error, got {other:?}"),
        }

        let missing_col = "Age,Sex\n50,1\n";
        assert!(matches!(
            read_csv(missing_col.as_bytes(), &glucose_schema(), ""),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn csv_round_trip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let t = MixedTable::new(two_col_schema(), 2, vec![Some(1.5), None, None, Some(1.0)]).unwrap();
        t.write_csv(&path, "").unwrap();
        let back = load_csv(&path, &two_col_schema(), "").unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn complete_subset_filters_rows() {
        let s = two_col_schema();
        let cells = vec![
            Some(1.0), Some(0.0),
            None, Some(1.0),
            Some(3.0), Some(1.0),
            Some(4.0), None,
            Some(5.0), Some(0.0),
        ];
        let t = MixedTable::new(s, 5, cells).unwrap();
        let c = complete_subset(&t).unwrap();
        assert_eq!(c.n_rows(), 3);
        assert_eq!(c.column(0), vec![Some(1.0), Some(3.0), Some(5.0)]);
        assert_eq!(complete_subset(&c).unwrap(), c);

        let none = MixedTable::new(two_col_schema(), 1, vec![None, Some(1.0)]).unwrap();
        assert!(matches!(complete_subset(&none), Err(Error::EmptySubset)));
    }

    #[test]
    fn normalization_endpoints_and_midpoint() {
        let s = Schema::new(vec![ColumnSchema::numerical("x")], None).unwrap();
        let t = MixedTable::new(s, 3, vec![Some(100.0), Some(150.0), Some(200.0)]).unwrap();
        let p = fit_normalizer(&t);
        let n = normalize(&t, &p).unwrap();
        assert_eq!(n.column(0), vec![Some(0.0), Some(0.5), Some(1.0)]);
        assert_eq!(p.scale(0, 250.0), 1.5);
    }

    #[test]
    fn constant_column_normalizes_to_zero() {
        let s = Schema::new(vec![ColumnSchema::numerical("x")], None).unwrap();
        let t = MixedTable::new(s, 2, vec![Some(7.0), Some(7.0)]).unwrap();
        let p = fit_normalizer(&t);
        assert!(p.is_constant(0));
        assert_eq!(normalize(&t, &p).unwrap().column(0), vec![Some(0.0), Some(0.0)]);
    }

    #[test]
    fn combine_cases() {
        let s = Schema::new(vec![ColumnSchema::numerical("a"), ColumnSchema::numerical("b")], None).unwrap();
        let orig = MixedTable::new(s.clone(), 2, vec![Some(1.0), Some(2.0), Some(3.0), Some(4.0)]).unwrap();
        let out = MixedTable::new(s.clone(), 2, vec![Some(10.0), Some(20.0), Some(30.0), Some(40.0)]).unwrap();

        assert_eq!(combine_imputed(&orig, &Mask::all_observed(2, 2), &out).unwrap(), orig);
        let masked = orig.apply_mask(&Mask::all_missing(2, 2)).unwrap();
        assert_eq!(combine_imputed(&masked, &Mask::all_missing(2, 2), &out).unwrap(), out);

        let mask = Mask::new(2, 2, vec![true, false, false, true]).unwrap();
        let c = combine_imputed(&orig, &mask, &out).unwrap();
        assert_eq!(c.cells(), &[Some(1.0), Some(20.0), Some(30.0), Some(4.0)]);

        let holey = MixedTable::new(s, 2, vec![Some(10.0), None, Some(30.0), Some(40.0)]).unwrap();
        assert!(matches!(
            combine_imputed(&orig, &mask, &holey),
            Err(Error::IncompleteOutput { row: 0, col: 1 })
        ));
    }

    fn random_table() -> impl Strategy<Value = (MixedTable, Vec<bool>, Vec<f64>)> {
        (1usize..8, 1usize..5).prop_flat_map(|(rows, cols)| {
            let n = rows * cols;
            (
                proptest::collection::vec(-1e3f64..1e3, n),
                proptest::collection::vec(any::<bool>(), n),
                proptest::collection::vec(-1e3f64..1e3, n),
                proptest::collection::vec(any::<bool>(), cols),
            )
                .prop_map(move |(vals, mask, out, kinds)| {
                    let columns = kinds
                        .iter()
                        .enumerate()
                        .map(|(j, &cat)| {
                            let name = format!("c{j}");
                            if cat {
                                ColumnSchema::categorical(&name)
                            } else {
                                ColumnSchema::numerical(&name)
                            }
                        })
                        .collect();
                    let schema = Schema::new(columns, None).unwrap();
                    let fix = |idx: usize, v: f64| {
                        if kinds[idx % cols] {
                            if v > 0.0 { 1.0 } else { 0.0 }
                        } else {
                            v
                        }
                    };
                    let cells = vals.iter().enumerate().map(|(i, &v)| Some(fix(i, v))).collect();
                    let out = out.iter().enumerate().map(|(i, &v)| fix(i, v)).collect();
                    (MixedTable::new(schema, rows, cells).unwrap(), mask, out)
                })
        })
    }

    proptest! {
        #[test]
        fn combine_agrees_with_mask((t, bits, out) in random_table()) {
            let mask = Mask::new(t.n_rows(), t.n_cols(), bits).unwrap();
            let output = MixedTable::new(t.schema_arc(), t.n_rows(), out.iter().map(|&v| Some(v)).collect()).unwrap();
            let corrupted = t.apply_mask(&mask).unwrap();
            let c = combine_imputed(&corrupted, &mask, &output).unwrap();
            for i in 0..t.n_rows() {
                for j in 0..t.n_cols() {
                    let expected = if mask.is_observed(i, j) { t.get(i, j) } else { output.get(i, j) };
                    prop_assert_eq!(c.get(i, j), expected);
                }
            }
        }

        #[test]
        fn normalize_round_trips_and_keeps_categoricals((t, bits, _) in random_table()) {
            let mask = Mask::new(t.n_rows(), t.n_cols(), bits).unwrap();
            let t = t.apply_mask(&mask).unwrap();
            let p = fit_normalizer(&t);
            let n = normalize(&t, &p).unwrap();
            prop_assert_eq!(n.mask(), t.mask());
            let back = denormalize(&n, &p).unwrap();
            for i in 0..t.n_rows() {
                for j in 0..t.n_cols() {
                    if t.schema().is_categorical(j) {
                        prop_assert_eq!(n.get(i, j), t.get(i, j));
                    } else if let (Some(a), Some(b)) = (t.get(i, j), back.get(i, j)) {
                        if !p.is_constant(j) {
                            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn denormalize_inverts_normalize_on_1000_cells() {
        use rand::Rng as _;
        let mut rng = crate::rng::seeded(42);
        let schema = Schema::new(
            (0..10).map(|j| ColumnSchema::numerical(&format!("x{j}"))).collect(),
            None,
        )
        .unwrap();
        let cells = (0..1000).map(|_| Some(rng.random_range(-500.0..500.0))).collect();
        let t = MixedTable::new(schema, 100, cells).unwrap();
        let p = fit_normalizer(&t);
        let back = denormalize(&normalize(&t, &p).unwrap(), &p).unwrap();
        for (a, b) in t.cells().iter().zip(back.cells()) {
            assert!((a.unwrap() - b.unwrap()).abs() < 1e-12);
        }
    }
}
