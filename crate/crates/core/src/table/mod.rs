//! Columnar survey-table model.
//!
//! A [`SurveyTable`] holds one row per respondent, keyed by SEQN, with named
//! numeric or categorical columns carrying explicit missing masks. Rows keep a
//! per-row cycle tag so that tables stacked across release cycles stay
//! traceable to their source cycle.

mod column;
mod io;
mod ops;
mod recode;

pub use column::Column;
pub use io::{
    read_csv, read_csv_from, read_recode_file, read_table_file, write_csv, write_table_file,
    TABLE_FORMAT_VERSION,
};
pub use ops::{
    derive_outcome, filter_subgroup, filter_subgroup_with, merge_by_id, stack_cycles, OutcomeSpec,
    Subgroup, SubgroupRules, OUTCOME_COLUMN,
};
pub use recode::{apply_recodes, Band, RecodeFile, RecodeSpec};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("variable {0:?} not present in table")]
    MissingVariable(String),
    #[error("duplicate respondent id {0}")]
    DuplicateId(i64),
    #[error("column {0:?} present in more than one merged table")]
    ColumnCollision(String),
    #[error("cannot merge tables from cycles {0:?} and {1:?}")]
    CycleMismatch(String, String),
    #[error("variable {name:?} is {left} in one cycle and {right} in another")]
    UnharmonizableVariable {
        name: String,
        left: &'static str,
        right: &'static str,
    },
    #[error("level {level:?} of variable {variable:?} has no recode mapping and no default")]
    UnmappedLevel { variable: String, level: String },
    #[error("variable {variable:?} is {found}, expected {expected}")]
    KindMismatch {
        variable: String,
        expected: &'static str,
        found: &'static str,
    },
    #[error("tables share no common variables after harmonization")]
    NoCommonVariables,
    #[error("column {column:?} has length {found}, table has {expected} rows")]
    LengthMismatch {
        column: String,
        expected: usize,
        found: usize,
    },
    #[error("table file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Columnar table of survey responses for one or more cycles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyTable {
    row_ids: Vec<i64>,
    /// Cycle label dictionary; `row_cycles` indexes into it.
    cycle_labels: Vec<String>,
    row_cycles: Vec<u16>,
    columns: IndexMap<String, Column>,
    /// Optional per-row frequency weight; defaults to 1.0 everywhere when absent.
    weights: Option<Vec<f64>>,
    /// Set when SEQN was absent from the source and ids were synthesized.
    #[serde(default)]
    pub synthetic_ids: bool,
}

impl SurveyTable {
    pub fn new(cycle: &str, row_ids: Vec<i64>) -> Self {
        let n = row_ids.len();
        SurveyTable {
            row_ids,
            cycle_labels: vec![cycle.to_string()],
            row_cycles: vec![0; n],
            columns: IndexMap::new(),
            weights: None,
            synthetic_ids: false,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn row_ids(&self) -> &[i64] {
        &self.row_ids
    }

    /// Uniform cycle label, if every row belongs to the same cycle.
    pub fn cycle(&self) -> Option<&str> {
        if self.cycle_labels.len() == 1 {
            Some(&self.cycle_labels[0])
        } else {
            None
        }
    }

    pub fn cycle_labels(&self) -> &[String] {
        &self.cycle_labels
    }

    pub fn cycle_of_row(&self, row: usize) -> &str {
        &self.cycle_labels[self.row_cycles[row] as usize]
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.keys().map(|s| s.as_str())
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.get(name)
    }

    pub fn require_column(&self, name: &str) -> Result<&Column, TableError> {
        self.columns
            .get(name)
            .ok_or_else(|| TableError::MissingVariable(name.to_string()))
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.columns.contains_key(name)
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn add_column(&mut self, name: &str, column: Column) -> Result<(), TableError> {
        if column.len() != self.n_rows() {
            return Err(TableError::LengthMismatch {
                column: name.to_string(),
                expected: self.n_rows(),
                found: column.len(),
            });
        }
        if self.columns.contains_key(name) {
            return Err(TableError::ColumnCollision(name.to_string()));
        }
        self.columns.insert(name.to_string(), column);
        Ok(())
    }

    /// Replaces an existing column, keeping its position.
    pub fn replace_column(&mut self, name: &str, column: Column) -> Result<(), TableError> {
        if column.len() != self.n_rows() {
            return Err(TableError::LengthMismatch {
                column: name.to_string(),
                expected: self.n_rows(),
                found: column.len(),
            });
        }
        match self.columns.get_mut(name) {
            Some(slot) => {
                *slot = column;
                Ok(())
            }
            None => Err(TableError::MissingVariable(name.to_string())),
        }
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<(), TableError> {
        if weights.len() != self.n_rows() {
            return Err(TableError::LengthMismatch {
                column: "<weights>".to_string(),
                expected: self.n_rows(),
                found: weights.len(),
            });
        }
        self.weights = Some(weights);
        Ok(())
    }

    /// Effective weight of a row: the stored weight, or 1.0 when none are set.
    pub fn weight_of(&self, row: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[row])
    }

    /// New table with only the listed rows, preserving order.
    pub fn take_rows(&self, keep: &[usize]) -> SurveyTable {
        SurveyTable {
            row_ids: keep.iter().map(|&i| self.row_ids[i]).collect(),
            cycle_labels: self.cycle_labels.clone(),
            row_cycles: keep.iter().map(|&i| self.row_cycles[i]).collect(),
            columns: self
                .columns
                .iter()
                .map(|(k, v)| (k.clone(), v.take_rows(keep)))
                .collect(),
            weights: self
                .weights
                .as_ref()
                .map(|w| keep.iter().map(|&i| w[i]).collect()),
            synthetic_ids: self.synthetic_ids,
        }
    }

    /// Rows with no missing value among the given variables.
    pub fn complete_rows(&self, variables: &[&str]) -> Result<Vec<usize>, TableError> {
        let cols: Vec<&Column> = variables
            .iter()
            .map(|v| self.require_column(v))
            .collect::<Result<_, _>>()?;
        Ok((0..self.n_rows())
            .filter(|&i| cols.iter().all(|c| !c.is_missing(i)))
            .collect())
    }

    pub(crate) fn from_parts(
        row_ids: Vec<i64>,
        cycle_labels: Vec<String>,
        row_cycles: Vec<u16>,
        columns: IndexMap<String, Column>,
        weights: Option<Vec<f64>>,
        synthetic_ids: bool,
    ) -> Self {
        SurveyTable {
            row_ids,
            cycle_labels,
            row_cycles,
            columns,
            weights,
            synthetic_ids,
        }
    }

    pub(crate) fn columns(&self) -> &IndexMap<String, Column> {
        &self.columns
    }

    pub(crate) fn row_cycles(&self) -> &[u16] {
        &self.row_cycles
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_table() -> SurveyTable {
        let mut t = SurveyTable::new("2015-2016", vec![1, 2, 3, 4]);
        t.add_column(
            "BMI",
            Column::numeric_from_options(vec![Some(28.0), Some(30.0), Some(31.0), None]),
        )
        .unwrap();
        t.add_column(
            "RIAGENDR",
            Column::categorical_from_strings(vec![
                Some("Male".into()),
                Some("Female".into()),
                Some("Female".into()),
                Some("Male".into()),
            ]),
        )
        .unwrap();
        t
    }

    #[test]
    fn add_column_rejects_length_mismatch() {
        let mut t = small_table();
        let err = t
            .add_column("X", Column::numeric(vec![1.0], vec![false]))
            .unwrap_err();
        assert!(matches!(err, TableError::LengthMismatch { .. }));
    }

    #[test]
    fn add_column_rejects_duplicate_name() {
        let mut t = small_table();
        let err = t
            .add_column("BMI", Column::numeric(vec![0.0; 4], vec![false; 4]))
            .unwrap_err();
        assert!(matches!(err, TableError::ColumnCollision(_)));
    }

    #[test]
    fn take_rows_preserves_cycle_tags() {
        let t = small_table();
        let sub = t.take_rows(&[2, 0]);
        assert_eq!(sub.row_ids(), &[3, 1]);
        assert_eq!(sub.cycle_of_row(0), "2015-2016");
        assert_eq!(sub.column("BMI").unwrap().numeric_at(0), Some(31.0));
    }

    #[test]
    fn complete_rows_filters_missing() {
        let t = small_table();
        assert_eq!(t.complete_rows(&["BMI"]).unwrap(), vec![0, 1, 2]);
        assert_eq!(t.complete_rows(&["BMI", "RIAGENDR"]).unwrap(), vec![0, 1, 2]);
    }
}
