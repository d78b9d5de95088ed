//! Formula terms and reference-level dummy coding.

use super::GlmError;
use crate::table::{Column, SurveyTable};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// One model term as written in a formula file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TermSpec {
    Numeric {
        variable: String,
    },
    Categorical {
        variable: String,
        /// Defaults to the first level of the column's dictionary.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reference: Option<String>,
    },
}

impl TermSpec {
    pub fn variable(&self) -> &str {
        match self {
            TermSpec::Numeric { variable } | TermSpec::Categorical { variable, .. } => variable,
        }
    }

    pub fn numeric(variable: &str) -> Self {
        TermSpec::Numeric {
            variable: variable.to_string(),
        }
    }

    pub fn categorical(variable: &str) -> Self {
        TermSpec::Categorical {
            variable: variable.to_string(),
            reference: None,
        }
    }
}

/// Outcome, ordered terms, intercept flag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelFormula {
    pub outcome: String,
    pub terms: Vec<TermSpec>,
    #[serde(default = "default_true")]
    pub intercept: bool,
}

fn default_true() -> bool {
    true
}

impl ModelFormula {
    pub fn new(outcome: &str, terms: Vec<TermSpec>) -> Self {
        ModelFormula {
            outcome: outcome.to_string(),
            terms,
            intercept: true,
        }
    }
}

/// A term with its dictionary resolved against a concrete table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResolvedTerm {
    Numeric {
        variable: String,
    },
    Categorical {
        variable: String,
        reference: String,
        /// Non-reference levels in dictionary order, one design column each.
        levels: Vec<String>,
    },
}

impl ResolvedTerm {
    pub fn variable(&self) -> &str {
        match self {
            ResolvedTerm::Numeric { variable } | ResolvedTerm::Categorical { variable, .. } => {
                variable
            }
        }
    }
}

/// Provenance of one design column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignColumn {
    /// Index into the formula's term list; None for the intercept.
    pub term: Option<usize>,
    pub variable: String,
    /// Dummy level for categorical terms, None for numeric and intercept.
    pub level: Option<String>,
}

/// Dense design matrix over the retained rows.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub x: DMatrix<f64>,
    pub columns: Vec<DesignColumn>,
    /// Original row indices that survived listwise deletion.
    pub kept_rows: Vec<usize>,
    /// Design column indices per formula term.
    pub term_columns: Vec<Vec<usize>>,
    pub terms: Vec<ResolvedTerm>,
    pub intercept: bool,
    pub formula: ModelFormula,
}

fn column_kind(column: &Column) -> &'static str {
    match column {
        Column::Numeric { .. } => "numeric",
        Column::Categorical { .. } => "categorical",
    }
}

/// Builds the dummy-coded design. Rows missing any formula variable (the
/// outcome too, when the table carries it) are dropped into `kept_rows`'
/// complement; the reference level contributes no column.
pub fn build_design(table: &SurveyTable, formula: &ModelFormula) -> Result<DesignMatrix, GlmError> {
    for (i, term) in formula.terms.iter().enumerate() {
        if formula.terms[i + 1..]
            .iter()
            .any(|other| other.variable() == term.variable())
        {
            return Err(GlmError::DuplicateTerm(term.variable().to_string()));
        }
    }

    let mut resolved = Vec::with_capacity(formula.terms.len());
    for term in &formula.terms {
        let column = table
            .column(term.variable())
            .ok_or_else(|| GlmError::MissingVariable(term.variable().to_string()))?;
        match term {
            TermSpec::Numeric { variable } => match column {
                Column::Numeric { .. } => resolved.push(ResolvedTerm::Numeric {
                    variable: variable.clone(),
                }),
                other => {
                    return Err(GlmError::KindMismatch {
                        variable: variable.clone(),
                        expected: "numeric",
                        found: column_kind(other),
                    })
                }
            },
            TermSpec::Categorical {
                variable,
                reference,
            } => match column {
                Column::Categorical { levels, .. } => {
                    let reference = match reference {
                        Some(r) => {
                            if !levels.iter().any(|l| l == r) {
                                return Err(GlmError::ReferenceLevelUnobserved {
                                    variable: variable.clone(),
                                    level: r.clone(),
                                });
                            }
                            r.clone()
                        }
                        None => levels
                            .first()
                            .cloned()
                            .ok_or_else(|| GlmError::TooFewLevels(variable.clone()))?,
                    };
                    let rest: Vec<String> =
                        levels.iter().filter(|l| **l != reference).cloned().collect();
                    resolved.push(ResolvedTerm::Categorical {
                        variable: variable.clone(),
                        reference,
                        levels: rest,
                    });
                }
                other => {
                    return Err(GlmError::KindMismatch {
                        variable: variable.clone(),
                        expected: "categorical",
                        found: column_kind(other),
                    })
                }
            },
        }
    }

    let mut scan: Vec<&str> = formula.terms.iter().map(|t| t.variable()).collect();
    if table.has_column(&formula.outcome) {
        scan.push(&formula.outcome);
    }
    let kept_rows: Vec<usize> = (0..table.n_rows())
        .filter(|&row| {
            scan.iter().all(|name| {
                !table
                    .column(name)
                    .map(|c| c.is_missing(row))
                    .unwrap_or(true)
            })
        })
        .collect();
    if kept_rows.is_empty() {
        return Err(GlmError::EmptyDesign);
    }

    let mut columns = Vec::new();
    let mut term_columns: Vec<Vec<usize>> = Vec::with_capacity(resolved.len());
    if formula.intercept {
        columns.push(DesignColumn {
            term: None,
            variable: "(intercept)".to_string(),
            level: None,
        });
    }
    for (i, term) in resolved.iter().enumerate() {
        let mut cols = Vec::new();
        match term {
            ResolvedTerm::Numeric { variable } => {
                cols.push(columns.len());
                columns.push(DesignColumn {
                    term: Some(i),
                    variable: variable.clone(),
                    level: None,
                });
            }
            ResolvedTerm::Categorical {
                variable, levels, ..
            } => {
                for level in levels {
                    cols.push(columns.len());
                    columns.push(DesignColumn {
                        term: Some(i),
                        variable: variable.clone(),
                        level: Some(level.clone()),
                    });
                }
            }
        }
        term_columns.push(cols);
    }

    let p = columns.len();
    let mut data = vec![0.0f64; kept_rows.len() * p];
    for (r, &row) in kept_rows.iter().enumerate() {
        let base = r * p;
        let mut c = 0;
        if formula.intercept {
            data[base] = 1.0;
            c = 1;
        }
        for term in &resolved {
            let column = table.column(term.variable()).expect("resolved above");
            match (term, column) {
                (ResolvedTerm::Numeric { .. }, Column::Numeric { values, .. }) => {
                    data[base + c] = values[row];
                    c += 1;
                }
                (
                    ResolvedTerm::Categorical { levels, .. },
                    Column::Categorical {
                        codes,
                        levels: dict,
                        ..
                    },
                ) => {
                    let observed = &dict[codes[row] as usize];
                    for level in levels {
                        data[base + c] = if level == observed { 1.0 } else { 0.0 };
                        c += 1;
                    }
                }
                _ => unreachable!("kinds checked during resolution"),
            }
        }
    }

    Ok(DesignMatrix {
        x: DMatrix::from_row_slice(kept_rows.len(), p, &data),
        columns,
        kept_rows,
        term_columns,
        terms: resolved,
        intercept: formula.intercept,
        formula: formula.clone(),
    })
}

/// Pulls a 0/1 outcome over the design's kept rows.
pub fn extract_binary(
    table: &SurveyTable,
    name: &str,
    kept_rows: &[usize],
) -> Result<Vec<f64>, GlmError> {
    let column = table
        .column(name)
        .ok_or_else(|| GlmError::MissingVariable(name.to_string()))?;
    match column {
        Column::Numeric { values, missing } => {
            let mut y = Vec::with_capacity(kept_rows.len());
            for &row in kept_rows {
                if missing[row] {
                    return Err(GlmError::MissingValue {
                        variable: name.to_string(),
                        row,
                    });
                }
                let v = values[row];
                if v != 0.0 && v != 1.0 {
                    return Err(GlmError::NotBinary {
                        variable: name.to_string(),
                        found: v,
                    });
                }
                y.push(v);
            }
            Ok(y)
        }
        Column::Categorical { .. } => Err(GlmError::KindMismatch {
            variable: name.to_string(),
            expected: "numeric 0/1",
            found: "categorical",
        }),
    }
}

/// Pulls a categorical outcome over the kept rows as (level codes into
/// `levels`, observed levels in dictionary order).
pub fn extract_categorical(
    table: &SurveyTable,
    name: &str,
    kept_rows: &[usize],
) -> Result<(Vec<usize>, Vec<String>), GlmError> {
    let column = table
        .column(name)
        .ok_or_else(|| GlmError::MissingVariable(name.to_string()))?;
    match column {
        Column::Categorical {
            codes,
            levels,
            missing,
        } => {
            let mut seen = vec![false; levels.len()];
            for &row in kept_rows {
                if missing[row] {
                    return Err(GlmError::MissingValue {
                        variable: name.to_string(),
                        row,
                    });
                }
                seen[codes[row] as usize] = true;
            }
            let observed: Vec<usize> = (0..levels.len()).filter(|&i| seen[i]).collect();
            if observed.len() < 2 {
                return Err(GlmError::TooFewLevels(name.to_string()));
            }
            let remap: Vec<Option<usize>> = {
                let mut m = vec![None; levels.len()];
                for (new, &old) in observed.iter().enumerate() {
                    m[old] = Some(new);
                }
                m
            };
            let y = kept_rows
                .iter()
                .map(|&row| remap[codes[row] as usize].expect("observed"))
                .collect();
            let names = observed.iter().map(|&i| levels[i].clone()).collect();
            Ok((y, names))
        }
        Column::Numeric { .. } => Err(GlmError::KindMismatch {
            variable: name.to_string(),
            expected: "categorical",
            found: "numeric",
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn race_table() -> SurveyTable {
        let mut t = SurveyTable::new("c", vec![1, 2, 3]);
        t.add_column(
            "RACE",
            Column::categorical_from_strings(vec![
                Some("White".to_string()),
                Some("Black".to_string()),
                Some("Other".to_string()),
            ]),
        )
        .unwrap();
        t
    }

    #[test]
    fn dummy_coding_drops_reference() {
        let design = build_design(
            &race_table(),
            &ModelFormula::new("Y", vec![TermSpec::categorical("RACE")]),
        )
        .unwrap();
        assert_eq!(design.x.ncols(), 3);
        assert_eq!(design.columns[0].variable, "(intercept)");
        assert_eq!(design.columns[1].level.as_deref(), Some("Black"));
        assert_eq!(design.columns[2].level.as_deref(), Some("Other"));
        assert_eq!(design.x.column(1).as_slice(), &[0.0, 1.0, 0.0]);
        assert_eq!(design.x.column(2).as_slice(), &[0.0, 0.0, 1.0]);
        assert_eq!(design.x.column(0).as_slice(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn numeric_only_keeps_all_rows() {
        let mut t = SurveyTable::new("c", vec![1, 2]);
        t.add_column("X", Column::numeric(vec![1.5, 2.5], vec![false, false]))
            .unwrap();
        let design = build_design(&t, &ModelFormula::new("Y", vec![TermSpec::numeric("X")]))
            .unwrap();
        assert_eq!(design.kept_rows, vec![0, 1]);
        assert_eq!(design.x.nrows(), 2);
    }

    #[test]
    fn missing_rows_are_dropped_and_recorded() {
        let mut t = SurveyTable::new("c", vec![1, 2, 3]);
        t.add_column(
            "X",
            Column::numeric(vec![1.0, 0.0, 3.0], vec![false, true, false]),
        )
        .unwrap();
        let design = build_design(&t, &ModelFormula::new("Y", vec![TermSpec::numeric("X")]))
            .unwrap();
        assert_eq!(design.kept_rows, vec![0, 2]);
    }

    #[test]
    fn all_missing_is_empty_design() {
        let mut t = SurveyTable::new("c", vec![1, 2]);
        t.add_column("X", Column::numeric(vec![0.0, 0.0], vec![true, true]))
            .unwrap();
        let err = build_design(&t, &ModelFormula::new("Y", vec![TermSpec::numeric("X")]))
            .unwrap_err();
        assert!(matches!(err, GlmError::EmptyDesign));
    }

    #[test]
    fn unknown_reference_level_errors() {
        let err = build_design(
            &race_table(),
            &ModelFormula::new(
                "Y",
                vec![TermSpec::Categorical {
                    variable: "RACE".to_string(),
                    reference: Some("Martian".to_string()),
                }],
            ),
        )
        .unwrap_err();
        assert!(matches!(err, GlmError::ReferenceLevelUnobserved { .. }));
    }

    #[test]
    fn duplicate_terms_error() {
        let err = build_design(
            &race_table(),
            &ModelFormula::new(
                "Y",
                vec![TermSpec::categorical("RACE"), TermSpec::categorical("RACE")],
            ),
        )
        .unwrap_err();
        assert!(matches!(err, GlmError::DuplicateTerm(_)));
    }

    #[test]
    fn missing_outcome_rows_are_dropped_when_outcome_present() {
        let mut t = SurveyTable::new("c", vec![1, 2, 3]);
        t.add_column(
            "Y",
            Column::numeric(vec![1.0, 0.0, 0.0], vec![false, true, false]),
        )
        .unwrap();
        t.add_column(
            "X",
            Column::numeric(vec![1.0, 2.0, 3.0], vec![false, false, false]),
        )
        .unwrap();
        let design = build_design(&t, &ModelFormula::new("Y", vec![TermSpec::numeric("X")]))
            .unwrap();
        assert_eq!(design.kept_rows, vec![0, 2]);
        let y = extract_binary(&t, "Y", &design.kept_rows).unwrap();
        assert_eq!(y, vec![1.0, 0.0]);
    }
}
