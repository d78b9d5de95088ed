//! Applies a fitted model to new rows.

use super::design::ResolvedTerm;
use super::logistic::FittedModel;
use super::GlmError;
use crate::table::{Column, SurveyTable};

/// Assembles the dense feature row for `row`, in design-column order.
pub(crate) fn feature_row(
    terms: &[ResolvedTerm],
    intercept: bool,
    table: &SurveyTable,
    row: usize,
) -> Result<Vec<f64>, GlmError> {
    let mut features = Vec::new();
    if intercept {
        features.push(1.0);
    }
    for term in terms {
        let column = table
            .column(term.variable())
            .ok_or_else(|| GlmError::MissingVariable(term.variable().to_string()))?;
        if column.is_missing(row) {
            return Err(GlmError::MissingValue {
                variable: term.variable().to_string(),
                row,
            });
        }
        match (term, column) {
            (ResolvedTerm::Numeric { .. }, Column::Numeric { values, .. }) => {
                features.push(values[row]);
            }
            (
                ResolvedTerm::Categorical {
                    variable,
                    reference,
                    levels,
                },
                Column::Categorical {
                    codes,
                    levels: dict,
                    ..
                },
            ) => {
                let observed = &dict[codes[row] as usize];
                if observed != reference && !levels.iter().any(|l| l == observed) {
                    return Err(GlmError::UnknownLevel {
                        variable: variable.clone(),
                        level: observed.clone(),
                    });
                }
                for level in levels {
                    features.push(if level == observed { 1.0 } else { 0.0 });
                }
            }
            (term, column) => {
                return Err(GlmError::KindMismatch {
                    variable: term.variable().to_string(),
                    expected: match term {
                        ResolvedTerm::Numeric { .. } => "numeric",
                        ResolvedTerm::Categorical { .. } => "categorical",
                    },
                    found: match column {
                        Column::Numeric { .. } => "numeric",
                        Column::Categorical { .. } => "categorical",
                    },
                })
            }
        }
    }
    Ok(features)
}

/// Event probability per row of `rows`. Every formula variable must be
/// present and observed; levels unseen at training time are rejected.
pub fn predict_prob(model: &FittedModel, rows: &SurveyTable) -> Result<Vec<f64>, GlmError> {
    let mut out = Vec::with_capacity(rows.n_rows());
    for row in 0..rows.n_rows() {
        let features = feature_row(&model.terms, model.intercept, rows, row)?;
        out.push(model.probability(&features));
    }
    Ok(out)
}
