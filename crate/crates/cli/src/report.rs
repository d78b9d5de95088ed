//! The fit report: per-coefficient rows with Wald statistics and stars,
//! per-term tests, and bivariate comparisons against the outcome
//! (chi-square for categorical variables, Welch t for numeric ones).

use hutil_core::glm::{
    chi_square_upper_tail, two_sample_t, wald_test, FittedModel, ModelFormula,
};
use hutil_core::table::{Column, SurveyTable};
use serde::Serialize;

use crate::error::CliError;

#[derive(Debug, Serialize)]
pub struct CoefficientRow {
    pub term: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub level: Option<String>,
    pub beta: f64,
    pub se: f64,
    pub wald_chi_square: f64,
    pub p_value: f64,
    /// "*" at p < 0.05, empty otherwise.
    pub star: String,
}

#[derive(Debug, Serialize)]
pub struct TermTest {
    pub term: String,
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

#[derive(Debug, Serialize)]
pub struct BivariateRow {
    pub variable: String,
    /// "chi_square" for categorical variables, "t_test" for numeric ones.
    pub test: String,
    pub statistic: f64,
    pub df: f64,
    pub p_value: f64,
}

#[derive(Debug, Serialize)]
pub struct FitReport {
    pub outcome: String,
    pub n_used: usize,
    pub log_likelihood: f64,
    pub converged: bool,
    pub separation_warning: bool,
    pub coefficients: Vec<CoefficientRow>,
    pub term_tests: Vec<TermTest>,
    pub bivariate: Vec<BivariateRow>,
}

fn star(p: f64) -> String {
    if p < 0.05 { "*".to_string() } else { String::new() }
}

fn coefficient_rows(model: &FittedModel) -> Vec<CoefficientRow> {
    model
        .columns
        .iter()
        .zip(&model.coefficients)
        .enumerate()
        .map(|(i, (column, &beta))| {
            let se = model.standard_error(i);
            let statistic = if se > 0.0 { (beta / se).powi(2) } else { f64::INFINITY };
            let p = chi_square_upper_tail(statistic, 1);
            CoefficientRow {
                term: match column.term {
                    None => "(intercept)".to_string(),
                    Some(_) => column.variable.clone(),
                },
                level: column.level.clone(),
                beta,
                se,
                wald_chi_square: statistic,
                p_value: p,
                star: star(p),
            }
        })
        .collect()
}

fn term_tests(model: &FittedModel) -> Result<Vec<TermTest>, CliError> {
    let mut tests = Vec::new();
    for (index, term) in model.terms.iter().enumerate() {
        let wald = wald_test(model, index)?;
        tests.push(TermTest {
            term: term.variable().to_string(),
            statistic: wald.statistic,
            df: wald.df,
            p_value: wald.p_value,
        });
    }
    Ok(tests)
}

/// Pearson chi-square of independence on the level x outcome counts.
/// Levels with no observations contribute nothing and no degrees of freedom.
fn contingency_chi_square(counts: &[[f64; 2]]) -> Option<(f64, usize)> {
    let total: f64 = counts.iter().map(|r| r[0] + r[1]).sum();
    let col: [f64; 2] = [
        counts.iter().map(|r| r[0]).sum(),
        counts.iter().map(|r| r[1]).sum(),
    ];
    if total == 0.0 || col[0] == 0.0 || col[1] == 0.0 {
        return None;
    }
    let mut statistic = 0.0;
    let mut occupied = 0usize;
    for row in counts {
        let row_total = row[0] + row[1];
        if row_total == 0.0 {
            continue;
        }
        occupied += 1;
        for (j, &observed) in row.iter().enumerate() {
            let expected = row_total * col[j] / total;
            statistic += (observed - expected).powi(2) / expected;
        }
    }
    if occupied < 2 {
        return None;
    }
    Some((statistic, occupied - 1))
}

fn bivariate_tests(table: &SurveyTable, formula: &ModelFormula) -> Vec<BivariateRow> {
    let Some(Column::Numeric {
        values: y,
        missing: y_missing,
    }) = table.column(&formula.outcome)
    else {
        return Vec::new();
    };
    let mut rows = Vec::new();
    for term in &formula.terms {
        let name = term.variable();
        let Some(column) = table.column(name) else {
            continue;
        };
        match column {
            Column::Numeric { values, missing } => {
                let mut events = Vec::new();
                let mut non_events = Vec::new();
                for i in 0..values.len() {
                    if missing[i] || y_missing[i] {
                        continue;
                    }
                    if y[i] == 1.0 {
                        events.push(values[i]);
                    } else {
                        non_events.push(values[i]);
                    }
                }
                if events.len() < 2 || non_events.len() < 2 {
                    continue;
                }
                if let Ok(t) = two_sample_t(&events, &non_events) {
                    rows.push(BivariateRow {
                        variable: name.to_string(),
                        test: "t_test".to_string(),
                        statistic: t.t,
                        df: t.df,
                        p_value: t.p_value,
                    });
                }
            }
            Column::Categorical {
                codes,
                levels,
                missing,
            } => {
                let mut counts = vec![[0.0f64; 2]; levels.len()];
                for i in 0..codes.len() {
                    if missing[i] || y_missing[i] {
                        continue;
                    }
                    let j = usize::from(y[i] == 1.0);
                    counts[codes[i] as usize][j] += 1.0;
                }
                if let Some((statistic, df)) = contingency_chi_square(&counts) {
                    rows.push(BivariateRow {
                        variable: name.to_string(),
                        test: "chi_square".to_string(),
                        statistic,
                        df: df as f64,
                        p_value: chi_square_upper_tail(statistic, df),
                    });
                }
            }
        }
    }
    rows
}

pub fn fit_report(table: &SurveyTable, model: &FittedModel) -> Result<FitReport, CliError> {
    Ok(FitReport {
        outcome: model.formula.outcome.clone(),
        n_used: model.n_used,
        log_likelihood: model.log_likelihood,
        converged: model.converged,
        separation_warning: model.separation_warning,
        coefficients: coefficient_rows(model),
        term_tests: term_tests(model)?,
        bivariate: bivariate_tests(table, &model.formula),
    })
}

/// Fixed-width coefficient table for the terminal.
pub fn print_coefficients(rows: &[CoefficientRow]) {
    println!(
        "{:<20} {:<12} {:>10} {:>9} {:>9} {:>8}",
        "term", "level", "beta", "se", "wald", "p"
    );
    for row in rows {
        println!(
            "{:<20} {:<12} {:>10.4} {:>9.4} {:>9.2} {:>8.4} {}",
            row.term,
            row.level.as_deref().unwrap_or("-"),
            row.beta,
            row.se,
            row.wald_chi_square,
            row.p_value,
            row.star,
        );
    }
}
