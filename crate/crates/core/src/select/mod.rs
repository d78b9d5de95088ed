//! Stepwise model construction: forward selection over ordered covariate
//! classes, then backward elimination of individual terms.

use crate::glm::{
    build_design, chi_square_upper_tail, extract_binary, fit_logistic, wald_test, FitOptions,
    FittedModel, GlmError, ModelFormula, TermSpec,
};
use crate::table::{Column, SurveyTable};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CLASS_NAMES: [&str; 5] = [
    "demographics",
    "dietary",
    "examination",
    "laboratory",
    "questionnaire",
];

#[derive(Debug, thiserror::Error)]
pub enum SelectError {
    #[error("unknown covariate class {0:?}")]
    InvalidClassName(String),
    #[error("variable {0} appears in more than one class")]
    OverlappingClasses(String),
    #[error("variable {0} not found")]
    MissingVariable(String),
    #[error("no rows remain after listwise deletion")]
    NoRows,
    #[error(transparent)]
    Glm(#[from] GlmError),
    #[error(transparent)]
    Table(#[from] crate::table::TableError),
    #[error("cannot read class file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed class file: {0}")]
    Parse(#[from] toml::de::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovariateClass {
    pub name: String,
    pub members: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct ClassFile {
    #[serde(rename = "class")]
    classes: Vec<CovariateClass>,
}

pub fn read_classes_file(path: &Path) -> Result<Vec<CovariateClass>, SelectError> {
    let text = std::fs::read_to_string(path)?;
    let parsed: ClassFile = toml::from_str(&text)?;
    validate_classes(&parsed.classes)?;
    Ok(parsed.classes)
}

pub fn validate_classes(classes: &[CovariateClass]) -> Result<(), SelectError> {
    let mut seen = std::collections::HashSet::new();
    for class in classes {
        if !CLASS_NAMES.contains(&class.name.as_str()) {
            return Err(SelectError::InvalidClassName(class.name.clone()));
        }
        for member in &class.members {
            if !seen.insert(member.clone()) {
                return Err(SelectError::OverlappingClasses(member.clone()));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    AddClass,
    DropTerm,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionStep {
    pub kind: StepKind,
    pub name: String,
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub df: Option<usize>,
    pub ll_before: Option<f64>,
    pub ll_after: Option<f64>,
    /// Adds: whether the class was retained. Drops: always true.
    pub accepted: bool,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub steps: Vec<SelectionStep>,
}

fn term_for(table: &SurveyTable, variable: &str) -> Result<TermSpec, SelectError> {
    match table.column(variable) {
        Some(Column::Numeric { .. }) => Ok(TermSpec::numeric(variable)),
        Some(Column::Categorical { .. }) => Ok(TermSpec::categorical(variable)),
        None => Err(SelectError::MissingVariable(variable.to_string())),
    }
}

/// Restricts the table to rows complete on the outcome and every candidate
/// variable, so every nested model sees the same sample.
fn fix_rows(
    table: &SurveyTable,
    outcome: &str,
    candidates: &[String],
) -> Result<SurveyTable, SelectError> {
    let mut names: Vec<&str> = vec![outcome];
    names.extend(candidates.iter().map(|s| s.as_str()));
    let rows = table.complete_rows(&names)?;
    if rows.is_empty() {
        return Err(SelectError::NoRows);
    }
    Ok(table.take_rows(&rows))
}

fn fit_formula(
    table: &SurveyTable,
    formula: &ModelFormula,
) -> Result<(FittedModel, usize), GlmError> {
    let design = build_design(table, formula)?;
    let y = extract_binary(table, &formula.outcome, &design.kept_rows)?;
    let weights = design
        .kept_rows
        .iter()
        .map(|&row| table.weight_of(row))
        .collect::<Vec<f64>>();
    let model = fit_logistic(&design, &y, Some(&weights), &FitOptions::default())?;
    Ok((model, design.x.ncols()))
}

/// Forward pass: classes are offered in order and retained when the
/// likelihood-ratio test against the current model clears alpha.
pub fn forward_by_class(
    table: &SurveyTable,
    outcome: &str,
    classes: &[CovariateClass],
    alpha: f64,
) -> Result<(FittedModel, SelectionTrace), SelectError> {
    validate_classes(classes)?;
    let candidates: Vec<String> = classes
        .iter()
        .flat_map(|c| c.members.iter().cloned())
        .collect();
    for member in &candidates {
        term_for(table, member)?;
    }
    let fixed = fix_rows(table, outcome, &candidates)?;

    let mut formula = ModelFormula::new(outcome, Vec::new());
    let (mut current, mut current_cols) = fit_formula(&fixed, &formula)?;
    let mut trace = SelectionTrace::default();

    for class in classes {
        let mut candidate = formula.clone();
        for member in &class.members {
            candidate.terms.push(term_for(&fixed, member)?);
        }
        match fit_formula(&fixed, &candidate) {
            Ok((model, cols)) => {
                let df = cols - current_cols;
                let stat = (2.0 * (model.log_likelihood - current.log_likelihood)).max(0.0);
                let p = chi_square_upper_tail(stat, df.max(1));
                let retained = p < alpha;
                trace.steps.push(SelectionStep {
                    kind: StepKind::AddClass,
                    name: class.name.clone(),
                    statistic: Some(stat),
                    p_value: Some(p),
                    df: Some(df),
                    ll_before: Some(current.log_likelihood),
                    ll_after: Some(model.log_likelihood),
                    accepted: retained,
                    note: None,
                });
                if retained {
                    formula = candidate;
                    current = model;
                    current_cols = cols;
                }
            }
            Err(err) => {
                trace.steps.push(SelectionStep {
                    kind: StepKind::AddClass,
                    name: class.name.clone(),
                    statistic: None,
                    p_value: None,
                    df: None,
                    ll_before: Some(current.log_likelihood),
                    ll_after: None,
                    accepted: false,
                    note: Some(format!("fit failed: {err}")),
                });
            }
        }
    }
    Ok((current, trace))
}

/// Backward pass: repeatedly drop the term with the largest multi-df Wald
/// p at or above alpha, ties going to the later formula position.
pub fn backward_eliminate(
    model: &FittedModel,
    table: &SurveyTable,
    alpha: f64,
) -> Result<(FittedModel, SelectionTrace), SelectError> {
    let candidates: Vec<String> = model
        .formula
        .terms
        .iter()
        .map(|t| t.variable().to_string())
        .collect();
    let fixed = fix_rows(table, &model.formula.outcome, &candidates)?;
    let mut formula = model.formula.clone();
    let (mut current, _) = fit_formula(&fixed, &formula)?;
    let mut trace = SelectionTrace::default();

    while !formula.terms.is_empty() {
        let mut worst: Option<(usize, f64, f64, usize)> = None;
        for term in 0..formula.terms.len() {
            let wald = wald_test(&current, term)?;
            if wald.p_value >= alpha {
                let replace = match worst {
                    Some((_, p, _, _)) => wald.p_value >= p,
                    None => true,
                };
                if replace {
                    worst = Some((term, wald.p_value, wald.statistic, wald.df));
                }
            }
        }
        let Some((term, p, stat, df)) = worst else {
            break;
        };
        let name = formula.terms[term].variable().to_string();
        let ll_before = current.log_likelihood;
        formula.terms.remove(term);
        let (next, _) = fit_formula(&fixed, &formula)?;
        trace.steps.push(SelectionStep {
            kind: StepKind::DropTerm,
            name,
            statistic: Some(stat),
            p_value: Some(p),
            df: Some(df),
            ll_before: Some(ll_before),
            ll_after: Some(next.log_likelihood),
            accepted: true,
            note: None,
        });
        current = next;
    }
    Ok((current, trace))
}

/// Forward selection over classes followed by backward elimination on the
/// union of retained classes, all on one fixed sample.
pub fn select_model(
    table: &SurveyTable,
    outcome: &str,
    classes: &[CovariateClass],
    alpha: f64,
) -> Result<(FittedModel, SelectionTrace), SelectError> {
    validate_classes(classes)?;
    let candidates: Vec<String> = classes
        .iter()
        .flat_map(|c| c.members.iter().cloned())
        .collect();
    for member in &candidates {
        term_for(table, member)?;
    }
    let fixed = fix_rows(table, outcome, &candidates)?;
    let (forward_model, mut trace) = forward_by_class(&fixed, outcome, classes, alpha)?;
    let (final_model, backward) = backward_eliminate(&forward_model, &fixed, alpha)?;
    trace.steps.extend(backward.steps);
    Ok((final_model, trace))
}

/// Re-executes a recorded trace against the same table; the result matches
/// the traced final model coefficient for coefficient.
pub fn replay_trace(
    table: &SurveyTable,
    outcome: &str,
    classes: &[CovariateClass],
    trace: &SelectionTrace,
) -> Result<FittedModel, SelectError> {
    let candidates: Vec<String> = classes
        .iter()
        .flat_map(|c| c.members.iter().cloned())
        .collect();
    let fixed = fix_rows(table, outcome, &candidates)?;
    let mut formula = ModelFormula::new(outcome, Vec::new());
    for step in &trace.steps {
        if !step.accepted {
            continue;
        }
        match step.kind {
            StepKind::AddClass => {
                let class = classes
                    .iter()
                    .find(|c| c.name == step.name)
                    .ok_or_else(|| SelectError::InvalidClassName(step.name.clone()))?;
                for member in &class.members {
                    formula.terms.push(term_for(&fixed, member)?);
                }
            }
            StepKind::DropTerm => {
                let pos = formula
                    .terms
                    .iter()
                    .position(|t| t.variable() == step.name)
                    .ok_or_else(|| SelectError::MissingVariable(step.name.clone()))?;
                formula.terms.remove(pos);
            }
        }
    }
    let (model, _) = fit_formula(&fixed, &formula)?;
    Ok(model)
}

/// Per-coefficient significance flags at strict p < alpha.
pub fn significance_stars(model: &FittedModel, alpha: f64) -> Vec<bool> {
    model
        .coefficients
        .iter()
        .enumerate()
        .map(|(i, &beta)| {
            let var = model.covariance[i][i];
            if !(var > 0.0) || beta == 0.0 {
                return false;
            }
            let z2 = beta * beta / var;
            chi_square_upper_tail(z2, 1) < alpha
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::OUTCOME_COLUMN;

    fn classes_of(list: &[(&str, &[&str])]) -> Vec<CovariateClass> {
        list.iter()
            .map(|(name, members)| CovariateClass {
                name: name.to_string(),
                members: members.iter().map(|m| m.to_string()).collect(),
            })
            .collect()
    }

    fn outcome_table(n: usize, signal: impl Fn(usize) -> f64) -> SurveyTable {
        let mut t = SurveyTable::new("c", (1..=n as i64).collect());
        let y: Vec<f64> = (0..n).map(|i| signal(i)).collect();
        t.add_column(OUTCOME_COLUMN, Column::numeric(y, vec![false; n]))
            .unwrap();
        t
    }

    #[test]
    fn empty_class_list_gives_intercept_only() {
        let mut t = outcome_table(40, |i| if i % 3 == 0 { 1.0 } else { 0.0 });
        t.add_column("X", Column::numeric(vec![0.0; 40], vec![false; 40]))
            .unwrap();
        let (model, trace) = forward_by_class(&t, OUTCOME_COLUMN, &[], 0.05).unwrap();
        assert_eq!(model.coefficients.len(), 1);
        assert!(trace.steps.is_empty());
    }

    #[test]
    fn intercept_only_backward_is_unchanged() {
        let t = outcome_table(40, |i| if i % 3 == 0 { 1.0 } else { 0.0 });
        let formula = ModelFormula::new(OUTCOME_COLUMN, Vec::new());
        let (model, _) = fit_formula(&t, &formula).unwrap();
        let (after, trace) = backward_eliminate(&model, &t, 0.05).unwrap();
        assert_eq!(after.coefficients, model.coefficients);
        assert!(trace.steps.is_empty());
    }

    #[test]
    fn class_name_and_overlap_validation() {
        let bad = classes_of(&[("unheard_of", &["X"])]);
        assert!(matches!(
            validate_classes(&bad),
            Err(SelectError::InvalidClassName(_))
        ));
        let overlap = classes_of(&[("demographics", &["X"]), ("dietary", &["X"])]);
        assert!(matches!(
            validate_classes(&overlap),
            Err(SelectError::OverlappingClasses(_))
        ));
    }

    #[test]
    fn stars_use_strict_alpha() {
        // Hand-built model: one coefficient at p slightly under 0.05, one
        // exactly at it, one zero.
        let z_049 = 1.9649139747; // two-sided p = 0.049...
        let model = FittedModel {
            formula: ModelFormula::new("Y", Vec::new()),
            terms: Vec::new(),
            columns: Vec::new(),
            term_columns: Vec::new(),
            intercept: true,
            coefficients: vec![z_049, 1.9599639845, 0.0],
            covariance: vec![
                vec![1.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0],
            ],
            log_likelihood: 0.0,
            n_used: 10,
            iterations: 1,
            converged: true,
            separation_warning: false,
            weights_used: false,
            objective_trace: Vec::new(),
        };
        let stars = significance_stars(&model, 0.05);
        assert!(stars[0]);
        assert!(!stars[2]);
        let exact_p = chi_square_upper_tail(1.9599639845f64.powi(2), 1);
        assert_eq!(stars[1], exact_p < 0.05);
    }

    #[test]
    fn classes_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("classes.toml");
        std::fs::write(
            &path,
            "[[class]]\nname = \"demographics\"\nmembers = [\"RIDAGEYR\", \"RIAGENDR\"]\n\n[[class]]\nname = \"examination\"\nmembers = [\"BMXBMI\"]\n",
        )
        .unwrap();
        let classes = read_classes_file(&path).unwrap();
        assert_eq!(classes.len(), 2);
        assert_eq!(classes[0].name, "demographics");
        assert_eq!(classes[1].members, vec!["BMXBMI".to_string()]);
    }
}
