//! Table-shaped outputs: prevalence, risk tables, trend matrices, and
//! admissions histograms.

use super::casebase::rr_case_base;
use super::RiskError;
use crate::glm::{build_design, ModelFormula, ResolvedTerm, TermSpec};
use crate::select::{select_model, significance_stars, CovariateClass, SelectError};
use crate::table::{Column, SurveyTable, OUTCOME_COLUMN};
use serde::{Deserialize, Serialize};

pub fn prevalence_table(
    table: &SurveyTable,
    characteristic: &str,
) -> Result<Vec<(String, f64)>, RiskError> {
    let column = table
        .column(characteristic)
        .ok_or_else(|| RiskError::MissingVariable(characteristic.to_string()))?;
    let levels = match column {
        Column::Categorical { levels, .. } => levels.clone(),
        Column::Numeric { .. } => {
            return Err(RiskError::NotCategorical(characteristic.to_string()))
        }
    };
    let mut counts = vec![0usize; levels.len()];
    let mut total = 0usize;
    for row in 0..table.n_rows() {
        if let Some(level) = column.level_at(row) {
            let idx = levels.iter().position(|l| l == level).unwrap();
            counts[idx] += 1;
            total += 1;
        }
    }
    Ok(levels
        .into_iter()
        .zip(counts)
        .map(|(level, c)| {
            let pct = if total == 0 {
                0.0
            } else {
                100.0 * c as f64 / total as f64
            };
            (level, pct)
        })
        .collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RiskRow {
    pub characteristic: String,
    /// None renders as "N/A" (numeric, per-unit effect).
    pub level: Option<String>,
    /// None renders as "N/A"; percentages are over the analysis sample.
    pub prevalence_pct: Option<f64>,
    pub rr: f64,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub starred: bool,
    pub referent: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RiskTable {
    pub rows: Vec<RiskRow>,
    pub n_analysis: usize,
    pub n_cases: usize,
    pub bootstrap_b: usize,
    pub skipped_replicates: usize,
    pub seed: u64,
}

/// Risk table for a fitted formula: referent rows first per categorical
/// characteristic with RR 1.00 and no interval, numeric characteristics
/// as single per-unit rows. Stars come from the ordinary logistic fit.
pub fn build_risk_table(
    table: &SurveyTable,
    formula: &ModelFormula,
    characteristic_order: Option<&[String]>,
    bootstrap_b: usize,
    seed: u64,
) -> Result<RiskTable, RiskError> {
    if formula.terms.is_empty() {
        return Ok(RiskTable {
            rows: Vec::new(),
            n_analysis: 0,
            n_cases: 0,
            bootstrap_b,
            skipped_replicates: 0,
            seed,
        });
    }
    let fit = rr_case_base(table, formula, bootstrap_b, seed)?;
    let stars = significance_stars(&fit.plain_model, 0.05);
    let design = build_design(table, formula)?;

    // Prevalence over the analysis sample keeps each characteristic's
    // levels summing to 100.
    let analysis = table.take_rows(&design.kept_rows);

    let order: Vec<usize> = match characteristic_order {
        Some(names) => {
            let mut order = Vec::new();
            for name in names {
                let idx = design
                    .terms
                    .iter()
                    .position(|t| term_variable(t) == name)
                    .ok_or_else(|| RiskError::MissingVariable(name.clone()))?;
                order.push(idx);
            }
            order
        }
        None => (0..design.terms.len()).collect(),
    };

    let mut rows = Vec::new();
    for &term_idx in &order {
        match &design.terms[term_idx] {
            ResolvedTerm::Numeric { variable } => {
                let col = design.term_columns[term_idx][0];
                rows.push(RiskRow {
                    characteristic: variable.clone(),
                    level: None,
                    prevalence_pct: None,
                    rr: fit.rr[col],
                    ci_low: fit.ci[col].map(|c| c.0),
                    ci_high: fit.ci[col].map(|c| c.1),
                    starred: stars[col],
                    referent: false,
                });
            }
            ResolvedTerm::Categorical {
                variable,
                reference,
                levels,
            } => {
                let prevalence = prevalence_table(&analysis, variable)?;
                let pct_of = |level: &str| {
                    prevalence
                        .iter()
                        .find(|(l, _)| l == level)
                        .map(|&(_, p)| p)
                        .unwrap_or(0.0)
                };
                rows.push(RiskRow {
                    characteristic: variable.clone(),
                    level: Some(reference.clone()),
                    prevalence_pct: Some(pct_of(reference)),
                    rr: 1.0,
                    ci_low: None,
                    ci_high: None,
                    starred: false,
                    referent: true,
                });
                for (j, level) in levels.iter().enumerate() {
                    let col = design.term_columns[term_idx][j];
                    rows.push(RiskRow {
                        characteristic: variable.clone(),
                        level: Some(level.clone()),
                        prevalence_pct: Some(pct_of(level)),
                        rr: fit.rr[col],
                        ci_low: fit.ci[col].map(|c| c.0),
                        ci_high: fit.ci[col].map(|c| c.1),
                        starred: stars[col],
                        referent: false,
                    });
                }
            }
        }
    }
    Ok(RiskTable {
        rows,
        n_analysis: fit.n_analysis,
        n_cases: fit.n_cases,
        bootstrap_b,
        skipped_replicates: fit.skipped_replicates,
        seed,
    })
}

fn term_variable(term: &ResolvedTerm) -> &str {
    match term {
        ResolvedTerm::Numeric { variable } => variable,
        ResolvedTerm::Categorical { variable, .. } => variable,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrendCell {
    Significant,
    NotSignificant,
    NotAvailable,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrendMatrix {
    pub characteristics: Vec<String>,
    pub cycles: Vec<String>,
    /// cells[i][j]: characteristic i in cycle j.
    pub cells: Vec<Vec<TrendCell>>,
    pub notes: Vec<String>,
}

/// Runs the full stepwise pipeline independently per cycle; a cell is
/// significant when the characteristic survives backward elimination.
pub fn trend_matrix(
    cycles: &[(String, SurveyTable)],
    classes: &[CovariateClass],
    alpha: f64,
) -> Result<TrendMatrix, RiskError> {
    let characteristics: Vec<String> = classes
        .iter()
        .flat_map(|c| c.members.iter().cloned())
        .collect();
    let mut cells = vec![vec![TrendCell::NotAvailable; cycles.len()]; characteristics.len()];
    let mut notes = Vec::new();

    for (j, (label, table)) in cycles.iter().enumerate() {
        let present: Vec<CovariateClass> = classes
            .iter()
            .map(|c| CovariateClass {
                name: c.name.clone(),
                members: c
                    .members
                    .iter()
                    .filter(|m| table.has_column(m))
                    .cloned()
                    .collect(),
            })
            .filter(|c| !c.members.is_empty())
            .collect();
        if present.is_empty() {
            notes.push(format!("{label}: no candidate variables present"));
            continue;
        }
        match select_model(table, OUTCOME_COLUMN, &present, alpha) {
            Ok((model, _)) => {
                let retained: Vec<&str> =
                    model.formula.terms.iter().map(|t| t.variable()).collect();
                for (i, name) in characteristics.iter().enumerate() {
                    if !table.has_column(name) {
                        continue;
                    }
                    cells[i][j] = if retained.contains(&name.as_str()) {
                        TrendCell::Significant
                    } else {
                        TrendCell::NotSignificant
                    };
                }
            }
            Err(err) => {
                notes.push(format!("{label}: {err}"));
            }
        }
    }
    Ok(TrendMatrix {
        characteristics,
        cycles: cycles.iter().map(|(l, _)| l.clone()).collect(),
        cells,
        notes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub low: f64,
    /// Inclusive upper edge; None means unbounded.
    pub high: Option<f64>,
}

impl Band {
    pub fn contains(&self, v: f64) -> bool {
        v >= self.low && self.high.map_or(true, |h| v <= h)
    }

    pub fn label(&self) -> String {
        match self.high {
            Some(h) => format!("{}-{}", self.low, h),
            None => format!(">={}", self.low),
        }
    }
}

pub fn default_admission_bands() -> Vec<Band> {
    vec![
        Band {
            low: 4.0,
            high: Some(9.0),
        },
        Band {
            low: 10.0,
            high: None,
        },
    ]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdmissionsHistogram {
    pub cycles: Vec<String>,
    pub bands: Vec<Band>,
    /// counts[i][j]: cycle i, band j, over non-missing rows.
    pub counts: Vec<Vec<usize>>,
    pub variable: String,
}

pub fn admissions_histogram(
    cycles: &[(String, SurveyTable)],
    variable: &str,
    bands: &[Band],
) -> Result<AdmissionsHistogram, RiskError> {
    for (i, a) in bands.iter().enumerate() {
        for b in &bands[i + 1..] {
            let a_hi = a.high.unwrap_or(f64::INFINITY);
            let b_hi = b.high.unwrap_or(f64::INFINITY);
            if a.low <= b_hi && b.low <= a_hi {
                return Err(RiskError::OverlappingBands(format!(
                    "{} and {}",
                    a.label(),
                    b.label()
                )));
            }
        }
    }
    let mut counts = Vec::new();
    for (_, table) in cycles {
        let column = table
            .column(variable)
            .ok_or_else(|| RiskError::MissingVariable(variable.to_string()))?;
        let mut row = vec![0usize; bands.len()];
        for r in 0..table.n_rows() {
            if let Some(v) = column.numeric_at(r) {
                for (j, band) in bands.iter().enumerate() {
                    if band.contains(v) {
                        row[j] += 1;
                    }
                }
            }
        }
        counts.push(row);
    }
    Ok(AdmissionsHistogram {
        cycles: cycles.iter().map(|(l, _)| l.clone()).collect(),
        bands: bands.to_vec(),
        counts,
        variable: variable.to_string(),
    })
}

/// Risk table restricted to the socio-economic covariates.
pub fn socio_model(
    table: &SurveyTable,
    soc_vars: &[String],
    bootstrap_b: usize,
    seed: u64,
) -> Result<RiskTable, RiskError> {
    let mut terms = Vec::new();
    for name in soc_vars {
        let column = table
            .column(name)
            .ok_or_else(|| RiskError::MissingVariable(name.clone()))?;
        terms.push(match column {
            Column::Numeric { .. } => TermSpec::numeric(name),
            Column::Categorical { .. } => TermSpec::categorical(name),
        });
    }
    let formula = ModelFormula::new(OUTCOME_COLUMN, terms);
    build_risk_table(table, &formula, None, bootstrap_b, seed)
}

impl From<SelectError> for TrendCell {
    fn from(_: SelectError) -> Self {
        TrendCell::NotAvailable
    }
}
