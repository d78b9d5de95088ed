//! Missing-data handling: profile, threshold-based plan, predictive mean
//! matching for numeric variables, polytomous regression for categorical
//! ones.

use crate::glm::{
    build_design, extract_categorical, fit_multinomial, FitOptions, GlmError, ModelFormula,
    TermSpec,
};
use crate::table::{Column, SurveyTable, OUTCOME_COLUMN};
use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ImputeError {
    #[error("variable {0} not found")]
    MissingVariable(String),
    #[error("variable {variable} is {found}, expected {expected}")]
    KindMismatch {
        variable: String,
        expected: &'static str,
        found: &'static str,
    },
    #[error("no observed donor values for {0}")]
    NoDonors(String),
    #[error("target {0} has fewer than two observed levels")]
    SingleLevel(String),
    #[error(transparent)]
    Table(#[from] crate::table::TableError),
    #[error(transparent)]
    Glm(#[from] GlmError),
}

/// Per-variable missingness summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VariableMissing {
    pub missing_count: usize,
    pub missing_fraction: f64,
    pub numeric: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MissingnessProfile {
    pub n_rows: usize,
    pub variables: IndexMap<String, VariableMissing>,
    /// The outcome column's missing count, when present. The outcome is
    /// profiled here and nowhere else: it is never imputed.
    pub outcome_missing: Option<usize>,
}

pub fn missingness_profile(table: &SurveyTable) -> MissingnessProfile {
    let n_rows = table.n_rows();
    let mut variables = IndexMap::new();
    let mut outcome_missing = None;
    for (name, column) in table.columns() {
        let missing_count = column.missing_count();
        let missing_fraction = if n_rows == 0 {
            0.0
        } else {
            missing_count as f64 / n_rows as f64
        };
        if name == OUTCOME_COLUMN {
            outcome_missing = Some(missing_count);
        }
        variables.insert(
            name.clone(),
            VariableMissing {
                missing_count,
                missing_fraction,
                numeric: column.is_numeric(),
            },
        );
    }
    MissingnessProfile {
        n_rows,
        variables,
        outcome_missing,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputeAction {
    ImputePmm,
    ImputePolytomous,
    ListwiseDelete,
    None,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanEntry {
    pub action: ImputeAction,
    pub predictors: Vec<String>,
    pub missing_fraction: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImputationPlan {
    pub entries: IndexMap<String, PlanEntry>,
    pub k: usize,
    pub seed: u64,
    pub threshold: f64,
}

pub const DEFAULT_DONORS: usize = 5;

/// Threshold rule: more than `threshold` missing means listwise deletion in
/// the analyses that use the variable; at most `threshold` means imputation
/// matched to the column kind. The outcome never gets an imputation action.
pub fn build_plan(profile: &MissingnessProfile, threshold: f64, seed: u64) -> ImputationPlan {
    assert!(
        threshold > 0.0 && threshold < 1.0,
        "threshold must be in (0,1)"
    );
    let fully_observed: Vec<String> = profile
        .variables
        .iter()
        .filter(|(name, v)| v.missing_count == 0 && name.as_str() != OUTCOME_COLUMN)
        .map(|(name, _)| name.clone())
        .collect();
    let mut entries = IndexMap::new();
    for (name, v) in &profile.variables {
        let action = if name == OUTCOME_COLUMN || v.missing_count == 0 {
            ImputeAction::None
        } else if v.missing_fraction > threshold {
            ImputeAction::ListwiseDelete
        } else if v.numeric {
            ImputeAction::ImputePmm
        } else {
            ImputeAction::ImputePolytomous
        };
        let predictors = if matches!(
            action,
            ImputeAction::ImputePmm | ImputeAction::ImputePolytomous
        ) {
            fully_observed.clone()
        } else {
            Vec::new()
        };
        entries.insert(
            name.clone(),
            PlanEntry {
                action,
                predictors,
                missing_fraction: v.missing_fraction,
            },
        );
    }
    ImputationPlan {
        entries,
        k: DEFAULT_DONORS,
        seed,
        threshold,
    }
}

/// Design rows for predictors only: rows with any missing predictor are
/// dropped, the target column is left out of the scan.
fn predictor_design(
    table: &SurveyTable,
    predictors: &[String],
) -> Result<crate::glm::DesignMatrix, GlmError> {
    let terms = predictors
        .iter()
        .map(|name| {
            let column = table
                .column(name)
                .ok_or_else(|| GlmError::MissingVariable(name.clone()))?;
            Ok(match column {
                Column::Numeric { .. } => TermSpec::numeric(name),
                Column::Categorical { .. } => TermSpec::categorical(name),
            })
        })
        .collect::<Result<Vec<_>, GlmError>>()?;
    let formula = ModelFormula::new("__impute_scan__", terms);
    build_design(table, &formula)
}

/// Predictive mean matching: linear predictions for everyone, each missing
/// row copies the observed value of one of its k nearest donors.
pub fn pmm_impute(
    table: &SurveyTable,
    target: &str,
    predictors: &[String],
    k: usize,
    seed: u64,
) -> Result<(SurveyTable, ImputedVariable), ImputeError> {
    let column = table
        .column(target)
        .ok_or_else(|| ImputeError::MissingVariable(target.to_string()))?;
    let (values, missing) = match column {
        Column::Numeric { values, missing } => (values.clone(), missing.clone()),
        Column::Categorical { .. } => {
            return Err(ImputeError::KindMismatch {
                variable: target.to_string(),
                expected: "numeric",
                found: "categorical",
            })
        }
    };
    if !missing.iter().any(|&m| m) {
        return Ok((
            table.clone(),
            ImputedVariable {
                variable: target.to_string(),
                action: ImputeAction::ImputePmm,
                imputed_count: 0,
                donors: k,
                warning: None,
            },
        ));
    }

    let design = predictor_design(table, predictors)?;
    let donors: Vec<usize> = design
        .kept_rows
        .iter()
        .enumerate()
        .filter(|(_, &row)| !missing[row])
        .map(|(i, _)| i)
        .collect();
    if donors.is_empty() {
        return Err(ImputeError::NoDonors(target.to_string()));
    }

    // Least squares of the target on the predictors over donor rows; a
    // rank-deficient design falls back to matching on the observed mean.
    let p = design.x.ncols();
    let mut warning = None;
    let predictions: Vec<f64> = {
        let xd = nalgebra::DMatrix::from_fn(donors.len(), p, |r, c| {
            design.x[(donors[r], c)]
        });
        let yd = nalgebra::DVector::from_iterator(
            donors.len(),
            donors.iter().map(|&i| values[design.kept_rows[i]]),
        );
        let svd = xd.clone().svd(true, true);
        let max_sv = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
        let rank = svd
            .singular_values
            .iter()
            .filter(|&&s| s > 1e-10 * max_sv.max(1e-300))
            .count();
        if rank < p || donors.len() < p {
            warning = Some(
                "degenerate predictor design, matching on the observed mean".to_string(),
            );
            let mean = yd.sum() / donors.len() as f64;
            vec![mean; design.kept_rows.len()]
        } else {
            let beta = (xd.transpose() * &xd)
                .cholesky()
                .map(|ch| ch.solve(&(xd.transpose() * &yd)))
                .unwrap_or_else(|| svd.solve(&yd, 1e-10).expect("svd solve"));
            (0..design.kept_rows.len())
                .map(|r| (0..p).map(|c| design.x[(r, c)] * beta[c]).sum())
                .collect()
        }
    };

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut new_values = values.clone();
    let mut new_missing = missing.clone();
    let mut imputed_count = 0;
    for (pos, &row) in design.kept_rows.iter().enumerate() {
        if !missing[row] {
            continue;
        }
        // Nearest donors by predicted mean; ties resolve in row order.
        let mut ranked: Vec<(f64, usize)> = donors
            .iter()
            .map(|&d| ((predictions[d] - predictions[pos]).abs(), d))
            .collect();
        ranked.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let k_eff = k.min(ranked.len()).max(1);
        let pick = ranked[rng.gen_range(0..k_eff)].1;
        new_values[row] = values[design.kept_rows[pick]];
        new_missing[row] = false;
        imputed_count += 1;
    }

    let mut out = table.clone();
    out.replace_column(target, Column::numeric(new_values, new_missing))?;
    Ok((
        out,
        ImputedVariable {
            variable: target.to_string(),
            action: ImputeAction::ImputePmm,
            imputed_count,
            donors: k,
            warning,
        },
    ))
}

/// Polytomous regression imputation: draw each missing level from the
/// fitted category distribution.
pub fn polytomous_impute(
    table: &SurveyTable,
    target: &str,
    predictors: &[String],
    seed: u64,
) -> Result<(SurveyTable, ImputedVariable), ImputeError> {
    let column = table
        .column(target)
        .ok_or_else(|| ImputeError::MissingVariable(target.to_string()))?;
    let (codes, levels, missing) = match column {
        Column::Categorical {
            codes,
            levels,
            missing,
        } => (codes.clone(), levels.clone(), missing.clone()),
        Column::Numeric { .. } => {
            return Err(ImputeError::KindMismatch {
                variable: target.to_string(),
                expected: "categorical",
                found: "numeric",
            })
        }
    };
    if !missing.iter().any(|&m| m) {
        return Ok((
            table.clone(),
            ImputedVariable {
                variable: target.to_string(),
                action: ImputeAction::ImputePolytomous,
                imputed_count: 0,
                donors: 0,
                warning: None,
            },
        ));
    }

    let design = predictor_design(table, predictors)?;
    let observed_pos: Vec<usize> = design
        .kept_rows
        .iter()
        .enumerate()
        .filter(|(_, &row)| !missing[row])
        .map(|(i, _)| i)
        .collect();
    if observed_pos.is_empty() {
        return Err(ImputeError::NoDonors(target.to_string()));
    }
    let observed_rows: Vec<usize> = observed_pos.iter().map(|&i| design.kept_rows[i]).collect();
    let (y, classes) = extract_categorical(table, target, &observed_rows).map_err(|e| match e {
        GlmError::TooFewLevels(v) => ImputeError::SingleLevel(v),
        other => ImputeError::Glm(other),
    })?;

    // Refit on the observed subset of the predictor design.
    let sub_x = nalgebra::DMatrix::from_fn(observed_pos.len(), design.x.ncols(), |r, c| {
        design.x[(observed_pos[r], c)]
    });
    let sub_design = crate::glm::DesignMatrix {
        x: sub_x,
        columns: design.columns.clone(),
        kept_rows: observed_rows.clone(),
        term_columns: design.term_columns.clone(),
        terms: design.terms.clone(),
        intercept: design.intercept,
        formula: design.formula.clone(),
    };
    let mut warning = None;
    let model = match fit_multinomial(&sub_design, &y, &classes, None, &FitOptions::default()) {
        Ok(m) => Some(m),
        Err(GlmError::DidNotConverge(_)) | Err(GlmError::RankDeficient(_)) => {
            warning = Some(
                "model fit failed, drawing from the observed marginal distribution".to_string(),
            );
            None
        }
        Err(e) => return Err(ImputeError::Glm(e)),
    };
    let marginal: Vec<f64> = {
        let mut counts = vec![0.0f64; classes.len()];
        for &code in &y {
            counts[code] += 1.0;
        }
        let total: f64 = counts.iter().sum();
        counts.iter().map(|c| c / total).collect()
    };

    let class_codes: Vec<u32> = classes
        .iter()
        .map(|class| {
            levels
                .iter()
                .position(|l| l == class)
                .expect("class from this dictionary") as u32
        })
        .collect();

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut new_codes = codes.clone();
    let mut new_missing = missing.clone();
    let mut imputed_count = 0;
    for (pos, &row) in design.kept_rows.iter().enumerate() {
        if !missing[row] {
            continue;
        }
        let probs = match &model {
            Some(m) => {
                let features: Vec<f64> =
                    (0..design.x.ncols()).map(|c| design.x[(pos, c)]).collect();
                m.probabilities(&features)
            }
            None => marginal.clone(),
        };
        let draw: f64 = rng.gen();
        let mut acc = 0.0;
        let mut chosen = probs.len() - 1;
        for (ci, &p) in probs.iter().enumerate() {
            acc += p;
            if draw < acc {
                chosen = ci;
                break;
            }
        }
        new_codes[row] = class_codes[chosen];
        new_missing[row] = false;
        imputed_count += 1;
    }

    let mut out = table.clone();
    out.replace_column(target, Column::categorical(new_codes, levels, new_missing))?;
    Ok((
        out,
        ImputedVariable {
            variable: target.to_string(),
            action: ImputeAction::ImputePolytomous,
            imputed_count,
            donors: 0,
            warning,
        },
    ))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImputedVariable {
    pub variable: String,
    pub action: ImputeAction,
    pub imputed_count: usize,
    pub donors: usize,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImputationReport {
    pub n_rows_in: usize,
    pub n_rows_out: usize,
    pub outcome_rows_deleted: usize,
    pub imputed: Vec<ImputedVariable>,
    pub listwise: Vec<String>,
    pub seed: u64,
    pub threshold: f64,
}

/// Runs a plan: deletes rows with a missing outcome, then imputes variables
/// in ascending missing-fraction order with per-variable sub-seeds drawn
/// from the plan seed.
pub fn apply_plan(
    table: &SurveyTable,
    plan: &ImputationPlan,
) -> Result<(SurveyTable, ImputationReport), ImputeError> {
    let n_rows_in = table.n_rows();
    let mut current = table.clone();
    let mut outcome_rows_deleted = 0;
    if let Some(column) = current.column(OUTCOME_COLUMN) {
        let keep: Vec<usize> = (0..current.n_rows())
            .filter(|&row| !column.is_missing(row))
            .collect();
        outcome_rows_deleted = current.n_rows() - keep.len();
        if outcome_rows_deleted > 0 {
            current = current.take_rows(&keep);
        }
    }

    let mut order: Vec<(usize, &String, &PlanEntry)> = plan
        .entries
        .iter()
        .enumerate()
        .filter(|(_, (_, e))| {
            matches!(
                e.action,
                ImputeAction::ImputePmm | ImputeAction::ImputePolytomous
            )
        })
        .map(|(i, (name, e))| (i, name, e))
        .collect();
    order.sort_by(|a, b| {
        a.2.missing_fraction
            .partial_cmp(&b.2.missing_fraction)
            .unwrap()
            .then(a.0.cmp(&b.0))
    });

    let mut seed_source = ChaCha12Rng::seed_from_u64(plan.seed);
    let mut imputed = Vec::new();
    for (_, name, entry) in order {
        let sub_seed = seed_source.gen::<u64>();
        let (next, note) = match entry.action {
            ImputeAction::ImputePmm => {
                pmm_impute(&current, name, &entry.predictors, plan.k, sub_seed)?
            }
            ImputeAction::ImputePolytomous => {
                polytomous_impute(&current, name, &entry.predictors, sub_seed)?
            }
            _ => unreachable!(),
        };
        current = next;
        imputed.push(note);
    }

    let listwise = plan
        .entries
        .iter()
        .filter(|(_, e)| e.action == ImputeAction::ListwiseDelete)
        .map(|(name, _)| name.clone())
        .collect();
    let report = ImputationReport {
        n_rows_in,
        n_rows_out: current.n_rows(),
        outcome_rows_deleted,
        imputed,
        listwise,
        seed: plan.seed,
        threshold: plan.threshold,
    };
    Ok((current, report))
}
