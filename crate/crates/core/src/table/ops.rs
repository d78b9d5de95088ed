use super::{Column, SurveyTable, TableError};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Name of the derived binary outcome column.
pub const OUTCOME_COLUMN: &str = "HIGH_UTIL";

/// Dichotomization rule for the utilization outcome: 1 iff count > threshold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutcomeSpec {
    pub source_variable: String,
    pub threshold: u32,
}

impl OutcomeSpec {
    pub fn new(source_variable: &str, threshold: u32) -> Self {
        OutcomeSpec {
            source_variable: source_variable.to_string(),
            threshold,
        }
    }
}

impl Default for OutcomeSpec {
    fn default() -> Self {
        OutcomeSpec::new("HUQ050", 5)
    }
}

/// Left join of component tables onto the base table (demographics) by SEQN.
///
/// Non-base columns are missing for base rows without a match. Column-name
/// collisions across tables are an error, as are mixed cycles.
pub fn merge_by_id(tables: &[SurveyTable], base: usize) -> Result<SurveyTable, TableError> {
    assert!(base < tables.len(), "base index out of range");
    let base_table = &tables[base];
    let base_cycle = base_table.cycle().unwrap_or_default().to_string();
    for t in tables {
        let c = t.cycle().unwrap_or_default();
        if c != base_cycle {
            return Err(TableError::CycleMismatch(base_cycle.clone(), c.to_string()));
        }
    }

    let mut merged = base_table.clone();
    let mut seen: HashMap<&str, ()> = base_table.column_names().map(|n| (n, ())).collect();
    let base_ids = base_table.row_ids();

    for (ti, t) in tables.iter().enumerate() {
        if ti == base {
            continue;
        }
        for name in t.column_names() {
            if seen.contains_key(name) {
                return Err(TableError::ColumnCollision(name.to_string()));
            }
        }
        let mut index: HashMap<i64, usize> = HashMap::with_capacity(t.n_rows());
        for (row, &id) in t.row_ids().iter().enumerate() {
            if index.insert(id, row).is_some() {
                return Err(TableError::DuplicateId(id));
            }
        }
        let lookup: Vec<Option<usize>> = base_ids.iter().map(|id| index.get(id).copied()).collect();
        for (name, col) in t.columns() {
            let joined = join_column(col, &lookup);
            merged.add_column(name, joined)?;
        }
        // seen gets the new names on the next pass via merged's own check,
        // but keep the fast path for intra-call collisions
        let _ = &mut seen;
    }
    Ok(merged)
}

fn join_column(col: &Column, lookup: &[Option<usize>]) -> Column {
    match col {
        Column::Numeric { values, missing } => {
            let mut v = Vec::with_capacity(lookup.len());
            let mut m = Vec::with_capacity(lookup.len());
            for slot in lookup {
                match *slot {
                    Some(i) if !missing[i] => {
                        v.push(values[i]);
                        m.push(false);
                    }
                    _ => {
                        v.push(0.0);
                        m.push(true);
                    }
                }
            }
            Column::Numeric {
                values: v,
                missing: m,
            }
        }
        Column::Categorical {
            codes,
            levels,
            missing,
        } => {
            let mut c = Vec::with_capacity(lookup.len());
            let mut m = Vec::with_capacity(lookup.len());
            for slot in lookup {
                match *slot {
                    Some(i) if !missing[i] => {
                        c.push(codes[i]);
                        m.push(false);
                    }
                    _ => {
                        c.push(0);
                        m.push(true);
                    }
                }
            }
            Column::Categorical {
                codes: c,
                levels: levels.clone(),
                missing: m,
            }
        }
    }
}

/// Row-wise concatenation of per-cycle tables restricted to their common
/// variable subset, after applying per-cycle renames.
///
/// `harmonization` maps cycle label -> (source name -> unified name).
pub fn stack_cycles(
    tables: &[SurveyTable],
    harmonization: &HashMap<String, HashMap<String, String>>,
) -> Result<SurveyTable, TableError> {
    assert!(!tables.is_empty(), "no tables to stack");

    let renamed: Vec<SurveyTable> = tables
        .iter()
        .map(|t| {
            let cycle = t.cycle().unwrap_or_default();
            match harmonization.get(cycle) {
                Some(renames) => rename_columns(t, renames),
                None => t.clone(),
            }
        })
        .collect();

    // Common subset, in first-table column order.
    let mut common: Vec<String> = Vec::new();
    'outer: for name in renamed[0].column_names() {
        let first_kind = renamed[0].column(name).unwrap().kind_name();
        for t in &renamed[1..] {
            match t.column(name) {
                None => continue 'outer,
                Some(c) if c.kind_name() != first_kind => {
                    return Err(TableError::UnharmonizableVariable {
                        name: name.to_string(),
                        left: first_kind,
                        right: c.kind_name(),
                    });
                }
                Some(_) => {}
            }
        }
        common.push(name.to_string());
    }
    if common.is_empty() {
        return Err(TableError::NoCommonVariables);
    }

    let mut row_ids = Vec::new();
    let mut cycle_labels: Vec<String> = Vec::new();
    let mut row_cycles = Vec::new();
    let mut columns: IndexMap<String, Column> = IndexMap::new();
    let mut weights: Option<Vec<f64>> = None;
    let any_weights = renamed.iter().any(|t| t.weights().is_some());

    for t in &renamed {
        row_ids.extend_from_slice(t.row_ids());
        for row in 0..t.n_rows() {
            let label = t.cycle_of_row(row);
            let idx = match cycle_labels.iter().position(|l| l == label) {
                Some(i) => i,
                None => {
                    cycle_labels.push(label.to_string());
                    cycle_labels.len() - 1
                }
            };
            row_cycles.push(idx as u16);
        }
        if any_weights {
            let w = weights.get_or_insert_with(Vec::new);
            match t.weights() {
                Some(tw) => w.extend_from_slice(tw),
                None => w.extend(std::iter::repeat(1.0).take(t.n_rows())),
            }
        }
        for name in &common {
            let col = t.column(name).unwrap();
            match columns.get_mut(name) {
                Some(acc) => {
                    acc.append(col);
                }
                None => {
                    columns.insert(name.clone(), col.clone());
                }
            }
        }
    }

    Ok(SurveyTable::from_parts(
        row_ids,
        cycle_labels,
        row_cycles,
        columns,
        weights,
        renamed.iter().any(|t| t.synthetic_ids),
    ))
}

fn rename_columns(table: &SurveyTable, renames: &HashMap<String, String>) -> SurveyTable {
    let columns: IndexMap<String, Column> = table
        .columns()
        .iter()
        .map(|(name, col)| {
            let new_name = renames.get(name).cloned().unwrap_or_else(|| name.clone());
            (new_name, col.clone())
        })
        .collect();
    SurveyTable::from_parts(
        table.row_ids().to_vec(),
        table.cycle_labels().to_vec(),
        table.row_cycles().to_vec(),
        columns,
        table.weights().map(|w| w.to_vec()),
        table.synthetic_ids,
    )
}

/// Adds the binary HIGH_UTIL column: 1 iff the utilization count exceeds the
/// threshold, missing where the count is missing.
pub fn derive_outcome(table: &SurveyTable, spec: &OutcomeSpec) -> Result<SurveyTable, TableError> {
    let source = table.require_column(&spec.source_variable)?;
    let (values, missing) = match source {
        Column::Numeric { values, missing } => {
            let out: Vec<f64> = values
                .iter()
                .map(|&v| if v > spec.threshold as f64 { 1.0 } else { 0.0 })
                .collect();
            (out, missing.clone())
        }
        Column::Categorical { .. } => {
            return Err(TableError::KindMismatch {
                variable: spec.source_variable.clone(),
                expected: "numeric",
                found: "categorical",
            });
        }
    };
    let mut out = table.clone();
    let col = Column::numeric(values, missing);
    if out.has_column(OUTCOME_COLUMN) {
        out.replace_column(OUTCOME_COLUMN, col)?;
    } else {
        out.add_column(OUTCOME_COLUMN, col)?;
    }
    Ok(out)
}

/// Clinical subgroups used for the per-category risk tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subgroup {
    Diabetes,
    Obesity,
    Cardiovascular,
}

impl std::str::FromStr for Subgroup {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "diabetes" => Ok(Subgroup::Diabetes),
            "obesity" => Ok(Subgroup::Obesity),
            "cardiovascular" => Ok(Subgroup::Cardiovascular),
            other => Err(format!("unknown subgroup {other:?}")),
        }
    }
}

/// Variable names and thresholds defining the subgroups. Defaults follow the
/// questionnaire self-report reading; override for differently named extracts.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SubgroupRules {
    pub bmi_variable: String,
    pub bmi_threshold: f64,
    pub diabetes_variable: String,
    pub heart_attack_variable: String,
    pub chd_variable: String,
    pub yes_level: String,
}

impl Default for SubgroupRules {
    fn default() -> Self {
        SubgroupRules {
            bmi_variable: "BMI".to_string(),
            bmi_threshold: 30.0,
            diabetes_variable: "DIQ010".to_string(),
            heart_attack_variable: "MCQ160E".to_string(),
            chd_variable: "MCQ160C".to_string(),
            yes_level: "Yes".to_string(),
        }
    }
}

pub fn filter_subgroup(table: &SurveyTable, group: Subgroup) -> Result<SurveyTable, TableError> {
    filter_subgroup_with(table, group, &SubgroupRules::default())
}

/// Rows belonging to the clinical subgroup; rows whose defining variables are
/// missing (or leave the predicate undetermined) are excluded.
pub fn filter_subgroup_with(
    table: &SurveyTable,
    group: Subgroup,
    rules: &SubgroupRules,
) -> Result<SurveyTable, TableError> {
    let keep: Vec<usize> = match group {
        Subgroup::Obesity => {
            let bmi = table.require_column(&rules.bmi_variable)?;
            (0..table.n_rows())
                .filter(|&i| bmi.numeric_at(i).is_some_and(|v| v > rules.bmi_threshold))
                .collect()
        }
        Subgroup::Diabetes => {
            let ind = table.require_column(&rules.diabetes_variable)?;
            (0..table.n_rows())
                .filter(|&i| ind.level_at(i) == Some(rules.yes_level.as_str()))
                .collect()
        }
        Subgroup::Cardiovascular => {
            let ha = table.column(&rules.heart_attack_variable);
            let chd = table.column(&rules.chd_variable);
            if ha.is_none() && chd.is_none() {
                return Err(TableError::MissingVariable(
                    rules.heart_attack_variable.clone(),
                ));
            }
            (0..table.n_rows())
                .filter(|&i| {
                    let yes = |c: Option<&Column>| {
                        c.is_some_and(|c| c.level_at(i) == Some(rules.yes_level.as_str()))
                    };
                    yes(ha) || yes(chd)
                })
                .collect()
        }
    };
    Ok(table.take_rows(&keep))
}
