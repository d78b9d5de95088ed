use super::{Column, SurveyTable, TableError};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

/// One band of a numeric-to-categorical recode. A band captures every value
/// `v <= upper` (or `v < upper` when `include_upper` is false) not captured by
/// an earlier band; a band without `upper` is open-ended.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Band {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
    #[serde(default = "default_true")]
    pub include_upper: bool,
}

fn default_true() -> bool {
    true
}

/// Recode rule for one variable: numeric banding or categorical level mapping.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RecodeSpec {
    Bands {
        bands: Vec<Band>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        missing_target: Option<String>,
    },
    Levels {
        /// Source level -> target level, in document order.
        map: IndexMap<String, String>,
        /// Target for observed levels absent from `map`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        default: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        missing_target: Option<String>,
    },
}

/// Human-editable recode document: variable name -> recode rule.
pub type RecodeFile = IndexMap<String, RecodeSpec>;

/// Applies each recode in order, producing categorical columns whose level
/// dictionaries list the target levels in spec order (bands) or first-use
/// order (level maps), so downstream reference levels are deterministic.
pub fn apply_recodes(table: &SurveyTable, specs: &RecodeFile) -> Result<SurveyTable, TableError> {
    let mut out = table.clone();
    for (variable, spec) in specs {
        let col = out.require_column(variable)?.clone();
        let recoded = match spec {
            RecodeSpec::Bands {
                bands,
                missing_target,
            } => recode_bands(variable, &col, bands, missing_target.as_deref())?,
            RecodeSpec::Levels {
                map,
                default,
                missing_target,
            } => recode_levels(
                variable,
                &col,
                map,
                default.as_deref(),
                missing_target.as_deref(),
            )?,
        };
        out.replace_column(variable, recoded)?;
    }
    Ok(out)
}

fn recode_bands(
    variable: &str,
    col: &Column,
    bands: &[Band],
    missing_target: Option<&str>,
) -> Result<Column, TableError> {
    let (values, missing) = match col {
        Column::Numeric { values, missing } => (values, missing),
        Column::Categorical { .. } => {
            return Err(TableError::KindMismatch {
                variable: variable.to_string(),
                expected: "numeric",
                found: "categorical",
            });
        }
    };
    // Seed the dictionary with every band label so unobserved bands still hold
    // their position (reference levels depend on dictionary order).
    let mut levels: Vec<String> = bands.iter().map(|b| b.label.clone()).collect();
    let missing_code = missing_target.map(|t| {
        match levels.iter().position(|l| l == t) {
            Some(i) => i as u32,
            None => {
                levels.push(t.to_string());
                (levels.len() - 1) as u32
            }
        }
    });
    let mut codes = Vec::with_capacity(values.len());
    let mut out_missing = Vec::with_capacity(values.len());
    for (&v, &m) in values.iter().zip(missing) {
        if m {
            match missing_code {
                Some(code) => {
                    codes.push(code);
                    out_missing.push(false);
                }
                None => {
                    codes.push(0);
                    out_missing.push(true);
                }
            }
            continue;
        }
        let idx = bands.iter().position(|b| match b.upper {
            None => true,
            Some(u) if b.include_upper => v <= u,
            Some(u) => v < u,
        });
        match idx {
            Some(i) => {
                codes.push(i as u32);
                out_missing.push(false);
            }
            None => {
                return Err(TableError::UnmappedLevel {
                    variable: variable.to_string(),
                    level: format!("{v}"),
                });
            }
        }
    }
    Ok(Column::categorical(codes, levels, out_missing))
}

fn recode_levels(
    variable: &str,
    col: &Column,
    map: &IndexMap<String, String>,
    default: Option<&str>,
    missing_target: Option<&str>,
) -> Result<Column, TableError> {
    let (src_codes, src_levels, src_missing) = match col {
        Column::Categorical {
            codes,
            levels,
            missing,
        } => (codes, levels, missing),
        Column::Numeric { .. } => {
            return Err(TableError::KindMismatch {
                variable: variable.to_string(),
                expected: "categorical",
                found: "numeric",
            });
        }
    };
    let mut levels: Vec<String> = Vec::new();
    let intern = |label: &str, levels: &mut Vec<String>| -> u32 {
        match levels.iter().position(|l| l == label) {
            Some(i) => i as u32,
            None => {
                levels.push(label.to_string());
                (levels.len() - 1) as u32
            }
        }
    };
    // Target dictionary in map order, then default, then missing target.
    for target in map.values() {
        intern(target, &mut levels);
    }
    if let Some(d) = default {
        intern(d, &mut levels);
    }
    let missing_code = missing_target.map(|t| intern(t, &mut levels));

    // Per-source-level translation, validated over observed levels only.
    let mut translation: Vec<Option<u32>> = vec![None; src_levels.len()];
    for (i, src) in src_levels.iter().enumerate() {
        if let Some(target) = map.get(src) {
            translation[i] = Some(intern(target, &mut levels));
        } else if let Some(d) = default {
            translation[i] = Some(intern(d, &mut levels));
        }
    }

    let mut codes = Vec::with_capacity(src_codes.len());
    let mut out_missing = Vec::with_capacity(src_codes.len());
    for (&c, &m) in src_codes.iter().zip(src_missing) {
        if m {
            match missing_code {
                Some(code) => {
                    codes.push(code);
                    out_missing.push(false);
                }
                None => {
                    codes.push(0);
                    out_missing.push(true);
                }
            }
            continue;
        }
        match translation[c as usize] {
            Some(code) => {
                codes.push(code);
                out_missing.push(false);
            }
            None => {
                return Err(TableError::UnmappedLevel {
                    variable: variable.to_string(),
                    level: src_levels[c as usize].clone(),
                });
            }
        }
    }
    Ok(Column::categorical(codes, levels, out_missing))
}
