use serde::{Deserialize, Serialize};

/// A single named column of survey data: numeric values or categorical codes,
/// always with an explicit per-row missing mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Column {
    Numeric {
        values: Vec<f64>,
        missing: Vec<bool>,
    },
    Categorical {
        /// Per-row index into `levels`; only meaningful where `missing` is false.
        codes: Vec<u32>,
        /// Level dictionary in insertion order. Dictionary order is the order
        /// used for reference levels and design-matrix columns downstream.
        levels: Vec<String>,
        missing: Vec<bool>,
    },
}

impl Column {
    pub fn numeric(values: Vec<f64>, missing: Vec<bool>) -> Self {
        assert_eq!(values.len(), missing.len());
        Column::Numeric { values, missing }
    }

    pub fn numeric_from_options(values: Vec<Option<f64>>) -> Self {
        let missing: Vec<bool> = values.iter().map(|v| v.is_none()).collect();
        let values = values.into_iter().map(|v| v.unwrap_or(0.0)).collect();
        Column::Numeric { values, missing }
    }

    /// Builds a categorical column from string values, assigning level codes
    /// in order of first appearance.
    pub fn categorical_from_strings(values: Vec<Option<String>>) -> Self {
        let mut levels: Vec<String> = Vec::new();
        let mut codes = Vec::with_capacity(values.len());
        let mut missing = Vec::with_capacity(values.len());
        for v in values {
            match v {
                Some(s) => {
                    let code = match levels.iter().position(|l| *l == s) {
                        Some(i) => i as u32,
                        None => {
                            levels.push(s);
                            (levels.len() - 1) as u32
                        }
                    };
                    codes.push(code);
                    missing.push(false);
                }
                None => {
                    codes.push(0);
                    missing.push(true);
                }
            }
        }
        Column::Categorical {
            codes,
            levels,
            missing,
        }
    }

    pub fn categorical(codes: Vec<u32>, levels: Vec<String>, missing: Vec<bool>) -> Self {
        assert_eq!(codes.len(), missing.len());
        Column::Categorical {
            codes,
            levels,
            missing,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Column::Numeric { values, .. } => values.len(),
            Column::Categorical { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, Column::Numeric { .. })
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self, Column::Categorical { .. })
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Column::Numeric { .. } => "numeric",
            Column::Categorical { .. } => "categorical",
        }
    }

    pub fn missing_mask(&self) -> &[bool] {
        match self {
            Column::Numeric { missing, .. } => missing,
            Column::Categorical { missing, .. } => missing,
        }
    }

    pub fn is_missing(&self, row: usize) -> bool {
        self.missing_mask()[row]
    }

    pub fn missing_count(&self) -> usize {
        self.missing_mask().iter().filter(|&&m| m).count()
    }

    /// Numeric value at `row`, or None when missing or the column is categorical.
    pub fn numeric_at(&self, row: usize) -> Option<f64> {
        match self {
            Column::Numeric { values, missing } => {
                if missing[row] {
                    None
                } else {
                    Some(values[row])
                }
            }
            Column::Categorical { .. } => None,
        }
    }

    /// Level label at `row` for categorical columns, or None when missing.
    pub fn level_at(&self, row: usize) -> Option<&str> {
        match self {
            Column::Categorical {
                codes,
                levels,
                missing,
            } => {
                if missing[row] {
                    None
                } else {
                    Some(levels[codes[row] as usize].as_str())
                }
            }
            Column::Numeric { .. } => None,
        }
    }

    pub fn levels(&self) -> Option<&[String]> {
        match self {
            Column::Categorical { levels, .. } => Some(levels),
            Column::Numeric { .. } => None,
        }
    }

    /// Filters the column down to the rows listed in `keep`, in order.
    pub fn take_rows(&self, keep: &[usize]) -> Column {
        match self {
            Column::Numeric { values, missing } => Column::Numeric {
                values: keep.iter().map(|&i| values[i]).collect(),
                missing: keep.iter().map(|&i| missing[i]).collect(),
            },
            Column::Categorical {
                codes,
                levels,
                missing,
            } => Column::Categorical {
                codes: keep.iter().map(|&i| codes[i]).collect(),
                levels: levels.clone(),
                missing: keep.iter().map(|&i| missing[i]).collect(),
            },
        }
    }

    /// Appends `other` onto `self`, unifying categorical level dictionaries.
    /// Returns false when the kinds are incompatible.
    pub fn append(&mut self, other: &Column) -> bool {
        match (self, other) {
            (
                Column::Numeric { values, missing },
                Column::Numeric {
                    values: ov,
                    missing: om,
                },
            ) => {
                values.extend_from_slice(ov);
                missing.extend_from_slice(om);
                true
            }
            (
                Column::Categorical {
                    codes,
                    levels,
                    missing,
                },
                Column::Categorical {
                    codes: oc,
                    levels: ol,
                    missing: om,
                },
            ) => {
                let remap: Vec<u32> = ol
                    .iter()
                    .map(|l| match levels.iter().position(|x| x == l) {
                        Some(i) => i as u32,
                        None => {
                            levels.push(l.clone());
                            (levels.len() - 1) as u32
                        }
                    })
                    .collect();
                for (&c, &m) in oc.iter().zip(om) {
                    codes.push(if m { 0 } else { remap[c as usize] });
                    missing.push(m);
                }
                true
            }
            _ => false,
        }
    }
}
