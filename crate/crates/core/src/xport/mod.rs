//! SAS version 5 transport (XPORT) ingestion: card-image parsing, IBM hex
//! float decoding, and conversion of raw members into survey tables.

mod ibm;
mod read;
mod write;

pub use ibm::{decode_ibm_double, encode_ibm_double, missing_bytes, EncodeOutcome, IbmValue};
pub use read::{parse_xport, parse_xport_bytes};
pub use write::write_xport;

use crate::table::{Column, SurveyTable, TableError};

/// Storage class of a transport variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariableKind {
    Numeric,
    Character,
}

/// One variable as declared by a member's descriptor block.
#[derive(Debug, Clone)]
pub struct VariableDescriptor {
    pub name: String,
    pub label: String,
    pub kind: VariableKind,
    /// Storage bytes per observation.
    pub length: usize,
    /// Byte offset within an observation record.
    pub position: usize,
}

/// One dataset of a transport file: descriptors plus raw observation records.
#[derive(Debug, Clone)]
pub struct RawMember {
    pub name: String,
    pub variables: Vec<VariableDescriptor>,
    pub observations: Vec<Vec<u8>>,
}

#[derive(Debug, thiserror::Error)]
pub enum XportError {
    #[error("malformed transport header: {0}")]
    MalformedHeader(String),
    #[error("truncated transport file: {0}")]
    TruncatedFile(String),
    #[error("inconsistent variable descriptors: {0}")]
    InconsistentNamestr(String),
    #[error("name {0:?} is not writable as a transport name")]
    UnrepresentableName(String),
    #[error("value not representable in transport encoding: {0}")]
    UnrepresentableValue(String),
    #[error("invalid respondent id: {0}")]
    InvalidId(String),
    #[error("duplicate respondent id {0}")]
    DuplicateId(i64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

const ID_COLUMN: &str = "SEQN";

/// Converts one raw member into a survey table tagged with a cycle label.
/// A numeric SEQN variable becomes the row ids; without one, rows get
/// synthetic ids 1..=n and the table is flagged accordingly.
pub fn to_table(member: &RawMember, cycle: &str) -> Result<SurveyTable, XportError> {
    let n = member.observations.len();
    let mut id_values: Option<Vec<i64>> = None;
    let mut columns: Vec<(String, Column)> = Vec::new();

    for var in &member.variables {
        let cells: Vec<&[u8]> = member
            .observations
            .iter()
            .map(|rec| &rec[var.position..var.position + var.length])
            .collect();
        match var.kind {
            VariableKind::Numeric => {
                let mut values = vec![0.0f64; n];
                let mut missing = vec![false; n];
                for (row, cell) in cells.iter().enumerate() {
                    match decode_ibm_double(cell) {
                        IbmValue::Value(v) => values[row] = v,
                        IbmValue::Missing(_) => missing[row] = true,
                    }
                }
                if var.name == ID_COLUMN {
                    let mut ids = Vec::with_capacity(n);
                    for row in 0..n {
                        if missing[row] {
                            return Err(XportError::InvalidId(format!(
                                "row {row} has a missing {ID_COLUMN}"
                            )));
                        }
                        let v = values[row];
                        if v.fract() != 0.0 || v.abs() >= 9e15 {
                            return Err(XportError::InvalidId(format!(
                                "row {row} has non-integer {ID_COLUMN} {v}"
                            )));
                        }
                        ids.push(v as i64);
                    }
                    id_values = Some(ids);
                } else {
                    columns.push((var.name.clone(), Column::numeric(values, missing)));
                }
            }
            VariableKind::Character => {
                let texts: Vec<Option<String>> = cells
                    .iter()
                    .map(|cell| {
                        let text = String::from_utf8_lossy(cell).trim().to_string();
                        if text.is_empty() {
                            None
                        } else {
                            Some(text)
                        }
                    })
                    .collect();
                columns.push((var.name.clone(), Column::categorical_from_strings(texts)));
            }
        }
    }

    let (ids, synthetic) = match id_values {
        Some(ids) => {
            let mut seen = std::collections::HashSet::new();
            for &id in &ids {
                if !seen.insert(id) {
                    return Err(XportError::DuplicateId(id));
                }
            }
            (ids, false)
        }
        None => ((1..=n as i64).collect(), true),
    };

    let mut table = SurveyTable::new(cycle, ids);
    table.synthetic_ids = synthetic;
    for (name, column) in columns {
        table.add_column(&name, column).map_err(|e| match e {
            TableError::ColumnCollision(name) => XportError::InconsistentNamestr(format!(
                "duplicate variable name {name}"
            )),
            other => XportError::InconsistentNamestr(other.to_string()),
        })?;
    }
    Ok(table)
}
