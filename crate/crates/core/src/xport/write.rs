//! Version 5 transport writer. Produces byte-deterministic files (fixed
//! creation timestamp) for fixtures and round-trip checks.

use super::ibm::{encode_ibm_double, missing_bytes, EncodeOutcome};
use super::read::CARD;
use super::XportError;
use crate::table::{Column, SurveyTable};

const STAMP: &str = "01JAN16:00:00:00";
const ID_COLUMN: &str = "SEQN";

fn push_card(out: &mut Vec<u8>, text: &str) {
    debug_assert!(text.len() <= CARD);
    out.extend_from_slice(text.as_bytes());
    out.extend(std::iter::repeat_n(b' ', CARD - text.len()));
}

fn pad_to_card(out: &mut Vec<u8>) {
    let over = out.len() % CARD;
    if over != 0 {
        out.extend(std::iter::repeat_n(b' ', CARD - over));
    }
}

fn field(text: &str, width: usize) -> String {
    format!("{text:<width$}")
}

fn check_name(name: &str) -> Result<(), XportError> {
    let ok = !name.is_empty()
        && name.len() <= 8
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
    if ok {
        Ok(())
    } else {
        Err(XportError::UnrepresentableName(name.to_string()))
    }
}

struct OutVar {
    name: String,
    numeric: bool,
    length: usize,
}

fn namestr_entry(var: &OutVar, varnum: u16, position: u32) -> [u8; 140] {
    let mut e = [0u8; 140];
    let ntype: u16 = if var.numeric { 1 } else { 2 };
    e[0..2].copy_from_slice(&ntype.to_be_bytes());
    e[4..6].copy_from_slice(&(var.length as u16).to_be_bytes());
    e[6..8].copy_from_slice(&varnum.to_be_bytes());
    let name = field(&var.name, 8);
    e[8..16].copy_from_slice(name.as_bytes());
    let label = field(&var.name, 40);
    e[16..56].copy_from_slice(label.as_bytes());
    e[56..64].copy_from_slice(b"        ");
    e[72..80].copy_from_slice(b"        ");
    e[84..88].copy_from_slice(&position.to_be_bytes());
    for b in &mut e[88..140] {
        *b = b' ';
    }
    e
}

/// Serializes one table as a single-member version 5 transport file. Row ids
/// are emitted as a leading numeric SEQN variable unless they are synthetic.
pub fn write_xport(table: &SurveyTable, member_name: &str) -> Result<Vec<u8>, XportError> {
    check_name(member_name)?;

    let mut vars: Vec<OutVar> = Vec::new();
    if !table.synthetic_ids && !table.has_column(ID_COLUMN) {
        vars.push(OutVar {
            name: ID_COLUMN.to_string(),
            numeric: true,
            length: 8,
        });
    }
    for (name, column) in table.columns() {
        check_name(name)?;
        match column {
            Column::Numeric { .. } => vars.push(OutVar {
                name: name.clone(),
                numeric: true,
                length: 8,
            }),
            Column::Categorical { levels, .. } => {
                let width = levels.iter().map(|l| l.len()).max().unwrap_or(0).max(1);
                if width > 200 {
                    return Err(XportError::UnrepresentableValue(format!(
                        "level of column {name} exceeds 200 bytes"
                    )));
                }
                vars.push(OutVar {
                    name: name.clone(),
                    numeric: false,
                    length: width,
                });
            }
        }
    }
    if vars.is_empty() {
        return Err(XportError::UnrepresentableValue(
            "table has no columns to write".to_string(),
        ));
    }

    let mut out = Vec::new();
    push_card(
        &mut out,
        "HEADER RECORD*******LIBRARY HEADER RECORD!!!!!!!000000000000000000000000000000",
    );
    push_card(
        &mut out,
        &format!(
            "{}{}{}{}{}{}{}",
            field("SAS", 8),
            field("SAS", 8),
            field("SASLIB", 8),
            field("6.06", 8),
            field("bsd4.2", 8),
            " ".repeat(24),
            STAMP
        ),
    );
    push_card(&mut out, STAMP);

    push_card(
        &mut out,
        "HEADER RECORD*******MEMBER  HEADER RECORD!!!!!!!000000000000000001600000000140",
    );
    push_card(
        &mut out,
        "HEADER RECORD*******DSCRPTR HEADER RECORD!!!!!!!000000000000000000000000000000",
    );
    push_card(
        &mut out,
        &format!(
            "{}{}{}{}{}{}{}",
            field("SAS", 8),
            field(member_name, 8),
            field("SASDATA", 8),
            field("6.06", 8),
            field("bsd4.2", 8),
            " ".repeat(24),
            STAMP
        ),
    );
    push_card(&mut out, &format!("{}{}", STAMP, " ".repeat(16)));

    push_card(
        &mut out,
        &format!(
            "HEADER RECORD*******NAMESTR HEADER RECORD!!!!!!!000000{:04}00000000000000000000",
            vars.len()
        ),
    );
    let mut position = 0u32;
    for (i, var) in vars.iter().enumerate() {
        let entry = namestr_entry(var, (i + 1) as u16, position);
        out.extend_from_slice(&entry);
        position += var.length as u32;
    }
    pad_to_card(&mut out);

    push_card(
        &mut out,
        "HEADER RECORD*******OBS     HEADER RECORD!!!!!!!000000000000000000000000000000",
    );

    for row in 0..table.n_rows() {
        for var in &vars {
            if var.name == ID_COLUMN && !table.has_column(ID_COLUMN) {
                let (bytes, outcome) = encode_ibm_double(table.row_ids()[row] as f64);
                debug_assert_eq!(outcome, EncodeOutcome::Exact);
                out.extend_from_slice(&bytes);
                continue;
            }
            match table.column(&var.name).expect("variable from this table") {
                Column::Numeric { values, missing } => {
                    if missing[row] {
                        out.extend_from_slice(&missing_bytes(b'.'));
                    } else {
                        let v = values[row];
                        if !v.is_finite() {
                            return Err(XportError::UnrepresentableValue(format!(
                                "column {} row {row} is not finite",
                                var.name
                            )));
                        }
                        let (bytes, _) = encode_ibm_double(v);
                        out.extend_from_slice(&bytes);
                    }
                }
                Column::Categorical {
                    codes,
                    levels,
                    missing,
                } => {
                    let text = if missing[row] {
                        ""
                    } else {
                        levels[codes[row] as usize].as_str()
                    };
                    out.extend_from_slice(field(text, var.length).as_bytes());
                }
            }
        }
    }
    pad_to_card(&mut out);
    Ok(out)
}
