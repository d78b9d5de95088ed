use super::{Column, SurveyTable, TableError};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

/// On-disk table format version. Bump on any layout change.
pub const TABLE_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TableDocument {
    format: String,
    version: u32,
    table: SurveyTable,
}

/// Writes the self-describing column-oriented table file.
pub fn write_table_file(table: &SurveyTable, path: &Path) -> Result<(), TableError> {
    let doc = TableDocument {
        format: "hutil-table".to_string(),
        version: TABLE_FORMAT_VERSION,
        table: table.clone(),
    };
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, &doc)
        .map_err(|e| TableError::Format(format!("serialize: {e}")))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_table_file(path: &Path) -> Result<SurveyTable, TableError> {
    let file = File::open(path)?;
    let doc: TableDocument = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| TableError::Format(format!("parse {}: {e}", path.display())))?;
    if doc.format != "hutil-table" {
        return Err(TableError::Format(format!(
            "unexpected format tag {:?}",
            doc.format
        )));
    }
    if doc.version > TABLE_FORMAT_VERSION {
        return Err(TableError::Format(format!(
            "table format version {} is newer than supported {}",
            doc.version, TABLE_FORMAT_VERSION
        )));
    }
    Ok(doc.table)
}

/// Reads a CSV file with a header row. The first column is used as SEQN when
/// named so (case-insensitive); otherwise sequential ids are synthesized and
/// the table is flagged. Empty cells are missing. Columns where every
/// non-missing cell parses as a number become numeric.
pub fn read_csv(path: &Path, cycle: &str) -> Result<SurveyTable, TableError> {
    let file = File::open(path)?;
    read_csv_from(file, cycle)
}

pub fn read_csv_from<R: Read>(reader: R, cycle: &str) -> Result<SurveyTable, TableError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| TableError::Format(format!("csv header: {e}")))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    if headers.is_empty() {
        return Err(TableError::Format("csv has no columns".to_string()));
    }
    let seqn_first = headers[0].eq_ignore_ascii_case("SEQN");

    let mut cells: Vec<Vec<Option<String>>> = vec![Vec::new(); headers.len()];
    for record in rdr.records() {
        let record = record.map_err(|e| TableError::Format(format!("csv row: {e}")))?;
        for (i, field) in record.iter().enumerate() {
            let trimmed = field.trim();
            cells[i].push(if trimmed.is_empty() {
                None
            } else {
                Some(trimmed.to_string())
            });
        }
    }
    let n = cells[0].len();

    let (row_ids, synthetic, data_start) = if seqn_first {
        let mut ids = Vec::with_capacity(n);
        let mut seen = std::collections::HashSet::new();
        for (row, v) in cells[0].iter().enumerate() {
            let id = match v {
                Some(s) => s
                    .parse::<f64>()
                    .map_err(|_| TableError::Format(format!("row {row}: bad SEQN {s:?}")))?
                    as i64,
                None => return Err(TableError::Format(format!("row {row}: missing SEQN"))),
            };
            if !seen.insert(id) {
                return Err(TableError::DuplicateId(id));
            }
            ids.push(id);
        }
        (ids, false, 1)
    } else {
        ((1..=n as i64).collect(), true, 0)
    };

    let mut table = SurveyTable::new(cycle, row_ids);
    table.synthetic_ids = synthetic;
    for (name, col_cells) in headers.iter().zip(&cells).skip(data_start) {
        let numeric = col_cells
            .iter()
            .flatten()
            .all(|s| s.parse::<f64>().is_ok())
            && col_cells.iter().any(|c| c.is_some());
        let column = if numeric {
            Column::numeric_from_options(
                col_cells
                    .iter()
                    .map(|c| c.as_ref().map(|s| s.parse::<f64>().unwrap()))
                    .collect(),
            )
        } else {
            Column::categorical_from_strings(col_cells.clone())
        };
        table.add_column(name, column)?;
    }
    Ok(table)
}

/// Writes the table as CSV (SEQN first, then data columns; missing = empty).
/// Cycle tags and weights are not representable in this secondary format.
pub fn write_csv(table: &SurveyTable, path: &Path) -> Result<(), TableError> {
    let file = File::create(path)?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let names: Vec<&str> = table.column_names().collect();
    let mut header = vec!["SEQN"];
    header.extend(&names);
    w.write_record(&header)
        .map_err(|e| TableError::Format(format!("csv write: {e}")))?;
    for row in 0..table.n_rows() {
        let mut record = vec![table.row_ids()[row].to_string()];
        for name in &names {
            let col = table.column(name).unwrap();
            record.push(match col {
                Column::Numeric { .. } => col
                    .numeric_at(row)
                    .map(|v| format!("{v}"))
                    .unwrap_or_default(),
                Column::Categorical { .. } => {
                    col.level_at(row).unwrap_or_default().to_string()
                }
            });
        }
        w.write_record(&record)
            .map_err(|e| TableError::Format(format!("csv write: {e}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a recode document (TOML) into recode specs.
pub fn read_recode_file(path: &Path) -> Result<super::RecodeFile, TableError> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| TableError::Format(format!("recode file: {e}")))
}
