//! Data-stage and analysis subcommands. Each reads declared inputs, writes
//! declared outputs, and prints a one-line summary.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use hutil_core::glm::{build_design, extract_binary, fit_logistic, FitOptions, ModelFormula};
use hutil_core::impute::{apply_plan, build_plan, missingness_profile};
use hutil_core::pipeline::{
    file_sha256, read_pipeline_config, run_pipeline, split_cycles, AnalysisConfig, InputConfig,
    OutputConfig, PipelineConfig, PrepareConfig,
};
use hutil_core::risk::{
    admissions_histogram, build_risk_table, default_admission_bands, emit_report,
    generate_synthetic, read_synthetic_spec, socio_model, trend_matrix, ReportBundle, ReportMeta,
};
use hutil_core::select::{read_classes_file, select_model};
use hutil_core::table::{
    apply_recodes, derive_outcome, filter_subgroup, merge_by_id, read_csv, read_recode_file,
    read_table_file, stack_cycles, write_table_file, OutcomeSpec, Subgroup, SurveyTable,
    TableError, OUTCOME_COLUMN,
};
use hutil_core::xport::{parse_xport_bytes, to_table};
use serde::Serialize;

use crate::error::CliError;
use crate::report::{fit_report, print_coefficients};

pub fn read_table(path: &Path) -> Result<SurveyTable, CliError> {
    match read_table_file(path) {
        Err(TableError::Io(e)) => Err(CliError::io(path, e)),
        other => Ok(other?),
    }
}

pub fn write_table(path: &Path, table: &SurveyTable) -> Result<(), CliError> {
    match write_table_file(table, path) {
        Err(TableError::Io(e)) => Err(CliError::io(path, e)),
        other => Ok(other?),
    }
}

pub fn read_to_string(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn read_formula(path: &Path) -> Result<ModelFormula, CliError> {
    let text = read_to_string(path)?;
    toml::from_str(&text)
        .map_err(|e| CliError::Config(format!("formula {}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Config(format!("cannot serialize {}: {e}", path.display())))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn summarize(path: &Path, table: &SurveyTable) {
    println!(
        "wrote {} ({} rows, {} columns)",
        path.display(),
        table.n_rows(),
        table.column_names().count(),
    );
}

pub fn ingest(input: &Path, cycle: &str, out: &Path) -> Result<(), CliError> {
    let extension = input
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    let table = match extension.as_str() {
        "xpt" => {
            let bytes = std::fs::read(input).map_err(|e| CliError::io(input, e))?;
            let members = parse_xport_bytes(&bytes)?;
            let Some(first) = members.first() else {
                return Err(CliError::Config(format!(
                    "{}: transport file has no members",
                    input.display()
                )));
            };
            if members.len() > 1 {
                eprintln!(
                    "note: {} has {} members, ingesting {:?}",
                    input.display(),
                    members.len(),
                    first.name
                );
            }
            to_table(first, cycle)?
        }
        "csv" => match read_csv(input, cycle) {
            Err(TableError::Io(e)) => return Err(CliError::io(input, e)),
            other => other?,
        },
        other => {
            return Err(CliError::Config(format!(
                "{}: cannot infer format from extension {other:?} (expected .xpt or .csv)",
                input.display()
            )))
        }
    };
    write_table(out, &table)?;
    summarize(out, &table);
    Ok(())
}

pub fn merge(inputs: &[PathBuf], base: usize, out: &Path) -> Result<(), CliError> {
    if base >= inputs.len() {
        return Err(CliError::Config(format!(
            "base index {base} is out of range for {} inputs",
            inputs.len()
        )));
    }
    let tables = inputs
        .iter()
        .map(|p| read_table(p))
        .collect::<Result<Vec<_>, _>>()?;
    let merged = merge_by_id(&tables, base)?;
    write_table(out, &merged)?;
    summarize(out, &merged);
    Ok(())
}

pub fn stack(inputs: &[PathBuf], harmonize: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let tables = inputs
        .iter()
        .map(|p| read_table(p))
        .collect::<Result<Vec<_>, _>>()?;
    let renames: HashMap<String, HashMap<String, String>> = match harmonize {
        Some(path) => toml::from_str(&read_to_string(path)?)
            .map_err(|e| CliError::Config(format!("harmonization {}: {e}", path.display())))?,
        None => HashMap::new(),
    };
    let stacked = stack_cycles(&tables, &renames)?;
    write_table(out, &stacked)?;
    summarize(out, &stacked);
    Ok(())
}

pub fn recode(spec: &Path, input: &Path, out: &Path) -> Result<(), CliError> {
    let table = read_table(input)?;
    let specs = match read_recode_file(spec) {
        Err(TableError::Io(e)) => return Err(CliError::io(spec, e)),
        other => other?,
    };
    let recoded = apply_recodes(&table, &specs)?;
    write_table(out, &recoded)?;
    summarize(out, &recoded);
    Ok(())
}

pub fn derive_outcome_cmd(
    input: &Path,
    source: &str,
    threshold: u32,
    out: &Path,
) -> Result<(), CliError> {
    let table = read_table(input)?;
    let derived = derive_outcome(&table, &OutcomeSpec::new(source, threshold))?;
    write_table(out, &derived)?;
    summarize(out, &derived);
    Ok(())
}

pub fn subgroup(input: &Path, group: Subgroup, out: &Path) -> Result<(), CliError> {
    let table = read_table(input)?;
    let filtered = filter_subgroup(&table, group)?;
    write_table(out, &filtered)?;
    summarize(out, &filtered);
    Ok(())
}

pub fn impute(
    input: &Path,
    out: &Path,
    threshold: f64,
    donors: usize,
    seed: u64,
    report: Option<&Path>,
) -> Result<(), CliError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(CliError::Config(format!(
            "impute threshold {threshold} must be in (0, 1)"
        )));
    }
    if donors == 0 {
        return Err(CliError::Config("donor count must be at least 1".into()));
    }
    let table = read_table(input)?;
    let profile = missingness_profile(&table);
    let mut plan = build_plan(&profile, threshold, seed);
    plan.k = donors;
    let (imputed, imputation) = apply_plan(&table, &plan)?;
    write_table(out, &imputed)?;
    if let Some(report_path) = report {
        write_json(report_path, &imputation)?;
    }
    summarize(out, &imputed);
    Ok(())
}

pub fn fit(
    input: &Path,
    formula_path: &Path,
    out: &Path,
    report: Option<&Path>,
) -> Result<(), CliError> {
    let table = read_table(input)?;
    let formula = read_formula(formula_path)?;
    let design = build_design(&table, &formula)?;
    let y = extract_binary(&table, &formula.outcome, &design.kept_rows)?;
    let model = fit_logistic(&design, &y, None, &FitOptions::default())?;
    write_json(out, &model)?;
    let full = fit_report(&table, &model)?;
    if let Some(report_path) = report {
        write_json(report_path, &full)?;
    }
    print_coefficients(&full.coefficients);
    println!(
        "n = {}, log-likelihood = {:.4}, converged = {}",
        model.n_used, model.log_likelihood, model.converged
    );
    write_note(out);
    Ok(())
}

fn write_note(path: &Path) {
    println!("wrote {}", path.display());
}

pub fn stepwise(
    input: &Path,
    classes_path: &Path,
    alpha: f64,
    out: &Path,
    trace_path: Option<&Path>,
) -> Result<(), CliError> {
    let table = read_table(input)?;
    let classes = read_classes_file(classes_path)?;
    let (model, trace) = select_model(&table, OUTCOME_COLUMN, &classes, alpha)?;
    write_json(out, &model)?;
    if let Some(trace_out) = trace_path {
        write_json(trace_out, &trace)?;
    }
    let retained: Vec<&str> = model.formula.terms.iter().map(|t| t.variable()).collect();
    println!(
        "retained {} terms: {}",
        retained.len(),
        if retained.is_empty() {
            "(intercept only)".to_string()
        } else {
            retained.join(", ")
        }
    );
    write_note(out);
    Ok(())
}

fn meta_for(input: &Path, seed: Option<u64>) -> Result<ReportMeta, CliError> {
    let mut meta = ReportMeta::new(seed);
    let digest = file_sha256(input)?;
    let name = input
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| input.display().to_string());
    meta.inputs.push((name, digest));
    Ok(meta)
}

fn emit(dir: &Path, bundle: &ReportBundle<'_>, meta: &ReportMeta) -> Result<(), CliError> {
    for path in emit_report(dir, bundle, meta)? {
        write_note(&path);
    }
    Ok(())
}

pub fn rr_table(
    input: &Path,
    formula_path: &Path,
    bootstrap: usize,
    seed: u64,
    out: &Path,
) -> Result<(), CliError> {
    let table = read_table(input)?;
    let formula = read_formula(formula_path)?;
    let risk = build_risk_table(&table, &formula, None, bootstrap, seed)?;
    let meta = meta_for(input, Some(seed))?;
    emit(
        out,
        &ReportBundle {
            risk: Some(&risk),
            trend: None,
            histogram: None,
            socio: None,
        },
        &meta,
    )
}

pub fn trend(input: &Path, classes_path: &Path, alpha: f64, out: &Path) -> Result<(), CliError> {
    let table = read_table(input)?;
    let classes = read_classes_file(classes_path)?;
    let cycles = split_cycles(&table);
    let matrix = trend_matrix(&cycles, &classes, alpha)?;
    let meta = meta_for(input, None)?;
    emit(
        out,
        &ReportBundle {
            risk: None,
            trend: Some(&matrix),
            histogram: None,
            socio: None,
        },
        &meta,
    )
}

pub fn histogram(input: &Path, variable: &str, out: &Path) -> Result<(), CliError> {
    let table = read_table(input)?;
    let cycles = split_cycles(&table);
    let bands = default_admission_bands();
    let hist = admissions_histogram(&cycles, variable, &bands)?;
    let meta = meta_for(input, None)?;
    emit(
        out,
        &ReportBundle {
            risk: None,
            trend: None,
            histogram: Some(&hist),
            socio: None,
        },
        &meta,
    )
}

pub fn socio(
    input: &Path,
    variables: &[String],
    bootstrap: usize,
    seed: u64,
    out: &Path,
) -> Result<(), CliError> {
    if variables.is_empty() {
        return Err(CliError::Config(
            "socio needs at least one variable (--vars)".into(),
        ));
    }
    let table = read_table(input)?;
    let model = socio_model(&table, variables, bootstrap, seed)?;
    let meta = meta_for(input, Some(seed))?;
    emit(
        out,
        &ReportBundle {
            risk: None,
            trend: None,
            histogram: None,
            socio: Some(&model),
        },
        &meta,
    )
}

pub fn synth(spec_path: &Path, out: &Path) -> Result<(), CliError> {
    let spec = match read_synthetic_spec(spec_path) {
        Err(hutil_core::risk::RiskError::Io(e)) => return Err(CliError::io(spec_path, e)),
        other => other?,
    };
    let table = generate_synthetic(&spec)?;
    write_table(out, &table)?;
    summarize(out, &table);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn pipeline(
    config: Option<&Path>,
    inputs: &[PathBuf],
    classes: Option<&Path>,
    out: Option<&Path>,
    seed: u64,
    socio_vars: &[String],
    bootstrap: usize,
) -> Result<(), CliError> {
    let cfg = match config {
        Some(path) => read_pipeline_config(path)?,
        None => {
            let classes = classes
                .ok_or_else(|| CliError::Config("pipeline needs --classes without --config".into()))?;
            let out = out
                .ok_or_else(|| CliError::Config("pipeline needs --out without --config".into()))?;
            PipelineConfig {
                seed,
                input: InputConfig {
                    manifest: None,
                    tables: inputs.to_vec(),
                },
                prepare: PrepareConfig::default(),
                analysis: AnalysisConfig {
                    classes: classes.to_path_buf(),
                    alpha: 0.05,
                    socio: socio_vars.to_vec(),
                    admissions_variable: "HUQ050".to_string(),
                    bootstrap,
                },
                output: OutputConfig {
                    dir: out.to_path_buf(),
                },
            }
        }
    };
    let outcome = run_pipeline(&cfg)?;
    for path in &outcome.written {
        write_note(path);
    }
    println!(
        "pipeline complete: {} rows, {} model terms, {} report files",
        outcome.n_rows,
        outcome.n_model_terms,
        outcome.written.len()
    );
    Ok(())
}
