//! End-to-end orchestration. One config file drives ingest through report
//! emission, and the same prepare phase feeds the serving retrain loop.
//!
//! A run has two halves. `prepare` turns raw inputs (a cycle manifest or
//! pre-built table files) into one analysis-ready table: merge within
//! cycle, stack across cycles, recode, derive the outcome, filter the
//! subgroup, impute. `analyze` selects a model and builds every report
//! table. `run_pipeline` chains both and writes the report files.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::impute::{apply_plan, build_plan, missingness_profile, ImputationReport, ImputeError};
use crate::risk::{
    admissions_histogram, build_risk_table, default_admission_bands, emit_report, socio_model,
    trend_matrix, AdmissionsHistogram, ReportBundle, ReportMeta, RiskError, RiskTable, TrendMatrix,
};
use crate::select::{read_classes_file, select_model, SelectError, SelectionTrace};
use crate::table::{
    apply_recodes, derive_outcome, filter_subgroup, merge_by_id, read_csv_from, read_recode_file,
    read_table_file, stack_cycles, OutcomeSpec, Subgroup, SurveyTable, TableError, OUTCOME_COLUMN,
};
use crate::xport::{parse_xport_bytes, to_table, XportError};

/// Default master seed for every seeded stage.
pub const DEFAULT_SEED: u64 = 1999;

/// Component-file roles a manifest entry may carry.
pub const ROLE_NAMES: [&str; 5] = [
    "demographics",
    "dietary",
    "examination",
    "laboratory",
    "questionnaire",
];

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid pipeline config: {0}")]
    Config(String),
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Xport(#[from] XportError),
    #[error(transparent)]
    Impute(#[from] ImputeError),
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// SHA-256 of a file's bytes, lowercase hex.
pub fn file_sha256(path: &Path) -> Result<String, PipelineError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    Ok(hex_digest(&bytes))
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut s = String::with_capacity(64);
    for b in digest {
        use std::fmt::Write as _;
        write!(s, "{b:02x}").unwrap();
    }
    s
}

/// One data file: where it lives, what it hashes to, and which cycle and
/// survey component it belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub checksum: String,
    pub cycle: String,
    pub role: String,
}

impl ManifestEntry {
    /// Builds an entry for an existing file, computing its checksum.
    pub fn for_file(path: &Path, cycle: &str, role: &str) -> Result<Self, PipelineError> {
        Ok(ManifestEntry {
            path: path.to_path_buf(),
            checksum: file_sha256(path)?,
            cycle: cycle.to_string(),
            role: role.to_string(),
        })
    }
}

/// The input inventory the watcher polls and the prepare phase ingests.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleManifest {
    #[serde(default, rename = "entry")]
    pub entries: Vec<ManifestEntry>,
}

impl CycleManifest {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if e.checksum.len() != 64 || !e.checksum.bytes().all(|b| b.is_ascii_hexdigit()) {
                return Err(PipelineError::Manifest(format!(
                    "checksum for {} is not 64 hex digits",
                    e.path.display()
                )));
            }
            if !ROLE_NAMES.contains(&e.role.as_str()) {
                return Err(PipelineError::Manifest(format!(
                    "unknown role {:?} for {} (expected one of {})",
                    e.role,
                    e.path.display(),
                    ROLE_NAMES.join(", ")
                )));
            }
            if !seen.insert((e.cycle.clone(), e.role.clone(), e.path.clone())) {
                return Err(PipelineError::Manifest(format!(
                    "duplicate entry for cycle {:?} role {:?} path {}",
                    e.cycle,
                    e.role,
                    e.path.display()
                )));
            }
        }
        Ok(())
    }

    /// Hash of the (cycle, role, checksum) set. This is the watcher's
    /// change detector, so the file paths themselves do not contribute.
    pub fn content_hash(&self) -> String {
        let mut lines: Vec<String> = self
            .entries
            .iter()
            .map(|e| format!("{}\t{}\t{}", e.cycle, e.role, e.checksum))
            .collect();
        lines.sort();
        hex_digest(lines.join("\n").as_bytes())
    }

    /// Cycle labels in first-appearance order.
    pub fn cycles(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for e in &self.entries {
            if !out.contains(&e.cycle) {
                out.push(e.cycle.clone());
            }
        }
        out
    }
}

/// Reads a manifest and resolves relative entry paths against its parent
/// directory.
pub fn read_manifest_file(path: &Path) -> Result<CycleManifest, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut manifest: CycleManifest =
        toml::from_str(&text).map_err(|e| PipelineError::Manifest(e.to_string()))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    for entry in &mut manifest.entries {
        if entry.path.is_relative() {
            entry.path = base.join(&entry.path);
        }
    }
    manifest.validate()?;
    Ok(manifest)
}

/// Loads one manifest entry as a table, verifying its checksum first.
/// The reader is chosen by extension: `.xpt` transport files, `.csv`
/// files, anything else the native table format.
pub fn load_entry_table(entry: &ManifestEntry) -> Result<SurveyTable, PipelineError> {
    let bytes = std::fs::read(&entry.path).map_err(io_err(&entry.path))?;
    let actual = hex_digest(&bytes);
    if actual != entry.checksum.to_ascii_lowercase() {
        return Err(PipelineError::Manifest(format!(
            "checksum mismatch for {}: manifest {} file {}",
            entry.path.display(),
            entry.checksum,
            actual
        )));
    }
    let ext = entry
        .path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "xpt" => {
            let members = parse_xport_bytes(&bytes)?;
            let member = members.first().ok_or_else(|| {
                PipelineError::Manifest(format!(
                    "{} contains no data members",
                    entry.path.display()
                ))
            })?;
            Ok(to_table(member, &entry.cycle)?)
        }
        "csv" => Ok(read_csv_from(bytes.as_slice(), &entry.cycle)?),
        _ => Ok(read_table_file(&entry.path)?),
    }
}

/// Merges each cycle's component files on the respondent id, then stacks
/// the cycles into one table.
pub fn ingest_manifest(manifest: &CycleManifest) -> Result<SurveyTable, PipelineError> {
    manifest.validate()?;
    if manifest.entries.is_empty() {
        return Err(PipelineError::Manifest("manifest has no entries".into()));
    }
    let mut per_cycle: Vec<SurveyTable> = Vec::new();
    for cycle in manifest.cycles() {
        let tables: Vec<SurveyTable> = manifest
            .entries
            .iter()
            .filter(|e| e.cycle == cycle)
            .map(load_entry_table)
            .collect::<Result<_, _>>()?;
        per_cycle.push(if tables.len() == 1 {
            tables.into_iter().next().unwrap()
        } else {
            merge_by_id(&tables, 0)?
        });
    }
    if per_cycle.len() == 1 {
        Ok(per_cycle.into_iter().next().unwrap())
    } else {
        Ok(stack_cycles(&per_cycle, &Default::default())?)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    /// Cycle manifest of raw component files.
    pub manifest: Option<PathBuf>,
    /// Pre-built table files, one per cycle, stacked in order.
    #[serde(default)]
    pub tables: Vec<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepareConfig {
    pub recodes: Option<PathBuf>,
    pub outcome_variable: String,
    pub outcome_threshold: u32,
    pub subgroup: Option<String>,
    pub impute_threshold: f64,
    pub donors: usize,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        PrepareConfig {
            recodes: None,
            outcome_variable: "HUQ050".to_string(),
            outcome_threshold: 5,
            subgroup: None,
            impute_threshold: 0.05,
            donors: crate::impute::DEFAULT_DONORS,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub classes: PathBuf,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub socio: Vec<String>,
    #[serde(default = "default_admissions_variable")]
    pub admissions_variable: String,
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
}

fn default_alpha() -> f64 {
    0.05
}

fn default_admissions_variable() -> String {
    "HUQ050".to_string()
}

fn default_bootstrap() -> usize {
    200
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub input: InputConfig,
    #[serde(default)]
    pub prepare: PrepareConfig,
    pub analysis: AnalysisConfig,
    pub output: OutputConfig,
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let has_manifest = self.input.manifest.is_some();
        let has_tables = !self.input.tables.is_empty();
        if has_manifest == has_tables {
            return Err(PipelineError::Config(
                "input needs exactly one of `manifest` or `tables`".into(),
            ));
        }
        if !(self.prepare.impute_threshold > 0.0 && self.prepare.impute_threshold < 1.0) {
            return Err(PipelineError::Config(format!(
                "impute_threshold {} outside (0, 1)",
                self.prepare.impute_threshold
            )));
        }
        if self.prepare.donors == 0 {
            return Err(PipelineError::Config("donors must be at least 1".into()));
        }
        if !(self.analysis.alpha > 0.0 && self.analysis.alpha < 1.0) {
            return Err(PipelineError::Config(format!(
                "alpha {} outside (0, 1)",
                self.analysis.alpha
            )));
        }
        Ok(())
    }
}

/// Reads a pipeline config and resolves its relative paths against the
/// config file's parent directory.
pub fn read_pipeline_config(path: &Path) -> Result<PipelineConfig, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut cfg: PipelineConfig =
        toml::from_str(&text).map_err(|e| PipelineError::Config(e.to_string()))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let resolve = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&p);
        }
    };
    if let Some(p) = cfg.input.manifest.as_mut() {
        resolve(p);
    }
    for p in cfg.input.tables.iter_mut() {
        resolve(p);
    }
    if let Some(p) = cfg.prepare.recodes.as_mut() {
        resolve(p);
    }
    resolve(&mut cfg.analysis.classes);
    resolve(&mut cfg.output.dir);
    cfg.validate()?;
    Ok(cfg)
}

/// Output of the prepare phase: an analysis-ready table plus provenance.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub table: SurveyTable,
    pub imputation: ImputationReport,
    /// Only set when the input came from a manifest.
    pub manifest_hash: Option<String>,
    /// (file name, sha256) per input file, for report headers.
    pub inputs: Vec<(String, String)>,
}

fn input_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Runs ingest, recode, outcome derivation, subgroup filtering, and
/// imputation per the config.
pub fn prepare(cfg: &PipelineConfig) -> Result<Prepared, PipelineError> {
    cfg.validate()?;
    let mut inputs = Vec::new();
    let mut manifest_hash = None;

    let mut table = if let Some(manifest_path) = &cfg.input.manifest {
        let manifest = read_manifest_file(manifest_path)?;
        for e in &manifest.entries {
            inputs.push((input_name(&e.path), e.checksum.to_ascii_lowercase()));
        }
        manifest_hash = Some(manifest.content_hash());
        ingest_manifest(&manifest)?
    } else {
        let mut tables = Vec::new();
        for path in &cfg.input.tables {
            inputs.push((input_name(path), file_sha256(path)?));
            tables.push(read_table_file(path)?);
        }
        if tables.len() == 1 {
            tables.into_iter().next().unwrap()
        } else {
            stack_cycles(&tables, &Default::default())?
        }
    };

    if let Some(recodes_path) = &cfg.prepare.recodes {
        let recodes = read_recode_file(recodes_path)?;
        table = apply_recodes(&table, &recodes)?;
    }

    let outcome = OutcomeSpec::new(&cfg.prepare.outcome_variable, cfg.prepare.outcome_threshold);
    table = derive_outcome(&table, &outcome)?;

    if let Some(group) = &cfg.prepare.subgroup {
        let group: Subgroup = group
            .parse()
            .map_err(|e: String| PipelineError::Config(e))?;
        table = filter_subgroup(&table, group)?;
    }

    let profile = missingness_profile(&table);
    let mut plan = build_plan(&profile, cfg.prepare.impute_threshold, cfg.seed);
    plan.k = cfg.prepare.donors;
    let (table, imputation) = apply_plan(&table, &plan)?;

    Ok(Prepared {
        table,
        imputation,
        manifest_hash,
        inputs,
    })
}

/// Splits a stacked table back into per-cycle tables, labels in
/// first-appearance order.
pub fn split_cycles(table: &SurveyTable) -> Vec<(String, SurveyTable)> {
    let mut order: Vec<String> = Vec::new();
    for row in 0..table.n_rows() {
        let cycle = table.cycle_of_row(row).to_string();
        if !order.contains(&cycle) {
            order.push(cycle);
        }
    }
    order
        .into_iter()
        .map(|cycle| {
            let rows: Vec<usize> = (0..table.n_rows())
                .filter(|&r| table.cycle_of_row(r) == cycle)
                .collect();
            (cycle.clone(), table.take_rows(&rows))
        })
        .collect()
}

/// Everything the analyze phase produces.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub model: crate::glm::FittedModel,
    pub trace: SelectionTrace,
    pub risk: RiskTable,
    pub trend: TrendMatrix,
    pub histogram: AdmissionsHistogram,
    pub socio: Option<RiskTable>,
}

/// Selects the model and builds the report tables from a prepared table.
pub fn analyze(cfg: &PipelineConfig, prepared: &Prepared) -> Result<Analysis, PipelineError> {
    let classes = read_classes_file(&cfg.analysis.classes)?;
    let (model, trace) = select_model(
        &prepared.table,
        OUTCOME_COLUMN,
        &classes,
        cfg.analysis.alpha,
    )?;
    let risk = build_risk_table(
        &prepared.table,
        &model.formula,
        None,
        cfg.analysis.bootstrap,
        cfg.seed,
    )?;
    let cycles = split_cycles(&prepared.table);
    let trend = trend_matrix(&cycles, &classes, cfg.analysis.alpha)?;
    let histogram = admissions_histogram(
        &cycles,
        &cfg.analysis.admissions_variable,
        &default_admission_bands(),
    )?;
    let socio = if cfg.analysis.socio.is_empty() {
        None
    } else {
        Some(socio_model(
            &prepared.table,
            &cfg.analysis.socio,
            cfg.analysis.bootstrap,
            cfg.seed,
        )?)
    };
    Ok(Analysis {
        model,
        trace,
        risk,
        trend,
        histogram,
        socio,
    })
}

/// Summary of a full pipeline run.
#[derive(Debug, Clone, Serialize)]
pub struct PipelineOutcome {
    pub n_rows: usize,
    pub n_model_terms: usize,
    pub written: Vec<PathBuf>,
}

fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| PipelineError::Config(format!("cannot serialize {}: {e}", path.display())))?;
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}

/// Prepares, analyzes, and writes every report under the output directory.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutcome, PipelineError> {
    let prepared = prepare(cfg)?;
    let analysis = analyze(cfg, &prepared)?;

    let mut meta = ReportMeta::new(Some(cfg.seed));
    meta.inputs = prepared.inputs.clone();
    let bundle = ReportBundle {
        risk: Some(&analysis.risk),
        trend: Some(&analysis.trend),
        histogram: Some(&analysis.histogram),
        socio: analysis.socio.as_ref(),
    };
    let dir = &cfg.output.dir;
    let mut written = emit_report(dir, &bundle, &meta)?;

    let model_path = dir.join("model.json");
    write_json_file(&model_path, &analysis.model)?;
    written.push(model_path);
    let trace_path = dir.join("selection_trace.json");
    write_json_file(&trace_path, &analysis.trace)?;
    written.push(trace_path);
    let imputation_path = dir.join("imputation.json");
    write_json_file(&imputation_path, &prepared.imputation)?;
    written.push(imputation_path);

    Ok(PipelineOutcome {
        n_rows: prepared.table.n_rows(),
        n_model_terms: analysis.model.formula.terms.len(),
        written,
    })
}
