//! Headline outputs: prevalence, case-base relative risks with bootstrap
//! intervals, trend matrices, admissions histograms, socio-economic
//! models, synthetic data, and report files.

mod casebase;
mod report;
mod synth;
mod tables;

pub use casebase::{rr_case_base, CaseBaseFit};
pub use report::{emit_report, ReportBundle, ReportMeta};
pub use synth::{generate_synthetic, read_synthetic_spec, CovariateSpec, SyntheticSpec};
pub use tables::{
    admissions_histogram, build_risk_table, default_admission_bands, prevalence_table,
    socio_model, trend_matrix, AdmissionsHistogram, Band, RiskRow, RiskTable, TrendCell,
    TrendMatrix,
};

use crate::glm::GlmError;
use crate::select::SelectError;

#[derive(Debug, thiserror::Error)]
pub enum RiskError {
    #[error("variable {0} not found")]
    MissingVariable(String),
    #[error("variable {0} is not categorical")]
    NotCategorical(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("no bootstrap replicate produced a usable fit")]
    AllReplicatesDegenerate,
    #[error("bands overlap: {0}")]
    OverlappingBands(String),
    #[error(transparent)]
    Glm(#[from] GlmError),
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error(transparent)]
    Table(#[from] crate::table::TableError),
    #[error("cannot write report: {0}")]
    Io(#[from] std::io::Error),
}
