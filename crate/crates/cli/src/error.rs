//! One error type for every subcommand, prefixed with the failing module
//! so exit-1 messages say where to look.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("xport: {0}")]
    Xport(#[from] hutil_core::xport::XportError),
    #[error("table: {0}")]
    Table(#[from] hutil_core::table::TableError),
    #[error("impute: {0}")]
    Impute(#[from] hutil_core::impute::ImputeError),
    #[error("glm: {0}")]
    Glm(#[from] hutil_core::glm::GlmError),
    #[error("select: {0}")]
    Select(#[from] hutil_core::select::SelectError),
    #[error("risk: {0}")]
    Risk(#[from] hutil_core::risk::RiskError),
    #[error("pipeline: {0}")]
    Pipeline(#[from] hutil_core::pipeline::PipelineError),
    #[error("serve: {0}")]
    Serve(#[from] hutil_serve::ServeError),
    #[error("config: {0}")]
    Config(String),
    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
