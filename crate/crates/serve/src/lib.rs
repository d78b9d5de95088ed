//! Model serving: train-validate-test evaluation, checksummed artifact
//! files, an HTTP prediction service with atomic hot swap, and a manifest
//! watcher that retrains behind a quality gate.

pub mod artifact;
pub mod service;
pub mod train;
pub mod watcher;

pub use artifact::{
    load_artifact, read_artifact_file, serialize_artifact, write_artifact_atomic, FeatureSchema,
    ModelArtifact, SplitMetrics, TrainMetrics, ARTIFACT_FORMAT_VERSION,
};
pub use service::{
    predict_artifact, start_service, PredictError, ServiceConfig, ServiceState, Trigger,
};
pub use train::{split_indices, train_validate_test, SplitFractions};
pub use watcher::{
    notify_channel, parse_gate, read_audit, run_watcher, AuditRecord, GateMetric, GateOutcome,
    GatePolicy, WatchConfig,
};

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Glm(#[from] hutil_core::glm::GlmError),
    #[error(transparent)]
    Table(#[from] hutil_core::table::TableError),
    #[error(transparent)]
    Select(#[from] hutil_core::select::SelectError),
    #[error(transparent)]
    Pipeline(#[from] hutil_core::pipeline::PipelineError),
    #[error("split too small: {0}")]
    SplitTooSmall(String),
    #[error("artifact checksum mismatch: stored {stored}, computed {computed}")]
    ChecksumMismatch { stored: String, computed: String },
    #[error("artifact format version {found} is newer than supported version {supported}")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("malformed artifact: {0}")]
    MalformedArtifact(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl ServeError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        ServeError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
