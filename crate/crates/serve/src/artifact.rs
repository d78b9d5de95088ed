//! The serving artifact: a human-readable JSON document carrying the
//! feature schema, coefficients, and holdout metrics, sealed by a whole-
//! document checksum.

use std::path::Path;

use hutil_core::glm::{DesignColumn, ResolvedTerm};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ServeError;

pub const ARTIFACT_FORMAT_VERSION: u32 = 1;

/// Holdout metrics for one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub accuracy: f64,
    pub auc: f64,
    pub log_loss: f64,
    pub n_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub validation: SplitMetrics,
    pub test: SplitMetrics,
}

/// Everything needed to build a design row from raw feature values,
/// without the training table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub outcome: String,
    pub intercept: bool,
    /// Ordered model terms with kinds, levels, and reference levels.
    pub terms: Vec<ResolvedTerm>,
    /// One entry per coefficient, in coefficient order.
    pub columns: Vec<DesignColumn>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format_version: u32,
    /// RFC 3339 UTC timestamp of training.
    pub created_at: String,
    pub feature_schema: FeatureSchema,
    pub coefficients: Vec<f64>,
    pub train_metrics: TrainMetrics,
    /// Content hash of the cycle manifest the training data came from.
    pub data_manifest_hash: String,
    /// SHA-256 over the canonical form of every other field.
    pub content_checksum: String,
}

fn canonical_checksum(artifact: &ModelArtifact) -> String {
    let mut blank = artifact.clone();
    blank.content_checksum = String::new();
    let canonical = serde_json::to_string(&blank).expect("artifact serializes");
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    let digest = hasher.finalize();
    let mut s = String::with_capacity(64);
    for b in digest {
        use std::fmt::Write as _;
        write!(s, "{b:02x}").unwrap();
    }
    s
}

impl ModelArtifact {
    /// Stamps the content checksum over the current field values.
    pub fn seal(mut self) -> Self {
        self.content_checksum = canonical_checksum(&self);
        self
    }
}

/// Pretty JSON bytes with the checksum stamped. Idempotent: serializing a
/// sealed artifact leaves its checksum unchanged.
pub fn serialize_artifact(artifact: &ModelArtifact) -> Vec<u8> {
    let sealed = artifact.clone().seal();
    let mut text = serde_json::to_string_pretty(&sealed).expect("artifact serializes");
    text.push('\n');
    text.into_bytes()
}

/// Parses and verifies an artifact document.
pub fn load_artifact(bytes: &[u8]) -> Result<ModelArtifact, ServeError> {
    let artifact: ModelArtifact = serde_json::from_slice(bytes)
        .map_err(|e| ServeError::MalformedArtifact(e.to_string()))?;
    if artifact.format_version > ARTIFACT_FORMAT_VERSION {
        return Err(ServeError::UnsupportedVersion {
            found: artifact.format_version,
            supported: ARTIFACT_FORMAT_VERSION,
        });
    }
    let computed = canonical_checksum(&artifact);
    if computed != artifact.content_checksum {
        return Err(ServeError::ChecksumMismatch {
            stored: artifact.content_checksum.clone(),
            computed,
        });
    }
    if artifact.coefficients.len() != artifact.feature_schema.columns.len() {
        return Err(ServeError::MalformedArtifact(format!(
            "{} coefficients for {} schema columns",
            artifact.coefficients.len(),
            artifact.feature_schema.columns.len()
        )));
    }
    Ok(artifact)
}

pub fn read_artifact_file(path: &Path) -> Result<ModelArtifact, ServeError> {
    let bytes = std::fs::read(path).map_err(|e| ServeError::io(path, e))?;
    load_artifact(&bytes)
}

/// Writes via a temporary file in the same directory plus an atomic
/// rename, so a crash mid-write never leaves a torn artifact behind.
pub fn write_artifact_atomic(path: &Path, artifact: &ModelArtifact) -> Result<(), ServeError> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| ServeError::io(dir, e))?;
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "artifact".to_string());
    let tmp = dir.join(format!(".{file_name}.tmp-{}", std::process::id()));
    std::fs::write(&tmp, serialize_artifact(artifact)).map_err(|e| ServeError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| ServeError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample_artifact() -> ModelArtifact {
        ModelArtifact {
            format_version: ARTIFACT_FORMAT_VERSION,
            created_at: "2026-01-05T10:00:00Z".to_string(),
            feature_schema: FeatureSchema {
                outcome: "HIGH_UTILIZATION".to_string(),
                intercept: true,
                terms: vec![
                    ResolvedTerm::Numeric {
                        variable: "BMXBMI".to_string(),
                    },
                    ResolvedTerm::Categorical {
                        variable: "RIAGENDR".to_string(),
                        reference: "male".to_string(),
                        levels: vec!["female".to_string()],
                    },
                ],
                columns: vec![
                    DesignColumn {
                        term: None,
                        variable: "(intercept)".to_string(),
                        level: None,
                    },
                    DesignColumn {
                        term: Some(0),
                        variable: "BMXBMI".to_string(),
                        level: None,
                    },
                    DesignColumn {
                        term: Some(1),
                        variable: "RIAGENDR".to_string(),
                        level: Some("female".to_string()),
                    },
                ],
            },
            coefficients: vec![-1.25, 0.4, 0.1],
            train_metrics: TrainMetrics {
                validation: SplitMetrics {
                    accuracy: 0.81,
                    auc: 0.88,
                    log_loss: 0.42,
                    n_rows: 200,
                },
                test: SplitMetrics {
                    accuracy: 0.80,
                    auc: 0.87,
                    log_loss: 0.44,
                    n_rows: 200,
                },
            },
            data_manifest_hash: "f".repeat(64),
            content_checksum: String::new(),
        }
        .seal()
    }

    #[test]
    fn round_trip_preserves_every_field() {
        let artifact = sample_artifact();
        let bytes = serialize_artifact(&artifact);
        let loaded = load_artifact(&bytes).unwrap();
        assert_eq!(loaded, artifact);
    }

    #[test]
    fn single_flipped_byte_is_detected() {
        let artifact = sample_artifact();
        let bytes = serialize_artifact(&artifact);
        // Flip one digit inside a coefficient.
        let needle = b"-1.25";
        let pos = bytes
            .windows(needle.len())
            .position(|w| w == needle)
            .unwrap();
        let mut corrupted = bytes.clone();
        corrupted[pos + 3] = b'7';
        match load_artifact(&corrupted) {
            Err(ServeError::ChecksumMismatch { .. }) => {}
            other => panic!("expected checksum mismatch, got {other:?}"),
        }
    }

    #[test]
    fn future_format_version_is_refused() {
        let mut artifact = sample_artifact();
        artifact.format_version = ARTIFACT_FORMAT_VERSION + 1;
        let artifact = artifact.seal();
        let bytes = serialize_artifact(&artifact);
        match load_artifact(&bytes) {
            Err(ServeError::UnsupportedVersion { found, supported }) => {
                assert_eq!(found, ARTIFACT_FORMAT_VERSION + 1);
                assert_eq!(supported, ARTIFACT_FORMAT_VERSION);
            }
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn coefficient_column_mismatch_is_refused() {
        let mut artifact = sample_artifact();
        artifact.coefficients.pop();
        let bytes = serialize_artifact(&artifact);
        assert!(matches!(
            load_artifact(&bytes),
            Err(ServeError::MalformedArtifact(_))
        ));
    }

    #[test]
    fn atomic_write_leaves_no_temp_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.artifact.json");
        let artifact = sample_artifact();
        for _ in 0..5 {
            write_artifact_atomic(&path, &artifact).unwrap();
        }
        let loaded = read_artifact_file(&path).unwrap();
        assert_eq!(loaded, artifact);
        let extras: Vec<_> = std::fs::read_dir(dir.path())
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name() != "model.artifact.json")
            .collect();
        assert!(extras.is_empty(), "stray files: {extras:?}");
    }
}
