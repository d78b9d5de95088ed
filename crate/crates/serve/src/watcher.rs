//! The retrain loop. Polls a cycle manifest (and accepts push events),
//! reruns the prepare and train phases when the checksum set changes, and
//! promotes the new artifact only past the quality gate. A failed run
//! never unpublishes the serving model.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use tokio::sync::mpsc;

use hutil_core::pipeline::{prepare, read_manifest_file, read_pipeline_config};
use hutil_core::select::{read_classes_file, select_model};
use hutil_core::table::OUTCOME_COLUMN;

use crate::artifact::{write_artifact_atomic, ModelArtifact, SplitMetrics, TrainMetrics};
use crate::service::{ServiceState, Trigger};
use crate::train::{train_validate_test, SplitFractions};
use crate::ServeError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMetric {
    Auc,
    Accuracy,
}

impl GateMetric {
    pub fn label(&self) -> &'static str {
        match self {
            GateMetric::Auc => "auc",
            GateMetric::Accuracy => "accuracy",
        }
    }

    fn value(&self, metrics: &SplitMetrics) -> f64 {
        match self {
            GateMetric::Auc => metrics.auc,
            GateMetric::Accuracy => metrics.accuracy,
        }
    }
}

/// Promotion rule: the candidate's holdout metric may trail the
/// incumbent's by at most epsilon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GatePolicy {
    pub metric: GateMetric,
    pub max_degradation: f64,
    pub min_test_rows: usize,
}

impl Default for GatePolicy {
    fn default() -> Self {
        GatePolicy {
            metric: GateMetric::Auc,
            max_degradation: 0.01,
            min_test_rows: 20,
        }
    }
}

/// Parses the `metric:epsilon` flag form, e.g. `auc:0.01`.
pub fn parse_gate(text: &str) -> Result<GatePolicy, ServeError> {
    let (metric, epsilon) = text
        .split_once(':')
        .ok_or_else(|| ServeError::MalformedArtifact(format!("gate {text:?} is not metric:epsilon")))?;
    let metric = match metric {
        "auc" => GateMetric::Auc,
        "accuracy" => GateMetric::Accuracy,
        other => {
            return Err(ServeError::MalformedArtifact(format!(
                "unknown gate metric {other:?} (expected auc or accuracy)"
            )))
        }
    };
    let max_degradation: f64 = epsilon
        .parse()
        .map_err(|_| ServeError::MalformedArtifact(format!("gate epsilon {epsilon:?} is not a number")))?;
    if !(max_degradation >= 0.0) {
        return Err(ServeError::MalformedArtifact(format!(
            "gate epsilon {max_degradation} must be nonnegative"
        )));
    }
    Ok(GatePolicy {
        metric,
        max_degradation,
        ..GatePolicy::default()
    })
}

#[derive(Debug, Clone)]
pub struct WatchConfig {
    pub manifest_path: PathBuf,
    pub interval: Duration,
    pub pipeline_config_path: PathBuf,
    pub gate: GatePolicy,
    pub artifact_path: PathBuf,
    pub audit_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateOutcome {
    pub metric: String,
    pub candidate: f64,
    pub incumbent: Option<f64>,
    pub epsilon: f64,
    pub passed: bool,
}

/// One line of the append-only audit log, one record per pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub timestamp: String,
    pub trigger: String,
    pub manifest_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<TrainMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate: Option<GateOutcome>,
    pub promoted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn append_audit(path: &std::path::Path, record: &AuditRecord) -> Result<(), ServeError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| ServeError::io(dir, e))?;
    }
    let mut line = serde_json::to_string(record)
        .map_err(|e| ServeError::MalformedArtifact(format!("audit record: {e}")))?;
    line.push('\n');
    use std::io::Write as _;
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| ServeError::io(path, e))?;
    file.write_all(line.as_bytes())
        .map_err(|e| ServeError::io(path, e))
}

/// Reads back every audit record, oldest first.
pub fn read_audit(path: &std::path::Path) -> Result<Vec<AuditRecord>, ServeError> {
    let text = std::fs::read_to_string(path).map_err(|e| ServeError::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l)
                .map_err(|e| ServeError::MalformedArtifact(format!("audit line: {e}")))
        })
        .collect()
}

/// The event channel between /notify and the watcher loop. Bounded so a
/// flood answers 429 instead of growing without limit.
pub fn notify_channel() -> (mpsc::Sender<Trigger>, mpsc::Receiver<Trigger>) {
    mpsc::channel(32)
}

/// One full retrain: prepare from the manifest, select, train-validate-test.
fn retrain(cfg: &WatchConfig, manifest_hash: &str) -> Result<ModelArtifact, ServeError> {
    let mut pipeline_cfg = read_pipeline_config(&cfg.pipeline_config_path)?;
    pipeline_cfg.input.manifest = Some(cfg.manifest_path.clone());
    pipeline_cfg.input.tables.clear();
    let prepared = prepare(&pipeline_cfg)?;
    let classes = read_classes_file(&pipeline_cfg.analysis.classes)?;
    let (selected, _) = select_model(
        &prepared.table,
        OUTCOME_COLUMN,
        &classes,
        pipeline_cfg.analysis.alpha,
    )?;
    let (_, artifact) = train_validate_test(
        &prepared.table,
        &selected.formula,
        &SplitFractions::default(),
        pipeline_cfg.seed,
        manifest_hash,
    )?;
    Ok(artifact)
}

async fn run_once(
    state: &Arc<ServiceState>,
    cfg: &WatchConfig,
    last: Option<String>,
    trigger: Trigger,
) -> Option<String> {
    let manifest = match read_manifest_file(&cfg.manifest_path) {
        Ok(m) => m,
        Err(e) => {
            tracing::warn!("manifest unreadable, keeping current model: {e}");
            return last;
        }
    };
    let hash = manifest.content_hash();
    if last.as_deref() == Some(hash.as_str()) {
        return last;
    }

    let mut record = AuditRecord {
        timestamp: Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true),
        trigger: trigger.label().to_string(),
        manifest_hash: hash.clone(),
        metrics: None,
        gate: None,
        promoted: false,
        error: None,
    };

    let cfg_for_run = cfg.clone();
    let hash_for_run = hash.clone();
    let result =
        tokio::task::spawn_blocking(move || retrain(&cfg_for_run, &hash_for_run)).await;
    match result {
        Ok(Ok(artifact)) => {
            let candidate = cfg.gate.metric.value(&artifact.train_metrics.test);
            let incumbent = state
                .current()
                .map(|a| cfg.gate.metric.value(&a.train_metrics.test));
            let enough_rows = artifact.train_metrics.test.n_rows >= cfg.gate.min_test_rows;
            let passed = enough_rows
                && incumbent.map_or(true, |i| candidate >= i - cfg.gate.max_degradation);
            record.metrics = Some(artifact.train_metrics.clone());
            record.gate = Some(GateOutcome {
                metric: cfg.gate.metric.label().to_string(),
                candidate,
                incumbent,
                epsilon: cfg.gate.max_degradation,
                passed,
            });
            if !enough_rows {
                record.error = Some(format!(
                    "test split has {} rows, gate requires {}",
                    artifact.train_metrics.test.n_rows, cfg.gate.min_test_rows
                ));
            }
            if passed {
                match write_artifact_atomic(&cfg.artifact_path, &artifact) {
                    Ok(()) => {
                        state.install(Arc::new(artifact));
                        record.promoted = true;
                    }
                    Err(e) => record.error = Some(format!("promotion failed: {e}")),
                }
            }
        }
        Ok(Err(e)) => record.error = Some(e.to_string()),
        Err(e) => record.error = Some(format!("retrain task panicked: {e}")),
    }
    if let Err(e) = append_audit(&cfg.audit_path, &record) {
        tracing::error!("cannot append audit record: {e}");
    }
    tracing::info!(
        "run trigger={} promoted={} error={:?}",
        record.trigger,
        record.promoted,
        record.error
    );
    // The hash counts as processed even when the run failed, so broken
    // data is retried only after it changes again.
    Some(hash)
}

/// Runs the watch loop until the notify channel closes. With no model
/// loaded the first manifest read triggers a bootstrap run; otherwise the
/// current manifest is the baseline and only later changes trigger.
pub async fn run_watcher(
    state: Arc<ServiceState>,
    cfg: WatchConfig,
    mut rx: mpsc::Receiver<Trigger>,
) {
    let mut last: Option<String> = None;
    if state.current().is_some() {
        if let Ok(m) = read_manifest_file(&cfg.manifest_path) {
            last = Some(m.content_hash());
        }
    } else {
        last = run_once(&state, &cfg, last, Trigger::Startup).await;
    }
    loop {
        let trigger = tokio::select! {
            _ = tokio::time::sleep(cfg.interval) => Trigger::Poll,
            received = rx.recv() => match received {
                Some(t) => t,
                None => return,
            },
        };
        // Coalesce every queued duplicate into this one run.
        while rx.try_recv().is_ok() {}
        last = run_once(&state, &cfg, last, trigger).await;
    }
}
