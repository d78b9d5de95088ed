//! Seeded train-validate-test evaluation and artifact packaging.

use chrono::{SecondsFormat, Utc};
use hutil_core::glm::{build_design, extract_binary, fit_logistic, predict_prob};
use hutil_core::glm::{FitOptions, FittedModel, ModelFormula};
use hutil_core::table::SurveyTable;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::artifact::{
    FeatureSchema, ModelArtifact, SplitMetrics, TrainMetrics, ARTIFACT_FORMAT_VERSION,
};
use crate::ServeError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.6,
            validation: 0.2,
            test: 0.2,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<(), ServeError> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|&p| p <= 0.0) {
            return Err(ServeError::SplitTooSmall(format!(
                "every split fraction must be positive, got {parts:?}"
            )));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(ServeError::SplitTooSmall(format!(
                "split fractions sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }
}

/// Seeded shuffle split into train, validation, and test index sets.
pub fn split_indices(
    n: usize,
    fractions: &SplitFractions,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>), ServeError> {
    fractions.validate()?;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_train = (n as f64 * fractions.train).floor() as usize;
    let n_validation = (n as f64 * fractions.validation).floor() as usize;
    let train = order[..n_train].to_vec();
    let validation = order[n_train..n_train + n_validation].to_vec();
    let test = order[n_train + n_validation..].to_vec();
    if train.is_empty() || validation.is_empty() || test.is_empty() {
        return Err(ServeError::SplitTooSmall(format!(
            "{n} rows split into {}/{}/{} leaves an empty part",
            train.len(),
            validation.len(),
            test.len()
        )));
    }
    Ok((train, validation, test))
}

fn accuracy(probs: &[f64], y: &[f64]) -> f64 {
    let hits = probs
        .iter()
        .zip(y)
        .filter(|(p, &yi)| (**p >= 0.5) == (yi == 1.0))
        .count();
    hits as f64 / y.len() as f64
}

/// Rank-statistic AUC with average ranks over ties.
fn auc(probs: &[f64], y: &[f64], split_name: &str) -> Result<f64, ServeError> {
    let n = y.len();
    let n_pos = y.iter().filter(|&&v| v == 1.0).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(ServeError::SplitTooSmall(format!(
            "{split_name} split contains a single outcome class"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| probs[a].total_cmp(&probs[b]));
    let mut ranks = vec![0.0f64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && probs[order[j + 1]] == probs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    let rank_sum: f64 = (0..n).filter(|&i| y[i] == 1.0).map(|i| ranks[i]).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

fn log_loss(probs: &[f64], y: &[f64]) -> f64 {
    let total: f64 = probs
        .iter()
        .zip(y)
        .map(|(&p, &yi)| {
            let p = p.clamp(1e-12, 1.0 - 1e-12);
            -(yi * p.ln() + (1.0 - yi) * (1.0 - p).ln())
        })
        .sum();
    total / y.len() as f64
}

fn evaluate(
    model: &FittedModel,
    table: &SurveyTable,
    rows: &[usize],
    split_name: &str,
) -> Result<SplitMetrics, ServeError> {
    let subset = table.take_rows(rows);
    let probs = predict_prob(model, &subset)?;
    let all: Vec<usize> = (0..subset.n_rows()).collect();
    let y = extract_binary(&subset, &model.formula.outcome, &all)?;
    Ok(SplitMetrics {
        accuracy: accuracy(&probs, &y),
        auc: auc(&probs, &y, split_name)?,
        log_loss: log_loss(&probs, &y),
        n_rows: rows.len(),
    })
}

/// Fits on the train split, evaluates on validation and test, and packages
/// the artifact.
pub fn train_validate_test(
    table: &SurveyTable,
    formula: &ModelFormula,
    split: &SplitFractions,
    seed: u64,
    data_manifest_hash: &str,
) -> Result<(FittedModel, ModelArtifact), ServeError> {
    let (train, validation, test) = split_indices(table.n_rows(), split, seed)?;
    let train_table = table.take_rows(&train);
    let design = build_design(&train_table, formula)?;
    let y = extract_binary(&train_table, &formula.outcome, &design.kept_rows)?;
    let model = fit_logistic(&design, &y, None, &FitOptions::default())?;

    let metrics = TrainMetrics {
        validation: evaluate(&model, table, &validation, "validation")?,
        test: evaluate(&model, table, &test, "test")?,
    };
    let artifact = ModelArtifact {
        format_version: ARTIFACT_FORMAT_VERSION,
        created_at: Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true),
        feature_schema: FeatureSchema {
            outcome: formula.outcome.clone(),
            intercept: model.intercept,
            terms: model.terms.clone(),
            columns: model.columns.clone(),
        },
        coefficients: model.coefficients.clone(),
        train_metrics: metrics,
        data_manifest_hash: data_manifest_hash.to_string(),
        content_checksum: String::new(),
    }
    .seal();
    Ok((model, artifact))
}
