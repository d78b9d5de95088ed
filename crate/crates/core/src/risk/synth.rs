//! Synthetic survey generator with planted coefficients, used by tests,
//! demos, and the watcher exercises.

use super::RiskError;
use crate::table::{derive_outcome, Column, OutcomeSpec, SurveyTable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateSpec {
    Numeric {
        name: String,
        mean: f64,
        sd: f64,
        beta: f64,
        #[serde(default)]
        missing_rate: f64,
    },
    Categorical {
        name: String,
        levels: Vec<String>,
        probs: Vec<f64>,
        /// Per-level contribution to the linear predictor; the first
        /// level acts as reference and should be 0.
        betas: Vec<f64>,
        #[serde(default)]
        missing_rate: f64,
    },
}

impl CovariateSpec {
    pub fn name(&self) -> &str {
        match self {
            CovariateSpec::Numeric { name, .. } => name,
            CovariateSpec::Categorical { name, .. } => name,
        }
    }

    fn missing_rate(&self) -> f64 {
        match self {
            CovariateSpec::Numeric { missing_rate, .. } => *missing_rate,
            CovariateSpec::Categorical { missing_rate, .. } => *missing_rate,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub seed: u64,
    pub intercept: f64,
    #[serde(rename = "covariate")]
    pub covariates: Vec<CovariateSpec>,
    /// Cycle label stamped on the rows.
    #[serde(default = "default_cycle")]
    pub cycle: String,
}

fn default_cycle() -> String {
    "synthetic".to_string()
}

pub fn read_synthetic_spec(path: &Path) -> Result<SyntheticSpec, RiskError> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| RiskError::InvalidSpec(e.to_string()))
}

fn validate(spec: &SyntheticSpec) -> Result<(), RiskError> {
    if spec.n == 0 {
        return Err(RiskError::InvalidSpec("n must be at least 1".to_string()));
    }
    let mut seen = std::collections::HashSet::new();
    for cov in &spec.covariates {
        let name = cov.name();
        if !seen.insert(name.to_string()) {
            return Err(RiskError::InvalidSpec(format!("duplicate covariate {name}")));
        }
        let rate = cov.missing_rate();
        if !(0.0..1.0).contains(&rate) {
            return Err(RiskError::InvalidSpec(format!(
                "{name}: missing rate {rate} outside [0,1)"
            )));
        }
        match cov {
            CovariateSpec::Numeric { sd, .. } => {
                if *sd < 0.0 {
                    return Err(RiskError::InvalidSpec(format!("{name}: negative sd")));
                }
            }
            CovariateSpec::Categorical {
                levels,
                probs,
                betas,
                ..
            } => {
                if levels.is_empty() {
                    return Err(RiskError::InvalidSpec(format!("{name}: no levels")));
                }
                if probs.len() != levels.len() || betas.len() != levels.len() {
                    return Err(RiskError::InvalidSpec(format!(
                        "{name}: levels, probs, betas lengths differ"
                    )));
                }
                if probs.iter().any(|&p| p < 0.0) {
                    return Err(RiskError::InvalidSpec(format!("{name}: negative prob")));
                }
                let total: f64 = probs.iter().sum();
                if (total - 1.0).abs() > 1e-6 {
                    return Err(RiskError::InvalidSpec(format!(
                        "{name}: probs sum to {total}, expected 1"
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Deterministic under (spec, seed). Emits the source utilization count
/// alongside the derived binary outcome: events get counts above the
/// dichotomization point, non-events at or below it.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SurveyTable, RiskError> {
    validate(spec)?;
    let n = spec.n;
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let mut table = SurveyTable::new(&spec.cycle, (1..=n as i64).collect());
    let mut eta = vec![spec.intercept; n];

    struct Drawn {
        name: String,
        column: Column,
        missing_rate: f64,
    }
    let mut drawn = Vec::new();
    for cov in &spec.covariates {
        match cov {
            CovariateSpec::Numeric {
                name,
                mean,
                sd,
                beta,
                missing_rate,
            } => {
                let mut values = Vec::with_capacity(n);
                for e in eta.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    let x = mean + sd * z;
                    *e += beta * x;
                    values.push(x);
                }
                drawn.push(Drawn {
                    name: name.clone(),
                    column: Column::numeric(values, vec![false; n]),
                    missing_rate: *missing_rate,
                });
            }
            CovariateSpec::Categorical {
                name,
                levels,
                probs,
                betas,
                missing_rate,
            } => {
                let mut codes = Vec::with_capacity(n);
                for e in eta.iter_mut() {
                    let u: f64 = rng.gen();
                    let mut acc = 0.0;
                    let mut idx = levels.len() - 1;
                    for (i, &p) in probs.iter().enumerate() {
                        acc += p;
                        if u < acc {
                            idx = i;
                            break;
                        }
                    }
                    *e += betas[idx];
                    codes.push(idx as u32);
                }
                drawn.push(Drawn {
                    name: name.clone(),
                    column: Column::categorical(codes, levels.clone(), vec![false; n]),
                    missing_rate: *missing_rate,
                });
            }
        }
    }

    // Utilization counts: events above the cut, non-events at or below.
    let mut counts = Vec::with_capacity(n);
    for e in &eta {
        let p = 1.0 / (1.0 + (-e).exp());
        let event = rng.gen::<f64>() < p;
        let count = if event {
            6 + rng.gen_range(0..7)
        } else {
            rng.gen_range(0..=5)
        };
        counts.push(count as f64);
    }
    table.add_column("HUQ050", Column::numeric(counts, vec![false; n]))?;

    // Missingness is completely at random, applied after generation so
    // the outcome stays fully observed.
    for d in drawn {
        let column = if d.missing_rate > 0.0 {
            let mask: Vec<bool> = (0..n).map(|_| rng.gen::<f64>() < d.missing_rate).collect();
            match d.column {
                Column::Numeric { values, mut missing } => {
                    for (m, &hit) in missing.iter_mut().zip(&mask) {
                        *m = *m || hit;
                    }
                    Column::numeric(values, missing)
                }
                Column::Categorical {
                    codes,
                    levels,
                    mut missing,
                } => {
                    for (m, &hit) in missing.iter_mut().zip(&mask) {
                        *m = *m || hit;
                    }
                    Column::categorical(codes, levels, missing)
                }
            }
        } else {
            d.column
        };
        table.add_column(&d.name, column)?;
    }

    Ok(derive_outcome(&table, &OutcomeSpec::default())?)
}
