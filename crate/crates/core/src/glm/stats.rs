//! Wald chi-square tests on fitted terms and Welch two-sample t-tests.

use super::logistic::FittedModel;
use super::GlmError;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WaldResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TTestResult {
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
}

/// Multi-degree Wald test of all coefficients belonging to one formula term:
/// beta' Sigma^-1 beta against chi-square with one df per coefficient.
pub fn wald_test(model: &FittedModel, term: usize) -> Result<WaldResult, GlmError> {
    let cols = model
        .term_columns
        .get(term)
        .ok_or(GlmError::TermNotFound(term))?;
    if cols.is_empty() {
        return Err(GlmError::TermNotFound(term));
    }
    let q = cols.len();
    let beta = DVector::from_iterator(q, cols.iter().map(|&c| model.coefficients[c]));
    let sigma = DMatrix::from_fn(q, q, |a, b| model.covariance[cols[a]][cols[b]]);
    let solved = sigma
        .clone()
        .cholesky()
        .map(|ch| ch.solve(&beta))
        .or_else(|| sigma.lu().solve(&beta))
        .ok_or(GlmError::SingularSubcovariance)?;
    let statistic = beta.dot(&solved).max(0.0);
    let p_value = chi_square_upper_tail(statistic, q);
    Ok(WaldResult {
        statistic,
        df: q,
        p_value,
    })
}

/// Upper tail probability of a chi-square distribution.
pub fn chi_square_upper_tail(statistic: f64, df: usize) -> f64 {
    if statistic <= 0.0 {
        return 1.0;
    }
    let dist = ChiSquared::new(df as f64).expect("positive df");
    (1.0 - dist.cdf(statistic)).clamp(0.0, 1.0)
}

/// Welch unequal-variance t-test with Satterthwaite degrees of freedom.
pub fn two_sample_t(x: &[f64], y: &[f64]) -> Result<TTestResult, GlmError> {
    assert!(x.len() >= 2 && y.len() >= 2, "each sample needs two values");
    let (mx, vx) = mean_var(x);
    let (my, vy) = mean_var(y);
    let nx = x.len() as f64;
    let ny = y.len() as f64;
    let se2 = vx / nx + vy / ny;
    if se2 == 0.0 {
        return Err(GlmError::DegenerateSample);
    }
    let t = (mx - my) / se2.sqrt();
    let df = se2 * se2
        / ((vx / nx).powi(2) / (nx - 1.0) + (vy / ny).powi(2) / (ny - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive df");
    let p_value = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Ok(TTestResult { t, df, p_value })
}

fn mean_var(sample: &[f64]) -> (f64, f64) {
    let n = sample.len() as f64;
    let mean = sample.iter().sum::<f64>() / n;
    let var = sample.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}
