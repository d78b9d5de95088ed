//! Relative risks for a non-rare outcome via the case-base expansion:
//! every analysis row enters as "base" with pseudo-outcome 0 and every
//! event row enters again as a "case" with pseudo-outcome 1. The odds
//! ratio of the pseudo-outcome estimates the risk ratio, so exp(beta)
//! is reported as RR. Duplication invalidates model-based standard
//! errors, hence bootstrap intervals over the original rows.

use super::RiskError;
use crate::glm::{
    build_design, extract_binary, fit_logistic, DesignMatrix, FitOptions, FittedModel,
    ModelFormula,
};
use crate::table::SurveyTable;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseBaseFit {
    /// Logistic fit on the expanded data; exp(coefficients) are the RRs.
    pub model: FittedModel,
    /// Ordinary (unexpanded) fit of the same formula, the source of
    /// significance flags.
    pub plain_model: FittedModel,
    /// Per design column, exp(beta).
    pub rr: Vec<f64>,
    /// Percentile bootstrap bounds per design column; None when every
    /// replicate was skipped.
    pub ci: Vec<Option<(f64, f64)>>,
    pub n_analysis: usize,
    pub n_cases: usize,
    pub bootstrap_b: usize,
    pub skipped_replicates: usize,
    pub seed: u64,
}

fn expand(
    x: &DMatrix<f64>,
    y: &[f64],
) -> (DMatrix<f64>, Vec<f64>) {
    let n = x.nrows();
    let p = x.ncols();
    let cases: Vec<usize> = (0..n).filter(|&i| y[i] == 1.0).collect();
    let total = n + cases.len();
    let mut out = DMatrix::zeros(total, p);
    let mut pseudo = vec![0.0; total];
    for r in 0..n {
        for c in 0..p {
            out[(r, c)] = x[(r, c)];
        }
    }
    for (j, &r) in cases.iter().enumerate() {
        for c in 0..p {
            out[(n + j, c)] = x[(r, c)];
        }
        pseudo[n + j] = 1.0;
    }
    (out, pseudo)
}

fn fit_expansion(
    base: &DesignMatrix,
    x: DMatrix<f64>,
    y: &[f64],
    opts: &FitOptions,
) -> Result<FittedModel, crate::glm::GlmError> {
    let (xe, ye) = expand(&x, y);
    let rows = xe.nrows();
    let design = DesignMatrix {
        x: xe,
        columns: base.columns.clone(),
        kept_rows: (0..rows).collect(),
        term_columns: base.term_columns.clone(),
        terms: base.terms.clone(),
        intercept: base.intercept,
        formula: base.formula.clone(),
    };
    fit_logistic(&design, &ye, None, opts)
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

pub fn rr_case_base(
    table: &SurveyTable,
    formula: &ModelFormula,
    bootstrap_b: usize,
    seed: u64,
) -> Result<CaseBaseFit, RiskError> {
    let design = build_design(table, formula)?;
    let y = extract_binary(table, &formula.outcome, &design.kept_rows)?;
    let opts = FitOptions::default();

    let model = fit_expansion(&design, design.x.clone(), &y, &opts)?;
    let plain_model = fit_logistic(&design, &y, None, &opts)?;
    let rr: Vec<f64> = model.coefficients.iter().map(|b| b.exp()).collect();

    let n = design.x.nrows();
    let p = design.x.ncols();
    // Each replicate gets its own seed up front so the parallel fold is
    // independent of scheduling order.
    let mut seeder = ChaCha12Rng::seed_from_u64(seed);
    let replicate_seeds: Vec<u64> = (0..bootstrap_b).map(|_| seeder.gen()).collect();

    let replicate_rrs: Vec<Option<Vec<f64>>> = replicate_seeds
        .par_iter()
        .map(|&rep_seed| {
            let mut rng = ChaCha12Rng::seed_from_u64(rep_seed);
            let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            let xb = DMatrix::from_fn(n, p, |r, c| design.x[(idx[r], c)]);
            let yb: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
            if yb.iter().all(|&v| v == 0.0) || yb.iter().all(|&v| v == 1.0) {
                return None;
            }
            match fit_expansion(&design, xb, &yb, &opts) {
                Ok(m) if m.converged => {
                    Some(m.coefficients.iter().map(|b| b.exp()).collect())
                }
                _ => None,
            }
        })
        .collect();

    let kept: Vec<&Vec<f64>> = replicate_rrs.iter().flatten().collect();
    let skipped_replicates = bootstrap_b - kept.len();
    if bootstrap_b > 0 && kept.is_empty() {
        return Err(RiskError::AllReplicatesDegenerate);
    }
    let ci: Vec<Option<(f64, f64)>> = (0..p)
        .map(|c| {
            if kept.is_empty() {
                return None;
            }
            let mut values: Vec<f64> = kept.iter().map(|r| r[c]).collect();
            values.sort_by(|a, b| a.partial_cmp(b).unwrap());
            Some((percentile(&values, 0.025), percentile(&values, 0.975)))
        })
        .collect();

    let n_cases = y.iter().filter(|&&v| v == 1.0).count();
    Ok(CaseBaseFit {
        model,
        plain_model,
        rr,
        ci,
        n_analysis: n,
        n_cases,
        bootstrap_b,
        skipped_replicates,
        seed,
    })
}
