//! Baseline-category multinomial logit by full Newton iteration.

use super::design::DesignMatrix;
use super::logistic::check_rank;
use super::{FitOptions, GlmError};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Fitted multinomial model. `classes[0]` is the baseline; coefficient
/// block k (row k of `coefficients`) belongs to `classes[k+1]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedMultinomial {
    pub classes: Vec<String>,
    pub coefficients: Vec<Vec<f64>>,
    pub log_likelihood: f64,
    pub n_used: usize,
    pub iterations: usize,
    pub converged: bool,
}

impl FittedMultinomial {
    /// Class probabilities for one dense feature row, in `classes` order.
    pub fn probabilities(&self, features: &[f64]) -> Vec<f64> {
        let mut etas = vec![0.0f64];
        for block in &self.coefficients {
            etas.push(
                block
                    .iter()
                    .zip(features)
                    .map(|(b, x)| b * x)
                    .sum::<f64>(),
            );
        }
        let max = etas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = etas.iter().map(|e| (e - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.iter().map(|e| e / total).collect()
    }
}

fn class_probabilities(etas: &[f64], out: &mut [f64]) {
    let max = etas.iter().cloned().fold(0.0f64, f64::max);
    let mut total = (-max).exp();
    for (o, &e) in out.iter_mut().zip(etas) {
        let v = (e - max).exp();
        *o = v;
        total += v;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

fn multinomial_ll(
    x: &DMatrix<f64>,
    y: &[usize],
    w: &[f64],
    beta: &DVector<f64>,
    k1: usize,
) -> f64 {
    let p = x.ncols();
    let mut ll = 0.0;
    let mut etas = vec![0.0f64; k1];
    for i in 0..x.nrows() {
        for (k, eta) in etas.iter_mut().enumerate() {
            *eta = (0..p).map(|a| beta[k * p + a] * x[(i, a)]).sum();
        }
        let max = etas.iter().cloned().fold(0.0f64, f64::max);
        let log_norm = max
            + ((-max).exp() + etas.iter().map(|e| (e - max).exp()).sum::<f64>()).ln();
        let eta_i = if y[i] == 0 { 0.0 } else { etas[y[i] - 1] };
        ll += w[i] * (eta_i - log_norm);
    }
    ll
}

/// Fits the baseline-category model. `y` holds level codes into `classes`
/// (0 = baseline, the first level in dictionary order).
pub fn fit_multinomial(
    design: &DesignMatrix,
    y: &[usize],
    classes: &[String],
    weights: Option<&[f64]>,
    opts: &FitOptions,
) -> Result<FittedMultinomial, GlmError> {
    let n = design.x.nrows();
    let p = design.x.ncols();
    let k = classes.len();
    if n == 0 || p == 0 {
        return Err(GlmError::EmptyDesign);
    }
    if k < 2 {
        return Err(GlmError::TooFewLevels("multinomial outcome".to_string()));
    }
    assert_eq!(y.len(), n, "outcome and design row counts differ");
    check_rank(&design.x)?;
    let w: Vec<f64> = match weights {
        Some(w) => w.to_vec(),
        None => vec![1.0; n],
    };

    let k1 = k - 1;
    let dim = k1 * p;
    let mut beta = DVector::zeros(dim);
    if design.intercept {
        // Intercepts start at the observed log odds against the baseline.
        let mut counts = vec![0.0f64; k];
        for (i, &yi) in y.iter().enumerate() {
            counts[yi] += w[i];
        }
        if counts.iter().all(|&c| c > 0.0) {
            for kk in 0..k1 {
                beta[kk * p] = (counts[kk + 1] / counts[0]).ln();
            }
        }
    }

    let mut ll = multinomial_ll(&design.x, y, &w, &beta, k1);
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=opts.max_iter {
        iterations = iter;
        let mut grad = DVector::zeros(dim);
        let mut info = DMatrix::zeros(dim, dim);
        let mut etas = vec![0.0f64; k1];
        let mut mus = vec![0.0f64; k1];
        for i in 0..n {
            for (kk, eta) in etas.iter_mut().enumerate() {
                *eta = (0..p).map(|a| beta[kk * p + a] * design.x[(i, a)]).sum();
            }
            class_probabilities(&etas, &mut mus);
            for kk in 0..k1 {
                let resid = w[i] * ((y[i] == kk + 1) as u8 as f64 - mus[kk]);
                for a in 0..p {
                    grad[kk * p + a] += resid * design.x[(i, a)];
                }
                for ll2 in kk..k1 {
                    let h = w[i]
                        * mus[kk]
                        * (if kk == ll2 { 1.0 - mus[ll2] } else { -mus[ll2] });
                    for a in 0..p {
                        for b in 0..p {
                            info[(kk * p + a, ll2 * p + b)] += h
                                * design.x[(i, a)]
                                * design.x[(i, b)];
                        }
                    }
                }
            }
        }
        for a in 0..dim {
            for b in 0..a {
                info[(a, b)] = info[(b, a)];
            }
        }

        let delta = match info.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => {
                for a in 0..dim {
                    info[(a, a)] += 1e-10;
                }
                info.lu()
                    .solve(&grad)
                    .ok_or_else(|| GlmError::RankDeficient("singular information matrix".into()))?
            }
        };

        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..=10 {
            let candidate = &beta + &delta * step;
            let ll_cand = multinomial_ll(&design.x, y, &w, &candidate, k1);
            if ll_cand + 1e-12 >= ll {
                let change = (ll_cand - ll).abs() / (ll.abs() + 1e-10);
                beta = candidate;
                ll = ll_cand;
                accepted = true;
                if grad.amax() <= opts.tol || change <= opts.tol {
                    converged = true;
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            converged = grad.amax() <= opts.tol.max(1e-6);
            break;
        }
        if converged {
            break;
        }
    }

    if !converged {
        return Err(GlmError::DidNotConverge(iterations));
    }

    let coefficients = (0..k1)
        .map(|kk| (0..p).map(|a| beta[kk * p + a]).collect())
        .collect();
    Ok(FittedMultinomial {
        classes: classes.to_vec(),
        coefficients,
        log_likelihood: ll,
        n_used: n,
        iterations,
        converged,
    })
}
