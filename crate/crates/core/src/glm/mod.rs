//! Binary and multinomial logistic regression with the inference pieces the
//! reports need: Wald tests, Welch t-tests, and prediction.

mod design;
mod logistic;
mod multinomial;
mod predict;
mod stats;

pub use design::{
    build_design, extract_binary, extract_categorical, DesignColumn, DesignMatrix, ModelFormula,
    ResolvedTerm, TermSpec,
};
pub use logistic::{fit_logistic, log_likelihood_at, score_at, FitOptions, FittedModel};
pub use multinomial::{fit_multinomial, FittedMultinomial};
pub use predict::predict_prob;
pub use stats::{chi_square_upper_tail, two_sample_t, wald_test, TTestResult, WaldResult};

#[derive(Debug, thiserror::Error)]
pub enum GlmError {
    #[error("variable {0} not found in table")]
    MissingVariable(String),
    #[error("variable {variable} is {found}, formula declares {expected}")]
    KindMismatch {
        variable: String,
        expected: &'static str,
        found: &'static str,
    },
    #[error("variable {0} appears twice in the formula")]
    DuplicateTerm(String),
    #[error("reference level {level:?} of {variable} is not in the level dictionary")]
    ReferenceLevelUnobserved { variable: String, level: String },
    #[error("design matrix has no rows after dropping missing values")]
    EmptyDesign,
    #[error("design matrix is rank deficient: {0}")]
    RankDeficient(String),
    #[error("fit did not converge in {0} iterations")]
    DidNotConverge(usize),
    #[error("subcovariance of the tested term is singular")]
    SingularSubcovariance,
    #[error("both samples have zero variance")]
    DegenerateSample,
    #[error("level {level:?} of {variable} was not seen at training time")]
    UnknownLevel { variable: String, level: String },
    #[error("variable {variable} is missing in prediction row {row}")]
    MissingValue { variable: String, row: usize },
    #[error("outcome {variable} must be 0/1, found {found}")]
    NotBinary { variable: String, found: f64 },
    #[error("term index {0} is not in the model")]
    TermNotFound(usize),
    #[error("outcome {0} has fewer than two observed levels")]
    TooFewLevels(String),
}
