//! Core library for survey-based risk factor analysis: transport file
//! ingestion, columnar tables, imputation, regression, stepwise model
//! selection, and relative risk reporting.

pub mod glm;
pub mod impute;
pub mod pipeline;
pub mod risk;
pub mod select;
pub mod table;
pub mod xport;
