//! Toolkit for triaging microscopy-style image frames as diagnostic or
//! nondiagnostic: small CNN classifiers trained from scratch with SGD,
//! a histogram-entropy baseline, stratified cross-validation, ROC/AUC
//! analysis, and a streaming inference benchmark, all on a synthetic
//! surrogate dataset.

pub mod cli;
pub mod data;
pub mod entropy;
pub mod metrics;
pub mod nets;
pub mod nn;
pub mod report;
pub mod stream;
pub mod trainer;
