//! Chronic kidney disease risk prediction for type 2 diabetes cohorts, with
//! feature attributions, prototype summaries and guideline-grounded answers.

pub mod cohort;
pub mod risk;
pub mod explain;
pub mod guideline;
pub mod qa;
pub mod config;
pub mod context;
pub mod error;
pub mod store;
pub mod pipeline;
pub mod report;
