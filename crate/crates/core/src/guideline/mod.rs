//! Guideline ingestion: selector-driven HTML parsing into a
//! chapter → group → recommendation tree, and its versioned JSON form.

mod doc;
mod parse;

pub use doc::{
    Chapter, Grade, GuidelineDoc, Recommendation, RecommendationGroup, ValidationReport, Violation,
    SCHEMA_VERSION,
};
pub use parse::{normalize_whitespace, parse_html, ParseConfig, ParseReport};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GuidelineError {
    #[error("validation error at {path}: {message}")]
    Validation { path: String, message: String },
    #[error("unsupported schema version {0}")]
    UnsupportedVersion(String),
    #[error("structure error: {0}")]
    Structure(String),
    #[error("parse config: {0}")]
    Config(String),
}

/// Guideline HTML shipped with the crate.
pub const FIXTURE_HTML: &[u8] = include_bytes!("../../fixtures/guidelines.html");
/// Parse config matching [`FIXTURE_HTML`].
pub const FIXTURE_PARSE_CONFIG: &[u8] = include_bytes!("../../fixtures/guideline_parse.json");

/// The parsed fixture document.
pub fn fixture_doc() -> GuidelineDoc {
    let cfg = ParseConfig::from_json(FIXTURE_PARSE_CONFIG).expect("valid fixture config");
    parse_html(FIXTURE_HTML, &cfg).expect("valid fixture html").0
}
