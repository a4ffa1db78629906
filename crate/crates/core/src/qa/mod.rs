//! Question answering over guideline recommendations: BM25 lexical
//! retrieval plus a bonus for numeric ranges in the question that lie
//! within ranges stated by the recommendation.

mod numeric;

use std::collections::{HashMap, HashSet};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::guideline::{Grade, GuidelineDoc, Recommendation};

pub use numeric::{
    constraint_satisfied, normalize_quantity, parse_numeric_phrases, render, AliasTable, AltForm, Interval,
    NumericConstraint, QUANTITY_LEXICON,
};

static TOKEN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[a-z0-9]+").unwrap());

const STOPWORDS: &[&str] = &[
    "a", "about", "an", "and", "are", "as", "at", "be", "been", "but", "by", "can", "could", "do", "does",
    "for", "from", "has", "have", "he", "her", "his", "how", "i", "if", "in", "into", "is", "it", "its",
    "may", "might", "no", "not", "of", "on", "or", "our", "she", "should", "so", "such", "than", "that",
    "the", "their", "them", "then", "there", "these", "they", "this", "those", "to", "was", "we", "were",
    "what", "when", "where", "which", "while", "who", "whom", "why", "will", "with", "would", "you", "your",
];

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum QaError {
    #[error("question has no searchable terms")]
    EmptyQuery,
    #[error("recommendation store is empty")]
    EmptyStore,
    #[error("invalid qa config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QaConfig {
    pub k1: f64,
    pub b: f64,
    /// Bonus per question constraint satisfied by the recommendation.
    pub beta: f64,
    pub default_k: usize,
    pub aliases: AliasTable,
}

impl Default for QaConfig {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75, beta: 2.0, default_k: 3, aliases: AliasTable::default() }
    }
}

impl QaConfig {
    pub fn validate(&self) -> Result<(), QaError> {
        if !(self.k1.is_finite() && self.k1 >= 0.0) {
            return Err(QaError::Config("k1 must be finite and non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(QaError::Config("b must lie in [0, 1]".into()));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(QaError::Config("beta must be finite and non-negative".into()));
        }
        if self.default_k == 0 {
            return Err(QaError::Config("default_k must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintMatch {
    pub question: NumericConstraint,
    pub answer: NumericConstraint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedAnswer {
    pub rec_id: String,
    pub answer_text: String,
    pub grade: Grade,
    pub lexical_score: f64,
    pub numeric_bonus: f64,
    pub matched_constraints: Vec<ConstraintMatch>,
    pub total: f64,
}

/// Anything that can rank recommendations for a question.
pub trait Answerer {
    /// Top `k` answers, best first, ties broken by `rec_id`.
    fn ask(&self, question: &str, k: usize) -> Result<Vec<RankedAnswer>, QaError>;
}

/// Lowercased alphanumeric runs with stopwords removed.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    TOKEN
        .find_iter(&lower)
        .map(|m| m.as_str())
        .filter(|t| !STOPWORDS.contains(t))
        .map(str::to_string)
        .collect()
}

#[derive(Debug)]
struct Entry {
    rec: Recommendation,
    tf: HashMap<String, usize>,
    len: usize,
}

/// BM25 index over an immutable set of recommendations.
#[derive(Debug)]
pub struct Bm25Index {
    entries: Vec<Entry>,
    df: HashMap<String, usize>,
    avgdl: f64,
    cfg: QaConfig,
}

impl Bm25Index {
    pub fn new(recs: impl IntoIterator<Item = Recommendation>, cfg: QaConfig) -> Result<Self, QaError> {
        cfg.validate()?;
        let mut entries: Vec<Entry> = recs
            .into_iter()
            .map(|rec| {
                let toks = tokenize(&rec.text);
                let mut tf = HashMap::new();
                for t in &toks {
                    *tf.entry(t.clone()).or_insert(0) += 1;
                }
                Entry { len: toks.len(), tf, rec }
            })
            .collect();
        if entries.is_empty() {
            return Err(QaError::EmptyStore);
        }
        entries.sort_by(|a, b| a.rec.rec_id.cmp(&b.rec.rec_id));
        let mut df = HashMap::new();
        for e in &entries {
            for t in e.tf.keys() {
                *df.entry(t.clone()).or_insert(0) += 1;
            }
        }
        let total: usize = entries.iter().map(|e| e.len).sum();
        let avgdl = (total as f64 / entries.len() as f64).max(1.0);
        Ok(Self { entries, df, avgdl, cfg })
    }

    pub fn from_doc(doc: &GuidelineDoc, cfg: QaConfig) -> Result<Self, QaError> {
        Self::new(doc.recommendations().cloned(), cfg)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn config(&self) -> &QaConfig {
        &self.cfg
    }

    fn idf(&self, term: &str) -> f64 {
        let n = self.entries.len() as f64;
        let df = self.df.get(term).copied().unwrap_or(0) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn lexical(&self, e: &Entry, terms: &[String]) -> f64 {
        let QaConfig { k1, b, .. } = self.cfg;
        terms
            .iter()
            .map(|t| {
                let f = e.tf.get(t).copied().unwrap_or(0) as f64;
                if f == 0.0 {
                    return 0.0;
                }
                let norm = k1 * (1.0 - b + b * e.len as f64 / self.avgdl);
                self.idf(t) * f * (k1 + 1.0) / (f + norm)
            })
            .sum()
    }

    fn matches(&self, question: &[NumericConstraint], rec: &Recommendation) -> Vec<ConstraintMatch> {
        question
            .iter()
            .filter_map(|q| {
                rec.numeric_constraints
                    .iter()
                    .find(|a| constraint_satisfied(q, a, &self.cfg.aliases))
                    .map(|a| ConstraintMatch { question: q.clone(), answer: a.clone() })
            })
            .collect()
    }
}

impl Answerer for Bm25Index {
    fn ask(&self, question: &str, k: usize) -> Result<Vec<RankedAnswer>, QaError> {
        let mut seen = HashSet::new();
        let terms: Vec<String> = tokenize(question).into_iter().filter(|t| seen.insert(t.clone())).collect();
        if terms.is_empty() {
            return Err(QaError::EmptyQuery);
        }
        let qc = parse_numeric_phrases(question);
        let mut out: Vec<RankedAnswer> = self
            .entries
            .iter()
            .map(|e| {
                let lexical_score = self.lexical(e, &terms);
                let matched_constraints = self.matches(&qc, &e.rec);
                let numeric_bonus = self.cfg.beta * matched_constraints.len() as f64;
                RankedAnswer {
                    rec_id: e.rec.rec_id.clone(),
                    answer_text: e.rec.text.clone(),
                    grade: e.rec.grade,
                    lexical_score,
                    numeric_bonus,
                    matched_constraints,
                    total: lexical_score + numeric_bonus,
                }
            })
            .collect();
        out.sort_by(|a, b| b.total.total_cmp(&a.total).then_with(|| a.rec_id.cmp(&b.rec_id)));
        out.truncate(k);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, text: &str) -> Recommendation {
        Recommendation::new(id.into(), text.into(), Grade::A)
    }

    fn corpus() -> Vec<Recommendation> {
        vec![
            rec("9.1.1", "Metformin is the preferred initial pharmacologic agent for type 2 diabetes."),
            rec(
                "9.1.2",
                "The early introduction of insulin should be considered when A1C levels (greater than 10% [86 mmol/mol]) are very high.",
            ),
            rec("9.1.3", "Treatment intensification for patients not meeting treatment goals should not be delayed."),
            rec("11.1.1", "Assess urinary albumin and eGFR at least once a year."),
        ]
    }

    #[test]
    fn tokenizer_drops_stopwords_and_punctuation() {
        assert_eq!(tokenize("What should be done if A1C is > 10%?"), ["done", "a1c", "10"]);
        assert!(tokenize("what is the").is_empty());
    }

    #[test]
    fn idf_matches_closed_form() {
        let idx = Bm25Index::new(corpus(), QaConfig::default()).unwrap();
        // "a1c" occurs in one of four documents.
        let expected = (1.0f64 + (4.0 - 1.0 + 0.5) / 1.5).ln();
        assert!((idx.idf("a1c") - expected).abs() < 1e-15);
    }

    #[test]
    fn single_term_score_matches_hand_computation() {
        let docs = vec![rec("1.1.1", "insulin insulin dose"), rec("1.1.2", "metformin dose")];
        let idx = Bm25Index::new(docs, QaConfig::default()).unwrap();
        let r = idx.ask("insulin", 2).unwrap();
        let (k1, b, avgdl) = (1.2, 0.75, 2.5);
        let idf = (1.0f64 + (2.0 - 1.0 + 0.5) / 1.5).ln();
        let expected = idf * 2.0 * (k1 + 1.0) / (2.0 + k1 * (1.0 - b + b * 3.0 / avgdl));
        assert_eq!(r[0].rec_id, "1.1.1");
        assert!((r[0].lexical_score - expected).abs() < 1e-12);
        assert_eq!(r[1].lexical_score, 0.0);
    }

    #[test]
    fn numeric_question_ranks_insulin_first() {
        let idx = Bm25Index::new(corpus(), QaConfig::default()).unwrap();
        let r = idx.ask("What should be done if A1C levels are greater than 10?", 3).unwrap();
        assert_eq!(r[0].rec_id, "9.1.2");
        assert_eq!(r[0].numeric_bonus, 2.0);
        assert_eq!(r[0].matched_constraints.len(), 1);
        assert_eq!(r[0].total, r[0].lexical_score + r[0].numeric_bonus);
    }

    #[test]
    fn wider_question_range_earns_no_bonus() {
        let idx = Bm25Index::new(corpus(), QaConfig::default()).unwrap();
        let r = idx.ask("What if A1C levels are greater than 7?", 4).unwrap();
        assert!(r.iter().all(|a| a.numeric_bonus == 0.0));
    }

    #[test]
    fn goals_question_finds_intensification() {
        let idx = Bm25Index::new(corpus(), QaConfig::default()).unwrap();
        let r = idx.ask("What is typically done for patients not meeting treatment goals?", 3).unwrap();
        assert!(r[0].answer_text.contains("should not be delayed"));
    }

    #[test]
    fn errors() {
        assert_eq!(Bm25Index::new(vec![], QaConfig::default()).err(), Some(QaError::EmptyStore));
        let idx = Bm25Index::new(corpus(), QaConfig::default()).unwrap();
        assert_eq!(idx.ask("?? what is it", 3).unwrap_err(), QaError::EmptyQuery);
        let bad = QaConfig { b: 2.0, ..QaConfig::default() };
        assert!(matches!(Bm25Index::new(corpus(), bad), Err(QaError::Config(_))));
    }

    #[test]
    fn irrelevant_document_never_displaces_positive_results() {
        let base = Bm25Index::new(corpus(), QaConfig::default()).unwrap();
        let mut more = corpus();
        more.push(rec("0.0.1", "Foot examinations are part of routine care."));
        let grown = Bm25Index::new(more, QaConfig::default()).unwrap();
        let q = "What should be done if A1C levels are greater than 10?";
        let a = base.ask(q, 4).unwrap();
        let b = grown.ask(q, 4).unwrap();
        let positive: Vec<_> = a.iter().filter(|x| x.total > 0.0).map(|x| x.rec_id.clone()).collect();
        let after: Vec<_> = b.iter().take(positive.len()).map(|x| x.rec_id.clone()).collect();
        assert_eq!(positive, after);
    }

    proptest::proptest! {
        #[test]
        fn insertion_order_is_irrelevant(seed in 0u64..500) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut docs = corpus();
            docs.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = Bm25Index::new(corpus(), QaConfig::default()).unwrap();
            let b = Bm25Index::new(docs, QaConfig::default()).unwrap();
            for q in ["insulin A1C greater than 10", "patients treatment goals", "eGFR albumin"] {
                proptest::prop_assert_eq!(a.ask(q, 4).unwrap(), b.ask(q, 4).unwrap());
            }
        }
    }
}
