use std::collections::{BTreeSet, HashSet};
use std::sync::LazyLock;

use ego_tree::NodeId;
use regex::Regex;
use scraper::{ElementRef, Html, Node, Selector};
use serde::{Deserialize, Serialize};

use super::doc::{Chapter, Grade, GuidelineDoc, Recommendation, RecommendationGroup, SCHEMA_VERSION};
use super::GuidelineError;

static SPACE_BEFORE_PUNCT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\s+([.,;:!?)\]])").unwrap());
static SPACE_AFTER_OPEN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"([(\[])\s+").unwrap());
static LEADING_NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*(\d+)[.:]?\s").unwrap());

/// Maps structural markers in the HTML to document roles. Every field is
/// a CSS selector except where noted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParseConfig {
    /// Element carrying document attributes; the whole page when absent.
    pub document: String,
    pub document_title: String,
    /// Attribute names on the document element.
    pub doc_id_attr: String,
    pub year_attr: String,
    pub chapter: String,
    pub chapter_title: String,
    /// Attribute giving the chapter id; falls back to the leading number
    /// of the title, then the chapter ordinal.
    pub chapter_id_attr: String,
    pub group: String,
    pub group_title: String,
    pub recommendation: String,
    pub grade: String,
    /// When no grade element is found, accept a trailing single-letter
    /// token from the grade vocabulary.
    pub trailing_grade: bool,
    /// Elements whose text never enters a recommendation.
    pub exclude: Vec<String>,
    pub free_text: String,
}

impl Default for ParseConfig {
    fn default() -> Self {
        Self {
            document: "article.guideline".into(),
            document_title: "h1".into(),
            doc_id_attr: "data-doc-id".into(),
            year_attr: "data-year".into(),
            chapter: "section.chapter".into(),
            chapter_title: "h2".into(),
            chapter_id_attr: "data-chapter-id".into(),
            group: "section.rec-group".into(),
            group_title: "h3".into(),
            recommendation: "div.recommendation".into(),
            grade: ".grade".into(),
            trailing_grade: true,
            exclude: vec![".rec-number".into()],
            free_text: "div.free-text".into(),
        }
    }
}

impl ParseConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self, GuidelineError> {
        let de = &mut serde_json::Deserializer::from_slice(bytes);
        serde_path_to_error::deserialize(de).map_err(|e| GuidelineError::Validation {
            path: format!("$.{}", e.path()),
            message: e.inner().to_string(),
        })
    }
}

/// What the parser saw but did not turn into document content.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParseReport {
    pub skipped: Vec<String>,
}

struct Selectors {
    document: Selector,
    document_title: Selector,
    chapter: Selector,
    chapter_title: Selector,
    group: Selector,
    group_title: Selector,
    recommendation: Selector,
    grade: Selector,
    exclude: Vec<Selector>,
    free_text: Selector,
}

fn sel(s: &str, field: &str) -> Result<Selector, GuidelineError> {
    Selector::parse(s).map_err(|e| GuidelineError::Config(format!("{field}: invalid selector `{s}`: {e}")))
}

impl Selectors {
    fn new(c: &ParseConfig) -> Result<Self, GuidelineError> {
        Ok(Self {
            document: sel(&c.document, "document")?,
            document_title: sel(&c.document_title, "document_title")?,
            chapter: sel(&c.chapter, "chapter")?,
            chapter_title: sel(&c.chapter_title, "chapter_title")?,
            group: sel(&c.group, "group")?,
            group_title: sel(&c.group_title, "group_title")?,
            recommendation: sel(&c.recommendation, "recommendation")?,
            grade: sel(&c.grade, "grade")?,
            exclude: c.exclude.iter().map(|s| sel(s, "exclude")).collect::<Result<_, _>>()?,
            free_text: sel(&c.free_text, "free_text")?,
        })
    }
}

/// Collapses whitespace runs and tightens spacing around brackets and
/// punctuation, so inter-tag whitespace never changes the result.
pub fn normalize_whitespace(s: &str) -> String {
    let collapsed = s.split_whitespace().collect::<Vec<_>>().join(" ");
    let t = SPACE_BEFORE_PUNCT.replace_all(&collapsed, "$1");
    SPACE_AFTER_OPEN.replace_all(&t, "$1").into_owned()
}

/// Text of `el` with the text of every element in `skip` left out. Text
/// nodes are joined by spaces before normalisation.
fn text_without(el: ElementRef<'_>, skip: &HashSet<NodeId>) -> String {
    let mut parts = Vec::new();
    for node in el.descendants() {
        if let Node::Text(t) = node.value() {
            if node.ancestors().any(|a| skip.contains(&a.id())) {
                continue;
            }
            parts.push(&**t);
        }
    }
    normalize_whitespace(&parts.join(" "))
}

fn plain_text(el: ElementRef<'_>) -> String {
    text_without(el, &HashSet::new())
}

/// Short description of `el` for the parse report.
fn describe(el: ElementRef<'_>) -> String {
    let v = el.value();
    let mut d = v.name().to_string();
    if let Some(id) = v.id() {
        d.push('#');
        d.push_str(id);
    }
    for c in v.classes() {
        d.push('.');
        d.push_str(c);
    }
    let text = plain_text(el);
    let short: String = text.chars().take(40).collect();
    format!("<{d}> \"{short}\"")
}

fn trailing_grade(text: &str) -> Option<(Grade, String)> {
    let (head, last) = text.rsplit_once(' ')?;
    let g = Grade::from_letter(last)?;
    Some((g, head.trim_end().to_string()))
}

/// Parses guideline HTML into the chapter → group → recommendation tree.
pub fn parse_html(html: &[u8], cfg: &ParseConfig) -> Result<(GuidelineDoc, ParseReport), GuidelineError> {
    let s = Selectors::new(cfg)?;
    let page = Html::parse_document(&String::from_utf8_lossy(html));
    let mut report = ParseReport::default();

    let root = page.select(&s.document).next().unwrap_or_else(|| page.root_element());
    let title = root.select(&s.document_title).next().map(plain_text).unwrap_or_default();
    let doc_id = root.value().attr(&cfg.doc_id_attr).unwrap_or("guideline").to_string();
    let year = root.value().attr(&cfg.year_attr).and_then(|y| y.trim().parse().ok());

    let mut chapters = Vec::new();
    let mut seen_titles = BTreeSet::new();
    let mut claimed: HashSet<NodeId> = HashSet::new();
    for (ci, ch_el) in root.select(&s.chapter).enumerate() {
        let ch_title = ch_el.select(&s.chapter_title).next().map(plain_text).unwrap_or_default();
        if ch_title.is_empty() {
            report.skipped.push(format!("chapter {} without a title", ci + 1));
            continue;
        }
        if !seen_titles.insert(ch_title.clone()) {
            return Err(GuidelineError::Structure(format!("duplicate chapter title `{ch_title}`")));
        }
        let chapter_id = ch_el
            .value()
            .attr(&cfg.chapter_id_attr)
            .map(str::to_string)
            .or_else(|| LEADING_NUMBER.captures(&ch_title).map(|c| c[1].to_string()))
            .unwrap_or_else(|| (ci + 1).to_string());

        let mut groups = Vec::new();
        for g_el in ch_el.select(&s.group) {
            let g = groups.len() + 1;
            let topic = g_el.select(&s.group_title).next().map(plain_text).unwrap_or_default();
            let mut recs = Vec::new();
            for r_el in g_el.select(&s.recommendation) {
                claimed.insert(r_el.id());
                let mut skip: HashSet<_> = HashSet::new();
                for ex in &s.exclude {
                    skip.extend(r_el.select(ex).map(|e| e.id()));
                }
                let grade_el = r_el.select(&s.grade).last();
                let mut grade = Grade::Ungraded;
                if let Some(ge) = grade_el {
                    let letter = plain_text(ge);
                    match Grade::from_letter(&letter) {
                        Some(gr) => grade = gr,
                        None => report.skipped.push(format!("grade marker `{letter}` outside the vocabulary")),
                    }
                    skip.insert(ge.id());
                }
                let mut text = text_without(r_el, &skip);
                if grade_el.is_none() && cfg.trailing_grade {
                    if let Some((gr, rest)) = trailing_grade(&text) {
                        grade = gr;
                        text = rest;
                    }
                }
                if text.is_empty() {
                    report.skipped.push(format!("empty recommendation {}", describe(r_el)));
                    continue;
                }
                let rec_id = format!("{chapter_id}.{g}.{}", recs.len() + 1);
                recs.push(Recommendation::new(rec_id, text, grade));
            }
            if recs.is_empty() {
                report.skipped.push(format!("group without recommendations {}", describe(g_el)));
                continue;
            }
            groups.push(RecommendationGroup { group_id: format!("{chapter_id}.{g}"), topic, recommendations: recs });
        }
        for stray in ch_el.select(&s.recommendation).filter(|r| !claimed.contains(&r.id())) {
            report.skipped.push(format!("recommendation outside any group {}", describe(stray)));
        }
        let free_text_sections = ch_el
            .select(&s.free_text)
            .map(plain_text)
            .filter(|t| !t.is_empty())
            .collect();
        chapters.push(Chapter { chapter_id, title: ch_title, groups, free_text_sections });
    }

    if chapters.is_empty() {
        return Err(GuidelineError::Structure("no chapters found".into()));
    }
    let doc = GuidelineDoc { schema_version: SCHEMA_VERSION, doc_id, title, year, chapters };
    if doc.recommendation_count() == 0 {
        return Err(GuidelineError::Structure("no recommendations found".into()));
    }
    Ok((doc, report))
}
