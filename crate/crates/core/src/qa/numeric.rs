//! Numeric phrase grammar: comparator phrases, `between X and Y`, units
//! and bracketed restatements in an alternate unit.

use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

const NUM: &str = r"(\d+(?:\.\d+)?)";
const UNIT: &str = r"(%|mg/dl\b|mmol/mol\b|mmol/l\b)";

static COMPARATOR: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(
        r"(?i)(\bgreater\s+than\s+or\s+equal\s+to\b|\bless\s+than\s+or\s+equal\s+to\b|\bgreater\s+than\b|\bless\s+than\b|\bat\s+least\b|\bat\s+most\b|\babove\b|\bbelow\b|>=|<=|≥|≤|>|<)\s*{NUM}\s*{UNIT}?"
    ))
    .unwrap()
});
static BETWEEN: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(r"(?i)\bbetween\s+{NUM}\s*{UNIT}?\s+and\s+{NUM}\s*{UNIT}?"))
        .unwrap()
});
static RESTATEMENT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!(r"(?i)^\s*[\[(]\s*{NUM}\s*{UNIT}\s*[\])]")).unwrap());
static WORD: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[A-Za-z][A-Za-z0-9]*").unwrap());

/// Tokens searched for the quantity a number refers to.
const QUANTITY_WINDOW: usize = 5;

/// Quantity words recognised ahead of other preceding tokens.
pub const QUANTITY_LEXICON: &[&str] = &[
    "a1c", "hba1c", "glucose", "egfr", "uacr", "albumin", "creatinine", "bmi", "ldl", "hdl",
    "triglycerides", "potassium", "pressure", "weight", "age",
];

const FILLER: &[&str] = &[
    "a", "an", "the", "is", "are", "was", "were", "be", "been", "levels", "level", "of", "if",
    "when", "or", "and", "with", "for", "to", "in", "on", "at", "by", "value", "values", "that",
    "who", "whose", "has", "have", "still", "remains", "remain",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    /// `None` is unbounded.
    pub lower: Option<f64>,
    pub lower_closed: bool,
    pub upper: Option<f64>,
    pub upper_closed: bool,
}

impl Interval {
    pub fn above(x: f64, closed: bool) -> Self {
        Self { lower: Some(x), lower_closed: closed, upper: None, upper_closed: false }
    }

    pub fn below(x: f64, closed: bool) -> Self {
        Self { lower: None, lower_closed: false, upper: Some(x), upper_closed: closed }
    }

    pub fn closed(lo: f64, hi: f64) -> Self {
        Self { lower: Some(lo), lower_closed: true, upper: Some(hi), upper_closed: true }
    }

    pub fn contains(&self, v: f64) -> bool {
        let lo = match self.lower {
            None => true,
            Some(l) => v > l || (self.lower_closed && v == l),
        };
        let hi = match self.upper {
            None => true,
            Some(u) => v < u || (self.upper_closed && v == u),
        };
        lo && hi
    }

    /// `self ⊆ other`, respecting open and closed ends.
    pub fn is_subset_of(&self, other: &Interval) -> bool {
        let lower_ok = match (self.lower, other.lower) {
            (_, None) => true,
            (None, Some(_)) => false,
            (Some(a), Some(b)) => a > b || (a == b && (other.lower_closed || !self.lower_closed)),
        };
        let upper_ok = match (self.upper, other.upper) {
            (_, None) => true,
            (None, Some(_)) => false,
            (Some(a), Some(b)) => a < b || (a == b && (other.upper_closed || !self.upper_closed)),
        };
        lower_ok && upper_ok
    }

    /// A finite point inside the interval, if it is non-empty.
    pub fn witness(&self) -> Option<f64> {
        let p = match (self.lower, self.upper) {
            (Some(l), Some(u)) => 0.5 * (l + u),
            (Some(l), None) => l + 1.0,
            (None, Some(u)) => u - 1.0,
            (None, None) => 0.0,
        };
        self.contains(p).then_some(p)
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let open = if self.lower_closed { '[' } else { '(' };
        let close = if self.upper_closed { ']' } else { ')' };
        let lo = self.lower.map_or("-∞".to_string(), |v| v.to_string());
        let hi = self.upper.map_or("∞".to_string(), |v| v.to_string());
        write!(f, "{open}{lo}, {hi}{close}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AltForm {
    pub interval: Interval,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericConstraint {
    pub quantity: String,
    pub interval: Interval,
    pub unit: Option<String>,
    /// Bracketed restatements such as `[86 mmol/mol]`.
    #[serde(default)]
    pub alternates: Vec<AltForm>,
    /// Character offsets `[start, end)` in the parsed text.
    pub source_span: [usize; 2],
}

impl fmt::Display for NumericConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.quantity, self.interval)?;
        if let Some(u) = &self.unit {
            write!(f, " {u}")?;
        }
        Ok(())
    }
}

fn canonical_unit(raw: &str) -> String {
    match raw.to_ascii_lowercase().as_str() {
        "%" => "%".into(),
        "mg/dl" => "mg/dL".into(),
        "mmol/mol" => "mmol/mol".into(),
        "mmol/l" => "mmol/L".into(),
        other => other.into(),
    }
}

fn comparator_interval(cmp: &str, x: f64) -> Interval {
    let cmp = cmp.split_whitespace().collect::<Vec<_>>().join(" ").to_ascii_lowercase();
    match cmp.as_str() {
        "greater than or equal to" | "at least" | ">=" | "≥" => Interval::above(x, true),
        "greater than" | "above" | ">" => Interval::above(x, false),
        "less than or equal to" | "at most" | "<=" | "≤" => Interval::below(x, true),
        _ => Interval::below(x, false),
    }
}

/// Lowercase alphanumerics only: `HbA1c` → `hba1c`.
pub fn normalize_quantity(word: &str) -> String {
    word.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase()
}

/// Picks the quantity from the words before byte offset `end`: the nearest
/// lexicon word within the window, else the nearest non-filler word.
fn quantity_before(text: &str, end: usize) -> String {
    let words: Vec<&str> = WORD.find_iter(&text[..end]).map(|m| m.as_str()).collect();
    let window = &words[words.len().saturating_sub(QUANTITY_WINDOW)..];
    let norm: Vec<String> = window.iter().rev().map(|w| normalize_quantity(w)).collect();
    if let Some(q) = norm.iter().find(|w| QUANTITY_LEXICON.contains(&w.as_str())) {
        return q.clone();
    }
    norm.into_iter().find(|w| !FILLER.contains(&w.as_str())).unwrap_or_default()
}

fn char_offset(text: &str, byte: usize) -> usize {
    text[..byte].chars().count()
}

fn parse_num(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Extracts every numeric constraint in `text`, in order of appearance.
/// Malformed numerics are skipped.
pub fn parse_numeric_phrases(text: &str) -> Vec<NumericConstraint> {
    let mut found: Vec<(usize, NumericConstraint)> = Vec::new();
    let mut taken: Vec<(usize, usize)> = Vec::new();

    for c in BETWEEN.captures_iter(text) {
        let m = c.get(0).unwrap();
        let (Some(lo), Some(hi)) = (parse_num(&c[1]), parse_num(&c[3])) else {
            log::debug!("skipping unparseable range `{}`", m.as_str());
            continue;
        };
        if lo > hi {
            log::debug!("skipping inverted range `{}`", m.as_str());
            continue;
        }
        let unit = c.get(4).or(c.get(2)).map(|u| canonical_unit(u.as_str()));
        found.push((
            m.start(),
            NumericConstraint {
                quantity: quantity_before(text, m.start()),
                interval: Interval::closed(lo, hi),
                unit,
                alternates: Vec::new(),
                source_span: [char_offset(text, m.start()), char_offset(text, m.end())],
            },
        ));
        taken.push((m.start(), m.end()));
    }

    for c in COMPARATOR.captures_iter(text) {
        let m = c.get(0).unwrap();
        if taken.iter().any(|&(s, e)| m.start() < e && s < m.end()) {
            continue;
        }
        let Some(x) = parse_num(&c[2]) else {
            log::debug!("skipping unparseable number in `{}`", m.as_str());
            continue;
        };
        let mut end = m.end();
        let mut alternates = Vec::new();
        if let Some(r) = RESTATEMENT.captures(&text[end..]) {
            if let Some(v) = parse_num(&r[1]) {
                alternates.push(AltForm { interval: comparator_interval(&c[1], v), unit: canonical_unit(&r[2]) });
                end += r.get(0).unwrap().end();
            }
        }
        found.push((
            m.start(),
            NumericConstraint {
                quantity: quantity_before(text, m.start()),
                interval: comparator_interval(&c[1], x),
                unit: c.get(3).map(|u| canonical_unit(u.as_str())),
                alternates,
                source_span: [char_offset(text, m.start()), char_offset(text, end)],
            },
        ));
    }
    found.sort_by_key(|(s, _)| *s);
    found.into_iter().map(|(_, c)| c).collect()
}

fn fmt_value(v: f64, unit: Option<&str>) -> String {
    match unit {
        None => v.to_string(),
        Some("%") => format!("{v}%"),
        Some(u) => format!("{v} {u}"),
    }
}

/// Canonical text for a constraint; parsing it yields the same quantity,
/// interval, unit and alternates.
pub fn render(c: &NumericConstraint) -> String {
    let unit = c.unit.as_deref();
    let i = &c.interval;
    let body = match (i.lower, i.upper) {
        (Some(lo), Some(hi)) => format!("between {} and {}", fmt_value(lo, None), fmt_value(hi, unit)),
        (Some(lo), None) => {
            let cmp = if i.lower_closed { "greater than or equal to" } else { "greater than" };
            format!("{cmp} {}", fmt_value(lo, unit))
        }
        (None, Some(hi)) => {
            let cmp = if i.upper_closed { "less than or equal to" } else { "less than" };
            format!("{cmp} {}", fmt_value(hi, unit))
        }
        (None, None) => String::new(),
    };
    let mut out = if c.quantity.is_empty() { body } else { format!("{} {body}", c.quantity) };
    for alt in &c.alternates {
        let v = alt.interval.lower.or(alt.interval.upper).unwrap_or_default();
        out.push_str(&format!(" [{}]", fmt_value(v, Some(&alt.unit))));
    }
    out
}

/// Groups of interchangeable quantity names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AliasTable(pub Vec<Vec<String>>);

impl Default for AliasTable {
    fn default() -> Self {
        Self(vec![
            vec!["a1c".into(), "hba1c".into()],
            vec!["glucose".into(), "blood glucose".into()],
        ])
    }
}

impl AliasTable {
    fn canonical<'a>(&'a self, q: &'a str) -> &'a str {
        let q = q.trim();
        self.0
            .iter()
            .find(|g| g.iter().any(|n| n.eq_ignore_ascii_case(q)))
            .and_then(|g| g.first())
            .map_or(q, |s| s.as_str())
    }

    pub fn same_quantity(&self, a: &str, b: &str) -> bool {
        self.canonical(a).eq_ignore_ascii_case(self.canonical(b))
    }
}

/// True iff the quantities agree (directly or through an alias) and the
/// question's range lies inside the answer's. A missing unit on either
/// side matches any unit; otherwise the question unit must match the
/// answer's unit or one of its bracketed restatements.
pub fn constraint_satisfied(q: &NumericConstraint, a: &NumericConstraint, aliases: &AliasTable) -> bool {
    if !aliases.same_quantity(&q.quantity, &a.quantity) {
        return false;
    }
    let target = match (&q.unit, &a.unit) {
        (Some(qu), Some(au)) if !qu.eq_ignore_ascii_case(au) => {
            match a.alternates.iter().find(|alt| alt.unit.eq_ignore_ascii_case(qu)) {
                Some(alt) => &alt.interval,
                None => return false,
            }
        }
        _ => &a.interval,
    };
    q.interval.is_subset_of(target)
}
