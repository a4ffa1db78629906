//! Diagnosis-code syntax checks and wildcard code patterns.

use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::CohortError;

static ICD9: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(\d{3}|V\d{2}|E\d{3})(\.\d{1,2})?$").unwrap());
static ICD10: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^[A-Z]\d{2}(\.\d{1,4})?$").unwrap());

/// Which coding system a code's syntax belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodeSystem {
    Icd9,
    Icd10,
}

/// Classifies a diagnosis code by syntax. ICD-9 E-codes (`E850.0`) and
/// ICD-10 chapter-E codes (`E11.9`) are told apart by digit count. `Vnn.n`
/// is valid in both systems and is read as an ICD-9 supplementary code.
pub fn code_system(code: &str) -> Option<CodeSystem> {
    if code.starts_with('V') && ICD9.is_match(code) {
        Some(CodeSystem::Icd9)
    } else if ICD10.is_match(code) {
        Some(CodeSystem::Icd10)
    } else if ICD9.is_match(code) {
        Some(CodeSystem::Icd9)
    } else {
        None
    }
}

pub fn is_valid_code(code: &str) -> bool {
    code_system(code).is_some()
}

/// A diagnosis-code glob. `*` matches any (possibly empty) run of
/// characters, and a trailing `.*` also matches the bare category, so
/// `N18.*` covers `N18`, `N18.3` and `N18.30`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CodePattern {
    raw: String,
}

impl CodePattern {
    pub fn new(raw: &str) -> Result<Self, CohortError> {
        let raw = raw.trim().to_ascii_uppercase();
        let ok = !raw.is_empty()
            && raw
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '.' || c == '*');
        if !ok {
            return Err(CohortError::InvalidPattern(raw));
        }
        Ok(Self { raw })
    }

    pub fn as_str(&self) -> &str {
        &self.raw
    }

    pub fn is_exact(&self) -> bool {
        !self.raw.contains('*')
    }

    /// Number of non-wildcard characters; more literal characters means a
    /// more specific pattern.
    pub fn specificity(&self) -> usize {
        self.raw.chars().filter(|&c| c != '*').count()
    }

    pub fn matches(&self, code: &str) -> bool {
        if glob_match(self.raw.as_bytes(), code.as_bytes()) {
            return true;
        }
        match self.raw.strip_suffix(".*") {
            Some(stem) => glob_match(stem.as_bytes(), code.as_bytes()),
            None => false,
        }
    }

    /// A concrete code matched by this pattern, with every `*` replaced by `0`.
    pub fn instantiate(&self) -> String {
        self.raw.replace('*', "0")
    }
}

fn glob_match(pattern: &[u8], text: &[u8]) -> bool {
    let (mut p, mut t) = (0, 0);
    let mut star: Option<(usize, usize)> = None;
    while t < text.len() {
        if p < pattern.len() && pattern[p] == b'*' {
            star = Some((p, t));
            p += 1;
        } else if p < pattern.len() && pattern[p] == text[t] {
            p += 1;
            t += 1;
        } else if let Some((sp, st)) = star {
            p = sp + 1;
            t = st + 1;
            star = Some((sp, st + 1));
        } else {
            return false;
        }
    }
    pattern[p..].iter().all(|&c| c == b'*')
}

impl fmt::Debug for CodePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CodePattern({})", self.raw)
    }
}

impl fmt::Display for CodePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

impl Serialize for CodePattern {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.raw)
    }
}

impl<'de> Deserialize<'de> for CodePattern {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        CodePattern::new(&raw).map_err(serde::de::Error::custom)
    }
}

/// An ordered set of patterns; a code is a member if any pattern matches.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CodeSet(pub Vec<CodePattern>);

impl CodeSet {
    pub fn from_patterns(patterns: &[&str]) -> Self {
        CodeSet(
            patterns
                .iter()
                .map(|p| CodePattern::new(p).expect("static pattern"))
                .collect(),
        )
    }

    pub fn contains(&self, code: &str) -> bool {
        self.0.iter().any(|p| p.matches(code))
    }

    pub fn any_in<'a>(&self, codes: impl IntoIterator<Item = &'a String>) -> bool {
        codes.into_iter().any(|c| self.contains(c))
    }
}
