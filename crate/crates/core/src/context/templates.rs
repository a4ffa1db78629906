use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ContextError, QuestionKind};

/// Templates shipped with the crate.
pub const FIXTURE_TEMPLATES: &[u8] = include_bytes!("../../fixtures/context_templates.json");

/// Question text per kind code and the drug-viability answer skeleton.
/// Placeholders are `{slot}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Templates {
    pub questions: BTreeMap<String, String>,
    /// Slots: `drug_class`, `risk`, `comorbidity_list`.
    pub drug_viability: String,
    pub drug_class: String,
}

impl Default for Templates {
    fn default() -> Self {
        Self::from_json(FIXTURE_TEMPLATES).expect("valid bundled templates")
    }
}

impl Templates {
    pub fn from_json(bytes: &[u8]) -> Result<Self, ContextError> {
        let t: Templates = serde_json::from_slice(bytes).map_err(|e| ContextError::Template(e.to_string()))?;
        for k in QuestionKind::NAMED {
            let q = t
                .questions
                .get(k.code())
                .ok_or_else(|| ContextError::Template(format!("no question template for {}", k.code())))?;
            placeholders(q)?;
        }
        for name in placeholders(&t.drug_viability)? {
            if !matches!(name.as_str(), "drug_class" | "risk" | "comorbidity_list") {
                return Err(ContextError::Template(format!("unknown slot `{name}` in drug_viability")));
            }
        }
        Ok(t)
    }

    pub fn question(&self, kind: QuestionKind) -> Option<&str> {
        self.questions.get(kind.code()).map(String::as_str)
    }
}

/// Slot names in order of appearance.
pub fn placeholders(template: &str) -> Result<Vec<String>, ContextError> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find(['{', '}']) {
        if rest.as_bytes()[open] == b'}' {
            return Err(ContextError::Template(format!("unmatched `}}` in `{template}`")));
        }
        let after = &rest[open + 1..];
        let close = after
            .find('}')
            .ok_or_else(|| ContextError::Template(format!("unclosed `{{` in `{template}`")))?;
        let name = &after[..close];
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(ContextError::Template(format!("bad slot name `{name}`")));
        }
        out.push(name.to_string());
        rest = &after[close + 1..];
    }
    Ok(out)
}

/// Substitutes every `{slot}`; a slot without a value is an error.
pub fn fill(template: &str, slots: &BTreeMap<String, String>) -> Result<String, ContextError> {
    let names = placeholders(template)?;
    let mut out = template.to_string();
    for name in names {
        let v = slots
            .get(&name)
            .ok_or_else(|| ContextError::Template(format!("no value for slot `{name}`")))?;
        out = out.replacen(&format!("{{{name}}}"), v, 1);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slots(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn fills_slots() {
        let t = "risk is {risk}; {drug_class}";
        assert_eq!(fill(t, &slots(&[("risk", "0.83"), ("drug_class", "X")])).unwrap(), "risk is 0.83; X");
        assert!(fill(t, &slots(&[("risk", "0.83")])).is_err());
        assert!(fill("{oops", &BTreeMap::new()).is_err());
        assert!(fill("oops}", &BTreeMap::new()).is_err());
        assert!(fill("{a b}", &BTreeMap::new()).is_err());
    }

    #[test]
    fn bundled_templates_are_complete() {
        let t = Templates::default();
        assert_eq!(placeholders(t.question(QuestionKind::LabThresholdGuideline).unwrap()).unwrap(), ["a1c"]);
        assert!(t.drug_viability.contains("risk is found to be {risk}"));
        let mut v: serde_json::Value = serde_json::from_slice(FIXTURE_TEMPLATES).unwrap();
        v["questions"].as_object_mut().unwrap().remove("Q4");
        assert!(Templates::from_json(&serde_json::to_vec(&v).unwrap()).is_err());
    }
}
