use std::collections::{BTreeMap, BTreeSet};

use super::bundle::format_risk;
use super::{
    fill, AnswerBundle, ContextConfig, ContextError, LabOverrides, LabProxy, Part, PartPayload, Provenance,
    QuestionKind, Routed, SlotSource, SlotValue, StatEntry, Templates,
};
use crate::cohort::{CcsMap, FeatureMatrix};
use crate::explain::{aggregate_importance, attribute, ExplanationSet};
use crate::qa::{Answerer, RankedAnswer};
use crate::risk::RiskModel;
use crate::store::artifact;

/// Loaded artifacts of one snapshot. Absent stores are `None`.
#[derive(Clone, Copy)]
pub struct Stores<'a> {
    pub snapshot: &'a str,
    pub features: Option<&'a FeatureMatrix>,
    pub ccs_map: Option<&'a CcsMap>,
    pub model: Option<&'a RiskModel>,
    pub explanations: Option<&'a ExplanationSet>,
    pub guidelines: Option<&'a dyn Answerer>,
    pub lab_overrides: &'a LabOverrides,
}

pub struct Contextualizer<'a> {
    stores: Stores<'a>,
    cfg: &'a ContextConfig,
    templates: &'a Templates,
}

struct Patient<'a> {
    id: &'a str,
    row: &'a [f64],
}

const COMORBIDITY_SLOT: &str = "comorbidity_list";

impl<'a> Contextualizer<'a> {
    pub fn new(stores: Stores<'a>, cfg: &'a ContextConfig, templates: &'a Templates) -> Self {
        Self { stores, cfg, templates }
    }

    fn features(&self) -> Result<&'a FeatureMatrix, ContextError> {
        self.stores.features.ok_or(ContextError::Dependency { store: "features", job: "build-cohort" })
    }

    fn ccs_map(&self) -> Result<&'a CcsMap, ContextError> {
        self.stores.ccs_map.ok_or(ContextError::Dependency { store: "ccs_map", job: "build-cohort" })
    }

    fn model(&self) -> Result<&'a RiskModel, ContextError> {
        self.stores.model.ok_or(ContextError::Dependency { store: "model", job: "train" })
    }

    fn explanations(&self) -> Result<&'a ExplanationSet, ContextError> {
        self.stores.explanations.ok_or(ContextError::Dependency { store: "explanations", job: "explain" })
    }

    fn guidelines(&self) -> Result<&'a dyn Answerer, ContextError> {
        self.stores.guidelines.ok_or(ContextError::Dependency { store: "guidelines", job: "ingest-guidelines" })
    }

    fn patient(&self, id: &'a str) -> Result<Patient<'a>, ContextError> {
        let m = self.features()?;
        let i = m.row_of(id).ok_or_else(|| ContextError::UnknownPatient(id.into()))?;
        Ok(Patient { id, row: &m.rows[i] })
    }

    /// Answers a routed question. Named kinds other than Q1 need a patient.
    pub fn answer(&self, routed: &Routed, patient_id: Option<&'a str>) -> Result<AnswerBundle, ContextError> {
        let kind = routed.kind;
        let patient = match patient_id {
            Some(id) => Some(self.patient(id)?),
            None if kind.needs_patient() => return Err(ContextError::PatientRequired(kind.code().into())),
            None => None,
        };
        let mut slots = BTreeMap::new();
        let question = match &routed.text {
            Some(t) if kind == QuestionKind::FreeText => t.clone(),
            _ => {
                let template = self
                    .templates
                    .question(kind)
                    .ok_or_else(|| ContextError::Template(format!("no question template for {kind}")))?;
                self.interpolate(template, patient.as_ref(), &mut slots)?
            }
        };
        let parts = match kind {
            QuestionKind::PrototypeOverview => self.prototype_overview()?,
            QuestionKind::RiskRationale => self.risk_rationale(need(&patient))?,
            QuestionKind::PatientDescription => self.patient_description(need(&patient))?,
            QuestionKind::LabThresholdGuideline | QuestionKind::TreatmentGoals => {
                self.guideline_parts(&question, self.cfg.answers_per_question)?
            }
            QuestionKind::ComplicationTreatment => {
                let mut parts = vec![self.risk_part(need(&patient))?];
                parts.extend(self.guideline_parts(&question, self.cfg.answers_per_question)?);
                parts
            }
            QuestionKind::DrugViability => self.drug_viability(need(&patient), &question, &mut slots)?,
            QuestionKind::FreeText => self.guideline_parts(&question, self.cfg.free_text_answers)?,
        };
        AnswerBundle::new(
            question,
            kind,
            patient.map(|p| p.id.to_string()),
            self.stores.snapshot.to_string(),
            slots,
            parts,
        )
    }

    fn interpolate(
        &self,
        template: &str,
        patient: Option<&Patient<'_>>,
        slots: &mut BTreeMap<String, SlotValue>,
    ) -> Result<String, ContextError> {
        let mut values = BTreeMap::new();
        for name in super::templates::placeholders(template)? {
            let slot = match (name.as_str(), patient) {
                (COMORBIDITY_SLOT, Some(p)) => {
                    SlotValue { value: self.comorbidity_list(p)?, source: SlotSource::Derived }
                }
                (_, p) => self.lab_slot(&name, p)?,
            };
            values.insert(name.clone(), slot.value.clone());
            slots.insert(name, slot);
        }
        fill(template, &values)
    }

    /// Value for a lab quantity: the override, else the proxy threshold.
    fn lab_slot(&self, quantity: &str, patient: Option<&Patient<'_>>) -> Result<SlotValue, ContextError> {
        if let Some(v) = patient.and_then(|p| self.stores.lab_overrides.get(p.id)).and_then(|l| l.get(quantity)) {
            return Ok(SlotValue { value: v.to_string(), source: SlotSource::Override });
        }
        let proxy = self
            .cfg
            .lab_proxies
            .iter()
            .find(|l| l.quantity.as_deref() == Some(quantity) && l.threshold.is_some())
            .ok_or_else(|| ContextError::Template(format!("no value or proxy for slot `{quantity}`")))?;
        let threshold = proxy.threshold.expect("filtered above");
        let flagged = match patient {
            Some(p) => self.proxy_hits(proxy, p)?.next().is_some(),
            None => false,
        };
        let source = if flagged { SlotSource::Proxy } else { SlotSource::Default };
        Ok(SlotValue { value: threshold.to_string(), source })
    }

    /// CCS codes of `proxy` present in the patient's row.
    fn proxy_hits<'p>(
        &self,
        proxy: &'p LabProxy,
        p: &'p Patient<'_>,
    ) -> Result<impl Iterator<Item = u32> + 'p, ContextError> {
        let m = self.features()?;
        Ok(m.feature_ccs
            .iter()
            .zip(p.row)
            .filter_map(|(c, &v)| c.filter(|c| v != 0.0 && proxy.ccs.contains(c)))
            .collect::<Vec<_>>()
            .into_iter())
    }

    /// Cohort prevalence of each column.
    fn column_counts(&self) -> Result<Vec<usize>, ContextError> {
        let m = self.features()?;
        let mut counts = vec![0; m.width()];
        for r in &m.rows {
            for (c, &v) in counts.iter_mut().zip(r) {
                if v != 0.0 {
                    *c += 1;
                }
            }
        }
        Ok(counts)
    }

    /// The patient's CCS conditions, most common in the cohort first.
    fn comorbidity_list(&self, p: &Patient<'_>) -> Result<String, ContextError> {
        let m = self.features()?;
        let map = self.ccs_map()?;
        let counts = self.column_counts()?;
        let mut present: Vec<(usize, &str)> = m
            .feature_ccs
            .iter()
            .enumerate()
            .filter_map(|(i, c)| {
                let c = (*c)?;
                (p.row[i] != 0.0 && !self.cfg.comorbidity_exclude.contains(&c))
                    .then(|| (counts[i], map.label_of(c).unwrap_or(&m.feature_names[i])))
            })
            .collect();
        present.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        present.truncate(self.cfg.top_conditions);
        if present.is_empty() {
            return Ok("no recorded comorbidities".into());
        }
        Ok(present.iter().map(|(_, l)| l.to_lowercase()).collect::<Vec<_>>().join(", "))
    }

    fn risk_part(&self, p: &Patient<'_>) -> Result<Part, ContextError> {
        let model = self.model()?;
        Ok(Part {
            payload: PartPayload::RiskScore {
                patient_id: p.id.into(),
                risk: model.predict_proba(p.row)?,
                model_kind: model.kind,
            },
            provenance: Provenance::new("risk_models", &artifact::model(model.kind), [p.id.to_string()]),
        })
    }

    fn prototype_overview(&self) -> Result<Vec<Part>, ContextError> {
        let e = self.explanations()?;
        let ids: Vec<String> = e.prototypes.iter().map(|p| p.patient_id.clone()).collect();
        Ok(vec![
            Part {
                payload: PartPayload::PrototypeSummary(e.summary.clone()),
                provenance: Provenance::new("explainers", artifact::EXPLANATIONS, ids.clone()),
            },
            Part {
                payload: PartPayload::FeatureImportance { patient_id: None, method: None, items: e.aggregate.clone() },
                provenance: Provenance::new("explainers", artifact::EXPLANATIONS, ids),
            },
        ])
    }

    fn risk_rationale(&self, p: &Patient<'_>) -> Result<Vec<Part>, ContextError> {
        let model = self.model()?;
        let e = self.explanations()?;
        let risk = self.risk_part(p)?;
        let cached = e.attribution_for(p.id).filter(|_| e.model_kind == model.kind);
        let attr = match cached {
            Some(a) => a.clone(),
            None => attribute(model, p.id, p.row, &e.reference, &e.config)?,
        };
        let items = aggregate_importance(std::slice::from_ref(&attr), e.config.top_n)?;
        let source = if cached.is_some() { artifact::EXPLANATIONS.to_string() } else { artifact::model(model.kind) };
        Ok(vec![
            risk,
            Part {
                payload: PartPayload::FeatureImportance {
                    patient_id: Some(p.id.into()),
                    method: Some(attr.method.clone()),
                    items,
                },
                provenance: Provenance::new(
                    "explainers",
                    &source,
                    [p.id.to_string()],
                ),
            },
        ])
    }

    fn patient_description(&self, p: &Patient<'_>) -> Result<Vec<Part>, ContextError> {
        let m = self.features()?;
        let map = self.ccs_map()?;
        let mut parts = vec![self.risk_part(p)?];

        let overrides = self.stores.lab_overrides.get(p.id);
        let mut flags = Vec::new();
        for proxy in &self.cfg.lab_proxies {
            let over = proxy.quantity.as_deref().and_then(|q| overrides.and_then(|o| o.get(q)).map(|v| (q, *v)));
            let entry = match over {
                Some((q, v)) => StatEntry {
                    label: proxy.flag.clone(),
                    count: None,
                    total: None,
                    flagged: proxy.threshold.is_none_or(|t| v > t),
                    note: Some(format!("lab override: {q} = {v}")),
                },
                None => {
                    let hits: Vec<u32> = self.proxy_hits(proxy, p)?.collect();
                    let note = if hits.is_empty() {
                        "proxy: no indicator code recorded".to_string()
                    } else {
                        let labels: Vec<String> = hits
                            .iter()
                            .map(|c| format!("CCS {c} {}", map.label_of(*c).unwrap_or("")).trim_end().to_string())
                            .collect();
                        format!("proxy: {}", labels.join("; "))
                    };
                    StatEntry { label: proxy.flag.clone(), count: None, total: None, flagged: !hits.is_empty(), note: Some(note) }
                }
            };
            flags.push(entry);
        }
        parts.push(Part {
            payload: PartPayload::CohortStat { title: "Lab-style flags".into(), entries: flags },
            provenance: Provenance::new("contextualizer", artifact::FEATURES, [p.id.to_string()]),
        });

        // Level-1 groups the patient has, ordered by how many cohort
        // patients share them.
        let mut group_cols: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, c) in m.feature_ccs.iter().enumerate() {
            if let Some(g) = c.and_then(|c| map.level1_of(c)) {
                group_cols.entry(g).or_default().push(i);
            }
        }
        let mut groups: Vec<StatEntry> = group_cols
            .iter()
            .filter(|(_, cols)| cols.iter().any(|&i| p.row[i] != 0.0))
            .map(|(g, cols)| {
                let n = m.rows.iter().filter(|r| cols.iter().any(|&i| r[i] != 0.0)).count();
                StatEntry { label: g.to_string(), count: Some(n), total: Some(m.n_rows()), flagged: false, note: None }
            })
            .collect();
        groups.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.label.cmp(&b.label)));
        groups.truncate(self.cfg.top_conditions);
        let group_ids: BTreeSet<String> = groups.iter().map(|g| g.label.clone()).collect();
        parts.push(Part {
            payload: PartPayload::CohortStat { title: "Condition groups by cohort frequency".into(), entries: groups },
            provenance: Provenance::new(
                "cohort",
                artifact::FEATURES,
                std::iter::once(p.id.to_string()).chain(group_ids),
            ),
        });
        Ok(parts)
    }

    fn ask(&self, question: &str, k: usize) -> Result<Vec<RankedAnswer>, ContextError> {
        let answers = self.guidelines()?.ask(question, k)?;
        let positive: Vec<RankedAnswer> = answers.iter().filter(|a| a.total > 0.0).cloned().collect();
        Ok(if positive.is_empty() { answers.into_iter().take(1).collect() } else { positive })
    }

    fn guideline_parts(&self, question: &str, k: usize) -> Result<Vec<Part>, ContextError> {
        Ok(self
            .ask(question, k)?
            .into_iter()
            .map(|a| {
                let id = a.rec_id.clone();
                Part { payload: PartPayload::GuidelineText(a), provenance: Provenance::new("qa", artifact::GUIDELINES, [id]) }
            })
            .collect())
    }

    fn drug_viability(
        &self,
        p: &Patient<'_>,
        question: &str,
        slots: &mut BTreeMap<String, SlotValue>,
    ) -> Result<Vec<Part>, ContextError> {
        let risk_part = self.risk_part(p)?;
        let PartPayload::RiskScore { risk, .. } = risk_part.payload else { unreachable!() };
        let mut parts = vec![risk_part];
        parts.extend(self.guideline_parts(question, 1)?);
        let refs: Vec<usize> = (0..parts.len()).collect();

        let comorbidities = self.comorbidity_list(p)?;
        let values: BTreeMap<String, String> = [
            ("drug_class".to_string(), self.templates.drug_class.clone()),
            ("risk".to_string(), format_risk(risk)),
            (COMORBIDITY_SLOT.to_string(), comorbidities),
        ]
        .into();
        for (k, v) in &values {
            let source = if k == "drug_class" { SlotSource::Default } else { SlotSource::Derived };
            slots.insert(k.clone(), SlotValue { value: v.clone(), source });
        }
        let template = self.templates.drug_viability.clone();
        let text = fill(&template, &values)?;
        parts.push(Part {
            payload: PartPayload::TemplatedText { template, slots: values, text, refs },
            provenance: Provenance::new("contextualizer", "context_templates.json", ["drug_viability".to_string()]),
        });
        Ok(parts)
    }
}

fn need<'p, 'a>(p: &'p Option<Patient<'a>>) -> &'p Patient<'a> {
    p.as_ref().expect("patient checked by needs_patient")
}
