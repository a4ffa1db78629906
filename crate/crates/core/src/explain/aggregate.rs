use serde::{Deserialize, Serialize};

use super::{Attribution, ExplainError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhiPoint {
    pub patient_id: String,
    pub phi: f64,
    pub present: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureImportance {
    pub feature: String,
    pub mean_abs_phi: f64,
    /// Signed values with presence flags, in attribution order.
    pub spread: Vec<PhiPoint>,
}

/// Ranks features by mean |φ| (descending, then by name) and keeps the
/// top `top_n`.
pub fn aggregate_importance(
    attributions: &[Attribution],
    top_n: usize,
) -> Result<Vec<FeatureImportance>, ExplainError> {
    let Some(first) = attributions.first() else {
        return Ok(Vec::new());
    };
    let names = &first.feature_names;
    for a in attributions {
        if &a.feature_names != names || a.phi.len() != names.len() || a.values.len() != names.len() {
            return Err(ExplainError::Input(format!(
                "attribution for {} uses a different feature ordering",
                a.patient_id
            )));
        }
    }
    let n = attributions.len() as f64;
    let mut ranked: Vec<FeatureImportance> = names
        .iter()
        .enumerate()
        .map(|(i, name)| FeatureImportance {
            feature: name.clone(),
            mean_abs_phi: attributions.iter().map(|a| a.phi[i].abs()).sum::<f64>() / n,
            spread: attributions
                .iter()
                .map(|a| PhiPoint {
                    patient_id: a.patient_id.clone(),
                    phi: a.phi[i],
                    present: a.values[i] != 0.0,
                })
                .collect(),
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.mean_abs_phi.total_cmp(&a.mean_abs_phi).then_with(|| a.feature.cmp(&b.feature))
    });
    ranked.truncate(top_n);
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::AttributionMethod;

    fn attr(id: &str, phi: Vec<f64>) -> Attribution {
        let d = phi.len();
        Attribution {
            patient_id: id.into(),
            baseline_value: 0.0,
            prediction: phi.iter().sum(),
            feature_names: (1..=d).map(|i| format!("feature{i}")).collect(),
            values: vec![1.0; d],
            phi,
            method: AttributionMethod::Exact,
            std_errors: None,
        }
    }

    #[test]
    fn ranks_by_absolute_value() {
        let r = aggregate_importance(&[attr("a", vec![0.3, -0.5])], 20).unwrap();
        assert_eq!(r[0].feature, "feature2");
        assert_eq!(r[0].mean_abs_phi, 0.5);
        assert_eq!(r[1].feature, "feature1");
        assert_eq!(r.len(), 2);
    }

    #[test]
    fn averages_over_patients() {
        let r = aggregate_importance(&[attr("a", vec![0.2, 0.0]), attr("b", vec![-0.2, 0.0])], 20).unwrap();
        assert!((r[0].mean_abs_phi - 0.2).abs() < 1e-15);
        assert_eq!(r[1].mean_abs_phi, 0.0);
        assert_eq!(r[0].spread.len(), 2);
    }

    #[test]
    fn ties_break_by_name_and_order_is_irrelevant() {
        let a = attr("a", vec![0.1, 0.1, 0.4]);
        let b = attr("b", vec![-0.3, 0.3, 0.0]);
        let x = aggregate_importance(&[a.clone(), b.clone()], 2).unwrap();
        let y = aggregate_importance(&[b, a], 2).unwrap();
        let names = |v: &[FeatureImportance]| v.iter().map(|f| f.feature.clone()).collect::<Vec<_>>();
        assert_eq!(names(&x), vec!["feature1", "feature2"]);
        assert_eq!(names(&x), names(&y));
    }

    #[test]
    fn mismatched_orderings_rejected() {
        let mut b = attr("b", vec![0.0, 0.0]);
        b.feature_names.swap(0, 1);
        assert!(aggregate_importance(&[attr("a", vec![0.0, 0.0]), b], 5).is_err());
    }
}
