//! Browser bindings over the bundled guideline fixture. Each export has a
//! plain-Rust twin returning `Result<String, String>` so it can be tested
//! natively.

use std::cell::OnceCell;

use ckdctx_core::context::route;
use ckdctx_core::explain::shapley_exact;
use ckdctx_core::guideline::fixture_doc;
use ckdctx_core::qa::{Answerer, Bm25Index, QaConfig};
use ckdctx_core::risk::FnPredictor;
use serde_json::json;
use wasm_bindgen::prelude::*;

/// Largest model the attribution demo enumerates exactly.
const MAX_FEATURES: usize = 12;

thread_local! {
    static INDEX: OnceCell<Bm25Index> = const { OnceCell::new() };
}

pub fn ask_json(question: &str, k: usize) -> Result<String, String> {
    INDEX.with(|cell| {
        let index = cell.get_or_init(|| Bm25Index::from_doc(&fixture_doc(), QaConfig::default()).expect("fixture index"));
        let answers = index.ask(question, k).map_err(|e| e.to_string())?;
        Ok(serde_json::to_string(&answers).expect("answers serialise"))
    })
}

pub fn route_json(input: &str) -> String {
    let r = route(input);
    json!({
        "kind": r.kind.code(),
        "annotation": r.annotation,
        "display": r.annotation.to_string(),
    })
    .to_string()
}

pub fn attribute_json(weights: &[f64], bias: f64, x: &[f64], reference: &[f64]) -> Result<String, String> {
    let d = weights.len();
    if d == 0 || d > MAX_FEATURES {
        return Err(format!("between 1 and {MAX_FEATURES} weights are supported"));
    }
    if x.len() != d || reference.len() != d {
        return Err(format!("x and reference need {d} values each"));
    }
    let model = FnPredictor::new(d, |v: &[f64]| {
        let z = bias + weights.iter().zip(v).map(|(w, x)| w * x).sum::<f64>();
        1.0 / (1.0 + (-z).exp())
    });
    let s = shapley_exact(&model, x, reference, None, MAX_FEATURES).map_err(|e| e.to_string())?;
    Ok(json!({ "prediction": s.prediction, "baseline_value": s.baseline_value, "phi": s.phi }).to_string())
}

/// Ranked recommendations from the bundled guideline fixture, as JSON.
#[wasm_bindgen]
pub fn ask(question: &str, k: usize) -> Result<String, JsError> {
    ask_json(question, k).map_err(|e| JsError::new(&e))
}

/// Question kind and annotation for a code (`Q3a`) or free text, as JSON.
#[wasm_bindgen]
pub fn route_question(input: &str) -> String {
    route_json(input)
}

/// Exact Shapley values of a logistic model against a reference input.
#[wasm_bindgen]
pub fn attribute_logistic(weights: &[f64], bias: f64, x: &[f64], reference: &[f64]) -> Result<String, JsError> {
    attribute_json(weights, bias, x, reference).map_err(|e| JsError::new(&e))
}
