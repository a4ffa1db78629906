use schemars::gen::{SchemaGenerator, SchemaSettings};
use schemars::JsonSchema;
use serde_json::{json, Map, Value};

use crate::api::{
    AggregateResponse, AskRequest, ContextRequest, EmptyRequest, ExplainRequest, GenerateRequest, PrototypesResponse,
    QaResponse, RiskResponse, SnapshotInfo, TrainRequest,
};
use crate::error::ErrorBody;
use crate::jobs::JobRecord;

fn schema<T: JsonSchema>(gen: &mut SchemaGenerator) -> Value {
    serde_json::to_value(gen.subschema_for::<T>()).expect("schema serialises")
}

fn content(schema: Value) -> Value {
    json!({ "application/json": { "schema": schema } })
}

struct Op {
    method: &'static str,
    path: &'static str,
    summary: &'static str,
    body: Option<Value>,
    ok: (u16, Value),
    params: Vec<(&'static str, &'static str)>,
}

/// OpenAPI 3 description of the `/v1` API, built from the request and
/// response schemas.
pub fn openapi() -> Value {
    let mut gen = SchemaSettings::openapi3().into_generator();
    let error = schema::<ErrorBody>(&mut gen);
    let job = schema::<JobRecord>(&mut gen);
    let any = json!({ "type": "object" });
    let path_id = ("id", "path");
    let ops = vec![
        Op { method: "get", path: "/v1/spec", summary: "This document", body: None, ok: (200, any.clone()), params: vec![] },
        Op {
            method: "get",
            path: "/v1/snapshot",
            summary: "Current snapshot id and artifact manifest",
            body: None,
            ok: (200, schema::<SnapshotInfo>(&mut gen)),
            params: vec![],
        },
        Op {
            method: "get",
            path: "/v1/jobs",
            summary: "All jobs",
            body: None,
            ok: (200, json!({ "type": "array", "items": job.clone() })),
            params: vec![],
        },
        Op { method: "get", path: "/v1/jobs/{id}", summary: "Job state", body: None, ok: (200, job.clone()), params: vec![path_id] },
        Op {
            method: "post",
            path: "/v1/data/generate",
            summary: "Generate synthetic claims",
            body: Some(schema::<GenerateRequest>(&mut gen)),
            ok: (202, job.clone()),
            params: vec![],
        },
        Op {
            method: "post",
            path: "/v1/cohort/build",
            summary: "Select the cohort and build features",
            body: Some(schema::<EmptyRequest>(&mut gen)),
            ok: (202, job.clone()),
            params: vec![],
        },
        Op { method: "get", path: "/v1/cohort", summary: "Cohort report", body: None, ok: (200, any.clone()), params: vec![] },
        Op {
            method: "post",
            path: "/v1/models/train",
            summary: "Train a risk model",
            body: Some(schema::<TrainRequest>(&mut gen)),
            ok: (202, job.clone()),
            params: vec![],
        },
        Op {
            method: "get",
            path: "/v1/models/{id}/metrics",
            summary: "Test-split metrics of a model (LR or MLP)",
            body: None,
            ok: (200, any.clone()),
            params: vec![path_id],
        },
        Op {
            method: "post",
            path: "/v1/explanations/build",
            summary: "Select prototypes and attribute them",
            body: Some(schema::<ExplainRequest>(&mut gen)),
            ok: (202, job.clone()),
            params: vec![],
        },
        Op {
            method: "get",
            path: "/v1/explanations/aggregate",
            summary: "Aggregate feature importance over prototypes",
            body: None,
            ok: (200, schema::<AggregateResponse>(&mut gen)),
            params: vec![("top", "query")],
        },
        Op {
            method: "post",
            path: "/v1/guidelines/ingest",
            summary: "Parse the guideline document",
            body: Some(schema::<EmptyRequest>(&mut gen)),
            ok: (202, job.clone()),
            params: vec![],
        },
        Op { method: "get", path: "/v1/guidelines", summary: "Parsed guideline document", body: None, ok: (200, any.clone()), params: vec![] },
        Op {
            method: "get",
            path: "/v1/prototypes",
            summary: "Prototypical high-risk patients",
            body: None,
            ok: (200, schema::<PrototypesResponse>(&mut gen)),
            params: vec![("k", "query")],
        },
        Op {
            method: "get",
            path: "/v1/prototypes/summary",
            summary: "Prototype summary table",
            body: None,
            ok: (200, any.clone()),
            params: vec![],
        },
        Op {
            method: "get",
            path: "/v1/patients/{id}/risk",
            summary: "Predicted CKD risk",
            body: None,
            ok: (200, schema::<RiskResponse>(&mut gen)),
            params: vec![path_id],
        },
        Op {
            method: "get",
            path: "/v1/patients/{id}/explanation",
            summary: "Shapley attribution of one patient",
            body: None,
            ok: (200, any.clone()),
            params: vec![path_id],
        },
        Op {
            method: "post",
            path: "/v1/qa/ask",
            summary: "Rank guideline recommendations for a question",
            body: Some(schema::<AskRequest>(&mut gen)),
            ok: (200, schema::<QaResponse>(&mut gen)),
            params: vec![],
        },
        Op {
            method: "post",
            path: "/v1/context/answer",
            summary: "Answer a question-flow question",
            body: Some(schema::<ContextRequest>(&mut gen)),
            ok: (200, any),
            params: vec![],
        },
    ];

    let mut paths = Map::new();
    for op in ops {
        let mut o = Map::new();
        o.insert("summary".into(), json!(op.summary));
        if !op.params.is_empty() {
            let params: Vec<Value> = op
                .params
                .iter()
                .map(|(name, at)| {
                    let ty = if *at == "path" { "string" } else { "integer" };
                    json!({ "name": name, "in": at, "required": *at == "path", "schema": { "type": ty } })
                })
                .collect();
            o.insert("parameters".into(), Value::Array(params));
        }
        if let Some(body) = op.body {
            o.insert("requestBody".into(), json!({ "required": false, "content": content(body) }));
        }
        let mut responses = Map::new();
        responses.insert(op.ok.0.to_string(), json!({ "description": "success", "content": content(op.ok.1) }));
        responses.insert("default".into(), json!({ "description": "error", "content": content(error.clone()) }));
        o.insert("responses".into(), Value::Object(responses));
        paths
            .entry(op.path)
            .or_insert_with(|| Value::Object(Map::new()))
            .as_object_mut()
            .expect("path item is an object")
            .insert(op.method.into(), Value::Object(o));
    }
    let schemas = serde_json::to_value(gen.take_definitions()).expect("schemas serialise");
    json!({
        "openapi": "3.0.3",
        "info": { "title": "ckdctx", "version": env!("CARGO_PKG_VERSION") },
        "paths": paths,
        "components": {
            "schemas": schemas,
            "securitySchemes": { "bearer": { "type": "http", "scheme": "bearer" } }
        },
    })
}
