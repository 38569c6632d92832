//! Seed tool ingestion: read external function-calling corpora, keep the
//! records whose answers use more than two distinct tools, and reconstruct
//! tool schemas from the recorded calls.
//!
//! Answers carry concrete arguments only, so input schemas come from the
//! observed argument names and types, and output schemas are synthesized
//! by [`infer_output_schema`] before any template is populated.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::lexicon::{random_suffix, value_of_kind, FIELD_WORDS};
use crate::model::{FieldKind, FieldSchema, JsonValue, ToolOrigin, ToolSpec};
use crate::rng::{derive_seed, rng_from_seed};
use rand::seq::index::sample as index_sample;

/// Recognized source corpus layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    /// Rows with a `query` plus an `answers` list (possibly JSON-encoded
    /// as a string) of `{name, arguments}` calls.
    ApigenStyle,
    /// Rows with a `conversations` list; the last assistant message holds
    /// the JSON call list.
    ToolaceStyle,
    /// Rows with `query` and `calls`.
    Other,
}

/// One usable row of a seed corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub source: SourceKind,
    pub query: String,
    pub answer_calls: Vec<(String, JsonValue)>,
    pub extracted_tools: Vec<ToolSpec>,
}

impl SeedRecord {
    pub fn distinct_tool_count(&self) -> usize {
        self.answer_calls
            .iter()
            .map(|(name, _)| name.as_str())
            .collect::<BTreeSet<_>>()
            .len()
    }
}

#[derive(Debug, Error)]
pub enum SeedError {
    #[error("cannot read {path}: {source}")]
    FileUnreadable {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unrecognized corpus format: {0}")]
    FormatUnknown(String),
}

/// Summary of an ingestion pass; malformed rows are skipped, not fatal.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IngestReport {
    pub rows: usize,
    pub accepted: usize,
    pub skipped: usize,
    pub skip_reasons: BTreeMap<String, usize>,
}

impl IngestReport {
    fn skip(&mut self, reason: &str) {
        self.skipped += 1;
        *self.skip_reasons.entry(reason.to_string()).or_default() += 1;
    }
}

/// Reads a seed corpus file (JSONL, or a single JSON array) and extracts
/// one record per row whose answer parses as a list of calls.
pub fn ingest(
    path: impl AsRef<Path>,
    source: SourceKind,
) -> Result<(Vec<SeedRecord>, IngestReport), SeedError> {
    let text = fs::read_to_string(path.as_ref()).map_err(|e| SeedError::FileUnreadable {
        path: path.as_ref().display().to_string(),
        source: e,
    })?;
    let rows = split_rows(&text)?;
    let mut report = IngestReport::default();
    let mut records = Vec::new();
    for row in rows {
        report.rows += 1;
        match extract_record(&row, source) {
            Ok(record) => {
                report.accepted += 1;
                records.push(record);
            }
            Err(reason) => report.skip(&reason),
        }
    }
    Ok((records, report))
}

fn split_rows(text: &str) -> Result<Vec<Value>, SeedError> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') {
        let rows: Vec<Value> = serde_json::from_str(trimmed)
            .map_err(|e| SeedError::FormatUnknown(format!("not a JSON array: {e}")))?;
        return Ok(rows);
    }
    // JSONL: unparseable lines become null rows so they are counted as
    // skipped rather than aborting the whole file.
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap_or(Value::Null))
        .collect())
}

fn extract_record(row: &Value, source: SourceKind) -> Result<SeedRecord, String> {
    let obj = row.as_object().ok_or("row is not an object")?;
    let (query, answer) = match source {
        SourceKind::ApigenStyle => {
            let query = obj
                .get("query")
                .and_then(Value::as_str)
                .ok_or("missing query")?;
            let answer = obj
                .get("answers")
                .or_else(|| obj.get("answer"))
                .ok_or("missing answers")?;
            (query.to_string(), answer.clone())
        }
        SourceKind::ToolaceStyle => {
            let turns = obj
                .get("conversations")
                .and_then(Value::as_array)
                .ok_or("missing conversations")?;
            let query = turns
                .iter()
                .find(|t| t.get("from").and_then(Value::as_str) == Some("user"))
                .and_then(|t| t.get("value"))
                .and_then(Value::as_str)
                .ok_or("no user message")?;
            let answer = turns
                .iter()
                .rev()
                .find(|t| t.get("from").and_then(Value::as_str) == Some("assistant"))
                .and_then(|t| t.get("value"))
                .ok_or("no assistant message")?;
            (query.to_string(), answer.clone())
        }
        SourceKind::Other => {
            let query = obj
                .get("query")
                .and_then(Value::as_str)
                .ok_or("missing query")?;
            let answer = obj.get("calls").ok_or("missing calls")?;
            (query.to_string(), answer.clone())
        }
    };

    let calls = parse_answer_calls(&answer).ok_or("answer is not a list of calls")?;
    if calls.is_empty() {
        return Err("answer holds no calls".to_string());
    }
    let extracted_tools = tools_from_calls(&calls);
    Ok(SeedRecord {
        source,
        query,
        answer_calls: calls,
        extracted_tools,
    })
}

/// Accepts a call list directly or embedded as a JSON string.
fn parse_answer_calls(answer: &Value) -> Option<Vec<(String, JsonValue)>> {
    let items: Vec<Value> = match answer {
        Value::Array(items) => items.clone(),
        Value::String(s) => serde_json::from_str(s.trim()).ok()?,
        _ => return None,
    };
    let mut calls = Vec::with_capacity(items.len());
    for item in items {
        let obj = item.as_object()?;
        let name = obj.get("name")?.as_str()?.to_string();
        let arguments = obj
            .get("arguments")
            .or_else(|| obj.get("parameters"))
            .cloned()
            .unwrap_or_else(|| Value::Object(Default::default()));
        if !arguments.is_object() {
            return None;
        }
        calls.push((name, arguments));
    }
    Some(calls)
}

/// Reconstructs input schemas from the union of observed arguments per
/// tool. Output schemas start empty; see [`infer_output_schema`].
fn tools_from_calls(calls: &[(String, JsonValue)]) -> Vec<ToolSpec> {
    let mut order: Vec<&str> = Vec::new();
    let mut args_by_tool: BTreeMap<&str, BTreeMap<String, FieldKind>> = BTreeMap::new();
    for (name, arguments) in calls {
        if !args_by_tool.contains_key(name.as_str()) {
            order.push(name);
        }
        let entry = args_by_tool.entry(name).or_default();
        if let Value::Object(map) = arguments {
            for (k, v) in map {
                entry.entry(k.clone()).or_insert_with(|| kind_of(v));
            }
        }
    }
    order
        .into_iter()
        .map(|name| {
            let inputs = args_by_tool[name]
                .iter()
                .map(|(arg, &kind)| {
                    FieldSchema::new(arg.clone(), kind, format!("argument {arg} of {name}"))
                })
                .collect();
            ToolSpec {
                name: name.to_string(),
                description: format!("Tool {name} reconstructed from recorded calls."),
                inputs,
                outputs: Vec::new(),
                origin: ToolOrigin::Seed,
            }
        })
        .collect()
}

fn kind_of(value: &Value) -> FieldKind {
    match value {
        Value::String(_) => FieldKind::String,
        Value::Number(_) => FieldKind::Number,
        Value::Bool(_) => FieldKind::Boolean,
        Value::Array(_) => FieldKind::List,
        Value::Object(_) | Value::Null => FieldKind::Object,
    }
}

/// Keeps exactly the records whose answers use more than two distinct
/// tools. Idempotent.
pub fn filter_multi_tool(records: Vec<SeedRecord>) -> Vec<SeedRecord> {
    records
        .into_iter()
        .filter(|r| r.distinct_tool_count() >= 3)
        .collect()
}

/// Output-field count bounds for seed and synthetic tools.
pub const OUTPUT_FIELDS_MIN: usize = 4;
pub const OUTPUT_FIELDS_MAX: usize = 5;

/// Assigns a 4–5 field output schema to a seed tool. Field names derive
/// from the toolname stems plus random suffixes; deterministic given rng.
pub fn infer_output_schema(tool: &ToolSpec, rng: &mut ChaCha8Rng) -> ToolSpec {
    // Stems must stay identifiers: a digit-leading output key would make
    // its serialized ref fall out of the reference grammar.
    let stems: Vec<&str> = tool
        .name
        .split('_')
        .filter(|s| s.len() > 2 && crate::model::is_identifier(s))
        .collect();
    let count = rng.gen_range(OUTPUT_FIELDS_MIN..=OUTPUT_FIELDS_MAX);
    let mut names = BTreeSet::new();
    let mut outputs = Vec::with_capacity(count);
    while outputs.len() < count {
        let stem = if !stems.is_empty() && rng.gen_bool(0.5) {
            stems.choose(rng).expect("non-empty").to_string()
        } else {
            FIELD_WORDS.choose(rng).expect("non-empty").to_string()
        };
        let name = format!("{stem}_{}", random_suffix(rng, 2));
        if !names.insert(name.clone()) {
            continue;
        }
        let kind = crate::lexicon::random_kind(rng);
        outputs.push(FieldSchema::new(
            name.clone(),
            kind,
            format!("{name} returned by {}", tool.name),
        ));
    }
    ToolSpec {
        outputs,
        ..tool.clone()
    }
}

/// Splits records into disjoint train/test sets. Every record lands in
/// exactly one split.
pub fn partition(
    records: Vec<SeedRecord>,
    test_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<SeedRecord>, Vec<SeedRecord>) {
    let n = records.len();
    let test_count = ((n as f64) * test_fraction.clamp(0.0, 1.0)).floor() as usize;
    let test_idx: BTreeSet<usize> = index_sample(rng, n, test_count).into_iter().collect();
    let mut train = Vec::with_capacity(n - test_count);
    let mut test = Vec::with_capacity(test_count);
    for (i, record) in records.into_iter().enumerate() {
        if test_idx.contains(&i) {
            test.push(record);
        } else {
            train.push(record);
        }
    }
    (train, test)
}

/// Deterministic built-in seed records, for configs that do not point at
/// an external corpus. Each record carries `tools_per_record` distinct
/// tools with literal example arguments, and tool names are unique across
/// the whole batch.
pub fn demo_records(count: usize, tools_per_record: usize, seed: u64) -> Vec<SeedRecord> {
    let mut used = BTreeSet::new();
    (0..count)
        .map(|i| {
            let mut rng = rng_from_seed(derive_seed(seed, i as u64));
            let mut calls = Vec::with_capacity(tools_per_record);
            for _ in 0..tools_per_record {
                let name = loop {
                    let candidate = crate::lexicon::tool_name(&mut rng);
                    if used.insert(candidate.clone()) {
                        break candidate;
                    }
                };
                let arg_count = rng.gen_range(1..=3);
                let mut args = serde_json::Map::new();
                while args.len() < arg_count {
                    let arg = crate::lexicon::field_name(&mut rng);
                    let kind = crate::lexicon::random_kind(&mut rng);
                    args.insert(arg, value_of_kind(kind, &mut rng));
                }
                calls.push((name, Value::Object(args)));
            }
            let tools = tools_from_calls(&calls);
            let names: Vec<String> = calls.iter().map(|(n, _)| n.clone()).collect();
            SeedRecord {
                source: SourceKind::Other,
                query: format!("demo request {} covering {}", i, names.join(", ")),
                answer_calls: calls,
                extracted_tools: tools,
            }
        })
        .collect()
}
