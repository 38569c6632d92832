//! User-query generation for a populated plan, plus the system prompt
//! builder and the chat-completion client used for remote generation and
//! evaluation.
//!
//! The remote path talks to any chat-completions style endpoint; the
//! fallback path composes a deterministic query that names every literal
//! parameter of the gold plan, so offline corpora need no network at all.

use std::collections::BTreeMap;
use std::thread::sleep;
use std::time::Duration;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::codec::serialize_plan;
use crate::model::{JsonValue, PayloadValue, PlanDag, ToolSpec};
use crate::rng::{derive_seed_str, fnv1a, rng_from_seed};

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("remote endpoint unavailable after {attempts} attempts: {last_error}")]
    RemoteUnavailable { attempts: u32, last_error: String },
    #[error("remote endpoint returned an unusable body: {0}")]
    BadResponse(String),
}

// ── Chat-completion client ───────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    /// Full URL of the chat-completions route.
    pub endpoint_url: String,
    pub model: String,
    pub temperature: f64,
    /// Environment variable holding the bearer token, if any.
    pub api_key_env: Option<String>,
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub max_in_flight: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint_url: String::new(),
            model: String::new(),
            temperature: 0.7,
            api_key_env: None,
            max_retries: 3,
            initial_backoff_ms: 250,
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: &str, content: impl Into<String>) -> Self {
        Self {
            role: role.into(),
            content: content.into(),
        }
    }
}

/// Sends one chat completion, retrying transient failures with
/// exponential backoff.
pub fn chat_complete(cfg: &RemoteConfig, messages: &[ChatMessage]) -> Result<String, QueryError> {
    let client = reqwest::blocking::Client::new();
    let body = json!({
        "model": cfg.model,
        "messages": messages,
        "temperature": cfg.temperature,
    });
    let mut last_error = String::new();
    let attempts = cfg.max_retries + 1;
    for attempt in 0..attempts {
        if attempt > 0 {
            sleep(Duration::from_millis(
                cfg.initial_backoff_ms.saturating_mul(1 << (attempt - 1)),
            ));
        }
        let mut request = client.post(&cfg.endpoint_url).json(&body);
        if let Some(var) = &cfg.api_key_env {
            if let Ok(key) = std::env::var(var) {
                request = request.bearer_auth(key);
            }
        }
        match request.send() {
            Err(e) => last_error = e.to_string(),
            Ok(response) => {
                let status = response.status();
                if status.is_server_error() || status.as_u16() == 429 {
                    last_error = format!("status {status}");
                    continue;
                }
                if !status.is_success() {
                    return Err(QueryError::BadResponse(format!("status {status}")));
                }
                let value: JsonValue = response
                    .json()
                    .map_err(|e| QueryError::BadResponse(e.to_string()))?;
                let content = value
                    .get("choices")
                    .and_then(|c| c.get(0))
                    .and_then(|c| c.get("message"))
                    .and_then(|m| m.get("content"))
                    .and_then(JsonValue::as_str)
                    .ok_or_else(|| {
                        QueryError::BadResponse("no choices[0].message.content".into())
                    })?;
                return Ok(content.to_string());
            }
        }
    }
    Err(QueryError::RemoteUnavailable {
        attempts,
        last_error,
    })
}

// ── Query generation ─────────────────────────────────────────────────────

/// How user queries are produced.
pub enum QueryClient {
    /// Deterministic template composition seeded per call.
    Fallback {
        seed: u64,
    },
    Remote(RemoteConfig),
}

/// One few-shot exemplar for the remote prompt.
#[derive(Debug, Clone)]
pub struct QueryShot {
    pub plan: String,
    pub query: String,
}

/// Built-in exemplars used when the caller has none. Plans are rendered
/// in the same edge-free form the prompt uses for the target plan.
pub fn default_shots() -> Vec<QueryShot> {
    vec![
        QueryShot {
            plan: r#"[{"toolname":"weather_get_k1","payload":{"city_name_aa":"paris"}}]"#.into(),
            query: "What's the weather looking like in paris right now?".into(),
        },
        QueryShot {
            plan: r#"[{"toolname":"stock_lookup_m2","payload":{"ticker_qa":"acme"}},{"toolname":"report_compute_z9","payload":{"series_in_bb":"$2.price_history_x1"}}]"#.into(),
            query: "Pull the acme price history and turn it into a trend report.".into(),
        },
        QueryShot {
            plan: r#"[{"toolname":"flight_search_p4","payload":{"origin_aa":"sfo","target_bb":"jfk"}},{"toolname":"hotel_rank_w7","payload":{"city_ref_cc":"$2.arrival_city_k2"}}]"#.into(),
            query: "Find me a flight from sfo to jfk and rank hotels near where I land.".into(),
        },
    ]
}

/// Produces the user query for a gold plan. The fallback is pure; the
/// remote path may degrade to the fallback at the caller's discretion
/// after a `RemoteUnavailable` error.
pub fn generate_query(
    gold: &PlanDag,
    tools: &[ToolSpec],
    shots: &[QueryShot],
    client: &QueryClient,
) -> Result<String, QueryError> {
    match client {
        QueryClient::Fallback { seed } => Ok(fallback_query(gold, tools, *seed)),
        QueryClient::Remote(cfg) => {
            let messages = remote_query_messages(gold, tools, shots);
            let content = chat_complete(cfg, &messages)?;
            let trimmed = content.trim();
            if trimmed.is_empty() {
                return Err(QueryError::BadResponse("empty query".into()));
            }
            Ok(trimmed.to_string())
        }
    }
}

/// Prompt for the query-writing model. The plan is rendered without its
/// dependency lists so the resulting query describes the goal, not the
/// execution graph.
fn remote_query_messages(
    gold: &PlanDag,
    tools: &[ToolSpec],
    shots: &[QueryShot],
) -> Vec<ChatMessage> {
    let mut tool_lines = String::new();
    for tool in tools {
        tool_lines.push_str(&format!("- {}: {}\n", tool.name, tool.description));
    }
    let mut shot_lines = String::new();
    for shot in shots {
        shot_lines.push_str(&format!("Plan: {}\nQuery: {}\n\n", shot.plan, shot.query));
    }
    let system = "You write realistic user requests. Given a tool plan, produce one \
                  natural-language query a user could have asked that the plan answers. \
                  Mention every literal parameter value. Do not enumerate the steps or \
                  describe which tool feeds which."
        .to_string();
    let user = format!(
        "Tools in play:\n{tool_lines}\n{shot_lines}Plan: {}\nQuery:",
        render_plan_without_edges(gold)
    );
    vec![
        ChatMessage::new("system", system),
        ChatMessage::new("user", user),
    ]
}

fn render_plan_without_edges(gold: &PlanDag) -> String {
    let tasks: Vec<JsonValue> = gold
        .tasks
        .iter()
        .map(|t| {
            let payload: BTreeMap<&String, JsonValue> =
                t.payload.iter().map(|(k, v)| (k, v.to_json())).collect();
            json!({"toolname": t.toolname, "payload": payload})
        })
        .collect();
    serde_json::to_string(&tasks).expect("serializable")
}

const OPENERS: &[&str] = &["Please", "I need you to", "Could you", "Help me"];
const CONNECTIVES: &[&str] = &["then", "after that", "next", "and from there"];

/// Deterministic query: one clause per task in stored (topological)
/// order, naming the tool's purpose and every literal parameter value.
fn fallback_query(gold: &PlanDag, tools: &[ToolSpec], seed: u64) -> String {
    let mut rng = rng_from_seed(derive_seed_str(seed, &serialize_plan(gold)));
    if gold.is_empty() {
        return "No further action is needed; please confirm.".to_string();
    }
    let mut clauses = Vec::with_capacity(gold.len());
    for task in &gold.tasks {
        let phrase = tools
            .iter()
            .find(|t| t.name == task.toolname)
            .map(|t| tool_phrase(&t.name))
            .unwrap_or_else(|| tool_phrase(&task.toolname));
        let mut parts = Vec::new();
        for (param, value) in &task.payload {
            match value {
                PayloadValue::Literal(v) => {
                    parts.push(format!("{param} set to {}", render_literal(v)))
                }
                PayloadValue::Ref(r) => {
                    parts.push(format!("{param} taken from the {} found earlier", r.key))
                }
            }
        }
        let clause = if parts.is_empty() {
            phrase
        } else {
            format!("{phrase} with {}", parts.join(", "))
        };
        clauses.push(clause);
    }
    let opener = OPENERS.choose(&mut rng).expect("non-empty");
    let mut query = format!("{opener} {}", clauses[0]);
    for clause in &clauses[1..] {
        let connective = CONNECTIVES.choose(&mut rng).expect("non-empty");
        query.push_str(&format!(", {connective} {clause}"));
    }
    query.push('.');
    query
}

/// `invoice_rank_b4t` -> "rank the invoice records (invoice_rank_b4t)".
fn tool_phrase(name: &str) -> String {
    let parts: Vec<&str> = name.split('_').collect();
    match parts.as_slice() {
        [domain, verb, ..] => format!("{verb} the {domain} records ({name})"),
        _ => format!("run {name}"),
    }
}

/// Literal rendering used in fallback queries; strings stay bare so the
/// query reads naturally, containers use compact JSON.
pub fn render_literal(value: &JsonValue) -> String {
    match value {
        JsonValue::String(s) => s.clone(),
        other => serde_json::to_string(other).expect("serializable"),
    }
}

/// Deterministic response text summarizing an executed turn.
pub fn fallback_response(
    gold: &PlanDag,
    ok_tasks: usize,
    failed_tool: Option<(&str, &str)>,
) -> String {
    match failed_tool {
        Some((tool, status)) => format!(
            "The {tool} step failed with {status}; {ok_tasks} of {} steps completed. \
             The remaining work can be rescheduled.",
            gold.len()
        ),
        None => format!(
            "All {} steps completed; the requested results are consolidated above.",
            gold.len()
        ),
    }
}

// ── System prompt ────────────────────────────────────────────────────────

/// Renders the system prompt: role preamble, the available tools with
/// their schemas, the three per-turn steps (Think / DAG / Respond), and
/// the task-list format definition.
pub fn build_system_prompt(tools: &[ToolSpec]) -> String {
    let mut out = String::from(
        "You are a dialogue assistant that solves user tasks by calling tools and \
         returning structured responses.\n\nAvailable Tools\nIn your response, you can \
         use the following tools:\n",
    );
    for (i, tool) in tools.iter().enumerate() {
        out.push_str(&format!(
            "{}. name: {}\n   description: {}\n   inputs: {}\n   outputs: {}\n",
            i + 1,
            tool.name,
            tool.description,
            schema_json(&tool.inputs),
            schema_json(&tool.outputs),
        ));
    }
    out.push_str(
        "\nSteps for each turn\n\
         1. Think: Retrieve the relevant context and evaluate the current tools.\n\
         2. DAG: Produce a task list as a JSON array. Each task is an object with \
         fields task_id (\"task_<N>\"), toolname, payload, and dependencies. A payload \
         value may bind to an earlier task's output as \"$<task_number>.<output_key>\". \
         Wrap the array in <DAG></DAG> tags.\n\
         3. Respond: If a response is needed, generate one while keeping consistency \
         across user queries.\n",
    );
    out
}

fn schema_json(fields: &[crate::model::FieldSchema]) -> String {
    let map: BTreeMap<&String, String> = fields
        .iter()
        .map(|f| (&f.name, format!("{:?}", f.kind).to_lowercase()))
        .collect();
    serde_json::to_string(&map).expect("serializable")
}

/// Stable fingerprint of a prompt, used in golden tests.
pub fn prompt_fingerprint(prompt: &str) -> u64 {
    fnv1a(prompt.as_bytes())
}
