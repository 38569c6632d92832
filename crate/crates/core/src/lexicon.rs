//! Word lists and deterministic generators for tool names, field names,
//! and kind-conformant JSON values.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::model::{FieldKind, JsonValue};

pub const DOMAINS: &[&str] = &[
    "weather",
    "stock",
    "flight",
    "hotel",
    "calendar",
    "email",
    "invoice",
    "shipment",
    "inventory",
    "ticket",
    "profile",
    "payment",
    "route",
    "sensor",
    "catalog",
    "order",
    "meeting",
    "report",
    "forecast",
    "account",
    "device",
    "campaign",
    "dataset",
    "cluster",
];

pub const VERBS: &[&str] = &[
    "get",
    "fetch",
    "lookup",
    "search",
    "compute",
    "check",
    "list",
    "rank",
    "resolve",
    "summarize",
    "convert",
    "estimate",
    "match",
    "trace",
    "score",
    "merge",
    "plan",
    "classify",
    "extract",
    "verify",
];

pub const FIELD_WORDS: &[&str] = &[
    "value", "status", "score", "count", "label", "name", "total", "rate", "level", "index",
    "code", "price", "time", "date", "region", "city", "detail", "summary", "flag", "unit",
    "window", "source", "target", "bucket", "offset", "limit", "token", "batch", "group", "rank",
];

const SUFFIX_ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789";

/// A short random suffix like `q7x`; keeps generated names unique without
/// a global registry.
pub fn random_suffix(rng: &mut ChaCha8Rng, len: usize) -> String {
    (0..len)
        .map(|_| *SUFFIX_ALPHABET.choose(rng).expect("non-empty") as char)
        .collect()
}

/// `<word>_<word>_<suffix>` field name, e.g. `price_level_k3`.
pub fn field_name(rng: &mut ChaCha8Rng) -> String {
    let a = FIELD_WORDS.choose(rng).expect("non-empty");
    let b = FIELD_WORDS.choose(rng).expect("non-empty");
    format!("{a}_{b}_{}", random_suffix(rng, 2))
}

/// `<domain>_<verb>_<suffix>` tool name, e.g. `invoice_rank_b4t`.
pub fn tool_name(rng: &mut ChaCha8Rng) -> String {
    let domain = DOMAINS.choose(rng).expect("non-empty");
    let verb = VERBS.choose(rng).expect("non-empty");
    format!("{domain}_{verb}_{}", random_suffix(rng, 3))
}

pub fn random_kind(rng: &mut ChaCha8Rng) -> FieldKind {
    // Scalars dominate; containers appear but stay depth-1.
    match rng.gen_range(0..10) {
        0..=4 => FieldKind::String,
        5..=6 => FieldKind::Number,
        7 => FieldKind::Boolean,
        8 => FieldKind::List,
        _ => FieldKind::Object,
    }
}

/// A value conforming to `kind`. Strings are hex tokens so they can never
/// collide with the symbolic reference grammar; containers stay depth 1.
pub fn value_of_kind(kind: FieldKind, rng: &mut ChaCha8Rng) -> JsonValue {
    match kind {
        FieldKind::String => json!(hex_token(rng)),
        FieldKind::Number => json!(rng.gen_range(0..10_000)),
        FieldKind::Boolean => json!(rng.gen_bool(0.5)),
        FieldKind::List => {
            let n = rng.gen_range(2..=3);
            JsonValue::Array((0..n).map(|_| scalar_value(rng)).collect())
        }
        FieldKind::Object => {
            let n = rng.gen_range(2..=3);
            let mut map = serde_json::Map::new();
            for _ in 0..n {
                let key = format!(
                    "{}_{}",
                    FIELD_WORDS.choose(rng).expect("non-empty"),
                    random_suffix(rng, 2)
                );
                map.insert(key, scalar_value(rng));
            }
            JsonValue::Object(map)
        }
    }
}

fn scalar_value(rng: &mut ChaCha8Rng) -> JsonValue {
    if rng.gen_bool(0.5) {
        json!(hex_token(rng))
    } else {
        json!(rng.gen_range(0..10_000))
    }
}

pub fn hex_token(rng: &mut ChaCha8Rng) -> String {
    format!("{:08x}", rng.gen::<u32>())
}
