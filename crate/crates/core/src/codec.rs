//! Parser and serializer for the task-list wire format, the tagged
//! transcript format, and the JSONL corpus files.
//!
//! `serialize_plan` emits a canonical byte form: tasks in stored order,
//! task fields in the order (task_id, toolname, payload, dependencies),
//! payload keys sorted, no insignificant whitespace. `parse_plan` is total:
//! arbitrary byte input yields a value or an error, never a panic. Note
//! that canonical form implies literal strings never match the symbolic
//! reference grammar; parsing turns any `$<digits>.<identifier>` string
//! into a ref.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde_json::Value;
use thiserror::Error;

use crate::model::{
    classify_ref, topological_layers, JsonValue, PayloadValue, PlanDag, PlanTask, TaskId,
    Transcript, Turn,
};

// ── Plan parsing ─────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("malformed JSON at line {line}, column {column}")]
    MalformedJson { line: usize, column: usize },
    #[error("task {task_index}: missing field {field:?}")]
    MissingField {
        task_index: usize,
        field: &'static str,
    },
    #[error("task {task_index}: field {field:?} has the wrong type, expected {expected}")]
    WrongType {
        task_index: usize,
        field: &'static str,
        expected: &'static str,
    },
    #[error("expected a task array")]
    NotAnArray,
    #[error("bad task id {0:?}")]
    BadTaskId(String),
    #[error("bad symbolic reference {0:?}")]
    BadRefSyntax(String),
}

/// Parses the task-list wire format. Accepts a bare JSON array or an
/// array wrapped in a `<DAG>...</DAG>` tag.
pub fn parse_plan(text: &str) -> Result<PlanDag, ParseError> {
    let mut body = text.trim();
    if let Some(stripped) = body.strip_prefix("<DAG>") {
        if let Some(inner) = stripped.strip_suffix("</DAG>") {
            body = inner.trim();
        }
    }
    let value: Value = serde_json::from_str(body).map_err(|e| ParseError::MalformedJson {
        line: e.line(),
        column: e.column(),
    })?;
    let Value::Array(items) = value else {
        return Err(ParseError::NotAnArray);
    };

    let mut tasks = Vec::with_capacity(items.len());
    for (task_index, item) in items.into_iter().enumerate() {
        let Value::Object(mut fields) = item else {
            return Err(ParseError::WrongType {
                task_index,
                field: "task",
                expected: "object",
            });
        };
        let id = take_string(&mut fields, task_index, "task_id")?
            .parse::<TaskId>()
            .map_err(|e| ParseError::BadTaskId(e.0))?;
        let toolname = take_string(&mut fields, task_index, "toolname")?;
        let payload_value = fields.remove("payload").ok_or(ParseError::MissingField {
            task_index,
            field: "payload",
        })?;
        let Value::Object(payload_fields) = payload_value else {
            return Err(ParseError::WrongType {
                task_index,
                field: "payload",
                expected: "object",
            });
        };
        let mut payload = BTreeMap::new();
        for (k, v) in payload_fields {
            let pv = PayloadValue::from_json(v).map_err(|e| ParseError::BadRefSyntax(e.0))?;
            payload.insert(k, pv);
        }
        let deps_value = fields
            .remove("dependencies")
            .ok_or(ParseError::MissingField {
                task_index,
                field: "dependencies",
            })?;
        let Value::Array(dep_items) = deps_value else {
            return Err(ParseError::WrongType {
                task_index,
                field: "dependencies",
                expected: "array",
            });
        };
        let mut dependencies = Vec::with_capacity(dep_items.len());
        for item in dep_items {
            let Value::String(s) = item else {
                return Err(ParseError::WrongType {
                    task_index,
                    field: "dependencies",
                    expected: "array of task ids",
                });
            };
            dependencies.push(
                s.parse::<TaskId>()
                    .map_err(|e| ParseError::BadTaskId(e.0))?,
            );
        }
        tasks.push(PlanTask {
            id,
            toolname,
            payload,
            dependencies,
        });
    }
    Ok(PlanDag::new(tasks))
}

fn take_string(
    fields: &mut serde_json::Map<String, Value>,
    task_index: usize,
    field: &'static str,
) -> Result<String, ParseError> {
    match fields.remove(field) {
        None => Err(ParseError::MissingField { task_index, field }),
        Some(Value::String(s)) => Ok(s),
        Some(_) => Err(ParseError::WrongType {
            task_index,
            field,
            expected: "string",
        }),
    }
}

/// Canonical, deterministic byte form of a plan DAG.
pub fn serialize_plan(dag: &PlanDag) -> String {
    // PlanTask's serde field order and the BTreeMap payload give the
    // canonical layout directly.
    serde_json::to_string(dag).expect("plan serialization cannot fail")
}

// ── Tagged transcript format ─────────────────────────────────────────────

/// The five recognized transcript tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tag {
    Think,
    Dag,
    ToolCall,
    Obs,
    Response,
}

impl Tag {
    pub const ALL: [Tag; 5] = [Tag::Think, Tag::Dag, Tag::ToolCall, Tag::Obs, Tag::Response];

    /// Tag names are case-sensitive.
    pub fn name(self) -> &'static str {
        match self {
            Tag::Think => "think",
            Tag::Dag => "DAG",
            Tag::ToolCall => "tool_call",
            Tag::Obs => "obs",
            Tag::Response => "response",
        }
    }

    fn from_name(name: &str) -> Option<Tag> {
        Tag::ALL.into_iter().find(|t| t.name() == name)
    }
}

/// One extracted `<tag>...</tag>` block with its byte span in the source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagSegment {
    pub tag: Tag,
    pub body: String,
    /// Byte offsets of the body within the source text.
    pub span: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TagError {
    #[error("unclosed <{tag}> block opened at byte {at}", tag = .tag.name())]
    Unclosed { tag: Tag, at: usize },
    #[error("unexpected <{tag}> inside a <{within}> block at byte {at}",
            tag = .tag.name(), within = .within.name())]
    Unexpected { tag: Tag, within: Tag, at: usize },
    #[error("think block required but absent")]
    MissingThink,
}

/// Extracts the recognized tag blocks in document order. Text outside
/// blocks is ignored; inside a block, any recognized tag other than the
/// block's own closer is rejected. With `expect_think` the result must
/// contain at least one think block.
pub fn parse_transcript(text: &str, expect_think: bool) -> Result<Vec<TagSegment>, TagError> {
    let bytes = text.as_bytes();
    let mut segments = Vec::new();
    let mut pos = 0;
    while let Some(offset) = find_byte(bytes, pos, b'<') {
        let Some((tag, closing, after)) = read_tag_token(text, offset) else {
            pos = offset + 1;
            continue;
        };
        if closing {
            // Stray closer outside any block: ignore like other untagged text.
            pos = after;
            continue;
        }
        let body_start = after;
        let (body_end, close_end) = scan_for_closer(text, tag, body_start, offset)?;
        segments.push(TagSegment {
            tag,
            body: text[body_start..body_end].to_string(),
            span: (body_start, body_end),
        });
        pos = close_end;
    }
    if expect_think && !segments.iter().any(|s| s.tag == Tag::Think) {
        return Err(TagError::MissingThink);
    }
    Ok(segments)
}

/// Scans a block body for its closing tag, rejecting any other recognized
/// tag token on the way.
fn scan_for_closer(
    text: &str,
    open: Tag,
    body_start: usize,
    opened_at: usize,
) -> Result<(usize, usize), TagError> {
    let bytes = text.as_bytes();
    let mut pos = body_start;
    while let Some(offset) = find_byte(bytes, pos, b'<') {
        let Some((tag, closing, after)) = read_tag_token(text, offset) else {
            pos = offset + 1;
            continue;
        };
        if closing && tag == open {
            return Ok((offset, after));
        }
        return Err(TagError::Unexpected {
            tag,
            within: open,
            at: offset,
        });
    }
    Err(TagError::Unclosed {
        tag: open,
        at: opened_at,
    })
}

fn find_byte(bytes: &[u8], from: usize, needle: u8) -> Option<usize> {
    bytes[from.min(bytes.len())..]
        .iter()
        .position(|&b| b == needle)
        .map(|i| from + i)
}

/// Reads a `<name>` or `</name>` token for a recognized tag at `offset`.
/// Returns (tag, is_closing, offset past '>'), or None when the text at
/// `offset` is not a recognized tag token.
fn read_tag_token(text: &str, offset: usize) -> Option<(Tag, bool, usize)> {
    let rest = &text[offset..];
    debug_assert!(rest.starts_with('<'));
    let (closing, name_start) = if rest.len() > 1 && rest.as_bytes()[1] == b'/' {
        (true, 2)
    } else {
        (false, 1)
    };
    let after_name = rest[name_start..].find('>').map(|i| name_start + i)?;
    let tag = Tag::from_name(&rest[name_start..after_name])?;
    Some((tag, closing, offset + after_name + 1))
}

/// Renders one turn in the tagged transcript format: think (when
/// present), the DAG, one tool_call/obs pair per execution layer, then
/// the response.
pub fn render_turn_text(turn: &Turn) -> String {
    let mut out = String::new();
    if let Some(think) = &turn.think {
        out.push_str(&format!("<think>{think}</think>\n"));
    }
    out.push_str(&format!("<DAG>{}</DAG>\n", serialize_plan(&turn.dag)));
    let layers = topological_layers(&turn.dag).unwrap_or_default();
    for layer in layers {
        let calls: Vec<_> = turn
            .tool_calls
            .iter()
            .filter(|c| layer.contains(&c.task_id))
            .collect();
        if calls.is_empty() {
            continue;
        }
        let obs: Vec<_> = turn
            .observations
            .iter()
            .filter(|o| layer.contains(&o.task_id))
            .collect();
        out.push_str(&format!(
            "<tool_call>{}</tool_call>\n",
            serde_json::to_string(&calls).expect("serializable")
        ));
        out.push_str(&format!(
            "<obs>{}</obs>\n",
            serde_json::to_string(&obs).expect("serializable")
        ));
    }
    if let Some(response) = &turn.response {
        out.push_str(&format!("<response>{response}</response>\n"));
    }
    out
}

// ── Corpus files ─────────────────────────────────────────────────────────

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot open {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Decode { line: usize, message: String },
}

/// Streaming reader over a JSONL corpus file. Each item carries its line
/// number so callers can skip or abort on decode errors.
pub struct CorpusReader {
    lines: io::Lines<BufReader<File>>,
    line_no: usize,
}

impl CorpusReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let file = File::open(path.as_ref()).map_err(|source| CorpusError::Io {
            path: path.as_ref().display().to_string(),
            source,
        })?;
        Ok(Self {
            lines: BufReader::new(file).lines(),
            line_no: 0,
        })
    }
}

impl Iterator for CorpusReader {
    type Item = Result<Transcript, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.line_no += 1;
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(e) => {
                    return Some(Err(CorpusError::Decode {
                        line: self.line_no,
                        message: e.to_string(),
                    }))
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            return Some(decode_transcript_line(&line, self.line_no));
        }
    }
}

pub fn decode_transcript_line(line: &str, line_no: usize) -> Result<Transcript, CorpusError> {
    serde_json::from_str(line).map_err(|e| CorpusError::Decode {
        line: line_no,
        message: e.to_string(),
    })
}

/// Reads a whole corpus, aborting on the first decode error.
pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<Transcript>, CorpusError> {
    CorpusReader::open(path)?.collect()
}

pub fn encode_transcript_line(transcript: &Transcript) -> String {
    serde_json::to_string(transcript).expect("transcript serialization cannot fail")
}

pub fn write_corpus<'a>(
    transcripts: impl IntoIterator<Item = &'a Transcript>,
    path: impl AsRef<Path>,
) -> Result<(), CorpusError> {
    let file = File::create(path.as_ref()).map_err(|source| CorpusError::Io {
        path: path.as_ref().display().to_string(),
        source,
    })?;
    let mut writer = BufWriter::new(file);
    for transcript in transcripts {
        writeln!(writer, "{}", encode_transcript_line(transcript)).map_err(|source| {
            CorpusError::Io {
                path: path.as_ref().display().to_string(),
                source,
            }
        })?;
    }
    writer.flush().map_err(|source| CorpusError::Io {
        path: path.as_ref().display().to_string(),
        source,
    })
}

/// `true` iff `value` round-trips through the canonical plan form. Used
/// by generators to guarantee literals never collide with the reference
/// grammar.
pub fn literal_is_canonical(value: &JsonValue) -> bool {
    match value {
        JsonValue::String(s) => !matches!(classify_ref(s), Ok(Some(_)) | Err(_)),
        JsonValue::Array(items) => items.iter().all(literal_is_canonical),
        JsonValue::Object(map) => map.values().all(literal_is_canonical),
        _ => true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SymbolicRef;
    use serde_json::json;

    const PAPER_TASK: &str = r#"[{"task_id":"task_4","toolname":"name","payload":{"param1":"val1","param2":"$2.outputkey1","param3":"$3.outputkey4"},"dependencies":["task_2","task_3"]}]"#;

    #[test]
    fn parse_the_reference_task() {
        let dag = parse_plan(PAPER_TASK).unwrap();
        assert_eq!(dag.len(), 1);
        let task = &dag.tasks[0];
        assert_eq!(task.id, TaskId(4));
        assert_eq!(task.toolname, "name");
        assert_eq!(task.dependencies, vec![TaskId(2), TaskId(3)]);
        let refs: Vec<_> = task.refs().collect();
        assert_eq!(refs.len(), 2);
        assert_eq!(
            task.payload["param2"],
            PayloadValue::Ref(SymbolicRef::new(2, "outputkey1"))
        );
        assert_eq!(
            task.payload["param3"],
            PayloadValue::Ref(SymbolicRef::new(3, "outputkey4"))
        );
        assert_eq!(task.payload["param1"], PayloadValue::Literal(json!("val1")));
    }

    #[test]
    fn serialize_matches_reference_bytes() {
        let dag = parse_plan(PAPER_TASK).unwrap();
        assert_eq!(serialize_plan(&dag), PAPER_TASK);
    }

    #[test]
    fn empty_plan() {
        assert_eq!(parse_plan("[]").unwrap(), PlanDag::default());
        assert_eq!(serialize_plan(&PlanDag::default()), "[]");
    }

    #[test]
    fn missing_field_reported_with_index() {
        let err = parse_plan(r#"[{"task_id":"task_1"}]"#).unwrap_err();
        assert_eq!(
            err,
            ParseError::MissingField {
                task_index: 0,
                field: "toolname"
            }
        );
    }

    #[test]
    fn non_ref_dollar_strings_stay_literals() {
        let text =
            r#"[{"task_id":"task_1","toolname":"t","payload":{"p":"$abc.key"},"dependencies":[]}]"#;
        let dag = parse_plan(text).unwrap();
        // Oracle: hand tokenizer — `$` must be followed by at least one
        // digit, then '.', then an identifier, to count as a ref.
        let is_ref = |s: &str| {
            let rest = s.strip_prefix('$').unwrap_or("");
            let digits: String = rest.chars().take_while(|c| c.is_ascii_digit()).collect();
            !digits.is_empty()
                && rest[digits.len()..].starts_with('.')
                && crate::model::is_identifier(&rest[digits.len() + 1..])
        };
        assert!(!is_ref("$abc.key"));
        assert_eq!(
            dag.tasks[0].payload["p"],
            PayloadValue::Literal(json!("$abc.key"))
        );
    }

    #[test]
    fn bad_ordinal_is_an_error() {
        let text =
            r#"[{"task_id":"task_1","toolname":"t","payload":{"p":"$0.key"},"dependencies":[]}]"#;
        assert_eq!(
            parse_plan(text).unwrap_err(),
            ParseError::BadRefSyntax("$0.key".into())
        );
    }

    #[test]
    fn malformed_json_position() {
        match parse_plan("[{]").unwrap_err() {
            ParseError::MalformedJson { line: 1, .. } => {}
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn dag_tag_wrapper_accepted() {
        let dag = parse_plan("<DAG>[]</DAG>").unwrap();
        assert!(dag.is_empty());
        let dag = parse_plan(&format!("<DAG>{PAPER_TASK}</DAG>")).unwrap();
        assert_eq!(dag.len(), 1);
    }

    #[test]
    fn transcript_think_then_dag() {
        let segments = parse_transcript("<think>a</think><DAG>[]</DAG>", true).unwrap();
        assert_eq!(segments.len(), 2);
        assert_eq!(segments[0].tag, Tag::Think);
        assert_eq!(segments[0].body, "a");
        assert_eq!(segments[1].tag, Tag::Dag);
        assert_eq!(segments[1].body, "[]");
    }

    #[test]
    fn transcript_without_think_ok_when_not_expected() {
        let segments = parse_transcript("<DAG>[]</DAG>", false).unwrap();
        assert_eq!(segments.len(), 1);
        assert_eq!(segments[0].tag, Tag::Dag);
        assert_eq!(
            parse_transcript("<DAG>[]</DAG>", true).unwrap_err(),
            TagError::MissingThink
        );
    }

    #[test]
    fn transcript_unclosed_tag() {
        assert_eq!(
            parse_transcript("<obs>x", false).unwrap_err(),
            TagError::Unclosed {
                tag: Tag::Obs,
                at: 0
            }
        );
    }

    #[test]
    fn transcript_ignores_untagged_text_and_unknown_names() {
        let segments = parse_transcript(
            "prose <foo> more </notatag> <think>x</think> trailing",
            false,
        )
        .unwrap();
        assert_eq!(segments.len(), 1);
        assert_eq!(segments[0].body, "x");
    }

    #[test]
    fn transcript_rejects_recognized_tag_inside_block() {
        let err = parse_transcript("<think>a <DAG>[]</DAG></think>", false).unwrap_err();
        assert!(matches!(
            err,
            TagError::Unexpected {
                tag: Tag::Dag,
                within: Tag::Think,
                ..
            }
        ));
    }

    #[test]
    fn transcript_spans_reconstruct_bodies() {
        let text = "junk<think>hello</think>mid<DAG>[1, 2]</DAG>";
        let segments = parse_transcript(text, false).unwrap();
        for segment in &segments {
            assert_eq!(&text[segment.span.0..segment.span.1], segment.body);
        }
    }

    #[test]
    fn corpus_truncated_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let good = r#"{"sample_id":"s1","system_tools":[],"turns":[],"meta":{}}"#;
        std::fs::write(&path, format!("{good}\n{{\"sample_id\": tru\n")).unwrap();
        let items: Vec<_> = CorpusReader::open(&path).unwrap().collect();
        assert_eq!(items.len(), 2);
        assert!(items[0].is_ok());
        match items[1].as_ref().unwrap_err() {
            CorpusError::Decode { line, .. } => assert_eq!(*line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn corpus_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(read_corpus(&path).unwrap().is_empty());
    }
}
