//! Layered rule-based verification for generated samples and model
//! outputs.
//!
//! Layers run in a fixed order — json, ast, symbolic, adherence,
//! observation — and validation short-circuits at the first layer that
//! reports anything, mirroring the regenerate-on-failure rule of the
//! data pipeline.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::codec::decode_transcript_line;
use crate::model::{
    json_approx_eq, validate_structure, JsonValue, ObsStatus, Observation, PayloadValue, PlanDag,
    StructureViolation, TaskId, ToolSpec, Transcript, Turn,
};

/// Which verification layer a violation belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Json,
    Ast,
    Symbolic,
    Adherence,
    Observation,
}

/// One failed check.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub layer: Layer,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub task_id: Option<String>,
    pub message: String,
}

impl Violation {
    fn new(layer: Layer, task_id: Option<TaskId>, message: impl Into<String>) -> Self {
        Self {
            layer,
            task_id: task_id.map(|t| t.to_string()),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ValidateOptions {
    /// In lenient mode, payload parameters outside the tool schema are
    /// tolerated; missing required arguments still fail.
    pub lenient: bool,
}

/// JSON validity — the first verification layer.
pub fn check_json(text: &str) -> Result<(), Violation> {
    serde_json::from_str::<serde_json::Value>(text)
        .map(|_| ())
        .map_err(|e| Violation::new(Layer::Json, None, format!("invalid JSON: {e}")))
}

/// AST matching: every task references a provided tool with the correct
/// argument names. Structural invariants (other than ref declarations,
/// which belong to the symbolic layer) are reported here too.
pub fn check_ast(dag: &PlanDag, tools: &[ToolSpec], opts: ValidateOptions) -> Vec<Violation> {
    let mut violations = Vec::new();
    for v in validate_structure(dag) {
        let task = match &v {
            StructureViolation::DanglingRef { .. } => continue,
            StructureViolation::Cycle { tasks } => tasks.first().copied(),
            StructureViolation::DuplicateTaskId { task }
            | StructureViolation::NotTopologicallyOrdered { task, .. }
            | StructureViolation::UnknownDependency { task, .. }
            | StructureViolation::SelfDependency { task }
            | StructureViolation::DuplicateDependency { task, .. } => Some(*task),
        };
        violations.push(Violation::new(Layer::Ast, task, v.to_string()));
    }

    for task in &dag.tasks {
        let Some(tool) = tools.iter().find(|t| t.name == task.toolname) else {
            violations.push(Violation::new(
                Layer::Ast,
                Some(task.id),
                format!("unknown tool {:?}", task.toolname),
            ));
            continue;
        };
        if !opts.lenient {
            for param in task.payload.keys() {
                if tool.input(param).is_none() {
                    violations.push(Violation::new(
                        Layer::Ast,
                        Some(task.id),
                        format!("tool {:?} has no argument {param:?}", tool.name),
                    ));
                }
            }
        }
        for input in &tool.inputs {
            if !task.payload.contains_key(&input.name) {
                violations.push(Violation::new(
                    Layer::Ast,
                    Some(task.id),
                    format!("missing argument {:?} of tool {:?}", input.name, tool.name),
                ));
            }
        }
    }
    violations
}

/// Symbolic arguments: every ref resolves to a declared same-turn
/// dependency or a prior-turn task, and the referenced key exists in the
/// source tool's output schema.
pub fn check_symbolic_refs(
    dag: &PlanDag,
    tools: &[ToolSpec],
    prior_dags: &[&PlanDag],
) -> Vec<Violation> {
    let mut violations = Vec::new();
    for task in &dag.tasks {
        for (param, r) in task.refs() {
            let source = r.task_id();
            let source_task = if dag.task(source).is_some() {
                if !task.dependencies.contains(&source) {
                    violations.push(Violation::new(
                        Layer::Symbolic,
                        Some(task.id),
                        format!("{param}: {r} is not a declared dependency"),
                    ));
                    continue;
                }
                dag.task(source)
            } else {
                prior_dags.iter().find_map(|d| d.task(source))
            };
            let Some(source_task) = source_task else {
                violations.push(Violation::new(
                    Layer::Symbolic,
                    Some(task.id),
                    format!("{param}: {r} does not resolve to any task"),
                ));
                continue;
            };
            let Some(source_tool) = tools.iter().find(|t| t.name == source_task.toolname) else {
                violations.push(Violation::new(
                    Layer::Symbolic,
                    Some(task.id),
                    format!("{param}: source tool {:?} is unknown", source_task.toolname),
                ));
                continue;
            };
            if source_tool.output(&r.key).is_none() {
                violations.push(Violation::new(
                    Layer::Symbolic,
                    Some(task.id),
                    format!(
                        "{param}: {r} names no output of tool {:?}",
                        source_tool.name
                    ),
                ));
            }
        }
    }
    violations
}

/// Tasks whose dependency chain contains a failed task; these must not
/// have been executed.
fn blocked_tasks(dag: &PlanDag, failed: &BTreeSet<TaskId>) -> BTreeSet<TaskId> {
    let mut blocked = BTreeSet::new();
    for task in &dag.tasks {
        if task
            .dependencies
            .iter()
            .any(|d| failed.contains(d) || blocked.contains(d))
        {
            blocked.insert(task.id);
        }
    }
    blocked
}

/// Plan adherence: calls match the DAG tasks one for one (minus tasks
/// halted by an upstream fault), appear in a valid topological order, and
/// every ref-derived value equals the referenced observation's field.
pub fn check_adherence(turn: &Turn, prior_obs: &BTreeMap<TaskId, Observation>) -> Vec<Violation> {
    let mut violations = Vec::new();
    let failed: BTreeSet<TaskId> = turn
        .observations
        .iter()
        .filter(|o| o.status != ObsStatus::Ok)
        .map(|o| o.task_id)
        .collect();
    let blocked = blocked_tasks(&turn.dag, &failed);
    let expected: BTreeSet<TaskId> = turn
        .dag
        .tasks
        .iter()
        .map(|t| t.id)
        .filter(|id| !blocked.contains(id))
        .collect();

    let mut called: BTreeSet<TaskId> = BTreeSet::new();
    for call in &turn.tool_calls {
        if !called.insert(call.task_id) {
            violations.push(Violation::new(
                Layer::Adherence,
                Some(call.task_id),
                "duplicate tool call",
            ));
        }
        if !expected.contains(&call.task_id) {
            violations.push(Violation::new(
                Layer::Adherence,
                Some(call.task_id),
                "call does not correspond to an executable DAG task",
            ));
        }
    }
    for id in &expected {
        if !called.contains(id) {
            violations.push(Violation::new(
                Layer::Adherence,
                Some(*id),
                "missing call for DAG task",
            ));
        }
    }

    let position: BTreeMap<TaskId, usize> = turn
        .tool_calls
        .iter()
        .enumerate()
        .map(|(i, c)| (c.task_id, i))
        .collect();
    let observed: BTreeMap<TaskId, &Observation> =
        turn.observations.iter().map(|o| (o.task_id, o)).collect();
    for call in &turn.tool_calls {
        let Some(task) = turn.dag.task(call.task_id) else {
            continue;
        };
        if task.toolname != call.toolname {
            violations.push(Violation::new(
                Layer::Adherence,
                Some(call.task_id),
                format!(
                    "call names tool {:?} but the plan says {:?}",
                    call.toolname, task.toolname
                ),
            ));
        }
        for dep in &task.dependencies {
            if let (Some(&di), Some(&ci)) = (position.get(dep), position.get(&call.task_id)) {
                if di >= ci {
                    violations.push(Violation::new(
                        Layer::Adherence,
                        Some(call.task_id),
                        format!("call precedes its dependency {dep}"),
                    ));
                }
            }
        }

        let Some(payload) = call.payload.as_object() else {
            violations.push(Violation::new(
                Layer::Adherence,
                Some(call.task_id),
                "call payload is not an object",
            ));
            continue;
        };
        let plan_keys: BTreeSet<&str> = task.payload.keys().map(String::as_str).collect();
        let call_keys: BTreeSet<&str> = payload.keys().map(String::as_str).collect();
        if plan_keys != call_keys {
            violations.push(Violation::new(
                Layer::Adherence,
                Some(call.task_id),
                "call parameters differ from the plan payload",
            ));
            continue;
        }
        for (param, planned) in &task.payload {
            let actual = &payload[param];
            match planned {
                PayloadValue::Literal(expected_value) => {
                    if !json_approx_eq(actual, expected_value) {
                        violations.push(Violation::new(
                            Layer::Adherence,
                            Some(call.task_id),
                            format!("literal parameter {param:?} diverges from the plan"),
                        ));
                    }
                }
                PayloadValue::Ref(r) => {
                    let source = observed
                        .get(&r.task_id())
                        .copied()
                        .or_else(|| prior_obs.get(&r.task_id()));
                    let expected_value = source
                        .filter(|o| o.status == ObsStatus::Ok)
                        .and_then(|o| o.value.as_ref())
                        .and_then(|v| v.get(&r.key));
                    match expected_value {
                        Some(v) if json_approx_eq(actual, v) => {}
                        Some(_) => violations.push(Violation::new(
                            Layer::Adherence,
                            Some(call.task_id),
                            format!("parameter {param:?} does not match observation {r}"),
                        )),
                        None => violations.push(Violation::new(
                            Layer::Adherence,
                            Some(call.task_id),
                            format!("parameter {param:?}: no observation backs {r}"),
                        )),
                    }
                }
            }
        }
    }
    violations
}

/// Observation conformance: observations pair one-to-one with calls, and
/// ok values carry exactly the tool's output schema with matching kinds.
pub fn check_observation(turn: &Turn, tools: &[ToolSpec]) -> Vec<Violation> {
    let mut violations = Vec::new();
    let called: BTreeSet<TaskId> = turn.tool_calls.iter().map(|c| c.task_id).collect();
    let mut seen: BTreeSet<TaskId> = BTreeSet::new();
    for obs in &turn.observations {
        if !seen.insert(obs.task_id) {
            violations.push(Violation::new(
                Layer::Observation,
                Some(obs.task_id),
                "duplicate observation",
            ));
        }
        if !called.contains(&obs.task_id) {
            violations.push(Violation::new(
                Layer::Observation,
                Some(obs.task_id),
                "observation without a matching tool call",
            ));
            continue;
        }
        let call = turn
            .tool_calls
            .iter()
            .find(|c| c.task_id == obs.task_id)
            .expect("checked above");
        match obs.status {
            ObsStatus::Ok => {
                let Some(tool) = tools.iter().find(|t| t.name == call.toolname) else {
                    violations.push(Violation::new(
                        Layer::Observation,
                        Some(obs.task_id),
                        format!("no schema for tool {:?}", call.toolname),
                    ));
                    continue;
                };
                let Some(value) = obs.value.as_ref().and_then(JsonValue::as_object) else {
                    violations.push(Violation::new(
                        Layer::Observation,
                        Some(obs.task_id),
                        "ok observation lacks an object value",
                    ));
                    continue;
                };
                let keys: BTreeSet<&str> = value.keys().map(String::as_str).collect();
                let schema: BTreeSet<&str> = tool.outputs.iter().map(|f| f.name.as_str()).collect();
                if keys != schema {
                    violations.push(Violation::new(
                        Layer::Observation,
                        Some(obs.task_id),
                        format!(
                            "observation keys do not match the schema of {:?}",
                            tool.name
                        ),
                    ));
                    continue;
                }
                for field in &tool.outputs {
                    if !field.kind.matches(&value[&field.name]) {
                        violations.push(Violation::new(
                            Layer::Observation,
                            Some(obs.task_id),
                            format!("field {:?} has the wrong kind", field.name),
                        ));
                    }
                }
            }
            _ => {
                if obs.value.is_some() {
                    violations.push(Violation::new(
                        Layer::Observation,
                        Some(obs.task_id),
                        "failed observation must not carry a value",
                    ));
                }
            }
        }
    }
    for call in &turn.tool_calls {
        if !seen.contains(&call.task_id) {
            violations.push(Violation::new(
                Layer::Observation,
                Some(call.task_id),
                "tool call without an observation",
            ));
        }
    }
    violations
}

/// Runs every layer over every turn, stopping at the first layer that
/// reports violations.
pub fn validate_sample(transcript: &Transcript, opts: ValidateOptions) -> Vec<Violation> {
    // Conversation-level: a task id may recur in a later turn only as a
    // reschedule of an unfinished task — same tool, and no ok observation
    // in the turn that first planned it.
    let mut first_seen: BTreeMap<TaskId, (usize, &str)> = BTreeMap::new();
    let mut dups = Vec::new();
    for (i, turn) in transcript.turns.iter().enumerate() {
        for task in &turn.dag.tasks {
            match first_seen.get(&task.id) {
                None => {
                    first_seen.insert(task.id, (i, task.toolname.as_str()));
                }
                Some(&(j, toolname)) => {
                    let finished_ok = transcript.turns[j]
                        .observations
                        .iter()
                        .any(|o| o.task_id == task.id && o.status == ObsStatus::Ok);
                    if finished_ok || toolname != task.toolname {
                        dups.push(Violation::new(
                            Layer::Ast,
                            Some(task.id),
                            "task id reused across the conversation",
                        ));
                    }
                }
            }
        }
    }

    for (i, turn) in transcript.turns.iter().enumerate() {
        let prior_dags: Vec<&PlanDag> = transcript.turns[..i].iter().map(|t| &t.dag).collect();
        let prior_obs = transcript.prior_observations(i);

        let mut ast = check_ast(&turn.dag, &transcript.system_tools, opts);
        if i == 0 {
            ast.append(&mut dups);
        }
        if !ast.is_empty() {
            return ast;
        }
        let symbolic = check_symbolic_refs(&turn.dag, &transcript.system_tools, &prior_dags);
        if !symbolic.is_empty() {
            return symbolic;
        }
        let adherence = check_adherence(turn, &prior_obs);
        if !adherence.is_empty() {
            return adherence;
        }
        let observation = check_observation(turn, &transcript.system_tools);
        if !observation.is_empty() {
            return observation;
        }
    }
    dups
}

/// Decodes one corpus line and validates it; decode failures surface as
/// json-layer violations, keeping the layer ordering of the stack.
pub fn validate_line(line: &str, line_no: usize, opts: ValidateOptions) -> Vec<Violation> {
    match decode_transcript_line(line, line_no) {
        Ok(transcript) => validate_sample(&transcript, opts),
        Err(e) => vec![Violation::new(Layer::Json, None, e.to_string())],
    }
}
