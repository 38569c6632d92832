//! In-memory representation of tools, payloads, plan DAGs, and transcripts.
//!
//! All types are immutable after construction and safe to share across
//! threads. Operations here are pure functions; serialization lives in
//! [`crate::codec`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Arbitrary JSON payload data. Object keys are kept sorted, so
/// serialization is canonical.
pub type JsonValue = serde_json::Value;

/// Relative tolerance used when comparing non-integer numbers in payloads
/// and observations.
pub const NUMBER_REL_TOL: f64 = 1e-9;

// ── Field schemas and tools ──────────────────────────────────────────────

/// The minimal kind system for tool input/output fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    String,
    Number,
    Boolean,
    List,
    Object,
}

impl FieldKind {
    /// Whether `value` conforms to this kind.
    pub fn matches(self, value: &JsonValue) -> bool {
        match self {
            FieldKind::String => value.is_string(),
            FieldKind::Number => value.is_number(),
            FieldKind::Boolean => value.is_boolean(),
            FieldKind::List => value.is_array(),
            FieldKind::Object => value.is_object(),
        }
    }
}

/// One named field of a tool's input or output schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSchema {
    pub name: String,
    pub kind: FieldKind,
    pub description: String,
}

impl FieldSchema {
    pub fn new(name: impl Into<String>, kind: FieldKind, description: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind,
            description: description.into(),
        }
    }
}

/// Where a tool came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolOrigin {
    Seed,
    Synthetic,
    Distractor,
}

/// A tool: name, description, and input/output schemas.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub inputs: Vec<FieldSchema>,
    pub outputs: Vec<FieldSchema>,
    pub origin: ToolOrigin,
}

impl ToolSpec {
    pub fn input(&self, name: &str) -> Option<&FieldSchema> {
        self.inputs.iter().find(|f| f.name == name)
    }

    pub fn output(&self, name: &str) -> Option<&FieldSchema> {
        self.outputs.iter().find(|f| f.name == name)
    }
}

/// True iff `s` is a valid identifier: `[A-Za-z_][A-Za-z0-9_]*`.
pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

// ── Task identifiers and symbolic references ─────────────────────────────

/// Identifier of a plan task, serialized as `task_<N>`.
///
/// Ordinals are globally unique within a conversation; the counter is
/// monotonic across turns so later turns can reference earlier tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TaskId(pub u64);

impl TaskId {
    pub fn ordinal(self) -> u64 {
        self.0
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "task_{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("bad task id: {0:?}")]
pub struct BadTaskId(pub String);

impl FromStr for TaskId {
    type Err = BadTaskId;

    fn from_str(s: &str) -> Result<Self, BadTaskId> {
        let digits = s.strip_prefix("task_").ok_or_else(|| BadTaskId(s.into()))?;
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(BadTaskId(s.into()));
        }
        digits
            .parse::<u64>()
            .map(TaskId)
            .map_err(|_| BadTaskId(s.into()))
    }
}

impl Serialize for TaskId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for TaskId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(|e: BadTaskId| D::Error::custom(e))
    }
}

/// A symbolic payload value `$<ordinal>.<output_key>` binding a parameter
/// to an output field of an earlier task.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SymbolicRef {
    pub ordinal: u64,
    pub key: String,
}

impl SymbolicRef {
    pub fn new(ordinal: u64, key: impl Into<String>) -> Self {
        Self {
            ordinal,
            key: key.into(),
        }
    }

    pub fn task_id(&self) -> TaskId {
        TaskId(self.ordinal)
    }
}

impl fmt::Display for SymbolicRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "${}.{}", self.ordinal, self.key)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("bad symbolic reference syntax: {0:?}")]
pub struct BadRefSyntax(pub String);

/// Classifies a payload string: `Ok(Some(ref))` when it is a symbolic
/// reference, `Ok(None)` when it is an ordinary literal, and an error when
/// it matches the `$<digits>.<identifier>` shape but carries an invalid
/// ordinal (zero or out of range).
pub fn classify_ref(s: &str) -> Result<Option<SymbolicRef>, BadRefSyntax> {
    let Some(rest) = s.strip_prefix('$') else {
        return Ok(None);
    };
    let digits_end = rest.bytes().take_while(|b| b.is_ascii_digit()).count();
    if digits_end == 0 {
        return Ok(None);
    }
    let Some(key) = rest[digits_end..].strip_prefix('.') else {
        return Ok(None);
    };
    if !is_identifier(key) {
        return Ok(None);
    }
    let ordinal: u64 = rest[..digits_end]
        .parse()
        .map_err(|_| BadRefSyntax(s.into()))?;
    if ordinal == 0 {
        return Err(BadRefSyntax(s.into()));
    }
    Ok(Some(SymbolicRef::new(ordinal, key)))
}

// ── Payload values and plan tasks ────────────────────────────────────────

/// A payload parameter value: either a JSON literal or a symbolic
/// reference to an earlier task's output.
#[derive(Debug, Clone, PartialEq)]
pub enum PayloadValue {
    Literal(JsonValue),
    Ref(SymbolicRef),
}

impl PayloadValue {
    pub fn as_ref_value(&self) -> Option<&SymbolicRef> {
        match self {
            PayloadValue::Ref(r) => Some(r),
            PayloadValue::Literal(_) => None,
        }
    }

    pub fn as_literal(&self) -> Option<&JsonValue> {
        match self {
            PayloadValue::Literal(v) => Some(v),
            PayloadValue::Ref(_) => None,
        }
    }

    /// Wire form: refs become `$N.key` strings, literals stay as-is.
    pub fn to_json(&self) -> JsonValue {
        match self {
            PayloadValue::Literal(v) => v.clone(),
            PayloadValue::Ref(r) => JsonValue::String(r.to_string()),
        }
    }

    /// Inverse of [`PayloadValue::to_json`]: strings matching the
    /// reference grammar become refs, everything else is a literal.
    pub fn from_json(value: JsonValue) -> Result<Self, BadRefSyntax> {
        if let JsonValue::String(s) = &value {
            if let Some(r) = classify_ref(s)? {
                return Ok(PayloadValue::Ref(r));
            }
        }
        Ok(PayloadValue::Literal(value))
    }
}

impl Serialize for PayloadValue {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for PayloadValue {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = JsonValue::deserialize(deserializer)?;
        PayloadValue::from_json(value).map_err(D::Error::custom)
    }
}

/// One node of a plan DAG: a tool call with its payload and dependencies.
///
/// Field order matters: the canonical wire form is
/// `{task_id, toolname, payload, dependencies}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanTask {
    #[serde(rename = "task_id")]
    pub id: TaskId,
    pub toolname: String,
    pub payload: BTreeMap<String, PayloadValue>,
    pub dependencies: Vec<TaskId>,
}

impl PlanTask {
    /// All symbolic references in this task's payload, keyed by parameter.
    pub fn refs(&self) -> impl Iterator<Item = (&str, &SymbolicRef)> {
        self.payload
            .iter()
            .filter_map(|(k, v)| v.as_ref_value().map(|r| (k.as_str(), r)))
    }
}

/// An ordered list of plan tasks; the order is a topological order of the
/// dependency relation when the DAG is valid.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PlanDag {
    pub tasks: Vec<PlanTask>,
}

impl PlanDag {
    pub fn new(tasks: Vec<PlanTask>) -> Self {
        Self { tasks }
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn task(&self, id: TaskId) -> Option<&PlanTask> {
        self.tasks.iter().find(|t| t.id == id)
    }

    /// Dependency edges as (from, to) pairs, where `from` is the
    /// prerequisite task.
    pub fn edges(&self) -> impl Iterator<Item = (TaskId, TaskId)> + '_ {
        self.tasks
            .iter()
            .flat_map(|t| t.dependencies.iter().map(move |d| (*d, t.id)))
    }
}

// ── Observations, turns, transcripts ─────────────────────────────────────

/// Outcome status of a tool execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObsStatus {
    Ok,
    Timeout,
    RuntimeError,
}

/// Result of executing one task. `value` is present iff `status` is `Ok`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub task_id: TaskId,
    pub status: ObsStatus,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub value: Option<JsonValue>,
}

impl Observation {
    pub fn ok(task_id: TaskId, value: JsonValue) -> Self {
        Self {
            task_id,
            status: ObsStatus::Ok,
            value: Some(value),
        }
    }

    pub fn failed(task_id: TaskId, status: ObsStatus) -> Self {
        Self {
            task_id,
            status,
            value: None,
        }
    }
}

/// A concrete tool invocation with all references resolved to literals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub task_id: TaskId,
    pub toolname: String,
    pub payload: JsonValue,
}

/// Which multi-turn continuation the second turn of a sample encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Irrelevant,
    Dependent,
    ToolError,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 3] = [
        ScenarioKind::Irrelevant,
        ScenarioKind::Dependent,
        ScenarioKind::ToolError,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::Irrelevant => "irrelevant",
            ScenarioKind::Dependent => "dependent",
            ScenarioKind::ToolError => "tool_error",
        }
    }
}

/// One dialogue turn: query, plan DAG, execution trace, and response.
/// Only the DAG is mandatory on the wire, so prediction files can stay
/// minimal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    #[serde(default)]
    pub user_query: String,
    #[serde(default)]
    pub think: Option<String>,
    pub dag: PlanDag,
    #[serde(default)]
    pub tool_calls: Vec<ToolCall>,
    #[serde(default)]
    pub observations: Vec<Observation>,
    #[serde(default)]
    pub response: Option<String>,
    #[serde(default)]
    pub scenario: Option<ScenarioKind>,
}

/// A full sample: system tool list plus one or two turns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub sample_id: String,
    #[serde(default)]
    pub system_tools: Vec<ToolSpec>,
    pub turns: Vec<Turn>,
    #[serde(default)]
    pub meta: BTreeMap<String, JsonValue>,
}

impl Transcript {
    pub fn tool(&self, name: &str) -> Option<&ToolSpec> {
        self.system_tools.iter().find(|t| t.name == name)
    }

    /// Largest task ordinal used anywhere in the transcript, or 0.
    pub fn max_ordinal(&self) -> u64 {
        self.turns
            .iter()
            .flat_map(|t| t.dag.tasks.iter())
            .map(|t| t.id.ordinal())
            .max()
            .unwrap_or(0)
    }

    /// Observations from turns strictly before `turn_index`, keyed by task.
    pub fn prior_observations(&self, turn_index: usize) -> BTreeMap<TaskId, Observation> {
        self.turns[..turn_index.min(self.turns.len())]
            .iter()
            .flat_map(|t| t.observations.iter())
            .map(|o| (o.task_id, o.clone()))
            .collect()
    }
}

// ── Structural validation ────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("dependency cycle involving tasks {0:?}")]
pub struct CycleDetected(pub Vec<TaskId>);

/// A violated plan-DAG invariant, with the offending task where known.
#[derive(Debug, Clone, PartialEq)]
pub enum StructureViolation {
    Cycle {
        tasks: Vec<TaskId>,
    },
    DuplicateTaskId {
        task: TaskId,
    },
    NotTopologicallyOrdered {
        task: TaskId,
        dependency: TaskId,
    },
    UnknownDependency {
        task: TaskId,
        dependency: TaskId,
    },
    SelfDependency {
        task: TaskId,
    },
    DuplicateDependency {
        task: TaskId,
        dependency: TaskId,
    },
    /// A payload ref addresses a task in this DAG that is not declared as
    /// a dependency. Refs to absent ordinals are left to cross-turn checks.
    DanglingRef {
        task: TaskId,
        reference: SymbolicRef,
    },
}

impl fmt::Display for StructureViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StructureViolation::Cycle { tasks } => {
                write!(f, "dependency cycle among {}", join_ids(tasks))
            }
            StructureViolation::DuplicateTaskId { task } => {
                write!(f, "duplicate task id {task}")
            }
            StructureViolation::NotTopologicallyOrdered { task, dependency } => {
                write!(f, "{task} appears before its dependency {dependency}")
            }
            StructureViolation::UnknownDependency { task, dependency } => {
                write!(f, "{task} depends on unknown task {dependency}")
            }
            StructureViolation::SelfDependency { task } => {
                write!(f, "{task} depends on itself")
            }
            StructureViolation::DuplicateDependency { task, dependency } => {
                write!(f, "{task} lists dependency {dependency} twice")
            }
            StructureViolation::DanglingRef { task, reference } => {
                write!(
                    f,
                    "{task} references {reference} without declaring the dependency"
                )
            }
        }
    }
}

fn join_ids(ids: &[TaskId]) -> String {
    ids.iter()
        .map(TaskId::to_string)
        .collect::<Vec<_>>()
        .join(", ")
}

/// Checks every structural invariant and returns all violations found.
///
/// Refs whose ordinal does not name any task in this DAG are not flagged
/// here: they may resolve to a prior turn, which only the cross-turn
/// symbolic check can decide.
pub fn validate_structure(dag: &PlanDag) -> Vec<StructureViolation> {
    let mut violations = Vec::new();
    let mut position: BTreeMap<TaskId, usize> = BTreeMap::new();
    for (i, task) in dag.tasks.iter().enumerate() {
        if position.insert(task.id, i).is_some() {
            violations.push(StructureViolation::DuplicateTaskId { task: task.id });
        }
    }

    for (i, task) in dag.tasks.iter().enumerate() {
        let mut seen = BTreeSet::new();
        for dep in &task.dependencies {
            if *dep == task.id {
                violations.push(StructureViolation::SelfDependency { task: task.id });
                continue;
            }
            if !seen.insert(*dep) {
                violations.push(StructureViolation::DuplicateDependency {
                    task: task.id,
                    dependency: *dep,
                });
            }
            match position.get(dep) {
                None => violations.push(StructureViolation::UnknownDependency {
                    task: task.id,
                    dependency: *dep,
                }),
                Some(&j) if j >= i => {
                    violations.push(StructureViolation::NotTopologicallyOrdered {
                        task: task.id,
                        dependency: *dep,
                    })
                }
                Some(_) => {}
            }
        }
        for (_, r) in task.refs() {
            if position.contains_key(&r.task_id()) && !task.dependencies.contains(&r.task_id()) {
                violations.push(StructureViolation::DanglingRef {
                    task: task.id,
                    reference: r.clone(),
                });
            }
        }
    }

    if let Err(CycleDetected(tasks)) = topological_layers(dag) {
        violations.push(StructureViolation::Cycle { tasks });
    }
    violations
}

/// Groups tasks into execution layers: layer `k` holds exactly the tasks
/// whose longest dependency chain has length `k`. Dependencies that name
/// tasks outside the DAG (cross-turn refs) do not constrain layering.
pub fn topological_layers(dag: &PlanDag) -> Result<Vec<Vec<TaskId>>, CycleDetected> {
    let index: BTreeMap<TaskId, usize> = dag
        .tasks
        .iter()
        .enumerate()
        .map(|(i, t)| (t.id, i))
        .collect();
    let n = dag.tasks.len();

    // dependents[i] lists tasks waiting on task i; indegree counts in-DAG deps.
    let mut dependents: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut indegree = vec![0usize; n];
    for (i, task) in dag.tasks.iter().enumerate() {
        for dep in &task.dependencies {
            if let Some(&j) = index.get(dep) {
                if j != i {
                    dependents[j].push(i);
                    indegree[i] += 1;
                }
            }
        }
    }

    let mut depth = vec![0usize; n];
    let mut queue: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut processed = 0;
    let mut layers: Vec<Vec<TaskId>> = Vec::new();
    let mut head = 0;
    while head < queue.len() {
        let i = queue[head];
        head += 1;
        processed += 1;
        while layers.len() <= depth[i] {
            layers.push(Vec::new());
        }
        layers[depth[i]].push(dag.tasks[i].id);
        for &j in &dependents[i] {
            depth[j] = depth[j].max(depth[i] + 1);
            indegree[j] -= 1;
            if indegree[j] == 0 {
                queue.push(j);
            }
        }
    }

    if processed < n {
        let stuck: Vec<TaskId> = (0..n)
            .filter(|&i| indegree[i] > 0)
            .map(|i| dag.tasks[i].id)
            .collect();
        return Err(CycleDetected(stuck));
    }
    // Keep tasks within a layer in stored order for determinism.
    for layer in &mut layers {
        layer.sort_by_key(|id| index[id]);
    }
    Ok(layers)
}

// ── Approximate JSON equality ────────────────────────────────────────────

/// JSON equality with numeric tolerance: integers compare exactly,
/// non-integers with relative tolerance [`NUMBER_REL_TOL`].
pub fn json_approx_eq(a: &JsonValue, b: &JsonValue) -> bool {
    match (a, b) {
        (JsonValue::Number(x), JsonValue::Number(y)) => number_approx_eq(x, y),
        (JsonValue::Array(xs), JsonValue::Array(ys)) => {
            xs.len() == ys.len() && xs.iter().zip(ys).all(|(x, y)| json_approx_eq(x, y))
        }
        (JsonValue::Object(xs), JsonValue::Object(ys)) => {
            xs.len() == ys.len()
                && xs
                    .iter()
                    .all(|(k, x)| ys.get(k).is_some_and(|y| json_approx_eq(x, y)))
        }
        _ => a == b,
    }
}

fn number_approx_eq(x: &serde_json::Number, y: &serde_json::Number) -> bool {
    match (x.as_i64(), y.as_i64()) {
        (Some(a), Some(b)) => return a == b,
        (None, None) => {}
        // One side only fits an integer type the other does not share:
        // fall through to the float comparison.
        _ => {}
    }
    if let (Some(a), Some(b)) = (x.as_u64(), y.as_u64()) {
        return a == b;
    }
    let (Some(a), Some(b)) = (x.as_f64(), y.as_f64()) else {
        return false;
    };
    if a == b {
        return true;
    }
    (a - b).abs() <= NUMBER_REL_TOL * a.abs().max(b.abs())
}
