//! Mock execution engine: runs a plan layer by layer, resolves symbolic
//! references against completed observations, emits schema-conformant
//! observations with deterministic pseudo-random values, and injects
//! faults.
//!
//! Execution is downward-closed: a task runs only after every dependency
//! produced an ok observation. A faulted task still emits its call and a
//! failed observation; its transitive dependents are not executed at all.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon::value_of_kind;
use crate::model::{
    topological_layers, CycleDetected, JsonValue, ObsStatus, Observation, PayloadValue, PlanDag,
    SymbolicRef, TaskId, ToolCall, ToolSpec,
};
use crate::rng::{derive_seed_str, rng_from_seed};

/// The two fault kinds a tool execution can surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    Timeout,
    RuntimeError,
}

impl FaultKind {
    pub fn status(self) -> ObsStatus {
        match self {
            FaultKind::Timeout => ObsStatus::Timeout,
            FaultKind::RuntimeError => ObsStatus::RuntimeError,
        }
    }
}

/// Controls one execution pass.
#[derive(Debug, Clone, Default)]
pub struct ExecutionPolicy {
    pub fault: Option<(TaskId, FaultKind)>,
    pub value_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExecError {
    #[error("{task}: cannot resolve {reference}")]
    UnresolvableRef {
        task: TaskId,
        reference: SymbolicRef,
    },
    #[error("unknown tool {0:?}")]
    UnknownTool(String),
    #[error("fault target {0} is not in the DAG")]
    UnknownFaultTask(TaskId),
    #[error(transparent)]
    Cycle(#[from] CycleDetected),
    #[error("no failed or pending task; nothing to reschedule")]
    NoFailure,
}

/// Runs the plan. `prior` holds observations from earlier turns for
/// cross-turn references. Returns the calls and observations in layer
/// order; ordering is canonical regardless of any internal scheduling.
pub fn execute(
    dag: &PlanDag,
    tools: &[ToolSpec],
    prior: &BTreeMap<TaskId, Observation>,
    policy: &ExecutionPolicy,
) -> Result<(Vec<ToolCall>, Vec<Observation>), ExecError> {
    if let Some((fault_task, _)) = policy.fault {
        if dag.task(fault_task).is_none() {
            return Err(ExecError::UnknownFaultTask(fault_task));
        }
    }
    let layers = topological_layers(dag)?;
    let mut completed: BTreeMap<TaskId, Observation> = prior.clone();
    let mut halted: BTreeSet<TaskId> = BTreeSet::new();
    let mut calls = Vec::with_capacity(dag.len());
    let mut observations = Vec::with_capacity(dag.len());

    for layer in layers {
        for task_id in layer {
            let task = dag.task(task_id).expect("layer ids come from the dag");
            let blocked = task.dependencies.iter().any(|dep| {
                halted.contains(dep)
                    || completed
                        .get(dep)
                        .is_some_and(|obs| obs.status != ObsStatus::Ok)
            });
            if blocked {
                halted.insert(task_id);
                continue;
            }

            let tool = tools
                .iter()
                .find(|t| t.name == task.toolname)
                .ok_or_else(|| ExecError::UnknownTool(task.toolname.clone()))?;

            let mut resolved = serde_json::Map::new();
            for (param, value) in &task.payload {
                let concrete = match value {
                    PayloadValue::Literal(v) => v.clone(),
                    PayloadValue::Ref(r) => resolve_ref(task_id, r, &completed)?,
                };
                resolved.insert(param.clone(), concrete);
            }
            calls.push(ToolCall {
                task_id,
                toolname: task.toolname.clone(),
                payload: JsonValue::Object(resolved),
            });

            let faulted = policy.fault.is_some_and(|(target, _)| target == task_id);
            let observation = if faulted {
                let (_, kind) = policy.fault.expect("fault checked above");
                halted.insert(task_id);
                Observation::failed(task_id, kind.status())
            } else {
                Observation::ok(
                    task_id,
                    synth_observation_value(tool, task_id, policy.value_seed),
                )
            };
            completed.insert(task_id, observation.clone());
            observations.push(observation);
        }
    }
    Ok((calls, observations))
}

fn resolve_ref(
    task: TaskId,
    reference: &SymbolicRef,
    completed: &BTreeMap<TaskId, Observation>,
) -> Result<JsonValue, ExecError> {
    let unresolvable = || ExecError::UnresolvableRef {
        task,
        reference: reference.clone(),
    };
    let obs = completed
        .get(&reference.task_id())
        .ok_or_else(unresolvable)?;
    if obs.status != ObsStatus::Ok {
        return Err(unresolvable());
    }
    obs.value
        .as_ref()
        .and_then(|v| v.get(&reference.key))
        .cloned()
        .ok_or_else(unresolvable)
}

/// Output object with exactly the tool's schema fields; values are
/// type-driven and deterministic in (value_seed, task id).
fn synth_observation_value(tool: &ToolSpec, task_id: TaskId, value_seed: u64) -> JsonValue {
    let mut rng = rng_from_seed(derive_seed_str(value_seed, &task_id.to_string()));
    let mut map = serde_json::Map::new();
    for field in &tool.outputs {
        map.insert(field.name.clone(), value_of_kind(field.kind, &mut rng));
    }
    JsonValue::Object(map)
}

/// The induced sub-DAG on the failed task and every task left without an
/// observation. Task ids are retained; dependencies are pruned to the
/// retained set, so references to completed tasks become cross-turn refs.
pub fn unfinished_subgraph(
    dag: &PlanDag,
    observations: &[Observation],
) -> Result<PlanDag, ExecError> {
    let by_task: BTreeMap<TaskId, &Observation> =
        observations.iter().map(|o| (o.task_id, o)).collect();
    let retained: BTreeSet<TaskId> = dag
        .tasks
        .iter()
        .map(|t| t.id)
        .filter(|id| {
            by_task
                .get(id)
                .is_none_or(|obs| obs.status != ObsStatus::Ok)
        })
        .collect();
    if retained.is_empty() {
        return Err(ExecError::NoFailure);
    }
    let tasks = dag
        .tasks
        .iter()
        .filter(|t| retained.contains(&t.id))
        .map(|t| {
            let mut task = t.clone();
            task.dependencies.retain(|d| retained.contains(d));
            task
        })
        .collect();
    Ok(PlanDag::new(tasks))
}
