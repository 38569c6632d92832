//! Second-turn construction: transforms a completed turn into one of the
//! three continuation scenarios.
//!
//! - irrelevant: a fresh template populated from fresh seed tools; the new
//!   plan shares no tools and no refs with the first turn.
//! - dependent: new synthetic tools whose first-layer inputs bind to
//!   output keys of the previous turn's observations, so the plan encodes
//!   cross-turn dependencies through task ordinals.
//! - tool_error: a fault is injected into turn one retroactively and the
//!   second turn replans exactly the unfinished subgraph.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::executor::{execute, unfinished_subgraph, ExecutionPolicy, FaultKind};
use crate::model::{ObsStatus, ScenarioKind, TaskId, ToolSpec, Transcript, Turn};
use crate::query::{fallback_response, generate_query, QueryClient, QueryError, QueryShot};
use crate::synth::{populate, LayerOneBinding, PopulateOptions, SynthError};
use crate::template::{sample_template, TemplateConfig, TemplateError};

#[derive(Debug, Error)]
pub enum MultiturnError {
    #[error("scenario infeasible: {0}")]
    ScenarioInfeasible(String),
    #[error("bad scenario proportions: {0}")]
    BadProportions(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("execution failed: {0}")]
    Execution(#[from] crate::executor::ExecError),
    #[error("query generation failed: {0}")]
    Query(#[from] QueryError),
}

/// Knobs for [`extend`].
pub struct ExtendOptions<'a> {
    pub template: &'a TemplateConfig,
    pub query_client: &'a QueryClient,
    /// Few-shot exemplars forwarded to remote query generation.
    pub shots: &'a [QueryShot],
    /// Value stream for the new executions (and the rewritten first turn
    /// in the tool_error scenario).
    pub value_seed: u64,
    /// Fault to inject for tool_error; drawn from the rng when absent.
    pub fault: Option<(TaskId, FaultKind)>,
    pub populate: PopulateOptions,
}

/// Appends the second turn for `scenario`. The transcript must hold at
/// least one completed turn; the result carries the new tools in
/// `system_tools` and, for tool_error, a rewritten first turn.
pub fn extend(
    transcript: &Transcript,
    scenario: ScenarioKind,
    fresh_seed_tools: &[ToolSpec],
    rng: &mut ChaCha8Rng,
    opts: &ExtendOptions<'_>,
) -> Result<Transcript, MultiturnError> {
    if transcript.turns.is_empty() {
        return Err(MultiturnError::ScenarioInfeasible(
            "no completed turn to extend".into(),
        ));
    }
    let mut out = transcript.clone();
    let mut used_names: std::collections::BTreeSet<String> =
        out.system_tools.iter().map(|t| t.name.clone()).collect();
    let start_ordinal = out.max_ordinal() + 1;
    let populate_opts = PopulateOptions {
        start_ordinal,
        ..opts.populate.clone()
    };

    match scenario {
        ScenarioKind::Irrelevant => {
            if fresh_seed_tools.is_empty() {
                return Err(MultiturnError::ScenarioInfeasible(
                    "irrelevant scenario needs fresh seed tools".into(),
                ));
            }
            let template =
                sample_template(&opts.template.with_seed(rng.gen()), fresh_seed_tools.len())?;
            let populated = populate(
                &template,
                LayerOneBinding::SeedTools(fresh_seed_tools),
                rng,
                &populate_opts,
                &mut used_names,
            )?;
            let (calls, observations) = execute(
                &populated.gold,
                &populated.tools,
                &Default::default(),
                &ExecutionPolicy {
                    fault: None,
                    value_seed: opts.value_seed,
                },
            )?;
            let user_query = generate_query(
                &populated.gold,
                &populated.tools,
                opts.shots,
                opts.query_client,
            )?;
            let response = fallback_response(&populated.gold, observations.len(), None);
            out.system_tools.extend(populated.tools.clone());
            out.turns.push(Turn {
                user_query,
                think: None,
                dag: populated.gold,
                tool_calls: calls,
                observations,
                response: Some(response),
                scenario: Some(ScenarioKind::Irrelevant),
            });
        }

        ScenarioKind::Dependent => {
            let first = &out.turns[0];
            let prior: Vec<(u64, ToolSpec)> = first
                .observations
                .iter()
                .filter(|o| o.status == ObsStatus::Ok)
                .filter_map(|o| {
                    let task = first.dag.task(o.task_id)?;
                    let tool = out.tool(&task.toolname)?.clone();
                    Some((o.task_id.ordinal(), tool))
                })
                .collect();
            if prior.is_empty() {
                return Err(MultiturnError::ScenarioInfeasible(
                    "no completed observations to depend on".into(),
                ));
            }
            let first_layer = opts.template.first_layer_size.min(prior.len()).max(1);
            let template = sample_template(&opts.template.with_seed(rng.gen()), first_layer)?;
            let populated = populate(
                &template,
                LayerOneBinding::PriorTasks(&prior),
                rng,
                &populate_opts,
                &mut used_names,
            )?;
            let prior_obs = out.prior_observations(out.turns.len());
            let (calls, observations) = execute(
                &populated.gold,
                &all_tools(&out, &populated.tools),
                &prior_obs,
                &ExecutionPolicy {
                    fault: None,
                    value_seed: opts.value_seed,
                },
            )?;
            let base = generate_query(
                &populated.gold,
                &populated.tools,
                opts.shots,
                opts.query_client,
            )?;
            let user_query = format!("Building on those results: {base}");
            let response = fallback_response(&populated.gold, observations.len(), None);
            out.system_tools.extend(populated.tools.clone());
            out.turns.push(Turn {
                user_query,
                think: None,
                dag: populated.gold,
                tool_calls: calls,
                observations,
                response: Some(response),
                scenario: Some(ScenarioKind::Dependent),
            });
        }

        ScenarioKind::ToolError => {
            let first = out.turns[0].clone();
            let (fault_task, kind) = match opts.fault {
                Some(f) => f,
                None => {
                    let ids: Vec<TaskId> = first.dag.tasks.iter().map(|t| t.id).collect();
                    let task = *ids.choose(rng).expect("turn has tasks");
                    let kind = if rng.gen_bool(0.5) {
                        FaultKind::Timeout
                    } else {
                        FaultKind::RuntimeError
                    };
                    (task, kind)
                }
            };
            if first.dag.task(fault_task).is_none() {
                return Err(MultiturnError::ScenarioInfeasible(format!(
                    "fault target {fault_task} is not in the first turn"
                )));
            }
            // Rewrite turn one with the fault injected.
            let policy = ExecutionPolicy {
                fault: Some((fault_task, kind)),
                value_seed: opts.value_seed,
            };
            let tools = out.system_tools.clone();
            let (calls, observations) = execute(&first.dag, &tools, &Default::default(), &policy)?;
            let ok_count = observations
                .iter()
                .filter(|o| o.status == ObsStatus::Ok)
                .count();
            let failed_toolname = first
                .dag
                .task(fault_task)
                .map(|t| t.toolname.clone())
                .expect("checked above");
            let status_word = match kind {
                FaultKind::Timeout => "a timeout",
                FaultKind::RuntimeError => "a runtime error",
            };
            let subgraph = unfinished_subgraph(&first.dag, &observations)?;
            let degenerate = subgraph.len() == first.dag.len();
            out.turns[0] = Turn {
                response: Some(fallback_response(
                    &first.dag,
                    ok_count,
                    Some((&failed_toolname, status_word)),
                )),
                tool_calls: calls,
                observations,
                ..first
            };

            let prior_obs = out.prior_observations(out.turns.len());
            let rerun_policy = ExecutionPolicy {
                fault: None,
                value_seed: crate::rng::derive_seed(opts.value_seed, 1),
            };
            let (calls2, observations2) = execute(&subgraph, &tools, &prior_obs, &rerun_policy)?;
            let user_query = format!(
                "The {failed_toolname} step hit {status_word}. Please pick up where it \
                 left off and finish the remaining work."
            );
            let response = fallback_response(&subgraph, observations2.len(), None);
            if degenerate {
                out.meta.insert(
                    "degenerate_tool_error".into(),
                    serde_json::Value::Bool(true),
                );
            }
            out.turns.push(Turn {
                user_query,
                think: None,
                dag: subgraph,
                tool_calls: calls2,
                observations: observations2,
                response: Some(response),
                scenario: Some(ScenarioKind::ToolError),
            });
        }
    }
    Ok(out)
}

fn all_tools(transcript: &Transcript, new_tools: &[ToolSpec]) -> Vec<ToolSpec> {
    let mut tools = transcript.system_tools.clone();
    tools.extend(new_tools.iter().cloned());
    tools
}

// ── Scenario planning ────────────────────────────────────────────────────

/// Per-sample scenario assignment for a corpus: `None` marks single-turn.
/// The multi-turn count is `floor(n * proportion)`, spread evenly over the
/// index range; kinds are apportioned by weight with deterministic
/// round-robin tie-breaking.
pub fn scenario_mix(
    n: usize,
    proportion: f64,
    weights: [f64; 3],
) -> Result<Vec<Option<ScenarioKind>>, MultiturnError> {
    if !(0.0..=1.0).contains(&proportion) {
        return Err(MultiturnError::BadProportions(format!(
            "multi-turn proportion {proportion} outside [0, 1]"
        )));
    }
    if weights.iter().any(|w| *w < 0.0) || weights.iter().sum::<f64>() <= 0.0 {
        return Err(MultiturnError::BadProportions(
            "scenario weights must be non-negative and not all zero".into(),
        ));
    }
    let multi = ((n as f64) * proportion).floor() as usize;
    let total: f64 = weights.iter().sum();

    // Largest-remainder apportionment of the three kinds.
    let mut counts = [0usize; 3];
    let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(3);
    let mut assigned = 0;
    for (k, w) in weights.iter().enumerate() {
        let share = multi as f64 * w / total;
        counts[k] = share.floor() as usize;
        assigned += counts[k];
        remainders.push((k, share - share.floor()));
    }
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
    for (k, _) in remainders.into_iter().cycle().take(multi - assigned) {
        counts[k] += 1;
    }

    // Interleave kinds so scenarios spread across the corpus.
    let mut kind_sequence = Vec::with_capacity(multi);
    let mut remaining = counts;
    while kind_sequence.len() < multi {
        for (k, kind) in ScenarioKind::ALL.iter().enumerate() {
            if remaining[k] > 0 {
                remaining[k] -= 1;
                kind_sequence.push(*kind);
            }
        }
    }
    kind_sequence.truncate(multi);

    let mut plan = vec![None; n];
    let mut next_kind = 0;
    for (i, slot) in plan.iter_mut().enumerate() {
        let before = i * multi / n;
        let after = (i + 1) * multi / n;
        if after > before {
            *slot = Some(kind_sequence[next_kind]);
            next_kind += 1;
        }
    }
    debug_assert_eq!(next_kind, multi);
    Ok(plan)
}
