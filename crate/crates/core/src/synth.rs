//! Populates a DAG template with synthetic tools, layer by layer, and
//! instantiates the gold plan.
//!
//! Two binding conditions hold for every node beyond the first layer:
//! each input field is bound to an output field of a template parent, and
//! the bound input name always differs from the source output name (the
//! schema-misalignment condition). Every template edge is realized by at
//! least one binding.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::lexicon;
use crate::model::{
    FieldSchema, PayloadValue, PlanDag, PlanTask, SymbolicRef, TaskId, ToolOrigin, ToolSpec,
};
use crate::seed::{OUTPUT_FIELDS_MAX, OUTPUT_FIELDS_MIN};
use crate::template::DagTemplate;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SynthError {
    #[error("template is infeasible: {0}")]
    InfeasibleTemplate(String),
    #[error("distractor pool too small: need {need}, have {have}")]
    PoolTooSmall { need: usize, have: usize },
    #[error("layer-1 binding mismatch: template wants {want} nodes, got {got}")]
    LayerMismatch { want: usize, got: usize },
}

/// What the first template layer binds to.
pub enum LayerOneBinding<'a> {
    /// Seed tools with literal payloads; the usual single-turn case.
    SeedTools(&'a [ToolSpec]),
    /// Fresh synthetic tools whose inputs reference output keys of prior
    /// turn tasks (ordinal, source tool); the dependent-scenario case.
    PriorTasks(&'a [(u64, ToolSpec)]),
}

#[derive(Debug, Clone)]
pub struct PopulateOptions {
    /// Ordinal assigned to the first generated task.
    pub start_ordinal: u64,
    /// Chance of one extra literal parameter on a synthetic tool.
    pub literal_extra_prob: f64,
    /// Cap on reference-bound inputs per tool (before the per-parent floor).
    pub max_ref_inputs: usize,
}

impl Default for PopulateOptions {
    fn default() -> Self {
        Self {
            start_ordinal: 2,
            literal_extra_prob: 0.25,
            max_ref_inputs: 3,
        }
    }
}

/// A populated template: the tool set (in task order) and the gold plan.
#[derive(Debug, Clone)]
pub struct Populated {
    pub tools: Vec<ToolSpec>,
    pub gold: PlanDag,
}

/// Fills every template node with a tool and emits the gold plan. Task
/// ordinals count up from `opts.start_ordinal` in layer order. Names in
/// `used_names` are never reused; generated names are added to it.
pub fn populate(
    template: &DagTemplate,
    layer_one: LayerOneBinding<'_>,
    rng: &mut ChaCha8Rng,
    opts: &PopulateOptions,
    used_names: &mut BTreeSet<String>,
) -> Result<Populated, SynthError> {
    let first_layer = *template.layers.first().unwrap_or(&0);
    let mut tools: Vec<ToolSpec> = Vec::with_capacity(template.node_count());
    let mut tasks: Vec<PlanTask> = Vec::with_capacity(template.node_count());
    // node -> index into tools/tasks, assigned in layer order.
    let mut node_index: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut next_ordinal = opts.start_ordinal;

    match layer_one {
        LayerOneBinding::SeedTools(seeds) => {
            if seeds.len() != first_layer {
                return Err(SynthError::LayerMismatch {
                    want: first_layer,
                    got: seeds.len(),
                });
            }
            for (i, seed) in seeds.iter().enumerate() {
                used_names.insert(seed.name.clone());
                let mut payload = BTreeMap::new();
                for field in &seed.inputs {
                    payload.insert(
                        field.name.clone(),
                        PayloadValue::Literal(lexicon::value_of_kind(field.kind, rng)),
                    );
                }
                node_index.insert((0, i), tasks.len());
                tasks.push(PlanTask {
                    id: TaskId(next_ordinal),
                    toolname: seed.name.clone(),
                    payload,
                    dependencies: vec![],
                });
                tools.push(seed.clone());
                next_ordinal += 1;
            }
        }
        LayerOneBinding::PriorTasks(priors) => {
            if priors.is_empty() {
                return Err(SynthError::InfeasibleTemplate(
                    "no prior tasks to bind the first layer to".into(),
                ));
            }
            for i in 0..first_layer {
                let sources: Vec<(u64, &ToolSpec)> =
                    priors.iter().map(|(ord, tool)| (*ord, tool)).collect();
                let (tool, task) =
                    synthesize_node(&sources, &[], TaskId(next_ordinal), rng, opts, used_names)?;
                node_index.insert((0, i), tasks.len());
                tasks.push(task);
                tools.push(tool);
                next_ordinal += 1;
            }
        }
    }

    for layer in 1..template.height() {
        for i in 0..template.layers[layer] {
            let node = (layer, i);
            let parents = template.parents(node);
            let sources: Vec<(u64, &ToolSpec)> = parents
                .iter()
                .map(|p| {
                    let idx = node_index[p];
                    (tasks[idx].id.ordinal(), &tools[idx])
                })
                .collect();
            let dependencies: Vec<TaskId> = {
                let mut deps: Vec<TaskId> =
                    parents.iter().map(|p| tasks[node_index[p]].id).collect();
                deps.sort();
                deps
            };
            let (tool, task) = synthesize_node(
                &sources,
                &dependencies,
                TaskId(next_ordinal),
                rng,
                opts,
                used_names,
            )?;
            node_index.insert(node, tasks.len());
            tasks.push(task);
            tools.push(tool);
            next_ordinal += 1;
        }
    }

    Ok(Populated {
        tools,
        gold: PlanDag::new(tasks),
    })
}

/// Builds one synthetic tool and its task. Every source contributes at
/// least one binding; `dependencies` lists the same-turn sources (empty
/// for cross-turn bindings).
fn synthesize_node(
    sources: &[(u64, &ToolSpec)],
    dependencies: &[TaskId],
    id: TaskId,
    rng: &mut ChaCha8Rng,
    opts: &PopulateOptions,
    used_names: &mut BTreeSet<String>,
) -> Result<(ToolSpec, PlanTask), SynthError> {
    for (_, tool) in sources {
        if tool.outputs.is_empty() {
            return Err(SynthError::InfeasibleTemplate(format!(
                "parent tool {} exposes no outputs",
                tool.name
            )));
        }
    }
    // (source position, output field) pool, one entry per available key.
    let mut available: Vec<(usize, &FieldSchema)> = sources
        .iter()
        .enumerate()
        .flat_map(|(si, (_, tool))| tool.outputs.iter().map(move |f| (si, f)))
        .collect();

    let cap = opts.max_ref_inputs.min(available.len()).max(1);
    let drawn = rng.gen_range(1..=cap);
    let ref_count = drawn.max(sources.len()).min(available.len());

    // First pass: one binding per source, so every edge is realized.
    let mut picks: Vec<(usize, &FieldSchema)> = Vec::with_capacity(ref_count);
    for si in 0..sources.len() {
        let options: Vec<usize> = available
            .iter()
            .enumerate()
            .filter(|(_, (s, _))| *s == si)
            .map(|(i, _)| i)
            .collect();
        let chosen = *options.choose(rng).expect("outputs checked non-empty");
        picks.push(available.swap_remove(chosen));
    }
    while picks.len() < ref_count {
        let chosen = rng.gen_range(0..available.len());
        picks.push(available.swap_remove(chosen));
    }

    let mut inputs: Vec<FieldSchema> = Vec::new();
    let mut input_names = BTreeSet::new();
    let mut payload = BTreeMap::new();
    for (si, output) in picks {
        // Misalignment: the input name must differ from the bound output.
        let input_name = loop {
            let candidate = lexicon::field_name(rng);
            if candidate != output.name && input_names.insert(candidate.clone()) {
                break candidate;
            }
        };
        let (ordinal, source_tool) = sources[si];
        inputs.push(FieldSchema::new(
            input_name.clone(),
            output.kind,
            format!("derived from {} of {}", output.name, source_tool.name),
        ));
        payload.insert(
            input_name,
            PayloadValue::Ref(SymbolicRef::new(ordinal, output.name.clone())),
        );
    }

    if rng.gen_bool(opts.literal_extra_prob) {
        let input_name = loop {
            let candidate = lexicon::field_name(rng);
            if input_names.insert(candidate.clone()) {
                break candidate;
            }
        };
        let kind = lexicon::random_kind(rng);
        inputs.push(FieldSchema::new(
            input_name.clone(),
            kind,
            format!("free parameter {input_name}"),
        ));
        payload.insert(
            input_name,
            PayloadValue::Literal(lexicon::value_of_kind(kind, rng)),
        );
    }

    let name = loop {
        let candidate = lexicon::tool_name(rng);
        if used_names.insert(candidate.clone()) {
            break candidate;
        }
    };
    let outputs = synthesize_outputs(rng);
    let param_list = inputs
        .iter()
        .map(|f| f.name.as_str())
        .collect::<Vec<_>>()
        .join(", ");
    let tool = ToolSpec {
        description: format!(
            "Synthetic step {name}; combines upstream results using parameters {param_list}."
        ),
        name,
        inputs,
        outputs,
        origin: ToolOrigin::Synthetic,
    };
    let task = PlanTask {
        id,
        toolname: tool.name.clone(),
        payload,
        dependencies: dependencies.to_vec(),
    };
    Ok((tool, task))
}

fn synthesize_outputs(rng: &mut ChaCha8Rng) -> Vec<FieldSchema> {
    let count = rng.gen_range(OUTPUT_FIELDS_MIN..=OUTPUT_FIELDS_MAX);
    let mut names = BTreeSet::new();
    let mut outputs = Vec::with_capacity(count);
    while outputs.len() < count {
        let name = lexicon::field_name(rng);
        if !names.insert(name.clone()) {
            continue;
        }
        let kind = lexicon::random_kind(rng);
        outputs.push(FieldSchema::new(
            name.clone(),
            kind,
            format!("field {name}"),
        ));
    }
    outputs
}

/// Merges `count` pool tools (marked as distractors) into the relevant
/// set and shuffles deterministically. Pool entries whose names collide
/// with a relevant tool are not eligible.
pub fn inject_distractors(
    tools: Vec<ToolSpec>,
    pool: &[ToolSpec],
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ToolSpec>, SynthError> {
    let names: BTreeSet<&str> = tools.iter().map(|t| t.name.as_str()).collect();
    let eligible: Vec<&ToolSpec> = pool
        .iter()
        .filter(|t| !names.contains(t.name.as_str()))
        .collect();
    if eligible.len() < count {
        return Err(SynthError::PoolTooSmall {
            need: count,
            have: eligible.len(),
        });
    }
    let mut combined = tools;
    for idx in rand::seq::index::sample(rng, eligible.len(), count) {
        let mut tool = eligible[idx].clone();
        tool.origin = ToolOrigin::Distractor;
        combined.push(tool);
    }
    combined.shuffle(rng);
    Ok(combined)
}
