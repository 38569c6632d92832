//! End-to-end corpus generation, statistics, and scoring.
//!
//! Every random choice derives from the config's single `rng_seed`
//! through labeled streams (`derive_seed`), so a config reproduces its
//! corpus byte for byte. Samples are independent, which makes worker
//! parallelism safe: results are ordered by sample index regardless of
//! completion order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::executor::{execute, ExecutionPolicy};
use crate::model::{ScenarioKind, ToolSpec, Transcript, Turn};
use crate::multiturn::{extend, scenario_mix, ExtendOptions, MultiturnError};
use crate::query::{
    default_shots, fallback_response, generate_query, QueryClient, QueryShot, RemoteConfig,
};
use crate::reward::{acc_step, acc_user_query, r_total_structured, RefContext, RewardConfig};
use crate::rng::{derive_seed, derive_seed_str, rng_from_seed};
use crate::seed::{
    demo_records, filter_multi_tool, infer_output_schema, ingest, SeedRecord, SourceKind,
};
use crate::synth::{inject_distractors, populate, LayerOneBinding, PopulateOptions};
use crate::template::{mean_std, sample_template, TemplateConfig};
use crate::validator::{validate_sample, ValidateOptions};

// ── Configuration ────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub samples: usize,
    pub rng_seed: u64,
    pub template: TemplateConfig,
    pub seeds: SeedsConfig,
    pub distractors: DistractorConfig,
    pub multi_turn: MultiTurnConfig,
    pub reward: RewardConfig,
    pub query: QueryConfig,
    pub limits: LimitsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            samples: 20,
            rng_seed: 0,
            template: TemplateConfig::default(),
            seeds: SeedsConfig::default(),
            distractors: DistractorConfig::default(),
            multi_turn: MultiTurnConfig::default(),
            reward: RewardConfig::default(),
            query: QueryConfig::default(),
            limits: LimitsConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeedsConfig {
    /// "demo" for the built-in deterministic seeds, or "file".
    pub kind: String,
    pub path: Option<String>,
    pub format: Option<SourceKind>,
    pub demo_records: usize,
    pub tools_per_record: usize,
}

impl Default for SeedsConfig {
    fn default() -> Self {
        Self {
            kind: "demo".into(),
            path: None,
            format: None,
            demo_records: 32,
            tools_per_record: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct DistractorConfig {
    /// Distractors per sample; when absent, matches the relevant-tool
    /// count.
    pub count: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MultiTurnConfig {
    pub proportion: f64,
    pub scenario_weights: [f64; 3],
}

impl Default for MultiTurnConfig {
    fn default() -> Self {
        Self {
            proportion: 0.3,
            scenario_weights: [1.0, 1.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QueryConfig {
    /// "fallback" or "remote".
    pub mode: String,
    pub remote: RemoteConfig,
    pub few_shot: usize,
}

impl Default for QueryConfig {
    fn default() -> Self {
        Self {
            mode: "fallback".into(),
            remote: RemoteConfig::default(),
            few_shot: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LimitsConfig {
    /// Regeneration attempts per sample before it counts as failed.
    pub max_attempts: usize,
    pub workers: usize,
}

impl Default for LimitsConfig {
    fn default() -> Self {
        Self {
            max_attempts: 4,
            workers: 1,
        }
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<PipelineConfig, PipelineError> {
    let text = fs::read_to_string(path.as_ref()).map_err(|e| {
        PipelineError::Config(format!("cannot read {}: {e}", path.as_ref().display()))
    })?;
    let cfg: PipelineConfig =
        toml::from_str(&text).map_err(|e| PipelineError::Config(e.to_string()))?;
    cfg.template
        .validate()
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    cfg.reward.validate().map_err(PipelineError::Config)?;
    Ok(cfg)
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Seed(#[from] crate::seed::SeedError),
    #[error("seed corpus is empty after filtering")]
    NoSeeds,
    #[error(transparent)]
    Multiturn(#[from] MultiturnError),
    #[error("sample {index} failed after {attempts} attempts: {last}")]
    SampleFailed {
        index: usize,
        attempts: usize,
        last: String,
    },
}

// ── Statistics ───────────────────────────────────────────────────────────

/// Corpus statistics in the shape of the dataset-distribution table:
/// sample count, multi-turn proportion, average height/width, and the
/// validation success rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenStats {
    pub requested: usize,
    pub data_count: usize,
    pub failed_samples: usize,
    pub attempts: usize,
    pub multi_turn_proportion: f64,
    pub avg_height: f64,
    pub std_height: f64,
    pub avg_width: f64,
    pub std_width: f64,
    pub success_rate_per_sample: f64,
    pub success_rate_per_attempt: f64,
    pub scenario_counts: BTreeMap<String, usize>,
}

/// Table-style statistics over an existing corpus (no attempt counters).
pub fn corpus_stats(transcripts: &[Transcript]) -> GenStats {
    let mut heights = Vec::new();
    let mut widths = Vec::new();
    let mut scenario_counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut multi = 0usize;
    for t in transcripts {
        if let Some(h) = t.meta.get("template_height").and_then(|v| v.as_f64()) {
            heights.push(h);
        }
        if let Some(w) = t.meta.get("template_width").and_then(|v| v.as_f64()) {
            widths.push(w);
        }
        if t.turns.len() > 1 {
            multi += 1;
            if let Some(kind) = t.turns.last().and_then(|turn| turn.scenario) {
                *scenario_counts
                    .entry(kind.as_str().to_string())
                    .or_default() += 1;
            }
        }
    }
    let (avg_height, std_height) = if heights.is_empty() {
        (0.0, 0.0)
    } else {
        mean_std(&heights)
    };
    let (avg_width, std_width) = if widths.is_empty() {
        (0.0, 0.0)
    } else {
        mean_std(&widths)
    };
    let n = transcripts.len();
    GenStats {
        requested: n,
        data_count: n,
        failed_samples: 0,
        attempts: n,
        multi_turn_proportion: if n == 0 { 0.0 } else { multi as f64 / n as f64 },
        avg_height,
        std_height,
        avg_width,
        std_width,
        success_rate_per_sample: 1.0,
        success_rate_per_attempt: 1.0,
        scenario_counts,
    }
}

// ── Generation ───────────────────────────────────────────────────────────

fn load_seeds(cfg: &PipelineConfig) -> Result<Vec<SeedRecord>, PipelineError> {
    let records = match cfg.seeds.kind.as_str() {
        "demo" => demo_records(
            cfg.seeds.demo_records.max(2),
            cfg.seeds.tools_per_record,
            derive_seed(cfg.rng_seed, 0x5eed),
        ),
        "file" => {
            let path = cfg.seeds.path.as_deref().ok_or_else(|| {
                PipelineError::Config("seeds.kind = \"file\" requires seeds.path".into())
            })?;
            let format = cfg.seeds.format.unwrap_or(SourceKind::Other);
            let (records, _report) = ingest(path, format)?;
            filter_multi_tool(records)
        }
        other => {
            return Err(PipelineError::Config(format!(
                "unknown seeds.kind {other:?}"
            )))
        }
    };
    if records.is_empty() {
        return Err(PipelineError::NoSeeds);
    }
    Ok(records)
}

fn query_shots(cfg: &PipelineConfig) -> Vec<QueryShot> {
    let mut shots = default_shots();
    shots.truncate(cfg.query.few_shot);
    shots
}

fn query_client(cfg: &PipelineConfig, attempt_seed: u64) -> QueryClient {
    match cfg.query.mode.as_str() {
        "remote" => QueryClient::Remote(cfg.query.remote.clone()),
        _ => QueryClient::Fallback {
            seed: derive_seed_str(attempt_seed, "query"),
        },
    }
}

/// Builds one sample (without retries). Deterministic in
/// (cfg, seeds, index, attempt).
fn build_sample(
    cfg: &PipelineConfig,
    seeds: &[SeedRecord],
    index: usize,
    scenario: Option<ScenarioKind>,
    attempt: usize,
) -> Result<Transcript, PipelineError> {
    let sample_seed = derive_seed(cfg.rng_seed, index as u64);
    let attempt_seed = derive_seed(sample_seed, attempt as u64);
    let mut rng = rng_from_seed(derive_seed_str(attempt_seed, "sample"));
    let mut schema_rng = rng_from_seed(derive_seed_str(attempt_seed, "schemas"));

    let record = &seeds[index % seeds.len()];
    let seed_tools: Vec<ToolSpec> = record
        .extracted_tools
        .iter()
        .map(|t| infer_output_schema(t, &mut schema_rng))
        .collect();

    let template = sample_template(
        &cfg.template
            .with_seed(derive_seed_str(attempt_seed, "template")),
        seed_tools.len(),
    )
    .map_err(|e| PipelineError::Config(e.to_string()))?;

    let mut used_names = std::collections::BTreeSet::new();
    let populated = populate(
        &template,
        LayerOneBinding::SeedTools(&seed_tools),
        &mut rng,
        &PopulateOptions::default(),
        &mut used_names,
    )
    .map_err(MultiturnError::from)?;

    let value_seed = derive_seed_str(attempt_seed, "values");
    let (calls, observations) = execute(
        &populated.gold,
        &populated.tools,
        &Default::default(),
        &ExecutionPolicy {
            fault: None,
            value_seed,
        },
    )
    .map_err(MultiturnError::from)?;

    let client = query_client(cfg, attempt_seed);
    let shots = query_shots(cfg);
    let user_query = generate_query(&populated.gold, &populated.tools, &shots, &client)
        .map_err(MultiturnError::from)?;
    let response = fallback_response(&populated.gold, observations.len(), None);

    let mut meta: BTreeMap<String, serde_json::Value> = BTreeMap::new();
    meta.insert("seed_source".into(), json!(seed_source_label(record)));
    meta.insert("template_height".into(), json!(template.height()));
    meta.insert("template_width".into(), json!(template.width()));
    meta.insert("generation_seed".into(), json!(attempt_seed));
    meta.insert("sample_index".into(), json!(index));

    let mut transcript = Transcript {
        sample_id: format!("sample_{index:05}"),
        system_tools: populated.tools.clone(),
        turns: vec![Turn {
            user_query,
            think: None,
            dag: populated.gold,
            tool_calls: calls,
            observations,
            response: Some(response),
            scenario: None,
        }],
        meta,
    };

    if let Some(kind) = scenario {
        let fresh = if kind == ScenarioKind::Irrelevant {
            fresh_seed_tools(seeds, index, &mut schema_rng, &transcript)
        } else {
            Vec::new()
        };
        let opts = ExtendOptions {
            template: &cfg.template,
            query_client: &client,
            shots: &shots,
            value_seed: derive_seed_str(attempt_seed, "values_turn2"),
            fault: None,
            populate: PopulateOptions::default(),
        };
        transcript = extend(&transcript, kind, &fresh, &mut rng, &opts)?;
    }

    // Distractors come from other records' tools, mirroring how real
    // system prompts mix in unrelated tools.
    let relevant = transcript.system_tools.len();
    let count = cfg.distractors.count.unwrap_or(relevant);
    let pool = distractor_pool(seeds, index, count + relevant, &mut schema_rng, &transcript);
    transcript.system_tools = inject_distractors(
        std::mem::take(&mut transcript.system_tools),
        &pool,
        count.min(pool.len()),
        &mut rng,
    )
    .map_err(MultiturnError::from)?;

    Ok(transcript)
}

fn seed_source_label(record: &SeedRecord) -> &'static str {
    match record.source {
        SourceKind::ApigenStyle => "apigen_style",
        SourceKind::ToolaceStyle => "toolace_style",
        SourceKind::Other => "demo",
    }
}

/// Seed tools for the irrelevant scenario: the next record whose tool
/// names are disjoint from everything already in the transcript.
fn fresh_seed_tools(
    seeds: &[SeedRecord],
    index: usize,
    schema_rng: &mut rand_chacha::ChaCha8Rng,
    transcript: &Transcript,
) -> Vec<ToolSpec> {
    let taken: std::collections::BTreeSet<&str> = transcript
        .system_tools
        .iter()
        .map(|t| t.name.as_str())
        .collect();
    for offset in 1..seeds.len() {
        let candidate = &seeds[(index + offset) % seeds.len()];
        if candidate
            .extracted_tools
            .iter()
            .all(|t| !taken.contains(t.name.as_str()))
        {
            return candidate
                .extracted_tools
                .iter()
                .map(|t| infer_output_schema(t, schema_rng))
                .collect();
        }
    }
    Vec::new()
}

fn distractor_pool(
    seeds: &[SeedRecord],
    index: usize,
    want: usize,
    schema_rng: &mut rand_chacha::ChaCha8Rng,
    transcript: &Transcript,
) -> Vec<ToolSpec> {
    let taken: std::collections::BTreeSet<String> = transcript
        .system_tools
        .iter()
        .map(|t| t.name.clone())
        .collect();
    let mut pool = Vec::new();
    for offset in 1..seeds.len() {
        if pool.len() >= want {
            break;
        }
        let record = &seeds[(index + offset) % seeds.len()];
        for tool in &record.extracted_tools {
            if !taken.contains(&tool.name) && pool.iter().all(|p: &ToolSpec| p.name != tool.name) {
                pool.push(infer_output_schema(tool, schema_rng));
            }
        }
    }
    pool
}

/// Outcome of generating one corpus.
pub struct GenerateOutcome {
    pub transcripts: Vec<Transcript>,
    pub stats: GenStats,
}

/// Runs the full pipeline: seeds, templates, synthesis, execution,
/// queries, scenarios, distractors, and validation. Samples failing
/// validation are regenerated up to `limits.max_attempts` times and count
/// against the success rate after that.
pub fn run_generate(cfg: &PipelineConfig) -> Result<GenerateOutcome, PipelineError> {
    let seeds = load_seeds(cfg)?;
    let plan = scenario_mix(
        cfg.samples,
        cfg.multi_turn.proportion,
        cfg.multi_turn.scenario_weights,
    )?;
    let max_attempts = cfg.limits.max_attempts.max(1);

    let one = |index: usize| -> (Option<Transcript>, usize) {
        let mut attempts = 0;
        for attempt in 0..max_attempts {
            attempts += 1;
            if let Ok(t) = build_sample(cfg, &seeds, index, plan[index], attempt) {
                if validate_sample(&t, ValidateOptions::default()).is_empty() {
                    return (Some(t), attempts);
                }
            }
        }
        (None, attempts)
    };

    let workers = cfg.limits.workers.max(1).min(cfg.samples.max(1));
    let mut results: Vec<(Option<Transcript>, usize)> = Vec::with_capacity(cfg.samples);
    if workers <= 1 {
        for index in 0..cfg.samples {
            results.push(one(index));
        }
    } else {
        let mut slots: Vec<Option<(Option<Transcript>, usize)>> = vec![None; cfg.samples];
        std::thread::scope(|scope| {
            for (stripe, chunk) in slots.chunks_mut(cfg.samples.div_ceil(workers)).enumerate() {
                let one = &one;
                let base = stripe * cfg.samples.div_ceil(workers);
                scope.spawn(move || {
                    for (offset, slot) in chunk.iter_mut().enumerate() {
                        *slot = Some(one(base + offset));
                    }
                });
            }
        });
        results.extend(slots.into_iter().map(|s| s.expect("worker filled slot")));
    }

    let attempts: usize = results.iter().map(|(_, a)| a).sum();
    let transcripts: Vec<Transcript> = results.into_iter().filter_map(|(t, _)| t).collect();
    let emitted = transcripts.len();
    let failed = cfg.samples - emitted;

    let mut stats = corpus_stats(&transcripts);
    stats.requested = cfg.samples;
    stats.failed_samples = failed;
    stats.attempts = attempts;
    stats.success_rate_per_sample = if cfg.samples == 0 {
        0.0
    } else {
        emitted as f64 / cfg.samples as f64
    };
    stats.success_rate_per_attempt = if attempts == 0 {
        0.0
    } else {
        emitted as f64 / attempts as f64
    };
    Ok(GenerateOutcome { transcripts, stats })
}

// ── Scoring ──────────────────────────────────────────────────────────────

/// One scored turn, in the shape written to the scoring JSONL.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreRecord {
    pub sample_id: String,
    pub turn_index: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    pub r_format: f64,
    pub r_dag: f64,
    pub r_total: f64,
    pub ged: f64,
    pub acc_step: f64,
    pub acc_user_query: f64,
}

/// Mean metrics for one group of turns.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreAggregate {
    pub group: String,
    pub turns: usize,
    pub r_format: f64,
    pub r_dag: f64,
    pub r_total: f64,
    pub acc_step: f64,
    pub acc_user_query: f64,
}

/// Scores structured predictions against the gold corpus, matching
/// samples by id and turns by index. Missing predictions score zero.
pub fn score_corpora(
    preds: &[Transcript],
    golds: &[Transcript],
    cfg: &RewardConfig,
) -> (Vec<ScoreRecord>, Vec<ScoreAggregate>) {
    let by_id: BTreeMap<&str, &Transcript> =
        preds.iter().map(|p| (p.sample_id.as_str(), p)).collect();
    let mut records = Vec::new();
    for gold in golds {
        let pred = by_id.get(gold.sample_id.as_str());
        for (i, gold_turn) in gold.turns.iter().enumerate() {
            let prior: Vec<&crate::model::PlanDag> =
                gold.turns[..i].iter().map(|t| &t.dag).collect();
            let ctx = RefContext::from_prior_dags(&prior);
            let pred_turn = pred.and_then(|p| p.turns.get(i));
            let breakdown = match pred_turn {
                Some(t) => r_total_structured(&t.dag, &gold_turn.dag, cfg, &ctx),
                None => {
                    // Absent prediction: empty graph, no format credit.
                    let mut b = r_total_structured(
                        &crate::model::PlanDag::default(),
                        &gold_turn.dag,
                        cfg,
                        &ctx,
                    );
                    b.r_format = 0.0;
                    b.r_total = cfg.alpha * b.r_dag;
                    b
                }
            };
            let empty = crate::model::PlanDag::default();
            let pred_dag = pred_turn.map(|t| &t.dag).unwrap_or(&empty);
            records.push(ScoreRecord {
                sample_id: gold.sample_id.clone(),
                turn_index: i,
                scenario: gold_turn.scenario.map(|s| s.as_str().to_string()),
                r_format: breakdown.r_format,
                r_dag: breakdown.r_dag,
                r_total: breakdown.r_total,
                ged: breakdown.ged,
                acc_step: acc_step(pred_dag, &gold_turn.dag, &ctx),
                acc_user_query: acc_user_query(pred_dag, &gold_turn.dag, cfg, &ctx),
            });
        }
    }
    let aggregates = aggregate_scores(&records);
    (records, aggregates)
}

fn aggregate_scores(records: &[ScoreRecord]) -> Vec<ScoreAggregate> {
    let mut groups: Vec<(String, Vec<&ScoreRecord>)> =
        vec![("overall".into(), records.iter().collect())];
    let singles: Vec<&ScoreRecord> = records.iter().filter(|r| r.scenario.is_none()).collect();
    if !singles.is_empty() {
        groups.push(("single_turn".into(), singles));
    }
    for kind in ScenarioKind::ALL {
        let members: Vec<&ScoreRecord> = records
            .iter()
            .filter(|r| r.scenario.as_deref() == Some(kind.as_str()))
            .collect();
        if !members.is_empty() {
            groups.push((kind.as_str().to_string(), members));
        }
    }
    groups
        .into_iter()
        .map(|(group, members)| {
            let n = members.len() as f64;
            let mean = |f: fn(&ScoreRecord) -> f64| -> f64 {
                if members.is_empty() {
                    0.0
                } else {
                    members.iter().map(|r| f(r)).sum::<f64>() / n
                }
            };
            ScoreAggregate {
                group,
                turns: members.len(),
                r_format: mean(|r| r.r_format),
                r_dag: mean(|r| r.r_dag),
                r_total: mean(|r| r.r_total),
                acc_step: mean(|r| r.acc_step),
                acc_user_query: mean(|r| r.acc_user_query),
            }
        })
        .collect()
}
