//! Evaluation against a model endpoint: issue each sample's prompts,
//! extract the predicted DAG per turn, and report pass@k.
//!
//! A run counts as correct only when every turn's predicted plan matches
//! the gold plan exactly (edit distance zero). Endpoint failures are
//! recorded per run; a sample is excluded from the aggregate only when
//! every one of its runs failed.

use serde::Serialize;

use crate::codec::render_turn_text;
use crate::model::{PlanDag, Transcript};
use crate::query::{build_system_prompt, chat_complete, ChatMessage, RemoteConfig};
use crate::reward::{acc_user_query, extract_pred_dag, pass_at_k, RefContext, RewardConfig};
use crate::template::mean_std;

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub remote: RemoteConfig,
    /// Completions per sample; the paper-style default is 10.
    pub runs: usize,
    pub k: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SampleEval {
    pub sample_id: String,
    /// One entry per run: Some(correct) or None for an endpoint failure.
    pub outcomes: Vec<Option<bool>>,
    pub errors: usize,
    /// Absent when every run failed (the sample is flagged instead).
    pub pass_at_k: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub k: usize,
    pub runs: usize,
    pub samples: Vec<SampleEval>,
    pub flagged_samples: usize,
    pub pass_at_k_mean: f64,
    pub pass_at_k_std: f64,
}

/// Messages for predicting turn `turn_index`: the system prompt, then the
/// gold history of earlier turns, then the current user query.
pub fn turn_messages(transcript: &Transcript, turn_index: usize) -> Vec<ChatMessage> {
    let mut messages = vec![ChatMessage::new(
        "system",
        build_system_prompt(&transcript.system_tools),
    )];
    for turn in &transcript.turns[..turn_index] {
        messages.push(ChatMessage::new("user", turn.user_query.clone()));
        messages.push(ChatMessage::new("assistant", render_turn_text(turn)));
    }
    messages.push(ChatMessage::new(
        "user",
        transcript.turns[turn_index].user_query.clone(),
    ));
    messages
}

/// Whether one model completion solves one turn.
pub fn turn_correct(
    output: &str,
    transcript: &Transcript,
    turn_index: usize,
    cfg: &RewardConfig,
) -> bool {
    let prior: Vec<&PlanDag> = transcript.turns[..turn_index]
        .iter()
        .map(|t| &t.dag)
        .collect();
    let ctx = RefContext::from_prior_dags(&prior);
    let Some(pred) = extract_pred_dag(output) else {
        return false;
    };
    acc_user_query(&pred, &transcript.turns[turn_index].dag, cfg, &ctx) == 1.0
}

fn run_sample_once(
    transcript: &Transcript,
    remote: &RemoteConfig,
    cfg: &RewardConfig,
) -> Result<bool, crate::query::QueryError> {
    for turn_index in 0..transcript.turns.len() {
        let messages = turn_messages(transcript, turn_index);
        let output = chat_complete(remote, &messages)?;
        if !turn_correct(&output, transcript, turn_index, cfg) {
            return Ok(false);
        }
    }
    Ok(true)
}

fn eval_sample(transcript: &Transcript, cfg: &EvalConfig, reward: &RewardConfig) -> SampleEval {
    let mut outcomes = Vec::with_capacity(cfg.runs);
    for _ in 0..cfg.runs {
        match run_sample_once(transcript, &cfg.remote, reward) {
            Ok(correct) => outcomes.push(Some(correct)),
            Err(_) => outcomes.push(None),
        }
    }
    let errors = outcomes.iter().filter(|o| o.is_none()).count();
    let pass = if errors == cfg.runs {
        None
    } else {
        // Failed runs count as incorrect outcomes.
        let flattened: Vec<bool> = outcomes.iter().map(|o| o.unwrap_or(false)).collect();
        Some(pass_at_k(&flattened, cfg.k))
    };
    SampleEval {
        sample_id: transcript.sample_id.clone(),
        outcomes,
        errors,
        pass_at_k: pass,
    }
}

/// Evaluates every sample. Samples are processed in stripes of up to
/// `remote.max_in_flight` worker threads; runs within a sample stay
/// sequential so per-sample request order is stable.
pub fn evaluate_corpus(
    corpus: &[Transcript],
    cfg: &EvalConfig,
    reward: &RewardConfig,
) -> EvalReport {
    let workers = cfg.remote.max_in_flight.max(1).min(corpus.len().max(1));
    let mut samples: Vec<Option<SampleEval>> = vec![None; corpus.len()];
    if workers <= 1 {
        for (slot, transcript) in samples.iter_mut().zip(corpus) {
            *slot = Some(eval_sample(transcript, cfg, reward));
        }
    } else {
        let chunk = corpus.len().div_ceil(workers);
        std::thread::scope(|scope| {
            for (slots, inputs) in samples.chunks_mut(chunk).zip(corpus.chunks(chunk)) {
                scope.spawn(move || {
                    for (slot, transcript) in slots.iter_mut().zip(inputs) {
                        *slot = Some(eval_sample(transcript, cfg, reward));
                    }
                });
            }
        });
    }
    let samples: Vec<SampleEval> = samples.into_iter().flatten().collect();

    let scores: Vec<f64> = samples.iter().filter_map(|s| s.pass_at_k).collect();
    let flagged = samples.len() - scores.len();
    let (mean, std) = if scores.is_empty() {
        (0.0, 0.0)
    } else {
        mean_std(&scores)
    };
    EvalReport {
        k: cfg.k,
        runs: cfg.runs,
        samples,
        flagged_samples: flagged,
        pass_at_k_mean: mean,
        pass_at_k_std: std,
    }
}
