//! Corruption operators for mutation-testing the verification stack.
//!
//! Each operator breaks exactly one property of a valid sample, so a
//! correct validator must flag the mutant at the operator's layer. Used
//! by the acceptance suite and available for testing external validators
//! against this corpus format.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::codec::encode_transcript_line;
use crate::model::{ObsStatus, PayloadValue, Transcript};
use crate::validator::Layer;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorruptionKind {
    /// Mangles the serialized line so it no longer parses as JSON.
    BadJson,
    /// Renames a task's tool to something outside the system tool list.
    UnknownTool,
    /// Renames one payload parameter to a name the tool does not declare.
    BadArgName,
    /// Drops the dependency declaration behind a same-turn ref.
    DanglingRef,
    /// Rewrites a ref-derived call value so it no longer matches the
    /// observation.
    ValueMismatch,
    /// Removes one key from an ok observation value.
    BadObservation,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 6] = [
        CorruptionKind::BadJson,
        CorruptionKind::UnknownTool,
        CorruptionKind::BadArgName,
        CorruptionKind::DanglingRef,
        CorruptionKind::ValueMismatch,
        CorruptionKind::BadObservation,
    ];

    /// The layer a correct validator reports this mutant at.
    pub fn expected_layer(self) -> Layer {
        match self {
            CorruptionKind::BadJson => Layer::Json,
            CorruptionKind::UnknownTool | CorruptionKind::BadArgName => Layer::Ast,
            CorruptionKind::DanglingRef => Layer::Symbolic,
            CorruptionKind::ValueMismatch => Layer::Adherence,
            CorruptionKind::BadObservation => Layer::Observation,
        }
    }
}

/// Applies one operator to a valid transcript and returns the mutated
/// corpus line, or None when the transcript offers no viable target
/// (e.g. no refs to dangle).
pub fn corrupt_line(
    transcript: &Transcript,
    kind: CorruptionKind,
    rng: &mut ChaCha8Rng,
) -> Option<String> {
    match kind {
        CorruptionKind::BadJson => {
            let line = encode_transcript_line(transcript);
            let cut = line.len() - rng.gen_range(1..=4.min(line.len() - 1));
            Some(line[..cut].to_string())
        }
        _ => {
            let mut mutated = transcript.clone();
            apply_structural(&mut mutated, kind, rng)?;
            Some(encode_transcript_line(&mutated))
        }
    }
}

fn apply_structural(t: &mut Transcript, kind: CorruptionKind, rng: &mut ChaCha8Rng) -> Option<()> {
    match kind {
        CorruptionKind::BadJson => unreachable!("handled in corrupt_line"),
        CorruptionKind::UnknownTool => {
            let turn_idx = rng.gen_range(0..t.turns.len());
            let turn = &mut t.turns[turn_idx];
            let task = turn.dag.tasks.choose_mut(rng)?;
            task.toolname = format!("{}_zz_unknown", task.toolname);
            Some(())
        }
        CorruptionKind::BadArgName => {
            let turn_idx = rng.gen_range(0..t.turns.len());
            let turn = &mut t.turns[turn_idx];
            let task = turn.dag.tasks.choose_mut(rng)?;
            let keys: Vec<String> = task.payload.keys().cloned().collect();
            let key = keys.choose(rng)?.clone();
            let value = task.payload.remove(&key)?;
            task.payload.insert(format!("{key}_zz"), value);
            Some(())
        }
        CorruptionKind::DanglingRef => {
            // Target a task with a ref resolving inside its own turn.
            let candidates: Vec<(usize, usize)> = t
                .turns
                .iter()
                .enumerate()
                .flat_map(|(ti, turn)| {
                    turn.dag
                        .tasks
                        .iter()
                        .enumerate()
                        .filter(|(_, task)| {
                            task.refs()
                                .any(|(_, r)| task.dependencies.contains(&r.task_id()))
                        })
                        .map(move |(taski, _)| (ti, taski))
                })
                .collect();
            let &(ti, taski) = candidates.choose(rng)?;
            let task = &mut t.turns[ti].dag.tasks[taski];
            let target = task
                .refs()
                .find(|(_, r)| task.dependencies.contains(&r.task_id()))
                .map(|(_, r)| r.task_id())?;
            task.dependencies.retain(|d| *d != target);
            Some(())
        }
        CorruptionKind::ValueMismatch => {
            let candidates: Vec<(usize, usize, String)> = t
                .turns
                .iter()
                .enumerate()
                .flat_map(|(ti, turn)| {
                    turn.dag.tasks.iter().flat_map(move |task| {
                        task.payload
                            .iter()
                            .filter(|(_, v)| matches!(v, PayloadValue::Ref(_)))
                            .filter_map(move |(param, _)| {
                                turn.tool_calls
                                    .iter()
                                    .position(|c| c.task_id == task.id)
                                    .map(|ci| (ti, ci, param.clone()))
                            })
                    })
                })
                .collect();
            let (ti, ci, param) = candidates.choose(rng)?.clone();
            let call = &mut t.turns[ti].tool_calls[ci];
            call.payload[&param] = serde_json::Value::String("zz_corrupted".into());
            Some(())
        }
        CorruptionKind::BadObservation => {
            // Only keys no ref consumes: a consumed key would surface at
            // the adherence layer first, not the observation layer.
            let consumed: std::collections::BTreeSet<(crate::model::TaskId, String)> = t
                .turns
                .iter()
                .flat_map(|turn| turn.dag.tasks.iter())
                .flat_map(|task| task.refs().map(|(_, r)| (r.task_id(), r.key.clone())))
                .collect();
            let candidates: Vec<(usize, usize, String)> = t
                .turns
                .iter()
                .enumerate()
                .flat_map(|(ti, turn)| {
                    let consumed = &consumed;
                    turn.observations
                        .iter()
                        .enumerate()
                        .filter(|(_, o)| o.status == ObsStatus::Ok)
                        .flat_map(move |(oi, o)| {
                            o.value
                                .as_ref()
                                .and_then(|v| v.as_object())
                                .into_iter()
                                .flat_map(|v| v.keys())
                                .filter(move |key| !consumed.contains(&(o.task_id, (*key).clone())))
                                .map(move |key| (ti, oi, key.clone()))
                        })
                })
                .collect();
            let (ti, oi, key) = candidates.choose(rng)?.clone();
            let obs = &mut t.turns[ti].observations[oi];
            obs.value.as_mut()?.as_object_mut()?.remove(&key);
            Some(())
        }
    }
}
