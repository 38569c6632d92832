//! End-to-end CLI behavior: exit codes, report shapes, and the evaluate
//! loop against a stub endpoint.

mod common;

use std::process::Command;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{random_small_dag, stub_endpoint};
use toolgraph::codec::{encode_transcript_line, serialize_plan, write_corpus};
use toolgraph::corrupt::{corrupt_line, CorruptionKind};
use toolgraph::pipeline::{run_generate, MultiTurnConfig, PipelineConfig};
use toolgraph::reward::{ged, r_dag, RefContext, RewardConfig};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_toolgraph")
}

fn small_corpus(samples: usize, seed: u64, multi: f64) -> Vec<toolgraph::model::Transcript> {
    let cfg = PipelineConfig {
        samples,
        rng_seed: seed,
        multi_turn: MultiTurnConfig {
            proportion: multi,
            scenario_weights: [1.0, 1.0, 1.0],
        },
        ..Default::default()
    };
    run_generate(&cfg).expect("generation succeeds").transcripts
}

#[test]
fn usage_error_exits_two() {
    let output = Command::new(bin()).args(["generate"]).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn validate_flags_a_mutated_line_with_layer_and_task() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_path = dir.path().join("corpus.jsonl");
    let report_path = dir.path().join("report.jsonl");
    let corpus = small_corpus(5, 71, 0.0);
    let mut lines: Vec<String> = corpus.iter().map(encode_transcript_line).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    lines[2] = corrupt_line(&corpus[2], CorruptionKind::UnknownTool, &mut rng).unwrap();
    std::fs::write(&corpus_path, lines.join("\n") + "\n").unwrap();

    let output = Command::new(bin())
        .args([
            "validate",
            "--corpus",
            corpus_path.to_str().unwrap(),
            "--report",
            report_path.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));

    let report = std::fs::read_to_string(&report_path).unwrap();
    let rows: Vec<serde_json::Value> = report
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["line"], 3);
    assert_eq!(rows[0]["layer"], "ast");
    assert!(rows[0]["task_id"].as_str().unwrap().starts_with("task_"));
}

#[test]
fn validate_clean_corpus_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_path = dir.path().join("corpus.jsonl");
    write_corpus(&small_corpus(6, 72, 0.5), &corpus_path).unwrap();
    let output = Command::new(bin())
        .args(["validate", "--corpus", corpus_path.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(
        output.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
}

#[test]
fn score_groups_by_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_path = dir.path().join("corpus.jsonl");
    let scores_path = dir.path().join("scores.jsonl");
    // All-multi corpus with equal weights covers the three scenarios.
    write_corpus(&small_corpus(9, 73, 1.0), &corpus_path).unwrap();
    let output = Command::new(bin())
        .args([
            "score",
            "--pred",
            corpus_path.to_str().unwrap(),
            "--gold",
            corpus_path.to_str().unwrap(),
            "--out",
            scores_path.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&output.stdout);
    for group in [
        "overall",
        "single_turn",
        "irrelevant",
        "dependent",
        "tool_error",
    ] {
        assert!(stdout.contains(group), "missing {group} in:\n{stdout}");
    }
}

#[test]
fn stats_command_reports_distribution_columns() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_path = dir.path().join("corpus.jsonl");
    write_corpus(&small_corpus(8, 74, 0.25), &corpus_path).unwrap();
    let output = Command::new(bin())
        .args(["stats", "--corpus", corpus_path.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&output.stdout);
    for column in [
        "data_count",
        "multi_turn_proportion",
        "avg_height",
        "avg_width",
    ] {
        assert!(stdout.contains(column), "missing {column} in:\n{stdout}");
    }
}

#[test]
fn evaluate_against_gold_stub_reports_full_marks() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_path = dir.path().join("corpus.jsonl");
    let report_path = dir.path().join("eval.json");
    let corpus = small_corpus(2, 75, 0.0);
    write_corpus(&corpus, &corpus_path).unwrap();

    // The stub answers every request with the gold DAG of the sample the
    // query text belongs to.
    let answers: Vec<(String, String)> = corpus
        .iter()
        .map(|t| {
            (
                t.turns[0].user_query.clone(),
                format!(
                    "<think>ok</think><DAG>{}</DAG>",
                    serialize_plan(&t.turns[0].dag)
                ),
            )
        })
        .collect();
    let stub = stub_endpoint(move |_, body| {
        answers
            .iter()
            .find(|(query, _)| body.contains(&query.replace('"', "\\\"")))
            .map(|(_, answer)| answer.clone())
            .unwrap_or_default()
    });

    let output = Command::new(bin())
        .args([
            "evaluate",
            "--corpus",
            corpus_path.to_str().unwrap(),
            "--endpoint",
            &stub.url,
            "--model",
            "stub-model",
            "--runs",
            "3",
            "--k",
            "1",
            "--max-in-flight",
            "1",
            "--out",
            report_path.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(
        output.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["pass_at_k_mean"].as_f64(), Some(1.0));
    assert_eq!(report["flagged_samples"].as_u64(), Some(0));
}

#[test]
fn evaluate_flags_dead_endpoint() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_path = dir.path().join("corpus.jsonl");
    write_corpus(&small_corpus(1, 76, 0.0), &corpus_path).unwrap();
    let output = Command::new(bin())
        .args([
            "evaluate",
            "--corpus",
            corpus_path.to_str().unwrap(),
            "--endpoint",
            "http://127.0.0.1:9/nothing-listens-here",
            "--model",
            "stub",
            "--runs",
            "1",
        ])
        .output()
        .unwrap();
    // Every sample failed outright: flagged and reported as a failure.
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn ged_is_symmetric_on_random_small_pairs() {
    let cfg = RewardConfig::default();
    let ctx = RefContext::empty();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..200 {
        let a = random_small_dag(&mut rng, 6);
        let b = random_small_dag(&mut rng, 6);
        let ab = ged(&a, &b, &cfg, &ctx).cost;
        let ba = ged(&b, &a, &cfg, &ctx).cost;
        assert!((ab - ba).abs() < 1e-9, "asymmetry: {ab} vs {ba}");
        let rab = r_dag(&a, &b, &cfg, &ctx);
        let rba = r_dag(&b, &a, &cfg, &ctx);
        assert!((rab - rba).abs() < 1e-9, "reward asymmetry: {rab} vs {rba}");
    }
}

#[test]
fn partial_predictions_gain_credit_per_added_task() {
    // Adding one correct task (with its edges) never lowers the reward.
    let cfg = RewardConfig::default();
    let corpus = small_corpus(20, 77, 0.0);
    for transcript in &corpus {
        let gold = &transcript.turns[0].dag;
        let ctx = RefContext::empty();
        let mut previous = r_dag(&toolgraph::model::PlanDag::default(), gold, &cfg, &ctx);
        for k in 1..=gold.len() {
            let prefix = toolgraph::model::PlanDag::new(gold.tasks[..k].to_vec());
            let score = r_dag(&prefix, gold, &cfg, &ctx);
            assert!(
                score >= previous - 1e-12,
                "reward dropped from {previous} to {score} after adding a correct task"
            );
            previous = score;
        }
        assert_eq!(previous, 1.0);
    }
}

#[test]
fn evaluate_scores_multi_turn_samples_with_history() {
    // One dependent-scenario sample: the second turn's gold plan carries
    // cross-turn refs that must resolve through the conversation context.
    let cfg = PipelineConfig {
        samples: 1,
        rng_seed: 81,
        multi_turn: MultiTurnConfig {
            proportion: 1.0,
            scenario_weights: [0.0, 1.0, 0.0],
        },
        ..Default::default()
    };
    let corpus = run_generate(&cfg).unwrap().transcripts;
    let sample = &corpus[0];
    assert_eq!(sample.turns.len(), 2);
    assert!(sample.turns[1]
        .dag
        .tasks
        .iter()
        .flat_map(|t| t.refs())
        .any(|(_, r)| sample.turns[0].dag.task(r.task_id()).is_some()));

    let answers: Vec<(String, String)> = sample
        .turns
        .iter()
        .map(|turn| {
            (
                turn.user_query.clone(),
                format!("<think>ok</think><DAG>{}</DAG>", serialize_plan(&turn.dag)),
            )
        })
        .collect();
    let stub = stub_endpoint(move |_, body| {
        // The current user query is the last message in the request; the
        // second turn's query embeds the first turn's only as history.
        answers
            .iter()
            .rev()
            .find(|(query, _)| body.contains(&query.replace('"', "\\\"")))
            .map(|(_, answer)| answer.clone())
            .unwrap_or_default()
    });

    let eval_cfg = toolgraph::evalrun::EvalConfig {
        remote: toolgraph::query::RemoteConfig {
            endpoint_url: stub.url.clone(),
            model: "stub".into(),
            max_in_flight: 1,
            max_retries: 0,
            ..Default::default()
        },
        runs: 2,
        k: 1,
    };
    let report =
        toolgraph::evalrun::evaluate_corpus(&corpus, &eval_cfg, &RewardConfig::default());
    assert_eq!(report.pass_at_k_mean, 1.0, "{report:?}");
    // Two turns per run, two runs.
    assert_eq!(stub.hits.load(std::sync::atomic::Ordering::SeqCst), 4);
}

#[test]
fn score_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_path = dir.path().join("corpus.jsonl");
    write_corpus(&small_corpus(6, 82, 0.5), &corpus_path).unwrap();
    let mut outputs = Vec::new();
    for run in 0..2 {
        let scores_path = dir.path().join(format!("scores_{run}.jsonl"));
        let output = Command::new(bin())
            .args([
                "score",
                "--pred",
                corpus_path.to_str().unwrap(),
                "--gold",
                corpus_path.to_str().unwrap(),
                "--alpha",
                "0.5",
                "--out",
                scores_path.to_str().unwrap(),
            ])
            .output()
            .unwrap();
        assert_eq!(output.status.code(), Some(0));
        outputs.push(std::fs::read_to_string(&scores_path).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert!(!outputs[0].is_empty());
}
