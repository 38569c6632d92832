//! Command-line harness wiring the pipeline end to end: corpus
//! generation, validation, scoring, endpoint evaluation, and statistics.
//!
//! Exit codes: 0 on success, 1 when violations or failures were found,
//! 2 on usage errors.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use toolgraph::codec::{read_corpus, write_corpus};
use toolgraph::evalrun::{evaluate_corpus, EvalConfig};
use toolgraph::pipeline::{
    corpus_stats, load_config, run_generate, score_corpora, GenStats, ScoreAggregate,
};
use toolgraph::query::RemoteConfig;
use toolgraph::reward::RewardConfig;
use toolgraph::validator::{validate_line, ValidateOptions};

#[derive(Parser)]
#[command(name = "toolgraph")]
#[command(about = "Synthetic tool-orchestration corpora with DAG ground truth and graph rewards")]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a corpus from a TOML config and report its statistics
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Stats report path (default: <out>.stats.json)
        #[arg(long)]
        stats: Option<PathBuf>,
        /// Override the config's worker count
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Run the layered verification stack over a corpus
    Validate {
        #[arg(long)]
        corpus: PathBuf,
        /// Tolerate payload parameters outside the tool schema
        #[arg(long)]
        lenient: bool,
        /// Violations report path (JSONL; default: stdout only)
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Score structured predictions against a gold corpus
    Score {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// Weight of the graph reward in the total
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        /// Scoring records path (JSONL; default: <pred>.scores.jsonl)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Query a chat-completions endpoint on every sample and report pass@k
    Evaluate {
        #[arg(long)]
        corpus: PathBuf,
        /// Full URL of the chat-completions route
        #[arg(long)]
        endpoint: String,
        #[arg(long)]
        model: String,
        #[arg(long, default_value_t = 0.1)]
        temperature: f64,
        /// Completions per sample
        #[arg(long, default_value_t = 10)]
        runs: usize,
        #[arg(long, default_value_t = 1)]
        k: usize,
        /// Environment variable holding the API key
        #[arg(long)]
        api_key_env: Option<String>,
        #[arg(long, default_value_t = 4)]
        max_in_flight: usize,
        /// Report path (JSON; default: stdout summary only)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print distribution statistics for an existing corpus
    Stats {
        #[arg(long)]
        corpus: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Generate {
            config,
            out,
            stats,
            workers,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(workers) = workers {
                cfg.limits.workers = workers;
            }
            let outcome = run_generate(&cfg)?;
            write_corpus(&outcome.transcripts, &out)
                .with_context(|| format!("writing {}", out.display()))?;
            let stats_path = stats.unwrap_or_else(|| stats_sidecar(&out));
            write_json(&stats_path, &outcome.stats)?;
            print_stats(&outcome.stats);
            println!(
                "wrote {} transcripts to {} (stats: {})",
                outcome.transcripts.len(),
                out.display(),
                stats_path.display()
            );
            Ok(ExitCode::SUCCESS)
        }

        Command::Validate {
            corpus,
            lenient,
            report,
        } => {
            let opts = ValidateOptions { lenient };
            let file =
                File::open(&corpus).with_context(|| format!("opening {}", corpus.display()))?;
            let mut report_file = report
                .as_ref()
                .map(|p| File::create(p).with_context(|| format!("creating {}", p.display())))
                .transpose()?;
            let mut total_violations = 0usize;
            let mut lines = 0usize;
            for (line_no, line) in BufReader::new(file).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                lines += 1;
                for violation in validate_line(&line, line_no + 1, opts) {
                    total_violations += 1;
                    let row = serde_json::json!({
                        "line": line_no + 1,
                        "layer": violation.layer,
                        "task_id": violation.task_id,
                        "message": violation.message,
                    });
                    println!("{row}");
                    if let Some(f) = report_file.as_mut() {
                        writeln!(f, "{row}")?;
                    }
                }
            }
            eprintln!("validated {lines} samples: {total_violations} violations");
            Ok(if total_violations == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }

        Command::Score {
            pred,
            gold,
            alpha,
            out,
        } => {
            let reward = RewardConfig {
                alpha,
                ..RewardConfig::default()
            };
            reward
                .validate()
                .map_err(|e| anyhow::anyhow!("bad reward config: {e}"))?;
            let preds =
                read_corpus(&pred).with_context(|| format!("reading {}", pred.display()))?;
            let golds =
                read_corpus(&gold).with_context(|| format!("reading {}", gold.display()))?;
            let (records, aggregates) = score_corpora(&preds, &golds, &reward);
            let out_path = out.unwrap_or_else(|| scores_sidecar(&pred));
            let mut f = File::create(&out_path)
                .with_context(|| format!("creating {}", out_path.display()))?;
            for record in &records {
                writeln!(f, "{}", serde_json::to_string(record)?)?;
            }
            print_aggregates(&aggregates);
            println!(
                "wrote {} scoring records to {}",
                records.len(),
                out_path.display()
            );
            Ok(ExitCode::SUCCESS)
        }

        Command::Evaluate {
            corpus,
            endpoint,
            model,
            temperature,
            runs,
            k,
            api_key_env,
            max_in_flight,
            out,
        } => {
            let transcripts =
                read_corpus(&corpus).with_context(|| format!("reading {}", corpus.display()))?;
            let cfg = EvalConfig {
                remote: RemoteConfig {
                    endpoint_url: endpoint,
                    model,
                    temperature,
                    api_key_env,
                    max_in_flight,
                    ..RemoteConfig::default()
                },
                runs,
                k,
            };
            let report = evaluate_corpus(&transcripts, &cfg, &RewardConfig::default());
            println!(
                "pass@{}: {:.4} ± {:.4} over {} samples ({} flagged, {} runs each)",
                report.k,
                report.pass_at_k_mean,
                report.pass_at_k_std,
                report.samples.len(),
                report.flagged_samples,
                report.runs,
            );
            if let Some(path) = out {
                write_json(&path, &report)?;
                println!("wrote report to {}", path.display());
            }
            let all_flagged =
                !report.samples.is_empty() && report.flagged_samples == report.samples.len();
            Ok(if all_flagged {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            })
        }

        Command::Stats { corpus } => {
            let transcripts =
                read_corpus(&corpus).with_context(|| format!("reading {}", corpus.display()))?;
            let stats = corpus_stats(&transcripts);
            print_stats(&stats);
            println!("{}", serde_json::to_string_pretty(&stats)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn stats_sidecar(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".stats.json");
    PathBuf::from(s)
}

fn scores_sidecar(pred: &Path) -> PathBuf {
    let mut s = pred.as_os_str().to_owned();
    s.push(".scores.jsonl");
    PathBuf::from(s)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    writeln!(f, "{}", serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn print_stats(stats: &GenStats) {
    println!(
        "data #: {}   multi-turn: {:.1}%   height: {:.2} ± {:.2}   width: {:.2} ± {:.2}   \
         success rate: {:.2} (per attempt {:.2})",
        stats.data_count,
        stats.multi_turn_proportion * 100.0,
        stats.avg_height,
        stats.std_height,
        stats.avg_width,
        stats.std_width,
        stats.success_rate_per_sample,
        stats.success_rate_per_attempt,
    );
    if !stats.scenario_counts.is_empty() {
        let parts: Vec<String> = stats
            .scenario_counts
            .iter()
            .map(|(k, v)| format!("{k}: {v}"))
            .collect();
        println!("scenarios: {}", parts.join(", "));
    }
}

fn print_aggregates(aggregates: &[ScoreAggregate]) {
    println!(
        "{:<14} {:>6} {:>9} {:>9} {:>9} {:>9} {:>14}",
        "group", "turns", "r_format", "r_dag", "r_total", "acc_step", "acc_user_query"
    );
    for a in aggregates {
        println!(
            "{:<14} {:>6} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>14.4}",
            a.group, a.turns, a.r_format, a.r_dag, a.r_total, a.acc_step, a.acc_user_query
        );
    }
}
