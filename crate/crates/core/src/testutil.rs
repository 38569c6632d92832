//! Shared helpers for unit tests.

use crate::model::{ScenarioKind, Transcript};
use crate::pipeline::{MultiTurnConfig, PipelineConfig, SeedsConfig};

/// A small, fast pipeline config for tests.
pub fn tiny_config() -> PipelineConfig {
    PipelineConfig {
        samples: 4,
        rng_seed: 1,
        seeds: SeedsConfig {
            demo_records: 12,
            tools_per_record: 3,
            ..Default::default()
        },
        ..Default::default()
    }
}

/// One generated transcript; `scenario` forces a two-turn sample of that
/// kind, None gives a single-turn sample.
pub fn sample_transcript(seed: u64, scenario: Option<ScenarioKind>) -> Transcript {
    let proportion = if scenario.is_some() { 1.0 } else { 0.0 };
    let weights = match scenario {
        Some(ScenarioKind::Irrelevant) => [1.0, 0.0, 0.0],
        Some(ScenarioKind::Dependent) => [0.0, 1.0, 0.0],
        Some(ScenarioKind::ToolError) => [0.0, 0.0, 1.0],
        None => [1.0, 1.0, 1.0],
    };
    let cfg = PipelineConfig {
        samples: 1,
        rng_seed: seed,
        multi_turn: MultiTurnConfig {
            proportion,
            scenario_weights: weights,
        },
        ..tiny_config()
    };
    let out = crate::pipeline::run_generate(&cfg).expect("generation succeeds");
    out.transcripts.into_iter().next().expect("one sample")
}
