//! Synthetic multi-turn tool-orchestration corpora with DAG ground truth,
//! a layered rule-based verification stack, and a graph-edit-distance
//! reward for verifiable-reward training pipelines.
//!
//! The crate is organized around the data flow of corpus generation:
//! seed tools ([`seed`]) feed random DAG templates ([`template`]), which
//! are populated with synthetic tools ([`synth`]), executed against the
//! mock engine ([`executor`]), optionally extended with a second turn
//! ([`multiturn`]), validated ([`validator`]), and scored ([`reward`]).
//! [`codec`] owns every wire format and [`pipeline`] ties the stages
//! together for the CLI.

pub mod codec;
pub mod corrupt;
pub mod evalrun;
pub mod executor;
pub mod lexicon;
pub mod model;
pub mod multiturn;
pub mod pipeline;
pub mod query;
pub mod reward;
pub mod rng;
pub mod seed;
pub mod synth;
pub mod template;
pub mod validator;

#[cfg(test)]
pub(crate) mod testutil;
