//! Random DAG templates with controllable height and width — the
//! complexity dial of the generation pipeline.
//!
//! A template fixes the layer sizes and the edge set before any tool is
//! synthesized. Layer 1 holds the seed tools; each deeper node draws a
//! mandatory parent from the immediately preceding layer (so some path
//! realizes the full height) plus optional extra parents from any earlier
//! layer. Edges are strictly layer-increasing, so templates are acyclic by
//! construction.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::rng_from_seed;

/// Knobs controlling template shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemplateConfig {
    pub height_min: usize,
    pub height_max: usize,
    pub width_min: usize,
    pub width_max: usize,
    /// Layer-1 size used when no seed record dictates it.
    pub first_layer_size: usize,
    /// Probability of each optional extra parent edge, in (0, 1].
    pub edge_density: f64,
    pub rng_seed: u64,
}

impl Default for TemplateConfig {
    fn default() -> Self {
        Self {
            height_min: 2,
            height_max: 3,
            width_min: 2,
            width_max: 4,
            first_layer_size: 4,
            edge_density: 0.3,
            rng_seed: 0,
        }
    }
}

impl TemplateConfig {
    pub fn validate(&self) -> Result<(), TemplateError> {
        if self.height_min == 0 || self.height_min > self.height_max {
            return Err(TemplateError::InvalidConfig(format!(
                "height range [{}, {}] is invalid",
                self.height_min, self.height_max
            )));
        }
        if self.width_min == 0 || self.width_min > self.width_max {
            return Err(TemplateError::InvalidConfig(format!(
                "width range [{}, {}] is invalid",
                self.width_min, self.width_max
            )));
        }
        if self.first_layer_size == 0 {
            return Err(TemplateError::InvalidConfig(
                "first_layer_size must be positive".into(),
            ));
        }
        if !(self.edge_density > 0.0 && self.edge_density <= 1.0) {
            return Err(TemplateError::InvalidConfig(format!(
                "edge_density {} outside (0, 1]",
                self.edge_density
            )));
        }
        Ok(())
    }

    pub fn with_seed(&self, rng_seed: u64) -> Self {
        Self {
            rng_seed,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("invalid template config: {0}")]
    InvalidConfig(String),
    #[error("empty template list")]
    EmptyInput,
}

/// A node position within a template: (layer, index within layer).
pub type TemplateNode = (usize, usize);

/// A sampled DAG skeleton: layer sizes plus layer-increasing edges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DagTemplate {
    pub layers: Vec<usize>,
    pub edges: Vec<(TemplateNode, TemplateNode)>,
}

impl DagTemplate {
    pub fn height(&self) -> usize {
        self.layers.len()
    }

    pub fn node_count(&self) -> usize {
        self.layers.iter().sum()
    }

    /// Mean layer size; how "width" is reported.
    pub fn width(&self) -> f64 {
        if self.layers.is_empty() {
            return 0.0;
        }
        self.node_count() as f64 / self.layers.len() as f64
    }

    pub fn nodes(&self) -> impl Iterator<Item = TemplateNode> + '_ {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(layer, &size)| (0..size).map(move |i| (layer, i)))
    }

    pub fn parents(&self, node: TemplateNode) -> Vec<TemplateNode> {
        self.edges
            .iter()
            .filter(|(_, to)| *to == node)
            .map(|(from, _)| *from)
            .collect()
    }

    fn children(&self, node: TemplateNode) -> Vec<TemplateNode> {
        self.edges
            .iter()
            .filter(|(from, _)| *from == node)
            .map(|(_, to)| *to)
            .collect()
    }

    /// Panics if an edge is not strictly layer-increasing or a node is
    /// orphaned; called on every sample.
    fn assert_invariants(&self) {
        for &((fl, fi), (tl, ti)) in &self.edges {
            assert!(tl > fl, "edge must cross to a later layer");
            assert!(
                fi < self.layers[fl] && ti < self.layers[tl],
                "edge endpoints in range"
            );
        }
        for node in self.nodes() {
            let (layer, _) = node;
            if layer > 0 {
                assert!(
                    !self.parents(node).is_empty(),
                    "non-root node lacks a parent"
                );
            }
            if layer + 1 < self.layers.len() {
                assert!(
                    !self.children(node).is_empty(),
                    "interior node lacks a child"
                );
            }
        }
    }
}

/// Samples a template. Layer 1 has exactly `seed_tool_count` nodes; the
/// number of layers and the deeper layer sizes are drawn uniformly from
/// the configured ranges. Deterministic given `cfg.rng_seed`.
pub fn sample_template(
    cfg: &TemplateConfig,
    seed_tool_count: usize,
) -> Result<DagTemplate, TemplateError> {
    cfg.validate()?;
    if seed_tool_count == 0 {
        return Err(TemplateError::InvalidConfig(
            "seed_tool_count must be positive".into(),
        ));
    }
    let mut rng = rng_from_seed(cfg.rng_seed);

    let height = rng.gen_range(cfg.height_min..=cfg.height_max);
    let mut layers = Vec::with_capacity(height);
    layers.push(seed_tool_count);
    for _ in 1..height {
        layers.push(rng.gen_range(cfg.width_min..=cfg.width_max));
    }

    let mut edges: Vec<(TemplateNode, TemplateNode)> = Vec::new();
    for layer in 1..height {
        for i in 0..layers[layer] {
            let node = (layer, i);
            let mandatory = (layer - 1, rng.gen_range(0..layers[layer - 1]));
            edges.push((mandatory, node));
            for (earlier, &size) in layers.iter().enumerate().take(layer) {
                for j in 0..size {
                    let candidate = (earlier, j);
                    if candidate == mandatory {
                        continue;
                    }
                    if rng.gen_bool(cfg.edge_density) {
                        edges.push((candidate, node));
                    }
                }
            }
        }
    }

    let mut template = DagTemplate { layers, edges };
    // Repair pass: every interior node must feed something downstream.
    let orphans: Vec<TemplateNode> = template
        .nodes()
        .filter(|&(layer, _)| layer + 1 < template.height())
        .filter(|&node| template.children(node).is_empty())
        .collect();
    for node in orphans {
        let (layer, _) = node;
        let later: Vec<TemplateNode> = template.nodes().filter(|&(l, _)| l > layer).collect();
        let target = *later.choose(&mut rng).expect("later layer exists");
        template.edges.push((node, target));
    }

    template.assert_invariants();
    Ok(template)
}

/// Aggregate height/width statistics over a set of templates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateStats {
    pub height_mean: f64,
    pub height_std: f64,
    pub width_mean: f64,
    pub width_std: f64,
}

pub fn template_stats(templates: &[DagTemplate]) -> Result<TemplateStats, TemplateError> {
    if templates.is_empty() {
        return Err(TemplateError::EmptyInput);
    }
    let heights: Vec<f64> = templates.iter().map(|t| t.height() as f64).collect();
    let widths: Vec<f64> = templates.iter().map(DagTemplate::width).collect();
    let (height_mean, height_std) = mean_std(&heights);
    let (width_mean, width_std) = mean_std(&widths);
    Ok(TemplateStats {
        height_mean,
        height_std,
        width_mean,
        width_std,
    })
}

/// Mean and sample standard deviation (0 for a single element).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
