//! Format and graph rewards plus the evaluation metrics.
//!
//! The graph reward compares a predicted plan against the gold plan with
//! an exact weighted graph edit distance:
//!
//! ```text
//! r_dag = 1 - GED(pred, gold) / (GED(pred, {}) + GED(gold, {}))
//! ```
//!
//! Node equivalence treats the whole tool call as one unit: tool name,
//! parameter names, and parameter values. Symbolic references compare by
//! their resolved (source toolname, output key) pair — never by raw task
//! ordinal — so plans that renumber tasks but wire the same tools
//! identically are equivalent.
//!
//! Exact GED runs a branch-and-bound search over injective node mappings
//! with an admissible unmatched-node lower bound. Graphs larger than
//! `max_exact_nodes` fall back to a greedy assignment upper bound and the
//! outcome is flagged approximate.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::codec::{parse_plan, parse_transcript, Tag};
use crate::model::{
    json_approx_eq, validate_structure, JsonValue, PayloadValue, PlanDag, PlanTask, TaskId,
};

// ── Configuration ────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Weight of the graph reward in the total.
    pub alpha: f64,
    pub node_insert_cost: f64,
    pub node_delete_cost: f64,
    /// Charged when two mapped nodes are not equivalent, regardless of
    /// how many payload fields differ.
    pub node_substitute_cost: f64,
    pub edge_insert_cost: f64,
    pub edge_delete_cost: f64,
    /// Largest graph size handled by the exact search.
    pub max_exact_nodes: usize,
    /// Branch-and-bound decision budget; a search that exhausts it
    /// returns its best path so far, flagged approximate. Keeps scoring
    /// latency bounded on adversarial node-disjoint pairs.
    pub max_search_decisions: u64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            node_insert_cost: 1.0,
            node_delete_cost: 1.0,
            node_substitute_cost: 1.0,
            edge_insert_cost: 1.0,
            edge_delete_cost: 1.0,
            max_exact_nodes: 12,
            max_search_decisions: 2_000_000,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), String> {
        let costs = [
            self.node_insert_cost,
            self.node_delete_cost,
            self.node_substitute_cost,
            self.edge_insert_cost,
            self.edge_delete_cost,
        ];
        if !costs.iter().all(|c| c.is_finite() && *c > 0.0) {
            return Err("all edit costs must be positive".into());
        }
        if self.alpha < 0.0 {
            return Err("alpha must be non-negative".into());
        }
        Ok(())
    }
}

// ── Reference resolution ─────────────────────────────────────────────────

/// Toolnames of prior-turn tasks by ordinal; lets second-turn plans
/// resolve cross-turn references during scoring.
#[derive(Debug, Clone, Default)]
pub struct RefContext {
    pub prior_tools: BTreeMap<u64, String>,
}

impl RefContext {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_prior_dags(dags: &[&PlanDag]) -> Self {
        let prior_tools = dags
            .iter()
            .flat_map(|d| d.tasks.iter())
            .map(|t| (t.id.ordinal(), t.toolname.clone()))
            .collect();
        Self { prior_tools }
    }
}

/// Maps one DAG's refs to (source toolname, output key) using the DAG's
/// own structure plus the shared prior-turn context.
pub struct RefResolver<'a> {
    local: BTreeMap<u64, &'a str>,
    ctx: &'a RefContext,
}

impl<'a> RefResolver<'a> {
    pub fn for_dag(dag: &'a PlanDag, ctx: &'a RefContext) -> Self {
        let local = dag
            .tasks
            .iter()
            .map(|t| (t.id.ordinal(), t.toolname.as_str()))
            .collect();
        Self { local, ctx }
    }

    pub fn resolve(&self, ordinal: u64) -> Option<&str> {
        self.local
            .get(&ordinal)
            .copied()
            .or_else(|| self.ctx.prior_tools.get(&ordinal).map(String::as_str))
    }
}

/// A payload value with refs resolved; `Unresolved` never compares equal,
/// not even to itself.
#[derive(Debug, Clone)]
enum ResolvedValue {
    Literal(JsonValue),
    Source(String, String),
    Unresolved,
}

#[derive(Debug, Clone)]
struct NodeSig {
    toolname: String,
    params: BTreeMap<String, ResolvedValue>,
}

fn signature(task: &PlanTask, resolver: &RefResolver<'_>) -> NodeSig {
    let params = task
        .payload
        .iter()
        .map(|(k, v)| {
            let resolved = match v {
                PayloadValue::Literal(value) => ResolvedValue::Literal(value.clone()),
                PayloadValue::Ref(r) => match resolver.resolve(r.ordinal) {
                    Some(tool) => ResolvedValue::Source(tool.to_string(), r.key.clone()),
                    None => ResolvedValue::Unresolved,
                },
            };
            (k.clone(), resolved)
        })
        .collect();
    NodeSig {
        toolname: task.toolname.clone(),
        params,
    }
}

fn sig_eq(a: &NodeSig, b: &NodeSig) -> bool {
    if a.toolname != b.toolname || a.params.len() != b.params.len() {
        return false;
    }
    a.params.iter().all(|(k, va)| match b.params.get(k) {
        Some(vb) => match (va, vb) {
            (ResolvedValue::Literal(x), ResolvedValue::Literal(y)) => json_approx_eq(x, y),
            (ResolvedValue::Source(t1, k1), ResolvedValue::Source(t2, k2)) => t1 == t2 && k1 == k2,
            _ => false,
        },
        None => false,
    })
}

/// Whole-tool-call equivalence: tool name, parameter names, and parameter
/// values as a single unit.
pub fn node_equivalent(
    a: &PlanTask,
    b: &PlanTask,
    resolver_a: &RefResolver<'_>,
    resolver_b: &RefResolver<'_>,
) -> bool {
    sig_eq(&signature(a, resolver_a), &signature(b, resolver_b))
}

// ── Graph edit distance ──────────────────────────────────────────────────

/// Deletions refer to the first graph, insertions to the second.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "op")]
pub enum EditOp {
    DeleteNode { task: TaskId },
    InsertNode { task: TaskId },
    SubstituteNode { from: TaskId, to: TaskId },
    DeleteEdge { from: TaskId, to: TaskId },
    InsertEdge { from: TaskId, to: TaskId },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GedOutcome {
    pub cost: f64,
    pub ops: Vec<EditOp>,
    /// False when the greedy fallback produced an upper bound instead of
    /// the exact minimum.
    pub exact: bool,
}

/// Cost of editing `g` down to the empty graph.
pub fn ged_empty(g: &PlanDag, cfg: &RewardConfig) -> f64 {
    g.len() as f64 * cfg.node_delete_cost + g.edges().count() as f64 * cfg.edge_delete_cost
}

struct GedProblem {
    n1: usize,
    n2: usize,
    eq: Vec<Vec<bool>>,
    e1: BTreeSet<(usize, usize)>,
    e2: BTreeSet<(usize, usize)>,
    /// Per node: (other endpoint, node is the source).
    adj1: Vec<Vec<(usize, bool)>>,
    adj2: Vec<Vec<(usize, bool)>>,
    /// `e1_pending[i]`: edges of g1 with an endpoint at index >= i, i.e.
    /// still undecided when the search reaches node i.
    e1_pending: Vec<usize>,
    cfg: RewardConfig,
}

impl GedProblem {
    fn new(g1: &PlanDag, g2: &PlanDag, cfg: &RewardConfig, ctx: &RefContext) -> Self {
        let r1 = RefResolver::for_dag(g1, ctx);
        let r2 = RefResolver::for_dag(g2, ctx);
        let sig1: Vec<NodeSig> = g1.tasks.iter().map(|t| signature(t, &r1)).collect();
        let sig2: Vec<NodeSig> = g2.tasks.iter().map(|t| signature(t, &r2)).collect();
        let eq = sig1
            .iter()
            .map(|a| sig2.iter().map(|b| sig_eq(a, b)).collect())
            .collect();
        let e1 = edges_by_index(g1);
        let e2 = edges_by_index(g2);
        let adj1 = adjacency(g1.len(), &e1);
        let adj2 = adjacency(g2.len(), &e2);
        let n1 = g1.len();
        let mut e1_pending = vec![0usize; n1 + 1];
        for &(a, b) in &e1 {
            e1_pending[a.max(b)] += 1;
        }
        for i in (0..n1).rev() {
            e1_pending[i] += e1_pending[i + 1];
        }
        Self {
            n1,
            n2: g2.len(),
            eq,
            e1,
            e2,
            adj1,
            adj2,
            e1_pending,
            cfg: cfg.clone(),
        }
    }
}

fn edges_by_index(dag: &PlanDag) -> BTreeSet<(usize, usize)> {
    let index: BTreeMap<TaskId, usize> = dag
        .tasks
        .iter()
        .enumerate()
        .map(|(i, t)| (t.id, i))
        .collect();
    let mut edges = BTreeSet::new();
    for (i, task) in dag.tasks.iter().enumerate() {
        for dep in &task.dependencies {
            if let Some(&j) = index.get(dep) {
                if j != i {
                    edges.insert((j, i));
                }
            }
        }
    }
    edges
}

fn adjacency(n: usize, edges: &BTreeSet<(usize, usize)>) -> Vec<Vec<(usize, bool)>> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push((b, true));
        adj[b].push((a, false));
    }
    adj
}

/// `assignment[i]`: image of g1 node i in g2, or None for deletion.
type Assignment = Vec<Option<usize>>;

/// Full cost of a complete assignment, recomputed from scratch.
fn assignment_cost(p: &GedProblem, assignment: &Assignment) -> f64 {
    let cfg = &p.cfg;
    let mut cost = 0.0;
    let mut image: Vec<Option<usize>> = vec![None; p.n2];
    for (i, a) in assignment.iter().enumerate() {
        match a {
            Some(j) => {
                image[*j] = Some(i);
                if !p.eq[i][*j] {
                    cost += cfg.node_substitute_cost;
                }
            }
            None => cost += cfg.node_delete_cost,
        }
    }
    cost += image.iter().filter(|x| x.is_none()).count() as f64 * cfg.node_insert_cost;
    for &(a, b) in &p.e1 {
        let mapped = match (assignment[a], assignment[b]) {
            (Some(x), Some(y)) => p.e2.contains(&(x, y)),
            _ => false,
        };
        if !mapped {
            cost += cfg.edge_delete_cost;
        }
    }
    for &(x, y) in &p.e2 {
        let mapped = match (image[x], image[y]) {
            (Some(a), Some(b)) => p.e1.contains(&(a, b)),
            _ => false,
        };
        if !mapped {
            cost += cfg.edge_insert_cost;
        }
    }
    cost
}

struct SearchState {
    assignment: Assignment,
    used2: Vec<bool>,
    /// g2 index -> preimage in g1, for incremental edge-insert detection.
    preimage: Vec<Option<usize>>,
    cost: f64,
    best_cost: f64,
    best_assignment: Assignment,
    decisions_left: u64,
    exhausted: bool,
}

/// (cost, assignment, search completed exactly)
fn exact_search(p: &GedProblem) -> (f64, Assignment, bool) {
    // Prime the bound with the better of the trivial path (delete all,
    // insert all) and a greedy pairing, so dead branches prune early.
    let trivial: Assignment = vec![None; p.n1];
    let trivial_cost = assignment_cost(p, &trivial);
    let greedy = primed_assignment(p);
    let greedy_cost = assignment_cost(p, &greedy);
    let (best_cost, best_assignment) = if greedy_cost < trivial_cost {
        (greedy_cost, greedy)
    } else {
        (trivial_cost, trivial)
    };
    let mut state = SearchState {
        assignment: vec![None; p.n1],
        used2: vec![false; p.n2],
        preimage: vec![None; p.n2],
        cost: 0.0,
        best_cost,
        best_assignment,
        decisions_left: p.cfg.max_search_decisions.max(1),
        exhausted: false,
    };
    dfs(p, &mut state, 0);
    (state.best_cost, state.best_assignment, !state.exhausted)
}

/// Greedy pairing: equivalent partners first come first served, leftover
/// nodes paired in order (substitutions), the tail deleted/inserted.
fn primed_assignment(p: &GedProblem) -> Assignment {
    let mut used2 = vec![false; p.n2];
    let mut assignment: Assignment = (0..p.n1)
        .map(|i| {
            let j = (0..p.n2).find(|&j| !used2[j] && p.eq[i][j]);
            if let Some(j) = j {
                used2[j] = true;
            }
            j
        })
        .collect();
    let mut free2 = (0..p.n2).filter(|&j| !used2[j]);
    for slot in assignment.iter_mut().filter(|s| s.is_none()) {
        match free2.next() {
            Some(j) => *slot = Some(j),
            None => break,
        }
    }
    assignment
}

fn lower_bound(p: &GedProblem, state: &SearchState, next: usize) -> f64 {
    let cfg = &p.cfg;
    let r1 = p.n1 - next;
    let r2 = state.used2.iter().filter(|u| !**u).count();
    let unmatched = if r1 > r2 {
        (r1 - r2) as f64 * cfg.node_delete_cost
    } else {
        (r2 - r1) as f64 * cfg.node_insert_cost
    };
    // Independent per-node floor: a remaining g1 node with no equivalent
    // candidate left costs at least min(substitute, delete).
    let floor: f64 = (next..p.n1)
        .map(|i| {
            let has_candidate = (0..p.n2).any(|j| !state.used2[j] && p.eq[i][j]);
            if has_candidate {
                0.0
            } else {
                cfg.node_substitute_cost.min(cfg.node_delete_cost)
            }
        })
        .sum();
    // Uncharged edges can pair up at most injectively; the excess on
    // either side is unavoidable deletions or insertions.
    let u1 = p.e1_pending[next];
    let u2 =
        p.e2.iter()
            .filter(|(x, y)| state.preimage[*x].is_none() || state.preimage[*y].is_none())
            .count();
    let edge_bound = if u1 > u2 {
        (u1 - u2) as f64 * cfg.edge_delete_cost
    } else {
        (u2 - u1) as f64 * cfg.edge_insert_cost
    };
    unmatched.max(floor) + edge_bound
}

/// Incremental cost of deciding node `i`, given all nodes before it are
/// decided. Edges are charged when their second endpoint is decided.
fn decision_cost(p: &GedProblem, state: &SearchState, i: usize, choice: Option<usize>) -> f64 {
    let cfg = &p.cfg;
    let mut delta = 0.0;
    match choice {
        None => {
            delta += cfg.node_delete_cost;
            for &(k, _) in &p.adj1[i] {
                if k < i {
                    delta += cfg.edge_delete_cost;
                }
            }
        }
        Some(j) => {
            if !p.eq[i][j] {
                delta += cfg.node_substitute_cost;
            }
            for &(k, i_is_source) in &p.adj1[i] {
                if k >= i {
                    continue;
                }
                match state.assignment[k] {
                    None => delta += cfg.edge_delete_cost,
                    Some(jk) => {
                        let mapped = if i_is_source { (j, jk) } else { (jk, j) };
                        if !p.e2.contains(&mapped) {
                            delta += cfg.edge_delete_cost;
                        }
                    }
                }
            }
            // g2 edges joining j to an already-used image with no
            // counterpart in g1 are guaranteed insertions.
            for &(j2, j_is_source) in &p.adj2[j] {
                let Some(k) = state.preimage[j2] else {
                    continue;
                };
                let wanted = if j_is_source { (i, k) } else { (k, i) };
                if !p.e1.contains(&wanted) {
                    delta += cfg.edge_insert_cost;
                }
            }
        }
    }
    delta
}

fn leaf_tail_cost(p: &GedProblem, state: &SearchState) -> f64 {
    let cfg = &p.cfg;
    let inserts = state.used2.iter().filter(|u| !**u).count() as f64 * cfg.node_insert_cost;
    // g2 edges not matched by the mapping and not already charged: count
    // from scratch — cheap relative to the search.
    let mut edge_inserts = 0.0;
    for &(x, y) in &p.e2 {
        let charged_or_matched = match (state.preimage[x], state.preimage[y]) {
            (Some(_), Some(_)) => true, // charged incrementally (or matched)
            _ => false,
        };
        if !charged_or_matched {
            edge_inserts += cfg.edge_insert_cost;
        }
    }
    inserts + edge_inserts
}

fn dfs(p: &GedProblem, state: &mut SearchState, i: usize) {
    if state.exhausted || state.cost + lower_bound(p, state, i) >= state.best_cost {
        return;
    }
    if i == p.n1 {
        let total = state.cost + leaf_tail_cost(p, state);
        if total < state.best_cost {
            state.best_cost = total;
            state.best_assignment = state.assignment.clone();
        }
        return;
    }
    // Cheapest local decision first: good mappings surface early and the
    // bound prunes the rest.
    let mut candidates: Vec<(f64, Option<usize>)> = Vec::with_capacity(p.n2 + 1);
    for j in 0..p.n2 {
        if !state.used2[j] {
            let choice = Some(j);
            candidates.push((decision_cost(p, state, i, choice), choice));
        }
    }
    candidates.push((decision_cost(p, state, i, None), None));
    candidates.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));

    if state.decisions_left < candidates.len() as u64 {
        state.exhausted = true;
        return;
    }
    state.decisions_left -= candidates.len() as u64;

    for (delta, choice) in candidates {
        if state.cost + delta >= state.best_cost {
            continue;
        }
        state.assignment[i] = choice;
        if let Some(j) = choice {
            state.used2[j] = true;
            state.preimage[j] = Some(i);
        }
        state.cost += delta;
        dfs(p, state, i + 1);
        state.cost -= delta;
        if let Some(j) = choice {
            state.used2[j] = false;
            state.preimage[j] = None;
        }
        state.assignment[i] = None;
    }
}

/// Greedy assignment for oversized graphs: pair equivalent nodes first
/// come, first served; everything else is delete/insert.
fn greedy_assignment(p: &GedProblem) -> Assignment {
    let mut used2 = vec![false; p.n2];
    (0..p.n1)
        .map(|i| {
            let j = (0..p.n2).find(|&j| !used2[j] && p.eq[i][j]);
            if let Some(j) = j {
                used2[j] = true;
            }
            j
        })
        .collect()
}

fn ops_for_assignment(
    p: &GedProblem,
    g1: &PlanDag,
    g2: &PlanDag,
    assignment: &Assignment,
) -> Vec<EditOp> {
    let mut ops = Vec::new();
    let mut image: Vec<Option<usize>> = vec![None; p.n2];
    for (i, a) in assignment.iter().enumerate() {
        match a {
            Some(j) => {
                image[*j] = Some(i);
                if !p.eq[i][*j] {
                    ops.push(EditOp::SubstituteNode {
                        from: g1.tasks[i].id,
                        to: g2.tasks[*j].id,
                    });
                }
            }
            None => ops.push(EditOp::DeleteNode {
                task: g1.tasks[i].id,
            }),
        }
    }
    for (j, pre) in image.iter().enumerate() {
        if pre.is_none() {
            ops.push(EditOp::InsertNode {
                task: g2.tasks[j].id,
            });
        }
    }
    for &(a, b) in &p.e1 {
        let mapped = match (assignment[a], assignment[b]) {
            (Some(x), Some(y)) => p.e2.contains(&(x, y)),
            _ => false,
        };
        if !mapped {
            ops.push(EditOp::DeleteEdge {
                from: g1.tasks[a].id,
                to: g1.tasks[b].id,
            });
        }
    }
    for &(x, y) in &p.e2 {
        let mapped = match (image[x], image[y]) {
            (Some(a), Some(b)) => p.e1.contains(&(a, b)),
            _ => false,
        };
        if !mapped {
            ops.push(EditOp::InsertEdge {
                from: g2.tasks[x].id,
                to: g2.tasks[y].id,
            });
        }
    }
    ops
}

/// Minimum edit cost between two plans under `cfg`, with the realizing
/// edit operations.
pub fn ged(g1: &PlanDag, g2: &PlanDag, cfg: &RewardConfig, ctx: &RefContext) -> GedOutcome {
    let p = GedProblem::new(g1, g2, cfg, ctx);
    if p.n1.max(p.n2) > cfg.max_exact_nodes {
        let assignment = greedy_assignment(&p);
        let cost = assignment_cost(&p, &assignment);
        let ops = ops_for_assignment(&p, g1, g2, &assignment);
        return GedOutcome {
            cost,
            ops,
            exact: false,
        };
    }
    let (cost, assignment, exact) = exact_search(&p);
    let recomputed = assignment_cost(&p, &assignment);
    debug_assert!(
        (cost - recomputed).abs() < 1e-9,
        "incremental cost {cost} disagrees with recomputation {recomputed}"
    );
    let ops = ops_for_assignment(&p, g1, g2, &assignment);
    GedOutcome {
        cost: recomputed,
        ops,
        exact,
    }
}

/// Whether a predicted plan is well-formed enough to score as a graph:
/// structurally valid, with every ref resolving inside the plan or the
/// prior context.
pub fn scoreable(pred: &PlanDag, ctx: &RefContext) -> bool {
    if !validate_structure(pred).is_empty() {
        return false;
    }
    let resolver = RefResolver::for_dag(pred, ctx);
    pred.tasks
        .iter()
        .flat_map(|t| t.refs())
        .all(|(_, r)| resolver.resolve(r.ordinal).is_some())
}

/// The normalized graph reward in [0, 1]. Structurally invalid
/// predictions score 0; two empty graphs score 1.
pub fn r_dag(pred: &PlanDag, gold: &PlanDag, cfg: &RewardConfig, ctx: &RefContext) -> f64 {
    if !scoreable(pred, ctx) {
        return 0.0;
    }
    let denominator = ged_empty(pred, cfg) + ged_empty(gold, cfg);
    if denominator == 0.0 {
        return 1.0;
    }
    let distance = ged(pred, gold, cfg, ctx).cost;
    1.0 - distance / denominator
}

// ── Format reward ────────────────────────────────────────────────────────

/// 1 iff the text parses and its blocks appear as: one think, one DAG,
/// then optional alternating tool_call/obs pairs, then an optional
/// response.
pub fn r_format(text: &str) -> f64 {
    let Ok(segments) = parse_transcript(text, false) else {
        return 0.0;
    };
    let kinds: Vec<Tag> = segments.iter().map(|s| s.tag).collect();
    if format_sequence_ok(&kinds) {
        1.0
    } else {
        0.0
    }
}

fn format_sequence_ok(kinds: &[Tag]) -> bool {
    let mut rest = kinds;
    let [Tag::Think, Tag::Dag, tail @ ..] = rest else {
        return false;
    };
    rest = tail;
    while let [Tag::ToolCall, Tag::Obs, tail @ ..] = rest {
        rest = tail;
    }
    matches!(rest, [] | [Tag::Response])
}

// ── Total reward ─────────────────────────────────────────────────────────

/// Per-turn reward decomposition plus edit-path diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RewardBreakdown {
    pub r_format: f64,
    pub r_dag: f64,
    pub r_total: f64,
    pub ged: f64,
    pub exact: bool,
    pub edit_ops: Vec<EditOp>,
}

/// Scores raw model text against the gold plan. The predicted DAG comes
/// from the first DAG block; missing or unparseable predictions score as
/// the empty graph.
pub fn r_total(
    text: &str,
    gold: &PlanDag,
    cfg: &RewardConfig,
    ctx: &RefContext,
) -> RewardBreakdown {
    let format = r_format(text);
    let pred = extract_pred_dag(text).filter(|p| scoreable(p, ctx));
    score_pred(pred.as_ref(), gold, format, cfg, ctx)
}

/// Scores an already-parsed prediction; `r_format` is 1 for structured
/// input, which is well-formed by construction.
pub fn r_total_structured(
    pred: &PlanDag,
    gold: &PlanDag,
    cfg: &RewardConfig,
    ctx: &RefContext,
) -> RewardBreakdown {
    let pred = Some(pred).filter(|p| scoreable(p, ctx));
    score_pred(pred, gold, 1.0, cfg, ctx)
}

fn score_pred(
    pred: Option<&PlanDag>,
    gold: &PlanDag,
    format: f64,
    cfg: &RewardConfig,
    ctx: &RefContext,
) -> RewardBreakdown {
    let empty = PlanDag::default();
    let (effective, invalid) = match pred {
        Some(p) => (p, false),
        None => (&empty, true),
    };
    let outcome = ged(effective, gold, cfg, ctx);
    let denominator = ged_empty(effective, cfg) + ged_empty(gold, cfg);
    let r_dag_value = if invalid {
        0.0
    } else if denominator == 0.0 {
        1.0
    } else {
        1.0 - outcome.cost / denominator
    };
    RewardBreakdown {
        r_format: format,
        r_dag: r_dag_value,
        r_total: format + cfg.alpha * r_dag_value,
        ged: outcome.cost,
        exact: outcome.exact,
        edit_ops: outcome.ops,
    }
}

/// First DAG block of a model output, parsed; None when absent or
/// malformed.
pub fn extract_pred_dag(text: &str) -> Option<PlanDag> {
    let segments = parse_transcript(text, false).ok()?;
    let dag_body = segments.iter().find(|s| s.tag == Tag::Dag)?;
    parse_plan(&dag_body.body).ok()
}

// ── Evaluation metrics ───────────────────────────────────────────────────

/// Fraction of gold tasks with an equivalent predicted task; graph
/// structure is ignored, and extra predictions neither help nor hurt.
pub fn acc_step(pred: &PlanDag, gold: &PlanDag, ctx: &RefContext) -> f64 {
    if gold.is_empty() {
        return 1.0;
    }
    let rp = RefResolver::for_dag(pred, ctx);
    let rg = RefResolver::for_dag(gold, ctx);
    let pred_sigs: Vec<NodeSig> = pred.tasks.iter().map(|t| signature(t, &rp)).collect();
    let gold_sigs: Vec<NodeSig> = gold.tasks.iter().map(|t| signature(t, &rg)).collect();

    // Group gold tasks into equivalence classes, then give each class
    // credit for min(gold multiplicity, pred multiplicity).
    let mut class_reps: Vec<&NodeSig> = Vec::new();
    let mut gold_counts: Vec<usize> = Vec::new();
    for sig in &gold_sigs {
        match class_reps.iter().position(|rep| sig_eq(rep, sig)) {
            Some(c) => gold_counts[c] += 1,
            None => {
                class_reps.push(sig);
                gold_counts.push(1);
            }
        }
    }
    let mut matched = 0usize;
    for (rep, &gold_count) in class_reps.iter().zip(&gold_counts) {
        let pred_count = pred_sigs.iter().filter(|s| sig_eq(rep, s)).count();
        matched += gold_count.min(pred_count);
    }
    matched as f64 / gold.len() as f64
}

/// All-or-nothing plan correctness: 1 iff the edit distance is zero
/// (equivalence up to task renumbering).
pub fn acc_user_query(pred: &PlanDag, gold: &PlanDag, cfg: &RewardConfig, ctx: &RefContext) -> f64 {
    if !scoreable(pred, ctx) {
        return 0.0;
    }
    if ged(pred, gold, cfg, ctx).cost == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Unbiased pass@k estimator over n >= k Bernoulli outcomes:
/// 1 - C(n-c, k)/C(n, k).
pub fn pass_at_k(outcomes: &[bool], k: usize) -> f64 {
    let n = outcomes.len();
    let c = outcomes.iter().filter(|o| **o).count();
    assert!(k >= 1 && n >= k, "pass@k needs n >= k >= 1");
    if n - c < k {
        return 1.0;
    }
    let mut ratio = 1.0;
    for i in 0..k {
        ratio *= (n - c - i) as f64 / (n - i) as f64;
    }
    1.0 - ratio
}
