//! Shared helpers for the CLI integration and acceptance tests: a canned
//! chat-completions stub server, a random plan generator, and a
//! brute-force edit-distance oracle kept independent of the library's
//! search.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use toolgraph::model::{JsonValue, PayloadValue, PlanDag, PlanTask, SymbolicRef, TaskId};
use toolgraph::reward::RefContext;

// ── Stub chat-completions endpoint ──────────────────────────────────────

pub struct StubServer {
    pub url: String,
    pub hits: Arc<AtomicUsize>,
}

/// Serves `respond(request_index, request_body) -> content` as a
/// chat-completions endpoint. The listener thread runs for the rest of
/// the test process.
pub fn stub_endpoint<F>(respond: F) -> StubServer
where
    F: Fn(usize, &str) -> String + Send + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind stub");
    let addr = listener.local_addr().expect("stub addr");
    let hits = Arc::new(AtomicUsize::new(0));
    let hits_thread = Arc::clone(&hits);
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let body = match read_http_request(&mut stream) {
                Some(body) => body,
                None => continue,
            };
            let index = hits_thread.fetch_add(1, Ordering::SeqCst);
            let content = respond(index, &body);
            let payload = serde_json::json!({
                "choices": [{"message": {"role": "assistant", "content": content}}]
            })
            .to_string();
            let response = format!(
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\n\
                 Content-Length: {}\r\nConnection: close\r\n\r\n{}",
                payload.len(),
                payload
            );
            let _ = stream.write_all(response.as_bytes());
        }
    });
    StubServer {
        url: format!("http://{addr}/v1/chat/completions"),
        hits,
    }
}

fn read_http_request(stream: &mut std::net::TcpStream) -> Option<String> {
    let mut buf = Vec::new();
    let mut chunk = [0u8; 4096];
    let header_end;
    loop {
        let n = stream.read(&mut chunk).ok()?;
        if n == 0 {
            return None;
        }
        buf.extend_from_slice(&chunk[..n]);
        if let Some(pos) = find_subsequence(&buf, b"\r\n\r\n") {
            header_end = pos + 4;
            break;
        }
        if buf.len() > 1 << 20 {
            return None;
        }
    }
    let headers = String::from_utf8_lossy(&buf[..header_end]).to_string();
    let content_length: usize = headers
        .lines()
        .find_map(|l| {
            let (name, value) = l.split_once(':')?;
            name.eq_ignore_ascii_case("content-length")
                .then(|| value.trim().parse().ok())?
        })
        .unwrap_or(0);
    while buf.len() < header_end + content_length {
        let n = stream.read(&mut chunk).ok()?;
        if n == 0 {
            break;
        }
        buf.extend_from_slice(&chunk[..n]);
    }
    Some(String::from_utf8_lossy(&buf[header_end..]).to_string())
}

fn find_subsequence(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack
        .windows(needle.len())
        .position(|window| window == needle)
}

// ── Random small plans over a shared tool universe ──────────────────────

/// (toolname, output keys) universe shared by generated plans, so random
/// pairs contain equivalent nodes often enough to exercise matching.
pub const UNIVERSE: &[(&str, &[&str])] = &[
    ("alpha_fetch_t1", &["out_a", "out_b", "out_c"]),
    ("beta_rank_t2", &["out_d", "out_e"]),
    ("gamma_merge_t3", &["out_f", "out_g", "out_h"]),
    ("delta_score_t4", &["out_i", "out_j"]),
    ("epsilon_check_t5", &["out_k", "out_l", "out_m"]),
];

fn literal_pool() -> Vec<JsonValue> {
    vec![
        serde_json::json!(1),
        serde_json::json!(2),
        serde_json::json!("x"),
        serde_json::json!("y"),
        serde_json::json!(true),
        serde_json::json!([1, 2]),
    ]
}

/// A structurally valid random plan with at most `max_nodes` tasks.
pub fn random_small_dag(rng: &mut ChaCha8Rng, max_nodes: usize) -> PlanDag {
    let n = rng.gen_range(0..=max_nodes);
    let literals = literal_pool();
    let mut tasks: Vec<PlanTask> = Vec::with_capacity(n);
    for i in 0..n {
        let id = TaskId(2 + i as u64);
        let (tool, _) = UNIVERSE[rng.gen_range(0..UNIVERSE.len())];
        let mut dependencies = Vec::new();
        let mut payload = BTreeMap::new();
        for earlier in tasks.iter() {
            if rng.gen_bool(0.4) {
                dependencies.push(earlier.id);
            }
        }
        for (j, dep) in dependencies.iter().enumerate() {
            let dep_task = tasks.iter().find(|t| t.id == *dep).expect("dep exists");
            let keys = UNIVERSE
                .iter()
                .find(|(name, _)| *name == dep_task.toolname)
                .map(|(_, keys)| *keys)
                .expect("universe tool");
            let key = keys[rng.gen_range(0..keys.len())];
            payload.insert(
                format!("in_{j}"),
                PayloadValue::Ref(SymbolicRef::new(dep.ordinal(), key)),
            );
        }
        for j in 0..rng.gen_range(0..3) {
            payload.insert(
                format!("lit_{j}"),
                PayloadValue::Literal(literals.choose(rng).expect("non-empty").clone()),
            );
        }
        tasks.push(PlanTask {
            id,
            toolname: tool.to_string(),
            payload,
            dependencies,
        });
    }
    PlanDag::new(tasks)
}

/// Randomly perturbs a plan: tweak a literal, drop a task, renumber ids,
/// or retarget a ref key. May produce unscoreable plans, which is part of
/// the point.
pub fn perturb(dag: &PlanDag, rng: &mut ChaCha8Rng) -> PlanDag {
    let mut out = dag.clone();
    if out.tasks.is_empty() {
        return out;
    }
    match rng.gen_range(0..4) {
        0 => {
            // Renumber: shift every in-dag ordinal up by 10.
            let ids: Vec<u64> = out.tasks.iter().map(|t| t.id.ordinal()).collect();
            for task in &mut out.tasks {
                task.id = TaskId(task.id.ordinal() + 10);
                for dep in &mut task.dependencies {
                    if ids.contains(&dep.ordinal()) {
                        *dep = TaskId(dep.ordinal() + 10);
                    }
                }
                for value in task.payload.values_mut() {
                    if let PayloadValue::Ref(r) = value {
                        if ids.contains(&r.ordinal) {
                            r.ordinal += 10;
                        }
                    }
                }
            }
        }
        1 => {
            let i = rng.gen_range(0..out.tasks.len());
            out.tasks[i].payload.insert(
                "lit_extra".into(),
                PayloadValue::Literal(serde_json::json!(99)),
            );
        }
        2 => {
            let i = rng.gen_range(0..out.tasks.len());
            out.tasks.remove(i);
        }
        _ => {
            let i = rng.gen_range(0..out.tasks.len());
            let (tool, _) = UNIVERSE[rng.gen_range(0..UNIVERSE.len())];
            out.tasks[i].toolname = tool.to_string();
        }
    }
    out
}

// ── Brute-force edit-distance oracle ─────────────────────────────────────

/// Node signature computed independently of the library: refs resolve to
/// "source toolname:key" through the plan's own tasks plus the prior
/// context; unresolved refs get a per-node marker that never matches.
fn oracle_signature(dag: &PlanDag, ctx: &RefContext, side: &str) -> Vec<(String, Vec<String>)> {
    dag.tasks
        .iter()
        .enumerate()
        .map(|(i, task)| {
            let mut params: Vec<String> = task
                .payload
                .iter()
                .map(|(k, v)| match v {
                    PayloadValue::Literal(value) => format!("{k}=L:{value}"),
                    PayloadValue::Ref(r) => {
                        let source = dag
                            .tasks
                            .iter()
                            .find(|t| t.id.ordinal() == r.ordinal)
                            .map(|t| t.toolname.clone())
                            .or_else(|| ctx.prior_tools.get(&r.ordinal).cloned());
                        match source {
                            Some(tool) => format!("{k}=S:{tool}:{key}", key = r.key),
                            None => format!("{k}=U:{side}:{i}"),
                        }
                    }
                })
                .collect();
            params.sort();
            (task.toolname.clone(), params)
        })
        .collect()
}

fn oracle_edges(dag: &PlanDag) -> Vec<(usize, usize)> {
    let position: BTreeMap<u64, usize> = dag
        .tasks
        .iter()
        .enumerate()
        .map(|(i, t)| (t.id.ordinal(), i))
        .collect();
    let mut edges = Vec::new();
    for (i, task) in dag.tasks.iter().enumerate() {
        for dep in &task.dependencies {
            if let Some(&j) = position.get(&dep.ordinal()) {
                if j != i {
                    edges.push((j, i));
                }
            }
        }
    }
    edges.sort();
    edges.dedup();
    edges
}

/// Exhaustive minimum over every injective partial mapping, unit costs.
pub fn oracle_ged(g1: &PlanDag, g2: &PlanDag, ctx: &RefContext) -> f64 {
    let sig1 = oracle_signature(g1, ctx, "a");
    let sig2 = oracle_signature(g2, ctx, "b");
    let eq: Vec<Vec<bool>> = sig1
        .iter()
        .map(|a| {
            sig2.iter()
                .map(|b| !a.1.iter().any(|p| p.contains("=U:")) && a == b)
                .collect()
        })
        .collect();
    let e1 = oracle_edges(g1);
    let e2 = oracle_edges(g2);
    let n1 = g1.len();
    let n2 = g2.len();

    let mut best = f64::INFINITY;
    let mut assignment: Vec<Option<usize>> = vec![None; n1];
    let mut used = vec![false; n2];
    enumerate(
        0,
        n1,
        n2,
        &mut assignment,
        &mut used,
        &mut |assignment: &Vec<Option<usize>>| {
            let mut cost = 0.0;
            let mut image: Vec<Option<usize>> = vec![None; n2];
            for (i, a) in assignment.iter().enumerate() {
                match a {
                    Some(j) => {
                        image[*j] = Some(i);
                        if !eq[i][*j] {
                            cost += 1.0;
                        }
                    }
                    None => cost += 1.0,
                }
            }
            cost += image.iter().filter(|p| p.is_none()).count() as f64;
            for &(a, b) in &e1 {
                let mapped = matches!(
                    (assignment[a], assignment[b]),
                    (Some(x), Some(y)) if e2.contains(&(x, y))
                );
                if !mapped {
                    cost += 1.0;
                }
            }
            for &(x, y) in &e2 {
                let mapped = matches!(
                    (image[x], image[y]),
                    (Some(a), Some(b)) if e1.contains(&(a, b))
                );
                if !mapped {
                    cost += 1.0;
                }
            }
            if cost < best {
                best = cost;
            }
        },
    );
    best
}

fn enumerate(
    i: usize,
    n1: usize,
    n2: usize,
    assignment: &mut Vec<Option<usize>>,
    used: &mut Vec<bool>,
    visit: &mut impl FnMut(&Vec<Option<usize>>),
) {
    if i == n1 {
        visit(assignment);
        return;
    }
    for j in 0..n2 {
        if !used[j] {
            used[j] = true;
            assignment[i] = Some(j);
            enumerate(i + 1, n1, n2, assignment, used, visit);
            used[j] = false;
        }
    }
    assignment[i] = None;
    enumerate(i + 1, n1, n2, assignment, used, visit);
}
