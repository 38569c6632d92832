//! Remote query generation against a local stub endpoint: canned echo,
//! retry on transient failures, and unavailability after the retry
//! budget.

use std::io::{Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use toolgraph::model::{PlanDag, PlanTask, TaskId};
use toolgraph::query::{generate_query, QueryClient, QueryError, RemoteConfig};

/// Serves canned chat-completion responses; `plan(i)` returns
/// (status line, content) for the i-th request.
fn stub<F>(plan: F) -> (String, Arc<AtomicUsize>)
where
    F: Fn(usize) -> (&'static str, String) + Send + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let hits = Arc::new(AtomicUsize::new(0));
    let hits_thread = Arc::clone(&hits);
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut buf = [0u8; 8192];
            let _ = stream.read(&mut buf);
            let i = hits_thread.fetch_add(1, Ordering::SeqCst);
            let (status, content) = plan(i);
            let body = serde_json::json!({
                "choices": [{"message": {"content": content}}]
            })
            .to_string();
            let response = format!(
                "HTTP/1.1 {status}\r\nContent-Type: application/json\r\n\
                 Content-Length: {}\r\nConnection: close\r\n\r\n{}",
                body.len(),
                body
            );
            let _ = stream.write_all(response.as_bytes());
        }
    });
    (format!("http://{addr}/v1/chat/completions"), hits)
}

fn one_task_plan() -> PlanDag {
    PlanDag::new(vec![PlanTask {
        id: TaskId(2),
        toolname: "weather_get_k1".into(),
        payload: Default::default(),
        dependencies: vec![],
    }])
}

fn remote(url: &str, retries: u32) -> QueryClient {
    QueryClient::Remote(RemoteConfig {
        endpoint_url: url.to_string(),
        model: "stub".into(),
        max_retries: retries,
        initial_backoff_ms: 5,
        ..RemoteConfig::default()
    })
}

#[test]
fn remote_echoes_the_canned_query_verbatim() {
    let (url, _) = stub(|_| ("200 OK", "Fetch me the canned weather, please.".into()));
    let query = generate_query(&one_task_plan(), &[], &[], &remote(&url, 0)).unwrap();
    assert_eq!(query, "Fetch me the canned weather, please.");
}

#[test]
fn transient_failures_are_retried() {
    let (url, hits) = stub(|i| {
        if i < 2 {
            ("500 Internal Server Error", String::new())
        } else {
            ("200 OK", "recovered".into())
        }
    });
    let query = generate_query(&one_task_plan(), &[], &[], &remote(&url, 3)).unwrap();
    assert_eq!(query, "recovered");
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn unavailable_after_retry_budget() {
    let (url, hits) = stub(|_| ("500 Internal Server Error", String::new()));
    let err = generate_query(&one_task_plan(), &[], &[], &remote(&url, 2)).unwrap_err();
    match err {
        QueryError::RemoteUnavailable { attempts, .. } => assert_eq!(attempts, 3),
        other => panic!("unexpected error {other:?}"),
    }
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn dead_endpoint_is_unavailable() {
    let client = remote("http://127.0.0.1:9/unreachable", 1);
    let err = generate_query(&one_task_plan(), &[], &[], &client).unwrap_err();
    assert!(matches!(err, QueryError::RemoteUnavailable { .. }));
}
