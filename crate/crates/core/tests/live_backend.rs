use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::body::{Body, Bytes};
use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use futures::StreamExt;
use parking_lot::Mutex;
use querywise::gateway::{
    collect_text, complete_stream, ChatMessage, ChatRequest, GatewayError, LiveBackend, LiveConfig, LlmBackend,
};
use querywise::service::{Engine, EngineOptions, UnderstandRequest};
use querywise::taxonomy::Taxonomy;
use serde_json::{json, Value};

const NAPLES: &str = r#"{"tool":"route_query","arguments":{"category":"criteria"}} {"tool":"location_tool","arguments":{"place":"Naples"}}"#;

#[derive(Default)]
struct Seen {
    bodies: Vec<Value>,
    auth: Vec<Option<String>>,
}

fn event(delta: &str, finish: Option<&str>) -> String {
    let v = json!({"choices":[{"index":0,"delta":{"content":delta},"finish_reason":finish}]});
    format!("data: {v}\n\n")
}

/// Raw byte pieces as the server writes them, with a pause between each.
fn sse(pieces: Vec<String>, pause_ms: u64) -> Response {
    let stream = futures::stream::iter(pieces).then(move |p| async move {
        tokio::time::sleep(Duration::from_millis(pause_ms)).await;
        Ok::<_, Infallible>(Bytes::from(p))
    });
    Response::builder()
        .header("content-type", "text/event-stream")
        .body(Body::from_stream(stream))
        .unwrap()
}

/// Splits the whole SSE body at awkward byte offsets so events and lines
/// straddle network writes.
fn ragged(body: String, step: usize) -> Vec<String> {
    let bytes = body.into_bytes();
    bytes.chunks(step).map(|c| String::from_utf8_lossy(c).into_owned()).collect()
}

async fn completions(State(seen): State<Arc<Mutex<Seen>>>, headers: HeaderMap, Json(body): Json<Value>) -> Response {
    let user = body["messages"].as_array().and_then(|m| m.last()).and_then(|m| m["content"].as_str()).unwrap_or("").to_string();
    {
        let mut s = seen.lock();
        s.bodies.push(body.clone());
        s.auth.push(headers.get("authorization").map(|v| v.to_str().unwrap().to_string()));
    }
    match user.as_str() {
        "error" => (StatusCode::INTERNAL_SERVER_ERROR, "overloaded").into_response(),
        "stall" => sse(vec![event("{\"tool\":", None), ": keep-alive\n\n".repeat(50)], 400),
        "cut" => sse(vec![event("partial", None)], 0),
        "bad" => sse(vec!["data: {nope\n\n".into()], 0),
        "upstream" => sse(vec!["data: {\"error\":{\"message\":\"quota\"}}\n\n".into()], 0),
        "no-finish" => sse(vec![event("abc", None), "data: [DONE]\n\n".into()], 0),
        _ => {
            let text = if user == "find me a job in Naples" { NAPLES.to_string() } else { user.clone() };
            let mut body = String::from(": comment lines are ignored\n\n");
            let chars: Vec<char> = text.chars().collect();
            for piece in chars.chunks(9) {
                body.push_str(&event(&piece.iter().collect::<String>(), None));
            }
            body.push_str(&event("", Some("stop")));
            body.push_str("data: [DONE]\n\n");
            sse(ragged(body, 37), 1)
        }
    }
}

async fn server() -> (SocketAddr, Arc<Mutex<Seen>>) {
    let seen = Arc::new(Mutex::new(Seen::default()));
    let app = Router::new().route("/v1/chat/completions", post(completions)).with_state(seen.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (addr, seen)
}

fn backend(addr: SocketAddr, key: Option<&str>) -> LiveBackend {
    let config = LiveConfig { api_key: key.map(String::from), ..LiveConfig::new(format!("http://{addr}/v1/"), "tiny-model") };
    LiveBackend::new(config).unwrap()
}

fn request(text: &str, timeout_ms: u64) -> ChatRequest {
    ChatRequest::new(vec![ChatMessage::system("sys"), ChatMessage::user(text)], "", timeout_ms)
}

async fn run(b: &LiveBackend, text: &str, timeout_ms: u64) -> Result<String, GatewayError> {
    let mut s = complete_stream(b, &request(text, timeout_ms));
    collect_text(s.as_mut()).await
}

#[tokio::test]
async fn reassembles_ragged_stream() {
    let (addr, seen) = server().await;
    let b = backend(addr, Some("sekrit"));
    let text = "héllo wörld, a longer reply with 日本語 in it";
    assert_eq!(run(&b, text, 5000).await.unwrap(), text);
    let s = seen.lock();
    assert_eq!(s.bodies[0]["model"], "tiny-model");
    assert_eq!(s.bodies[0]["stream"], true);
    assert_eq!(s.bodies[0]["messages"][0]["role"], "system");
    assert_eq!(s.auth[0].as_deref(), Some("Bearer sekrit"));
}

#[tokio::test]
async fn final_chunk_is_marked() {
    let (addr, _) = server().await;
    let b = backend(addr, None);
    let chunks: Vec<_> = complete_stream(&b, &request("abc", 5000)).collect().await;
    let last = chunks.last().unwrap().as_ref().unwrap();
    assert!(last.finished);
    assert_eq!(last.finish_reason.as_deref(), Some("stop"));
    assert!(chunks[..chunks.len() - 1].iter().all(|c| !c.as_ref().unwrap().finished));

    let chunks: Vec<_> = complete_stream(&b, &request("no-finish", 5000)).collect().await;
    assert!(chunks.last().unwrap().as_ref().unwrap().finished);
}

#[tokio::test]
async fn failures_are_classified() {
    let (addr, _) = server().await;
    let b = backend(addr, None);
    assert!(matches!(run(&b, "error", 5000).await, Err(GatewayError::Transport(_))));
    assert!(matches!(run(&b, "cut", 5000).await, Err(GatewayError::Protocol(_))));
    assert!(matches!(run(&b, "bad", 5000).await, Err(GatewayError::Protocol(_))));
    match run(&b, "upstream", 5000).await {
        Err(GatewayError::Protocol(m)) => assert!(m.contains("quota"), "{m}"),
        other => panic!("{other:?}"),
    }
    let t = tokio::time::Instant::now();
    assert_eq!(run(&b, "stall", 200).await, Err(GatewayError::Timeout { budget_ms: 200 }));
    assert!(t.elapsed() < Duration::from_millis(350));
}

#[tokio::test]
async fn refused_connection_is_transport() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let b = backend(addr, None);
    assert!(matches!(run(&b, "x", 2000).await, Err(GatewayError::Transport(_))));
    assert_eq!(b.name(), "live");
}

#[tokio::test]
async fn engine_over_live_backend() {
    let (addr, _) = server().await;
    let tax = Arc::new(Taxonomy::from_json_str(querywise::service::pipeline::BUNDLED_TAXONOMY).unwrap());
    let engine = Engine::new(Arc::new(backend(addr, None)), tax, EngineOptions { timeout_ms: 5000, ..Default::default() });
    let profile = serde_json::from_value(json!({"location": {"city": "Bay Area", "region": "CA", "country": "US"}})).unwrap();
    let r = engine.understand(&UnderstandRequest::new("find me a job in Naples").with_profile(profile)).await.unwrap();
    assert_eq!(r.tags.len(), 1);
    assert_eq!(serde_json::to_value(&r.tags[0]).unwrap()["value"]["place_id"], "naples-fl-us");
    assert!(r.degraded.is_none());
}
