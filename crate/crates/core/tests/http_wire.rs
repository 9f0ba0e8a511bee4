use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::time::Duration;

use listrank::backend::{BackendConfig, BackendErrorKind, ChatMessage, ChatRequest, Gateway, HttpBackend, Usage};

struct Captured {
    headers: Vec<(String, String)>,
    body: serde_json::Value,
}

impl Captured {
    fn header(&self, name: &str) -> Option<&str> {
        self.headers.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str())
    }
}

/// Serves one scripted (status, body) reply per connection, in order.
fn scripted(replies: Vec<(u16, String)>) -> (String, mpsc::Receiver<Captured>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        let mut replies = replies.into_iter();
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            let Some((status, reply)) = replies.next() else { break };
            let mut reader = BufReader::new(stream);
            let mut headers = Vec::new();
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap() == 0 || line == "\r\n" {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    headers.push((k.trim().to_ascii_lowercase(), v.trim().to_string()));
                }
            }
            let length: usize = headers
                .iter()
                .find(|(k, _)| k == "content-length")
                .map_or(0, |(_, v)| v.parse().unwrap());
            let mut body = vec![0; length];
            reader.read_exact(&mut body).unwrap();
            let _ = tx.send(Captured {
                headers,
                body: serde_json::from_slice(&body).unwrap_or_default(),
            });
            let mut stream = reader.into_inner();
            let _ = write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            );
        }
    });
    (url, rx)
}

fn ok_body(content: &str) -> String {
    serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": content}}],
        "usage": {"prompt_tokens": 42, "completion_tokens": 7}
    })
    .to_string()
}

fn config(url: &str) -> BackendConfig {
    BackendConfig {
        endpoint: url.into(),
        model: "ranker-x".into(),
        temperature: 0.6,
        max_tokens: 512,
        timeout_secs: 10.0,
        retries: 2,
        backoff_base_ms: 1,
        concurrency: 1,
    }
}

fn request() -> ChatRequest {
    ChatRequest::new(
        "r1",
        vec![ChatMessage::system("sys"), ChatMessage::user("rank [1] a [2] b"), ChatMessage::assistant("ok")],
    )
}

#[test]
fn request_shape_auth_and_usage() {
    let (url, rx) = scripted(vec![(200, ok_body("<think>t</think><answer>[2] > [1]</answer>"))]);
    let cfg = config(&url);
    let gw = Gateway::from_config(HttpBackend::with_api_key(&cfg, Some("sekret".into())), &cfg);
    let done = gw.complete(&request()).unwrap();
    assert_eq!(done.attempts, 1);
    assert_eq!(done.response.text, "<think>t</think><answer>[2] > [1]</answer>");
    assert_eq!(done.response.usage, Some(Usage { prompt_tokens: 42, completion_tokens: 7 }));

    let seen = rx.recv_timeout(Duration::from_secs(5)).unwrap();
    assert_eq!(seen.header("authorization"), Some("Bearer sekret"));
    assert!(seen.header("content-type").unwrap().starts_with("application/json"));
    let b = &seen.body;
    assert_eq!(b["model"], "ranker-x");
    assert_eq!(b["temperature"], 0.6);
    assert_eq!(b["max_tokens"], 512);
    let roles: Vec<&str> = b["messages"].as_array().unwrap().iter().map(|m| m["role"].as_str().unwrap()).collect();
    assert_eq!(roles, ["system", "user", "assistant"]);
    assert_eq!(b["messages"][1]["content"], "rank [1] a [2] b");
}

#[test]
fn no_key_no_header() {
    let (url, rx) = scripted(vec![(200, ok_body("x"))]);
    let cfg = config(&url);
    let gw = Gateway::from_config(HttpBackend::with_api_key(&cfg, None), &cfg);
    gw.complete(&request()).unwrap();
    assert!(rx.recv_timeout(Duration::from_secs(5)).unwrap().header("authorization").is_none());
}

#[test]
fn rate_limit_and_server_errors_are_retried() {
    let (url, rx) = scripted(vec![
        (429, "slow down".into()),
        (500, "boom".into()),
        (200, ok_body("fine")),
    ]);
    let cfg = config(&url);
    let gw = Gateway::from_config(HttpBackend::with_api_key(&cfg, None), &cfg);
    let done = gw.complete(&request()).unwrap();
    assert_eq!(done.attempts, 3);
    assert_eq!(done.response.text, "fine");
    assert_eq!(rx.try_iter().count(), 3);
}

#[test]
fn client_error_is_terminal() {
    let (url, rx) = scripted(vec![(400, "bad request".into()), (200, ok_body("never"))]);
    let cfg = config(&url);
    let gw = Gateway::from_config(HttpBackend::with_api_key(&cfg, None), &cfg);
    let err = gw.complete(&request()).unwrap_err();
    assert_eq!(err.kind, BackendErrorKind::Status(400));
    assert!(err.to_string().contains("bad request"), "{err}");
    assert_eq!(err.attempts, 1);
    std::thread::sleep(Duration::from_millis(50));
    assert_eq!(rx.try_iter().count(), 1);
}

#[test]
fn retries_exhausted_reports_last_error() {
    let (url, _rx) = scripted(vec![(503, "a".into()), (503, "b".into()), (503, "c".into())]);
    let cfg = config(&url);
    let gw = Gateway::from_config(HttpBackend::with_api_key(&cfg, None), &cfg);
    let err = gw.complete(&request()).unwrap_err();
    assert_eq!(err.kind, BackendErrorKind::Status(503));
    assert_eq!(err.attempts, 3);
}

#[test]
fn malformed_body_is_protocol_error() {
    let (url, _rx) = scripted(vec![(200, "{\"choices\": []}".into())]);
    let mut cfg = config(&url);
    cfg.retries = 0;
    let gw = Gateway::from_config(HttpBackend::with_api_key(&cfg, None), &cfg);
    let err = gw.complete(&request()).unwrap_err();
    assert_eq!(err.kind, BackendErrorKind::Protocol);
}

#[test]
fn unreachable_endpoint_is_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut cfg = config(&format!("http://127.0.0.1:{port}/v1/chat/completions"));
    cfg.retries = 1;
    let gw = Gateway::from_config(HttpBackend::with_api_key(&cfg, None), &cfg);
    let err = gw.complete(&request()).unwrap_err();
    assert_eq!(err.kind, BackendErrorKind::Transport);
}
