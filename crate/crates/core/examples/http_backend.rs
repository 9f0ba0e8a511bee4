//! Talks to a chat-completion endpoint over HTTP.
//!
//! With no argument a throwaway local server stands in for the endpoint and
//! answers every request with a reversed ranking. Pass a URL to use a real
//! server instead; the key is read from RERANK_API_KEY.
//!
//! cargo run --example http_backend -- http://localhost:8000/v1/chat/completions

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;

use listrank::backend::{BackendConfig, ChatMessage, ChatRequest, Gateway, HttpBackend};
use listrank::ranking::{parse_ranking, parse_response_for_window};
use listrank::window::{Reranker, WindowParams};
use listrank::harness::synthetic_bundle;

fn serve_locally() -> std::io::Result<String> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let url = format!("http://{}/v1/chat/completions", listener.local_addr()?);
    std::thread::spawn(move || {
        for stream in listener.incoming().flatten() {
            let mut reader = BufReader::new(stream);
            let mut length = 0;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap_or(0);
                }
            }
            let mut body = vec![0; length];
            if reader.read_exact(&mut body).is_err() {
                continue;
            }
            let request: serde_json::Value = serde_json::from_slice(&body).unwrap_or_default();
            let prompt = request["messages"][0]["content"].as_str().unwrap_or("");
            let m = prompt.lines().filter(|l| l.starts_with('[')).count().max(1);
            let ranking: Vec<String> = (1..=m).rev().map(|i| format!("[{i}]")).collect();
            let reply = serde_json::json!({
                "choices": [{"message": {"role": "assistant",
                    "content": format!("<think>later passages look better</think><answer>{}</answer>", ranking.join(" > "))}}],
                "usage": {"prompt_tokens": prompt.len() / 4, "completion_tokens": 5 * m}
            })
            .to_string();
            let mut stream = reader.into_inner();
            let _ = write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            );
        }
    });
    Ok(url)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let endpoint = match std::env::args().nth(1) {
        Some(url) => url,
        None => serve_locally()?,
    };
    let config = BackendConfig {
        endpoint: endpoint.clone(),
        timeout_secs: 30.0,
        concurrency: 2,
        ..BackendConfig::default()
    };
    let gateway = Gateway::from_config(HttpBackend::new(&config), &config);
    println!("endpoint {endpoint}");

    let request = ChatRequest::new(
        "probe",
        vec![ChatMessage::user(
            "Rank the passages.\n[1] alpha\n[2] beta\n[3] gamma\nAnswer with <think></think><answer>[] > []</answer>.",
        )],
    );
    let done = gateway.complete(&request)?;
    let parsed = parse_response_for_window(&done.response.text, 3);
    let ids: Vec<String> = ["alpha", "beta", "gamma"].iter().map(|s| s.to_string()).collect();
    let (ranking, _) = parse_ranking(parsed.answer.as_deref().unwrap_or(""), &ids);
    println!(
        "probe: status={} ranking={:?} latency={:?} usage={:?}",
        parsed.format_status,
        ranking.ids(),
        done.response.latency,
        done.response.usage
    );

    let bundle = synthetic_bundle(1, 40, 4);
    let (qid, candidates) = bundle.run.iter().next().expect("one query");
    let reranker = Reranker::new(&gateway, WindowParams::default())?;
    let (list, trace) = reranker.rerank_query(&bundle.queries[qid], candidates, &bundle.corpus)?;
    println!(
        "rerank {qid}: {} windows, {} output tokens, top 3 {:?}",
        trace.calls(),
        trace.completion_tokens().unwrap_or(0),
        &list.ids()[..3]
    );
    Ok(())
}
