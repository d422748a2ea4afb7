use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use prompt_logic::backend::{ApiConfig, Backend, BackendError, CompletionRequest, ConfigError, LiveBackend, RetryPolicy};

#[derive(Clone, Copy)]
enum Reply {
    Ok,
    Status(u16),
    Hang,
}

struct Stub {
    url: String,
    hits: Arc<AtomicUsize>,
    bodies: Arc<Mutex<Vec<String>>>,
}

fn read_request(stream: &mut TcpStream) -> String {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut len = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
            break;
        }
        let lower = line.to_ascii_lowercase();
        if let Some(v) = lower.strip_prefix("content-length:") {
            len = v.trim().parse().unwrap_or(0);
        }
    }
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body).unwrap();
    String::from_utf8(body).unwrap()
}

fn serve(script: Vec<Reply>) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let bodies = Arc::new(Mutex::new(Vec::new()));
    let (h, b) = (hits.clone(), bodies.clone());
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let n = h.fetch_add(1, Ordering::SeqCst);
            let reply = script.get(n).copied().unwrap_or(Reply::Status(500));
            let b = b.clone();
            std::thread::spawn(move || {
                let body = read_request(&mut stream);
                b.lock().unwrap().push(body);
                let (status, payload) = match reply {
                    Reply::Ok => (200, r#"{"choices":[{"message":{"content":"stub reply"}}]}"#.to_string()),
                    Reply::Status(s) => (s, r#"{"error":"stub"}"#.to_string()),
                    Reply::Hang => {
                        std::thread::sleep(Duration::from_secs(3));
                        return;
                    }
                };
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status} Stub\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                    payload.len()
                );
            });
        }
    });
    Stub { url, hits, bodies }
}

fn backend(stub: &Stub) -> LiveBackend {
    let config = ApiConfig { base_url: stub.url.clone(), api_key: Some("test-key".into()), ..ApiConfig::default() };
    let retry = RetryPolicy {
        max_retries: 3,
        base_delay: Duration::from_millis(10),
        request_timeout: Duration::from_millis(300),
    };
    LiveBackend::new(&config, retry).unwrap()
}

fn request() -> CompletionRequest {
    CompletionRequest::new("system", "user prompt", "gpt-4")
}

#[test]
fn success_returns_message_content() {
    let stub = serve(vec![Reply::Ok]);
    let b = backend(&stub);
    let resp = b.complete(&request()).unwrap();
    assert_eq!(resp.text, "stub reply");
    assert_eq!(b.network_calls(), 1);
    let body: serde_json::Value = serde_json::from_str(&stub.bodies.lock().unwrap()[0]).unwrap();
    assert_eq!(body["model"], "gpt-4");
    assert_eq!(body["messages"][1]["content"], "user prompt");
    assert_eq!(body["temperature"], 0.0);
}

#[test]
fn unauthorized_is_not_retried() {
    let stub = serve(vec![Reply::Status(401), Reply::Ok]);
    let b = backend(&stub);
    let err = b.complete(&request()).unwrap_err();
    assert!(matches!(err, BackendError::Authentication { status: 401, .. }), "{err}");
    assert_eq!(stub.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn rate_limit_then_success() {
    let stub = serve(vec![Reply::Status(429), Reply::Ok]);
    let b = backend(&stub);
    assert_eq!(b.complete(&request()).unwrap().text, "stub reply");
    assert_eq!(stub.hits.load(Ordering::SeqCst), 2);
    assert_eq!(b.calls(), 1);
}

#[test]
fn rate_limit_exhaustion_after_four_attempts() {
    let stub = serve(vec![Reply::Status(429); 10]);
    let b = backend(&stub);
    let err = b.complete(&request()).unwrap_err();
    assert!(matches!(err, BackendError::RateLimitExhausted { attempts: 4 }), "{err}");
    assert_eq!(stub.hits.load(Ordering::SeqCst), 4);
}

#[test]
fn server_error_is_not_retried() {
    let stub = serve(vec![Reply::Status(500), Reply::Ok]);
    let b = backend(&stub);
    assert!(matches!(b.complete(&request()).unwrap_err(), BackendError::Http { status: 500, .. }));
    assert_eq!(stub.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn timeout_is_retried_then_reported() {
    let stub = serve(vec![Reply::Hang; 4]);
    let b = backend(&stub);
    let err = b.complete(&request()).unwrap_err();
    assert!(matches!(err, BackendError::Timeout { attempts: 4 }), "{err}");
}

#[test]
fn timeout_then_success() {
    let stub = serve(vec![Reply::Hang, Reply::Ok]);
    let b = backend(&stub);
    assert_eq!(b.complete(&request()).unwrap().text, "stub reply");
}

#[test]
fn missing_credential_sends_nothing() {
    let stub = serve(vec![Reply::Ok]);
    let config = ApiConfig { base_url: stub.url.clone(), api_key: None, ..ApiConfig::default() };
    assert!(matches!(LiveBackend::new(&config, RetryPolicy::default()), Err(ConfigError::MissingCredential)));
    std::thread::sleep(Duration::from_millis(50));
    assert_eq!(stub.hits.load(Ordering::SeqCst), 0);
}

#[test]
fn invalid_request_sends_nothing() {
    let stub = serve(vec![Reply::Ok]);
    let b = backend(&stub);
    let mut req = request();
    req.temperature = 5.0;
    assert!(matches!(b.complete(&req).unwrap_err(), BackendError::InvalidRequest(_)));
    assert_eq!(b.network_calls(), 0);
}
