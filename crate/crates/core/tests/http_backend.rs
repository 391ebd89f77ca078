//! Wire-level tests for the chat-completions client against a local
//! single-threaded HTTP stub.

use std::io::{Read, Write};
use std::net::TcpListener;
use std::thread::JoinHandle;
use std::time::Duration;

use synthsurv::gateway::{GatewayError, HttpBackend, ModelConfig};

fn chat_body(content: &str) -> String {
    format!(r#"{{"choices":[{{"message":{{"role":"assistant","content":"{content}"}}}}]}}"#)
}

/// Serves one canned response per (status, body) pair, then exits.
fn serve(responses: Vec<(u16, String)>) -> (String, JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let endpoint = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let handle = std::thread::spawn(move || {
        let mut requests = Vec::new();
        for (status, body) in responses {
            let (mut stream, _) = listener.accept().unwrap();
            stream.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
            let mut raw = Vec::new();
            let mut buf = [0u8; 4096];
            let (mut header_end, mut content_length) = (None, 0usize);
            loop {
                let n = stream.read(&mut buf).unwrap();
                if n == 0 {
                    break;
                }
                raw.extend_from_slice(&buf[..n]);
                if header_end.is_none() {
                    if let Some(pos) = raw.windows(4).position(|w| w == b"\r\n\r\n") {
                        header_end = Some(pos + 4);
                        let head = String::from_utf8_lossy(&raw[..pos]).to_lowercase();
                        content_length = head
                            .lines()
                            .find_map(|l| l.strip_prefix("content-length:"))
                            .and_then(|v| v.trim().parse().ok())
                            .unwrap_or(0);
                    }
                }
                if let Some(he) = header_end {
                    if raw.len() >= he + content_length {
                        break;
                    }
                }
            }
            requests.push(String::from_utf8_lossy(&raw).into_owned());
            let reason = match status {
                200 => "OK",
                429 => "Too Many Requests",
                _ => "Error",
            };
            let response = format!(
                "HTTP/1.1 {status} {reason}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(response.as_bytes()).unwrap();
        }
        requests
    });
    (endpoint, handle)
}

fn test_config(endpoint: String) -> ModelConfig {
    let mut config = ModelConfig::new("test-model", endpoint);
    config.max_retries = 2;
    config.backoff_base = Duration::from_millis(1);
    config.timeout = Duration::from_secs(5);
    config
}

#[test]
fn retries_rate_limit_then_succeeds() {
    let (endpoint, server) = serve(vec![
        (429, "{}".into()),
        (200, chat_body("risen by 9-10%")),
    ]);
    let backend = HttpBackend::new(test_config(endpoint)).unwrap();
    let exchange = backend.complete("system text", "user text").unwrap();
    assert_eq!(exchange.reply_text, "risen by 9-10%");
    assert_eq!(exchange.attempt_count, 2);
    let requests = server.join().unwrap();
    assert_eq!(requests.len(), 2);
    assert!(requests[0].contains("\"model\":\"test-model\""));
    assert!(requests[0].contains("user text"));
}

#[test]
fn gives_up_after_max_retries_on_server_errors() {
    let (endpoint, server) = serve(vec![
        (500, "{}".into()),
        (500, "{}".into()),
        (500, "{}".into()),
    ]);
    let backend = HttpBackend::new(test_config(endpoint)).unwrap();
    let err = backend.complete("s", "u").unwrap_err();
    match err {
        GatewayError::HttpStatus { status, attempts } => {
            assert_eq!(status, 500);
            assert_eq!(attempts, 3);
        }
        other => panic!("unexpected error: {other}"),
    }
    assert_eq!(server.join().unwrap().len(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let (endpoint, server) = serve(vec![(401, "{}".into())]);
    let backend = HttpBackend::new(test_config(endpoint)).unwrap();
    let err = backend.complete("s", "u").unwrap_err();
    match err {
        GatewayError::HttpStatus { status, attempts } => {
            assert_eq!(status, 401);
            assert_eq!(attempts, 1);
        }
        other => panic!("unexpected error: {other}"),
    }
    assert_eq!(server.join().unwrap().len(), 1);
}

#[test]
fn malformed_body_is_reported() {
    let (endpoint, server) = serve(vec![(200, r#"{"choices":[]}"#.into())]);
    let backend = HttpBackend::new(test_config(endpoint)).unwrap();
    let err = backend.complete("s", "u").unwrap_err();
    assert!(matches!(err, GatewayError::MalformedBody(_)), "{err}");
    server.join().unwrap();
}
