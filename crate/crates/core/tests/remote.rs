use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use tof_core::oracle::{BackendConfig, OracleBackend, OracleError, OracleRequest, RemoteBackend, Sleeper, TemplateRegistry};

#[derive(Default)]
struct Recorded(Mutex<Vec<Duration>>);

impl Sleeper for Recorded {
    fn sleep(&self, d: Duration) {
        self.0.lock().unwrap().push(d);
    }
}

/// Reads one request and returns its body.
fn read_request(stream: &mut TcpStream) -> String {
    let mut reader = BufReader::new(stream);
    let mut length = 0;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        if line == "\r\n" || line.is_empty() {
            break;
        }
        if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
            length = v.trim().parse().unwrap();
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).unwrap();
    String::from_utf8(body).unwrap()
}

fn respond(stream: &mut TcpStream, status: u16, body: &str) {
    let reason = match status {
        200 => "OK",
        401 => "Unauthorized",
        _ => "Service Unavailable",
    };
    write!(
        stream,
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
}

fn completion(text: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
}

/// Serves `script` one response per connection; returns the base URL and
/// the request bodies seen.
fn scripted(script: Vec<(u16, String)>) -> (String, thread::JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let handle = thread::spawn(move || {
        let mut bodies = Vec::new();
        for (status, body) in script {
            let (mut stream, _) = listener.accept().unwrap();
            bodies.push(read_request(&mut stream));
            respond(&mut stream, status, &body);
        }
        bodies
    });
    (url, handle)
}

fn config(url: String) -> BackendConfig {
    BackendConfig {
        base_url: url,
        backoff_base_ms: 200,
        timeout_secs: 5,
        jitter_seed: 9,
        ..Default::default()
    }
}

#[test]
fn retries_server_errors_with_exponential_backoff() {
    let (url, server) = scripted(vec![(503, String::new()), (503, String::new()), (200, completion("travel"))]);
    let sleeper = Arc::new(Recorded::default());
    let backend = RemoteBackend::with_key(config(url), TemplateRegistry::default(), "k").with_sleeper(sleeper.clone());
    let answer = backend.complete(&OracleRequest::domain("book a flight", "sure")).unwrap();
    assert_eq!(answer, "travel");

    let delays = sleeper.0.lock().unwrap().clone();
    assert_eq!(delays.len(), 2);
    for (n, d) in delays.iter().enumerate() {
        let nominal = 200.0 * 2f64.powi(n as i32);
        let ms = d.as_secs_f64() * 1000.0;
        assert!((ms - nominal).abs() <= 0.1 * nominal + 1e-9, "retry {n} waited {ms}ms");
    }

    let bodies = server.join().unwrap();
    assert_eq!(bodies.len(), 3);
    let sent: serde_json::Value = serde_json::from_str(&bodies[0]).unwrap();
    assert_eq!(sent["temperature"], 0.0);
    assert_eq!(sent["max_tokens"], 512);
    assert!(sent["messages"][0]["content"].as_str().unwrap().contains("book a flight"));
}

#[test]
fn gives_up_after_the_retry_budget() {
    let (url, server) = scripted(vec![(503, String::new()); 4]);
    let sleeper = Arc::new(Recorded::default());
    let backend = RemoteBackend::with_key(config(url), TemplateRegistry::default(), "k").with_sleeper(sleeper.clone());
    let err = backend.complete(&OracleRequest::domain("a", "b")).unwrap_err();
    assert!(matches!(err, OracleError::Transport { attempts: 4, .. }), "{err:?}");
    assert_eq!(sleeper.0.lock().unwrap().len(), 3);
    server.join().unwrap();
}

#[test]
fn unauthorized_is_not_retried() {
    let (url, server) = scripted(vec![(401, "{}".into())]);
    let sleeper = Arc::new(Recorded::default());
    let backend = RemoteBackend::with_key(config(url), TemplateRegistry::default(), "bad").with_sleeper(sleeper.clone());
    let err = backend.complete(&OracleRequest::domain("a", "b")).unwrap_err();
    assert!(matches!(err, OracleError::Auth(_)), "{err:?}");
    assert!(sleeper.0.lock().unwrap().is_empty());
    server.join().unwrap();
}

#[test]
fn concurrent_calls_respect_the_in_flight_cap() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let current = Arc::new(AtomicUsize::new(0));
    let peak = Arc::new(AtomicUsize::new(0));
    let calls = 8;
    {
        let (current, peak) = (current.clone(), peak.clone());
        thread::spawn(move || {
            for stream in listener.incoming().take(calls) {
                let mut stream = stream.unwrap();
                let (current, peak) = (current.clone(), peak.clone());
                thread::spawn(move || {
                    read_request(&mut stream);
                    let now = current.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    thread::sleep(Duration::from_millis(60));
                    current.fetch_sub(1, Ordering::SeqCst);
                    respond(&mut stream, 200, &completion("ok"));
                });
            }
        });
    }
    let backend = RemoteBackend::with_key(
        BackendConfig { max_in_flight: 2, ..config(url) },
        TemplateRegistry::default(),
        "k",
    );
    thread::scope(|s| {
        for i in 0..calls {
            let backend = &backend;
            s.spawn(move || {
                let r = backend.complete(&OracleRequest::domain(&format!("q{i}"), "a"));
                assert_eq!(r.unwrap(), "ok");
            });
        }
    });
    let peak = peak.load(Ordering::SeqCst);
    assert!((1..=2).contains(&peak), "peak {peak}");
}
