use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use watchpost::clock::Timestamp;
use watchpost::reporting::{
    build_prompt, format_args, CaptionError, ConfigArgs, LlmClient, LlmRequest, OllamaClient,
};
use watchpost::{BBox, Detection};

struct Captured {
    request_line: String,
    headers: Vec<String>,
    body: String,
}

/// One-shot HTTP server: records the request, waits `delay`, then replies.
fn serve_once(status: u16, reply: &'static str, delay: Duration) -> (String, mpsc::Receiver<Captured>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut request_line = String::new();
        reader.read_line(&mut request_line).unwrap();
        let mut headers = Vec::new();
        let mut len = 0;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let line = line.trim_end().to_string();
            if line.is_empty() {
                break;
            }
            if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                len = v.trim().parse().unwrap();
            }
            headers.push(line);
        }
        let mut body = vec![0; len];
        reader.read_exact(&mut body).unwrap();
        let _ = tx.send(Captured {
            request_line: request_line.trim_end().to_string(),
            headers,
            body: String::from_utf8(body).unwrap(),
        });
        thread::sleep(delay);
        let mut stream = stream;
        let _ = write!(
            stream,
            "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{reply}",
            reply.len()
        );
    });
    (url, rx)
}

fn golden_request() -> LlmRequest {
    let dets = vec![
        Detection::new(BBox::new(0., 0., 5., 5.).unwrap(), "person", 0.91).unwrap(),
        Detection::new(BBox::new(1., 0., 5., 5.).unwrap(), "car", 0.8).unwrap(),
        Detection::new(BBox::new(2., 0., 5., 5.).unwrap(), "person", 0.6).unwrap(),
    ];
    let args = ConfigArgs::new()
        .with("theta", 0.3)
        .with("labels", vec!["car".to_string(), "person".to_string()])
        .with("conf", 0.25);
    let prompt = build_prompt(
        Path::new("snap_75_1.png"),
        &dets,
        Timestamp(1_767_225_607_500),
        &format_args(&args),
    );
    LlmRequest::new("llama3.2:1b", prompt)
}

#[test]
fn request_matches_golden_body() {
    let golden = std::fs::read_to_string(
        Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/ollama_generate_request.json"),
    )
    .unwrap();
    let (url, rx) = serve_once(200, r#"{"model":"llama3.2:1b","response":"Two people near a car.","done":true}"#, Duration::ZERO);
    let client = OllamaClient::new(url);
    let caption = client
        .generate(&golden_request(), Duration::from_secs(5))
        .unwrap();
    assert_eq!(caption, "Two people near a car.");
    let got = rx.recv().unwrap();
    assert_eq!(got.request_line, "POST /api/generate HTTP/1.1");
    assert!(got
        .headers
        .iter()
        .any(|h| h.eq_ignore_ascii_case("content-type: application/json")));
    assert_eq!(got.body, golden);
    assert_eq!(golden_request().to_json(), golden);
}

#[test]
fn slow_server_times_out_near_deadline() {
    let (url, _rx) = serve_once(200, r#"{"response":"late"}"#, Duration::from_secs(3));
    let client = OllamaClient::new(url);
    let t0 = Instant::now();
    let res = client.generate(&golden_request(), Duration::from_millis(300));
    let took = t0.elapsed();
    assert_eq!(res, Err(CaptionError::Timeout));
    assert!(took < Duration::from_millis(1500), "took {took:?}");
}

#[test]
fn closed_port_is_unavailable() {
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let client = OllamaClient::new(format!("http://127.0.0.1:{port}"));
    let res = client.generate(&golden_request(), Duration::from_secs(2));
    assert!(matches!(res, Err(CaptionError::LlmUnavailable(_))), "{res:?}");
}

#[test]
fn server_error_and_bad_json_are_llm_errors() {
    let (url, _rx) = serve_once(500, r#"{"error":"boom"}"#, Duration::ZERO);
    let res = OllamaClient::new(url).generate(&golden_request(), Duration::from_secs(2));
    assert!(matches!(res, Err(CaptionError::LlmError(_))), "{res:?}");

    let (url, _rx) = serve_once(200, r#"{"done":true}"#, Duration::ZERO);
    let res = OllamaClient::new(url).generate(&golden_request(), Duration::from_secs(2));
    assert!(matches!(res, Err(CaptionError::LlmError(_))), "{res:?}");

    let (url, _rx) = serve_once(200, r#"{"response":""}"#, Duration::ZERO);
    let res = OllamaClient::new(url).generate(&golden_request(), Duration::from_secs(2));
    assert_eq!(res, Err(CaptionError::EmptyCaption));
}
