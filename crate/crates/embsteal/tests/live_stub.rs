use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use embsteal::config::HarvestConfig;
use embsteal::harvest::{harvest, EmbedErrorKind};
use embsteal::live::LiveClient;
use embsteal_core::teacher::{Provider, TeacherSource, TeacherSpec};
use embsteal_core::{Kind, TextRecord};
use serde_json::{json, Value};

#[derive(Debug, Clone)]
struct Seen {
    path: String,
    auth: Option<String>,
    body: Value,
}

/// Serves canned `(status, body)` replies in order, one per request, and
/// records what it received.
fn stub(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        let mut replies = replies.into_iter();
        for stream in listener.incoming() {
            let Ok(stream) = stream else { return };
            if !serve(stream, &mut replies, &log) {
                return;
            }
        }
    });
    (format!("http://{addr}"), seen)
}

fn serve(stream: TcpStream, replies: &mut impl Iterator<Item = (u16, String)>, log: &Mutex<Vec<Seen>>) -> bool {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut out = stream;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return true;
        }
        let path = line.split_whitespace().nth(1).unwrap_or("").to_string();
        let mut len = 0;
        let mut auth = None;
        loop {
            let mut h = String::new();
            reader.read_line(&mut h).unwrap();
            let h = h.trim_end();
            if h.is_empty() {
                break;
            }
            let (k, v) = h.split_once(':').unwrap();
            match k.to_ascii_lowercase().as_str() {
                "content-length" => len = v.trim().parse().unwrap(),
                "authorization" => auth = Some(v.trim().to_string()),
                _ => {}
            }
        }
        let mut body = vec![0; len];
        reader.read_exact(&mut body).unwrap();
        log.lock().unwrap().push(Seen {
            path,
            auth,
            body: serde_json::from_slice(&body).unwrap_or(Value::Null),
        });
        let Some((status, text)) = replies.next() else { return false };
        let resp = format!(
            "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{text}",
            text.len()
        );
        if out.write_all(resp.as_bytes()).is_err() {
            return true;
        }
    }
}

fn client(url: &str, provider: Provider, input_type: bool) -> LiveClient {
    LiveClient::new(url, "m-1", provider, "sekret".into(), input_type, Duration::from_secs(5))
}

#[test]
fn openai_out_of_order_reply_is_reassembled() {
    let reply = json!({"data": [
        {"index": 2, "embedding": [0.0, 0.0, 3.0]},
        {"index": 0, "embedding": [0.999, 0.0, 0.0]},
        {"index": 1, "embedding": [0.0, 2.0, 0.0]},
    ]});
    let (url, seen) = stub(vec![(200, reply.to_string())]);
    let got = client(&url, Provider::OpenAi, false)
        .embed_texts(Kind::Query, &["a", "b", "c"])
        .unwrap();
    for (i, v) in got.iter().enumerate() {
        let n: f64 = v.values().iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
        assert!((v.values()[i] - 1.0).abs() < 1e-12, "vector {i} out of place");
    }
    let s = seen.lock().unwrap();
    assert_eq!(s[0].path, "/v1/embeddings");
    assert_eq!(s[0].auth.as_deref(), Some("Bearer sekret"));
    assert_eq!(s[0].body, json!({"model": "m-1", "input": ["a", "b", "c"]}));
}

#[test]
fn cohere_forwards_input_type_only_when_supported() {
    let reply = json!({"embeddings": [[1.0, 0.0]]}).to_string();
    let (url, seen) = stub(vec![(200, reply.clone()), (200, reply)]);
    client(&url, Provider::Cohere, true).embed_texts(Kind::Passage, &["x"]).unwrap();
    client(&url, Provider::Cohere, false).embed_texts(Kind::Query, &["y"]).unwrap();
    let s = seen.lock().unwrap();
    assert_eq!(s[0].path, "/v1/embed");
    assert_eq!(s[0].body, json!({"model": "m-1", "texts": ["x"], "input_type": "search_document"}));
    assert_eq!(s[1].body, json!({"model": "m-1", "texts": ["y"]}));
}

#[test]
fn error_statuses_map_to_kinds() {
    let (url, _) = stub(vec![
        (401, "{}".into()),
        (429, "{}".into()),
        (200, "{\"data\": 5}".into()),
        (503, "{}".into()),
        (200, json!({"embeddings": [[1.0], [1.0]]}).to_string()),
    ]);
    let kinds: Vec<EmbedErrorKind> = [Provider::OpenAi, Provider::OpenAi, Provider::OpenAi, Provider::OpenAi, Provider::Cohere]
        .into_iter()
        .map(|p| client(&url, p, false).embed_texts(Kind::Query, &["a"]).unwrap_err().kind)
        .collect();
    assert_eq!(
        kinds,
        [
            EmbedErrorKind::Auth,
            EmbedErrorKind::RateLimit,
            EmbedErrorKind::Malformed,
            EmbedErrorKind::Transport,
            EmbedErrorKind::Malformed,
        ]
    );
}

#[test]
fn unreachable_endpoint_is_a_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let e = client(&format!("http://127.0.0.1:{port}"), Provider::OpenAi, false)
        .embed_texts(Kind::Query, &["a"])
        .unwrap_err();
    assert_eq!(e.kind, EmbedErrorKind::Transport);
}

#[test]
fn harvest_retries_rate_limits_against_a_live_stub() {
    let ok = |v: [f64; 2]| json!({"data": [{"index": 0, "embedding": v}]}).to_string();
    let (url, seen) = stub(vec![(429, "{}".into()), (200, ok([1.0, 0.0])), (200, ok([0.0, 1.0]))]);
    let spec = TeacherSpec {
        name: "stub".into(),
        dim: 2,
        max_tokens: 3,
        price_micros_per_million: 130_000,
        input_type: false,
        source: TeacherSource::Live {
            endpoint: url.clone(),
            model: "m-1".into(),
            credentials_env: "UNUSED".into(),
            provider: Provider::OpenAi,
        },
    };
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("stub.embc");
    let records = [TextRecord::query("q1", "one two three four"), TextRecord::passage("p1", "five")];
    let cfg = HarvestConfig {
        batch_size: 8,
        ..HarvestConfig::default()
    };
    let mut sleeps = Vec::new();
    let mut backend = client(&url, Provider::OpenAi, false);
    let m = harvest(&spec, &records, &mut backend, &cache, &cfg, "h", &mut |d| sleeps.push(d)).unwrap();
    assert_eq!(m.embedded, 2);
    assert_eq!(m.retries, 1);
    assert_eq!(m.truncated, ["q1"]);
    assert_eq!(sleeps, [Duration::from_millis(cfg.backoff_ms)]);
    let s = seen.lock().unwrap();
    assert_eq!(s.len(), 3);
    assert_eq!(s[1].body["input"], json!(["one two three"]));
}
