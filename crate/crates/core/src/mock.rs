//! Scripted stand-in for an embedding service, for tests.
//!
//! Speaks just enough HTTP/1.1 for one request per connection. Replies are
//! taken from a script in arrival order; once the script runs out every
//! request succeeds. A successful reply embeds text `t` as
//! `[chars(t), 1.0]`, or `[x, 1.0]` when `t` parses as a number `x`.

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};

#[derive(Debug, Clone)]
pub enum Reply {
    Ok,
    /// Respond with this status and an empty JSON object.
    Status(u16),
    /// Respond 200 with one embedding fewer than requested.
    DropOne,
    /// Wait before answering normally.
    Delay(Duration),
}

#[derive(Debug, Clone)]
pub struct RecordedRequest {
    pub texts: Vec<String>,
    pub model: String,
    pub task: String,
    pub authorization: Option<String>,
}

#[derive(Default)]
struct State {
    script: VecDeque<Reply>,
    requests: Vec<RecordedRequest>,
}

pub struct MockEmbeddingServer {
    addr: SocketAddr,
    state: Arc<Mutex<State>>,
}

impl MockEmbeddingServer {
    pub fn start(script: Vec<Reply>) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let state = Arc::new(Mutex::new(State {
            script: script.into(),
            requests: Vec::new(),
        }));
        let shared = Arc::clone(&state);
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let shared = Arc::clone(&shared);
                thread::spawn(move || {
                    let _ = handle(stream, &shared);
                });
            }
        });
        Ok(MockEmbeddingServer { addr, state })
    }

    pub fn url(&self) -> String {
        format!("http://{}/embed", self.addr)
    }

    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.state.lock().unwrap().requests.clone()
    }

    pub fn request_sizes(&self) -> Vec<usize> {
        self.requests().iter().map(|r| r.texts.len()).collect()
    }
}

fn embed_text(t: &str) -> Value {
    let x = t.trim().parse::<f64>().unwrap_or(t.chars().count() as f64);
    json!([x, 1.0])
}

fn handle(stream: TcpStream, state: &Mutex<State>) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let mut content_length = 0usize;
    let mut authorization = None;
    loop {
        line.clear();
        reader.read_line(&mut line)?;
        let header = line.trim_end();
        if header.is_empty() {
            break;
        }
        if let Some((name, value)) = header.split_once(':') {
            match name.trim().to_ascii_lowercase().as_str() {
                "content-length" => content_length = value.trim().parse().unwrap_or(0),
                "authorization" => authorization = Some(value.trim().to_string()),
                _ => {}
            }
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;
    let req: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
    let texts: Vec<String> = req["texts"]
        .as_array()
        .map(|a| a.iter().map(|t| t.as_str().unwrap_or_default().to_string()).collect())
        .unwrap_or_default();

    let reply = {
        let mut s = state.lock().unwrap();
        s.requests.push(RecordedRequest {
            texts: texts.clone(),
            model: req["model"].as_str().unwrap_or_default().to_string(),
            task: req["task"].as_str().unwrap_or_default().to_string(),
            authorization,
        });
        s.script.pop_front().unwrap_or(Reply::Ok)
    };

    let (status, payload) = match reply {
        Reply::Status(code) => (code, json!({})),
        Reply::DropOne => {
            let mut e: Vec<Value> = texts.iter().map(|t| embed_text(t)).collect();
            e.pop();
            (200, json!({ "embeddings": e }))
        }
        Reply::Delay(d) => {
            thread::sleep(d);
            (200, json!({ "embeddings": texts.iter().map(|t| embed_text(t)).collect::<Vec<_>>() }))
        }
        Reply::Ok => (200, json!({ "embeddings": texts.iter().map(|t| embed_text(t)).collect::<Vec<_>>() })),
    };
    let payload = payload.to_string();
    let mut stream = stream;
    write!(
        stream,
        "HTTP/1.1 {status} Mock\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    )?;
    stream.flush()
}
