#![allow(dead_code)]

use std::collections::VecDeque;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

use softbody_server::server::{bind, ServerConfig};

pub fn testdata(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../testdata").join(name)
}

pub async fn start_server(config: ServerConfig) -> SocketAddr {
    let (addr, serving) = bind(ServerConfig { port: 0, ..config }).await.unwrap();
    tokio::spawn(serving);
    addr
}

pub struct Client {
    ws: WebSocketStream<MaybeTlsStream<TcpStream>>,
    /// Messages read while waiting for something else.
    pub backlog: VecDeque<Value>,
    next_id: u64,
}

impl Client {
    /// Connect and return the client with the greeting `catalog` message.
    pub async fn connect(addr: SocketAddr) -> (Client, Value) {
        let (ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/ws")).await.unwrap();
        let mut c = Client { ws, backlog: VecDeque::new(), next_id: 0 };
        let first = c.read().await.expect("greeting");
        (c, first)
    }

    pub async fn send_text(&mut self, text: &str) {
        self.ws.send(Message::Text(text.into())).await.unwrap();
    }

    async fn read(&mut self) -> Option<Value> {
        loop {
            match tokio::time::timeout(Duration::from_secs(10), self.ws.next()).await.ok()?? {
                Ok(Message::Text(t)) => return Some(serde_json::from_str(&t).unwrap()),
                Ok(Message::Close(_)) | Err(_) => return None,
                Ok(_) => continue,
            }
        }
    }

    /// Next message carrying `request_id`, keeping everything else.
    pub async fn reply_to(&mut self, id: &str) -> Value {
        if let Some(pos) = self.backlog.iter().position(|m| m["request_id"] == id) {
            return self.backlog.remove(pos).unwrap();
        }
        loop {
            let m = self.read().await.expect("connection closed while waiting for a reply");
            if m["request_id"] == id {
                return m;
            }
            self.backlog.push_back(m);
        }
    }

    /// Send `msg` with a fresh request id and wait for its reply.
    pub async fn request(&mut self, mut msg: Value) -> Value {
        self.next_id += 1;
        let id = format!("r{}", self.next_id);
        msg["request_id"] = json!(id);
        self.send_text(&msg.to_string()).await;
        self.reply_to(&id).await
    }

    /// Reply payload of a request that must succeed.
    pub async fn ok(&mut self, msg: Value) -> Value {
        let r = self.request(msg.clone()).await;
        assert_eq!(r["type"], "ack", "{msg} -> {r}");
        r
    }

    /// Error code of a request that must fail.
    pub async fn fails(&mut self, msg: Value) -> String {
        let r = self.request(msg.clone()).await;
        assert_eq!(r["type"], "error", "{msg} -> {r}");
        r["code"].as_str().unwrap().to_string()
    }

    /// Next message of type `ty`, or `None` after `wait`.
    pub async fn next_of(&mut self, ty: &str, wait: Duration) -> Option<Value> {
        if let Some(pos) = self.backlog.iter().position(|m| m["type"] == ty) {
            return self.backlog.remove(pos);
        }
        let deadline = tokio::time::Instant::now() + wait;
        loop {
            let m = tokio::time::timeout_at(deadline, self.read()).await.ok()??;
            if m["type"] == ty {
                return Some(m);
            }
            self.backlog.push_back(m);
        }
    }

    /// Every frame arriving within `wait`, in order.
    pub async fn frames_for(&mut self, wait: Duration) -> Vec<Value> {
        let mut out: Vec<Value> = Vec::new();
        let keep: VecDeque<Value> = std::mem::take(&mut self.backlog);
        for m in keep {
            if m["type"] == "frame" {
                out.push(m);
            } else {
                self.backlog.push_back(m);
            }
        }
        let deadline = tokio::time::Instant::now() + wait;
        while let Ok(Some(m)) = tokio::time::timeout_at(deadline, self.read()).await {
            if m["type"] == "frame" {
                out.push(m);
            } else {
                self.backlog.push_back(m);
            }
        }
        out
    }

    pub fn drop_frames(&mut self) {
        self.backlog.retain(|m| m["type"] != "frame");
    }

    pub async fn close(mut self) {
        let _ = self.ws.close(None).await;
    }
}

/// `expected` must be contained in `actual`: objects match key by key,
/// the string "*" matches any present value, other values must be equal.
pub fn matches(expected: &Value, actual: &Value) -> bool {
    match (expected, actual) {
        (Value::String(s), _) if s == "*" => !actual.is_null(),
        (Value::Object(e), Value::Object(a)) => {
            e.iter().all(|(k, v)| a.get(k).is_some_and(|av| matches(v, av)))
        }
        (Value::Array(e), Value::Array(a)) => {
            e.len() == a.len() && e.iter().zip(a).all(|(x, y)| matches(x, y))
        }
        (Value::Number(e), Value::Number(a)) => {
            (e.as_f64().unwrap() - a.as_f64().unwrap()).abs() <= 1e-12 * e.as_f64().unwrap().abs().max(1.0)
        }
        _ => expected == actual,
    }
}

/// Replace `"@name"` strings with the contents of `testdata/name`.
pub fn inline_files(v: &mut Value) {
    match v {
        Value::String(s) if s.starts_with('@') => {
            *s = std::fs::read_to_string(testdata(&s[1..])).unwrap();
        }
        Value::Object(m) => m.values_mut().for_each(inline_files),
        Value::Array(a) => a.iter_mut().for_each(inline_files),
        _ => {}
    }
}

pub struct GoldenOutcome {
    pub failures: Vec<String>,
    pub sent_types: Vec<String>,
    pub error_codes: Vec<String>,
}

/// Replay `testdata/protocol/golden.json` against a fresh server.
pub async fn replay_golden() -> GoldenOutcome {
    let text = std::fs::read_to_string(testdata("protocol/golden.json")).unwrap();
    let cases: Vec<Value> = serde_json::from_str(&text).unwrap();
    let addr = start_server(ServerConfig::default()).await;
    let (mut c, _) = Client::connect(addr).await;
    let mut out = GoldenOutcome { failures: Vec::new(), sent_types: Vec::new(), error_codes: Vec::new() };
    for (n, case) in cases.iter().enumerate() {
        let mut send = case["send"].clone();
        inline_files(&mut send);
        let id = format!("g{n}");
        let reply = match &send {
            Value::String(raw) => {
                c.send_text(raw).await;
                c.next_of("error", Duration::from_secs(5)).await.unwrap_or(Value::Null)
            }
            _ => {
                if let Some(t) = send["type"].as_str() {
                    out.sent_types.push(t.to_string());
                }
                send["request_id"] = json!(id);
                c.send_text(&send.to_string()).await;
                c.reply_to(&id).await
            }
        };
        c.drop_frames();
        if reply["type"] == "error" {
            out.error_codes.push(reply["code"].as_str().unwrap_or_default().to_string());
        }
        if !matches(&case["expect"], &reply) {
            out.failures.push(format!(
                "{}: expected {} got {}",
                case["name"].as_str().unwrap_or("?"),
                case["expect"],
                reply
            ));
        }
    }
    c.close().await;
    out
}

pub const DISPATCH_TYPES: &[&str] = softbody_server::protocol::REQUEST_TYPES;

/// Error codes the protocol suite must reach.
pub const REACHABLE_CODES: &[&str] = &[
    "WRONG_STATUS",
    "INVALID_PARAMS",
    "UNKNOWN_ALGORITHM",
    "SAME_ALGORITHM",
    "PLAYBACK_IMMUTABLE",
    "UNKNOWN_PARTICLE",
    "EMPTY_SERIES",
    "END_OF_SERIES",
    "NOT_RECORDING",
    "NONFINITE_STATE",
    "NOT_ENCLOSED",
    "SAME_OBJECT",
    "SCHEMA_MISMATCH",
    "CORRUPT_DOCUMENT",
    "INVARIANT_VIOLATION",
    "UNKNOWN_INSTANCE",
    "UNKNOWN_TYPE",
    "PARSE",
    "INSTANCE_LIMIT",
];
