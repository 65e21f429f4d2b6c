//! In-process mock of a next-token server speaking the wire protocol.

#![allow(dead_code)]

use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use multipivot::modelwire::WireQuery;
use serde::Deserialize;
use serde_json::{json, Value};

#[derive(Debug, Clone)]
pub enum Behavior {
    /// Row depends only on the query content.
    Hashed,
    /// Same row for every query.
    Fixed(Vec<f64>),
    /// Hashed, but row `index` gets one entry too many.
    WrongLength { index: usize },
    /// Hashed, but row `index` is scaled so it no longer sums to one.
    Unnormalized { index: usize },
    /// Hashed, with one row too few.
    MissingRow,
    /// First `n` step requests fail with the given status.
    FailFirst { n: usize, status: u16 },
}

pub struct MockState {
    pub protocol: u32,
    pub vocab_size: usize,
    pub behavior: Mutex<Behavior>,
    pub step_requests: AtomicUsize,
    pub meta_requests: AtomicUsize,
    pub bodies: Mutex<Vec<Value>>,
}

pub struct MockServer {
    pub addr: SocketAddr,
    pub state: Arc<MockState>,
}

impl MockServer {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn step_requests(&self) -> usize {
        self.state.step_requests.load(Ordering::SeqCst)
    }

    pub fn set_behavior(&self, b: Behavior) {
        *self.state.behavior.lock().unwrap() = b;
    }
}

fn fnv(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

/// Deterministic distribution for a query, as natural-log probabilities.
pub fn hashed_row(q: &WireQuery, vocab_size: usize) -> Vec<f64> {
    let key = serde_json::to_string(q).unwrap();
    let mut x = fnv(key.as_bytes()) | 1;
    let weights: Vec<f64> = (0..vocab_size)
        .map(|_| {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            0.05 + (x >> 11) as f64 / (1u64 << 53) as f64
        })
        .collect();
    let total: f64 = weights.iter().sum();
    weights.iter().map(|w| (w / total).ln()).collect()
}

#[derive(Deserialize)]
struct StepBody {
    session: String,
    queries: Vec<WireQuery>,
}

async fn meta(State(s): State<Arc<MockState>>) -> Json<Value> {
    s.meta_requests.fetch_add(1, Ordering::SeqCst);
    Json(json!({
        "protocol": s.protocol,
        "vocab_size": s.vocab_size,
        "model": "mock-hashed",
        "languages": ["en", "es", "fr", "src", "tgt"],
    }))
}

async fn step(State(s): State<Arc<MockState>>, Json(raw): Json<Value>) -> Response {
    let n = s.step_requests.fetch_add(1, Ordering::SeqCst);
    s.bodies.lock().unwrap().push(raw.clone());
    let body: StepBody = match serde_json::from_value(raw) {
        Ok(b) => b,
        Err(e) => return (StatusCode::BAD_REQUEST, e.to_string()).into_response(),
    };
    let _ = &body.session;
    let behavior = s.behavior.lock().unwrap().clone();
    let mut rows: Vec<Vec<f64>> = body
        .queries
        .iter()
        .map(|q| hashed_row(q, s.vocab_size))
        .collect();
    match behavior {
        Behavior::Hashed => {}
        Behavior::Fixed(v) => rows.iter_mut().for_each(|r| *r = v.clone()),
        Behavior::WrongLength { index } => {
            if let Some(r) = rows.get_mut(index) {
                r.push(f64::NEG_INFINITY);
            }
        }
        Behavior::Unnormalized { index } => {
            if let Some(r) = rows.get_mut(index) {
                r.iter_mut().for_each(|x| *x += 0.01);
            }
        }
        Behavior::MissingRow => {
            rows.pop();
        }
        Behavior::FailFirst { n: fails, status } => {
            if n < fails {
                let code = StatusCode::from_u16(status).unwrap();
                return (code, "try again").into_response();
            }
        }
    }
    let rows: Vec<Vec<Value>> = rows
        .into_iter()
        .map(|r| {
            r.into_iter()
                .map(|x| {
                    if x == f64::NEG_INFINITY {
                        Value::Null
                    } else {
                        json!(x)
                    }
                })
                .collect()
        })
        .collect();
    Json(json!({ "logprobs": rows })).into_response()
}

/// Starts a server on an ephemeral port; it lives until the process exits.
pub fn spawn(protocol: u32, vocab_size: usize, behavior: Behavior) -> MockServer {
    let state = Arc::new(MockState {
        protocol,
        vocab_size,
        behavior: Mutex::new(behavior),
        step_requests: AtomicUsize::new(0),
        meta_requests: AtomicUsize::new(0),
        bodies: Mutex::new(Vec::new()),
    });
    let app = Router::new()
        .route("/v1/meta", get(meta))
        .route("/v1/step", post(step))
        .with_state(Arc::clone(&state));
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    let addr = rx.recv().unwrap();
    MockServer { addr, state }
}
