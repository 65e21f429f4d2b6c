//! HTTP client for remote next-token servers.
//!
//! Protocol version 1:
//!
//! * `GET {base}/v1/meta` returns
//!   `{"protocol": 1, "vocab_size": int, "model": str, "languages": [str]}`.
//! * `POST {base}/v1/step` with
//!   `{"session": str, "queries": [{"src_lang", "tgt_lang", "source_tokens": [int] | null,
//!   "source_text": str | null, "prefix_tokens": [int]}]}` returns
//!   `{"logprobs": [[float, ...], ...]}`, natural logs, one row per query in
//!   query order. `null` entries are read as negative infinity.
//!
//! Every row must have `vocab_size` entries and a log-sum-exp within `1e-4`
//! of zero; accepted rows are renormalized exactly. Transport errors, 5xx and
//! 429 responses are retried; the step request is a pure function of its body,
//! so a retry returns the same rows.

use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::decoder::{Scorer, StepQuery};
use crate::error::{Error, Result};
use crate::types::{StepDistribution, TokenId};

pub const PROTOCOL_VERSION: u32 = 1;
/// Accepted distance of a received row's log-sum-exp from zero.
pub const WIRE_TOLERANCE: f64 = 1e-4;
/// Fallback for the endpoint URL when none is configured.
pub const ENDPOINT_ENV: &str = "MULTIPIVOT_ENDPOINT";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub base_url: String,
    pub timeout_ms: u64,
    pub max_batch: usize,
    pub retries: u32,
    pub session: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bearer_token: Option<String>,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: String::new(),
            timeout_ms: 30_000,
            max_batch: 64,
            retries: 2,
            session: "default".into(),
            bearer_token: None,
        }
    }
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        EndpointConfig {
            base_url: base_url.into(),
            ..Default::default()
        }
    }

    /// Fills an empty `base_url` from the environment.
    pub fn with_env_fallback(mut self) -> Self {
        if self.base_url.is_empty() {
            if let Ok(url) = std::env::var(ENDPOINT_ENV) {
                self.base_url = url;
            }
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_url.is_empty() {
            return Err(Error::Config(format!(
                "no endpoint URL (set base_url or {ENDPOINT_ENV})"
            )));
        }
        if self.timeout_ms == 0 {
            return Err(Error::Config("timeout_ms must be positive".into()));
        }
        if self.max_batch == 0 {
            return Err(Error::Config("max_batch must be at least 1".into()));
        }
        Ok(())
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base_url.trim_end_matches('/'), path)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub protocol: u32,
    pub vocab_size: usize,
    pub model: String,
    #[serde(default)]
    pub languages: Vec<String>,
}

/// One query as sent on the wire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireQuery {
    pub src_lang: String,
    pub tgt_lang: String,
    pub source_tokens: Option<Vec<TokenId>>,
    pub source_text: Option<String>,
    pub prefix_tokens: Vec<TokenId>,
}

impl From<&StepQuery<'_>> for WireQuery {
    fn from(q: &StepQuery<'_>) -> Self {
        WireQuery {
            src_lang: q.src_lang.into(),
            tgt_lang: q.tgt_lang.into(),
            source_tokens: Some(q.source.ids().to_vec()),
            source_text: None,
            prefix_tokens: q.prefix.to_vec(),
        }
    }
}

#[derive(Debug, Serialize)]
struct StepRequest<'a> {
    session: &'a str,
    queries: &'a [WireQuery],
}

#[derive(Debug, Deserialize)]
struct StepResponse {
    #[serde(with = "crate::logspace::logmat")]
    logprobs: Vec<Vec<f64>>,
}

pub struct WireClient {
    config: EndpointConfig,
    http: reqwest::blocking::Client,
    meta: Mutex<Option<ModelMeta>>,
}

impl std::fmt::Debug for WireClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WireClient")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

enum Attempt<T> {
    Done(T),
    Retry(Error),
}

impl WireClient {
    pub fn new(config: EndpointConfig) -> Result<Self> {
        config.validate()?;
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| Error::Backend(e.to_string()))?;
        Ok(WireClient {
            config,
            http,
            meta: Mutex::new(None),
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    /// Cached session metadata, if the handshake has run.
    pub fn meta(&self) -> Option<ModelMeta> {
        self.meta.lock().unwrap().clone()
    }

    fn with_retries<T>(&self, mut call: impl FnMut() -> Result<Attempt<T>>) -> Result<T> {
        let mut last = None;
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                thread::sleep(Duration::from_millis(20 << attempt.min(6)));
            }
            match call()? {
                Attempt::Done(v) => return Ok(v),
                Attempt::Retry(e) => last = Some(e),
            }
        }
        let e = last.expect("at least one attempt");
        let msg = match e {
            Error::Backend(m) => m,
            other => other.to_string(),
        };
        Err(Error::Backend(format!(
            "{msg} (after {} attempts)",
            self.config.retries + 1
        )))
    }

    fn send(&self, req: reqwest::blocking::RequestBuilder) -> Result<Attempt<String>> {
        let req = match &self.config.bearer_token {
            Some(t) => req.bearer_auth(t),
            None => req,
        };
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) => return Ok(Attempt::Retry(Error::Backend(e.to_string()))),
        };
        let status = resp.status();
        let body = match resp.text() {
            Ok(b) => b,
            Err(e) => return Ok(Attempt::Retry(Error::Backend(e.to_string()))),
        };
        if status.is_server_error() || status.as_u16() == 429 {
            return Ok(Attempt::Retry(Error::Backend(format!(
                "HTTP {status}: {body}"
            ))));
        }
        if !status.is_success() {
            return Err(Error::Backend(format!("HTTP {status}: {body}")));
        }
        Ok(Attempt::Done(body))
    }

    /// Fetches and caches session metadata. A repeated handshake must return
    /// the same metadata.
    pub fn handshake(&self) -> Result<ModelMeta> {
        let url = self.config.url("/v1/meta");
        let body = self.with_retries(|| self.send(self.http.get(&url)))?;
        let meta: ModelMeta = serde_json::from_str(&body)
            .map_err(|e| Error::protocol(None, format!("bad metadata: {e}")))?;
        if meta.protocol != PROTOCOL_VERSION {
            return Err(Error::protocol(
                None,
                format!(
                    "server speaks protocol {}, client speaks {PROTOCOL_VERSION}",
                    meta.protocol
                ),
            ));
        }
        if meta.vocab_size == 0 {
            return Err(Error::protocol(
                None,
                "server advertises an empty vocabulary",
            ));
        }
        let mut cached = self.meta.lock().unwrap();
        if let Some(old) = cached.as_ref() {
            if *old != meta {
                return Err(Error::protocol(
                    None,
                    "server metadata changed within the session",
                ));
            }
        }
        *cached = Some(meta.clone());
        Ok(meta)
    }

    fn vocab_size(&self) -> Result<usize> {
        if let Some(m) = self.meta.lock().unwrap().as_ref() {
            return Ok(m.vocab_size);
        }
        Ok(self.handshake()?.vocab_size)
    }

    /// One request for at most `max_batch` queries.
    pub fn fetch_step_batch(&self, queries: &[WireQuery]) -> Result<Vec<StepDistribution>> {
        if queries.is_empty() {
            return Ok(Vec::new());
        }
        if queries.len() > self.config.max_batch {
            return Err(Error::invalid(format!(
                "batch of {} exceeds max_batch {}",
                queries.len(),
                self.config.max_batch
            )));
        }
        let v = self.vocab_size()?;
        let payload = serde_json::to_vec(&StepRequest {
            session: &self.config.session,
            queries,
        })?;
        let url = self.config.url("/v1/step");
        let body = self.with_retries(|| {
            self.send(
                self.http
                    .post(&url)
                    .header(reqwest::header::CONTENT_TYPE, "application/json")
                    .body(payload.clone()),
            )
        })?;
        let resp: StepResponse = serde_json::from_str(&body)
            .map_err(|e| Error::protocol(None, format!("bad step response: {e}")))?;
        if resp.logprobs.len() != queries.len() {
            return Err(Error::protocol(
                None,
                format!(
                    "{} rows returned for {} queries",
                    resp.logprobs.len(),
                    queries.len()
                ),
            ));
        }
        resp.logprobs
            .into_iter()
            .enumerate()
            .map(|(i, row)| {
                if row.len() != v {
                    return Err(Error::protocol(
                        Some(i),
                        format!("row has {} entries, vocabulary has {v}", row.len()),
                    ));
                }
                StepDistribution::renormalized(row, WIRE_TOLERANCE)
                    .map_err(|e| Error::protocol(Some(i), e.to_string()))
            })
            .collect()
    }

    /// Any number of queries, split into `max_batch` chunks sent in order.
    pub fn fetch(&self, queries: &[WireQuery]) -> Result<Vec<StepDistribution>> {
        let mut out = Vec::with_capacity(queries.len());
        for (c, chunk) in queries.chunks(self.config.max_batch).enumerate() {
            let offset = c * self.config.max_batch;
            let rows = self.fetch_step_batch(chunk).map_err(|e| match e {
                Error::Protocol {
                    index: Some(i),
                    message,
                } => Error::protocol(Some(i + offset), message),
                other => other,
            })?;
            out.extend(rows);
        }
        Ok(out)
    }
}

/// [`Scorer`] over a remote server. The server's token-id space must be the
/// caller's; eos is not part of the protocol and is configured here.
#[derive(Debug, Clone)]
pub struct WireScorer {
    client: Arc<WireClient>,
    vocab_size: usize,
    eos: TokenId,
}

impl WireScorer {
    /// Performs the handshake.
    pub fn connect(config: EndpointConfig, eos: TokenId) -> Result<Self> {
        Self::from_client(Arc::new(WireClient::new(config)?), eos)
    }

    pub fn from_client(client: Arc<WireClient>, eos: TokenId) -> Result<Self> {
        let meta = client.handshake()?;
        if eos as usize >= meta.vocab_size {
            return Err(Error::Config(format!(
                "eos id {eos} outside server vocabulary of {}",
                meta.vocab_size
            )));
        }
        Ok(WireScorer {
            client,
            vocab_size: meta.vocab_size,
            eos,
        })
    }

    pub fn client(&self) -> &WireClient {
        &self.client
    }
}

impl Scorer for WireScorer {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn eos_id(&self) -> TokenId {
        self.eos
    }

    fn score_batch(&self, queries: &[StepQuery<'_>]) -> Result<Vec<StepDistribution>> {
        let wire: Vec<WireQuery> = queries.iter().map(WireQuery::from).collect();
        self.client.fetch(&wire)
    }
}
