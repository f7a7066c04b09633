//! HTTP clients for the embedding, reranking and chat services, and the
//! provider set selected by configuration.

use std::time::Duration;

use anyhow::{bail, Context, Result};
use kgctx_core::embedding_index::{EmbeddingProvider, EmbeddingVector, HashEmbedder};
use kgctx_core::generation::{ExtractiveLlm, LlmProvider, LlmRequest, LlmResponse, MockLlm};
use kgctx_core::organizer::{EmbeddingReranker, Reranker};
use kgctx_core::pipeline::Providers;
use kgctx_core::provider::{ProviderError, RetryPolicy};
use reqwest::blocking::{Client, RequestBuilder};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{AppConfig, EmbeddingKind, LlmKind, RerankerKind};

fn client(timeout_ms: u64) -> Result<Client> {
    Client::builder()
        .timeout(Duration::from_millis(timeout_ms))
        .build()
        .context("building HTTP client")
}

fn classify(e: reqwest::Error) -> ProviderError {
    if e.is_timeout() {
        ProviderError::Timeout
    } else if e.is_connect() || e.is_request() {
        ProviderError::Unreachable(e.to_string())
    } else {
        ProviderError::Other(e.to_string())
    }
}

fn send<T: for<'de> Deserialize<'de>>(req: RequestBuilder, key: Option<&str>) -> Result<T, ProviderError> {
    let req = match key {
        Some(k) => req.bearer_auth(k),
        None => req,
    };
    let resp = req.send().map_err(classify)?;
    let status = resp.status();
    let body = resp.text().map_err(classify)?;
    if !status.is_success() {
        let mut body = body;
        body.truncate(500);
        return Err(ProviderError::Status { status: status.as_u16(), body });
    }
    serde_json::from_str(&body).map_err(|e| ProviderError::Malformed(e.to_string()))
}

/// `POST url {"model", "texts"}` answered with `{"vectors": [[f64]]}`.
pub struct HttpEmbedder {
    client: Client,
    url: String,
    model: String,
    dimension: usize,
    api_key: Option<String>,
}

impl HttpEmbedder {
    pub fn new(url: &str, model: &str, dimension: usize, api_key: Option<String>, timeout_ms: u64) -> Result<Self> {
        Ok(Self { client: client(timeout_ms)?, url: url.into(), model: model.into(), dimension, api_key })
    }
}

#[derive(Deserialize)]
struct VectorsBody {
    vectors: Vec<Vec<f64>>,
}

impl EmbeddingProvider for HttpEmbedder {
    fn fingerprint(&self) -> String {
        format!("http/{}/{}", self.model, self.dimension)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        let body: VectorsBody = send(
            self.client.post(&self.url).json(&json!({"model": self.model, "texts": texts})),
            self.api_key.as_deref(),
        )?;
        Ok(body.vectors.into_iter().map(EmbeddingVector).collect())
    }
}

/// `POST url {"model", "query", "documents"}` answered with `{"scores": [f64]}`.
pub struct HttpReranker {
    client: Client,
    url: String,
    model: String,
    api_key: Option<String>,
}

impl HttpReranker {
    pub fn new(url: &str, model: &str, api_key: Option<String>, timeout_ms: u64) -> Result<Self> {
        Ok(Self { client: client(timeout_ms)?, url: url.into(), model: model.into(), api_key })
    }
}

#[derive(Deserialize)]
struct ScoresBody {
    scores: Vec<f64>,
}

impl Reranker for HttpReranker {
    fn name(&self) -> String {
        format!("http/{}", self.model)
    }

    fn score(&self, query: &str, documents: &[String]) -> Result<Vec<f64>, ProviderError> {
        let body: ScoresBody = send(
            self.client
                .post(&self.url)
                .json(&json!({"model": self.model, "query": query, "documents": documents})),
            self.api_key.as_deref(),
        )?;
        if body.scores.len() != documents.len() {
            return Err(ProviderError::Malformed(format!(
                "expected {} scores, got {}",
                documents.len(),
                body.scores.len()
            )));
        }
        Ok(body.scores)
    }
}

/// OpenAI-compatible `POST {base}/chat/completions`.
pub struct OpenAiChat {
    client: Client,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    temperature: f64,
}

impl OpenAiChat {
    pub fn new(base_url: &str, model: &str, api_key: Option<String>, temperature: f64, timeout_ms: u64) -> Result<Self> {
        Ok(Self {
            client: client(timeout_ms)?,
            endpoint: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            model: model.into(),
            api_key,
            temperature,
        })
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatBody {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    model: Option<String>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Deserialize)]
struct ChatReply {
    #[serde(default)]
    content: Option<String>,
}

impl LlmProvider for OpenAiChat {
    fn model_id(&self) -> String {
        self.model.clone()
    }

    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, ProviderError> {
        let mut messages = Vec::new();
        if let Some(system) = &request.system {
            messages.push(ChatMessage { role: "system", content: system });
        }
        messages.push(ChatMessage { role: "user", content: &request.prompt });
        let body: ChatBody = send(
            self.client.post(&self.endpoint).json(&json!({
                "model": self.model,
                "messages": messages,
                "temperature": self.temperature,
                "max_tokens": request.max_output_units,
            })),
            self.api_key.as_deref(),
        )?;
        let choice = body
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| ProviderError::Malformed("no choices".into()))?;
        Ok(LlmResponse {
            text: choice.message.content.unwrap_or_default(),
            model_id: body.model.unwrap_or_else(|| self.model.clone()),
        })
    }
}

pub struct ProviderSet {
    pub embedder: Box<dyn EmbeddingProvider>,
    pub reranker: Box<dyn Reranker>,
    pub llm: Box<dyn LlmProvider>,
    pub retry: RetryPolicy,
    pub batch_size: usize,
}

impl ProviderSet {
    /// Offline providers: hashed embeddings, cosine reranking, extractive answers.
    pub fn offline() -> Self {
        let embedder = HashEmbedder::new(HashEmbedder::DEFAULT_DIM);
        Self {
            reranker: Box::new(EmbeddingReranker::new(embedder.clone())),
            embedder: Box::new(embedder),
            llm: Box::new(ExtractiveLlm),
            retry: RetryPolicy::none(),
            batch_size: 32,
        }
    }

    pub fn from_config(cfg: &AppConfig) -> Result<Self> {
        let e = &cfg.embedding;
        let make_embedder = || -> Result<Box<dyn EmbeddingProvider>> {
            Ok(match e.kind {
                EmbeddingKind::Hash => Box::new(HashEmbedder::new(e.dimension)),
                EmbeddingKind::Http => {
                    let url = e.url.as_deref().context("embedding.url is required for kind = \"http\"")?;
                    Box::new(HttpEmbedder::new(url, &e.model, e.dimension, e.api_key.clone(), e.timeout_ms)?)
                }
            })
        };
        let r = &cfg.reranker;
        let reranker: Box<dyn Reranker> = match r.kind {
            RerankerKind::Embedding => Box::new(EmbeddingReranker::new(make_embedder()?)),
            RerankerKind::Http => {
                let url = r.url.as_deref().context("reranker.url is required for kind = \"http\"")?;
                Box::new(HttpReranker::new(url, &r.model, r.api_key.clone(), r.timeout_ms)?)
            }
        };
        let l = &cfg.llm;
        let llm: Box<dyn LlmProvider> = match l.kind {
            LlmKind::Extractive => Box::new(ExtractiveLlm),
            LlmKind::Mock => {
                let path = l.fixtures.as_deref().context("llm.fixtures is required for kind = \"mock\"")?;
                let src = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                Box::new(MockLlm::from_json(&src).with_context(|| format!("parsing {}", path.display()))?)
            }
            LlmKind::Openai => {
                let Some(url) = l.url.as_deref() else {
                    bail!("llm.url is required for kind = \"openai\"");
                };
                Box::new(OpenAiChat::new(url, &l.model, l.api_key.clone(), l.temperature, l.timeout_ms)?)
            }
        };
        Ok(Self { embedder: make_embedder()?, reranker, llm, retry: cfg.retry(), batch_size: e.batch_size })
    }

    pub fn providers(&self) -> Providers<'_> {
        Providers {
            embedder: self.embedder.as_ref(),
            reranker: self.reranker.as_ref(),
            llm: self.llm.as_ref(),
            retry: self.retry,
        }
    }
}
