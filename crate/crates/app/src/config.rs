//! `kgctx.toml` plus environment overrides.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use kgctx_core::corpus::ChunkingConfig;
use kgctx_core::kg_builder::ExtractionConfig;
use kgctx_core::pipeline::PipelineConfig;
use kgctx_core::provider::RetryPolicy;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    /// Directory holding documents, chunks, the KG snapshot and the index.
    pub workspace: PathBuf,
    pub chunking: ChunkingSection,
    pub pipeline: PipelineConfig,
    pub embedding: EmbeddingSection,
    pub reranker: RerankerSection,
    pub llm: LlmSection,
    pub retry: RetrySection,
    pub extraction: ExtractionSection,
    pub server: ServerSection,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            workspace: PathBuf::from("kgctx-data"),
            chunking: ChunkingSection::default(),
            pipeline: PipelineConfig::default(),
            embedding: EmbeddingSection::default(),
            reranker: RerankerSection::default(),
            llm: LlmSection::default(),
            retry: RetrySection::default(),
            extraction: ExtractionSection::default(),
            server: ServerSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ChunkingSection {
    pub max_units: usize,
}

impl Default for ChunkingSection {
    fn default() -> Self {
        Self { max_units: 100 }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    /// Offline hashed bag of words.
    #[default]
    Hash,
    Http,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSection {
    pub kind: EmbeddingKind,
    /// POST `{"texts": [...]}` -> `{"vectors": [[...]]}`
    pub url: Option<String>,
    pub model: String,
    pub dimension: usize,
    pub batch_size: usize,
    pub api_key: Option<String>,
    pub timeout_ms: u64,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        Self {
            kind: EmbeddingKind::Hash,
            url: None,
            model: "hash-bow".into(),
            dimension: 64,
            batch_size: 32,
            api_key: None,
            timeout_ms: 30_000,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum RerankerKind {
    /// Cosine under the configured embedder.
    #[default]
    Embedding,
    Http,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RerankerSection {
    pub kind: RerankerKind,
    /// POST `{"query", "documents"}` -> `{"scores"}`
    pub url: Option<String>,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout_ms: u64,
}

impl Default for RerankerSection {
    fn default() -> Self {
        Self { kind: RerankerKind::Embedding, url: None, model: "cross-encoder".into(), api_key: None, timeout_ms: 30_000 }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum LlmKind {
    /// Returns the context sentence with the most question words.
    #[default]
    Extractive,
    /// Replays responses from a fixture file keyed by prompt hash.
    Mock,
    /// OpenAI-compatible chat completions endpoint.
    Openai,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSection {
    pub kind: LlmKind,
    /// Base URL; `/chat/completions` is appended.
    pub url: Option<String>,
    pub model: String,
    pub api_key: Option<String>,
    pub fixtures: Option<PathBuf>,
    pub temperature: f64,
    pub timeout_ms: u64,
}

impl Default for LlmSection {
    fn default() -> Self {
        Self {
            kind: LlmKind::Extractive,
            url: None,
            model: "llama3-8b-instruct".into(),
            api_key: None,
            fixtures: None,
            temperature: 0.0,
            timeout_ms: 120_000,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(default, deny_unknown_fields)]
pub struct RetrySection {
    pub max_retries: u32,
    pub backoff_ms: u64,
}

impl Default for RetrySection {
    fn default() -> Self {
        Self { max_retries: 2, backoff_ms: 200 }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionSection {
    pub parallelism: usize,
    pub retry_limit: u32,
    pub max_output_units: u32,
}

impl Default for ExtractionSection {
    fn default() -> Self {
        let d = ExtractionConfig::default();
        Self { parallelism: d.parallelism, retry_limit: d.retry_limit, max_output_units: d.max_output_units }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(default, deny_unknown_fields)]
pub struct ServerSection {
    pub addr: String,
}

impl Default for ServerSection {
    fn default() -> Self {
        Self { addr: "127.0.0.1:8080".into() }
    }
}

impl AppConfig {
    /// Reads `path` when given (it must exist), otherwise defaults; then
    /// applies environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let src = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&src).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => AppConfig::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok());
        Ok(cfg)
    }

    /// Secrets and endpoints may come from `KGCTX_*` variables.
    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) {
        if let Some(v) = get("KGCTX_WORKSPACE") {
            self.workspace = PathBuf::from(v);
        }
        if let Some(v) = get("KGCTX_LLM_API_KEY") {
            self.llm.api_key = Some(v);
        }
        if let Some(v) = get("KGCTX_LLM_URL") {
            self.llm.url = Some(v);
        }
        if let Some(v) = get("KGCTX_EMBEDDING_API_KEY") {
            self.embedding.api_key = Some(v);
        }
        if let Some(v) = get("KGCTX_EMBEDDING_URL") {
            self.embedding.url = Some(v);
        }
        if let Some(v) = get("KGCTX_RERANKER_API_KEY") {
            self.reranker.api_key = Some(v);
        }
        if let Some(v) = get("KGCTX_RERANKER_URL") {
            self.reranker.url = Some(v);
        }
    }

    pub fn chunking(&self) -> Result<ChunkingConfig> {
        ChunkingConfig::with_max_units(self.chunking.max_units)
            .context("chunking.max_units must be at least 1")
    }

    pub fn retry(&self) -> RetryPolicy {
        RetryPolicy { max_retries: self.retry.max_retries, backoff_ms: self.retry.backoff_ms }
    }

    pub fn extraction(&self) -> ExtractionConfig {
        ExtractionConfig {
            parallelism: self.extraction.parallelism,
            retry_limit: self.extraction.retry_limit,
            max_output_units: self.extraction.max_output_units,
        }
    }
}
