//! Answer-prompt assembly and the LLM provider abstraction (also used for
//! triplet extraction).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{split_sentences, Corpus, SentenceSplitter};
use crate::embedding_index::feature_tokens;
use crate::organizer::ContextBundle;
use crate::provider::{ProviderError, RetryError, RetryPolicy};

pub const ANSWER_PROMPT_VERSION: &str = "answer-v1";
const ANSWER_SYSTEM: &str = include_str!("../assets/answer_system.txt");
const ANSWER_USER: &str = include_str!("../assets/answer_user.txt");
pub const DEFAULT_CHAR_CEILING: usize = 32_000;

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("bundle references unknown chunk `{0}`")]
    UnknownChunk(String),
    #[error("generation failed: {0}")]
    Provider(#[from] RetryError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub system: Option<String>,
    pub prompt: String,
    pub max_output_units: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub text: String,
    pub model_id: String,
}

impl LlmResponse {
    pub fn text(text: impl Into<String>) -> Self {
        Self { text: text.into(), model_id: String::new() }
    }
}

pub trait LlmProvider: Send + Sync {
    fn model_id(&self) -> String;
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, ProviderError>;
}

/// Hex SHA-256 of the system instruction and prompt; the key of mock fixtures.
pub fn prompt_hash(request: &LlmRequest) -> String {
    let mut h = Sha256::new();
    h.update(request.system.as_deref().unwrap_or("").as_bytes());
    h.update([0u8]);
    h.update(request.prompt.as_bytes());
    hex::encode(h.finalize())
}

/// Fixture-driven provider: prompt hash -> response text, with an optional
/// fallback for unknown prompts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockLlm {
    #[serde(default)]
    pub responses: BTreeMap<String, String>,
    #[serde(default)]
    pub fallback: Option<String>,
}

impl MockLlm {
    pub fn with_fallback(text: impl Into<String>) -> Self {
        Self { responses: BTreeMap::new(), fallback: Some(text.into()) }
    }

    pub fn from_json(src: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(src)
    }

    pub fn add(&mut self, request: &LlmRequest, response: impl Into<String>) {
        self.responses.insert(prompt_hash(request), response.into());
    }
}

impl LlmProvider for MockLlm {
    fn model_id(&self) -> String {
        "mock-fixtures".into()
    }

    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, ProviderError> {
        let text = self
            .responses
            .get(&prompt_hash(request))
            .or(self.fallback.as_ref())
            .ok_or_else(|| ProviderError::Other("no fixture for prompt".into()))?;
        Ok(LlmResponse { text: text.clone(), model_id: self.model_id() })
    }
}

/// Offline stand-in for an answer model: replies with the context sentence
/// sharing the most word types with the question (earliest wins ties).
/// Prompts without a `Question:` line get an empty reply.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExtractiveLlm;

impl LlmProvider for ExtractiveLlm {
    fn model_id(&self) -> String {
        "extractive-overlap".into()
    }

    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, ProviderError> {
        let prompt = &request.prompt;
        let Some(at) = prompt.rfind("Question:") else {
            return Ok(LlmResponse { text: String::new(), model_id: self.model_id() });
        };
        let question_line = prompt[at + "Question:".len()..].lines().next().unwrap_or("");
        let question: BTreeSet<String> = feature_tokens(question_line).into_iter().collect();
        let mut best: Option<(usize, &str)> = None;
        for line in prompt[..at].lines() {
            for sentence in split_sentences(line, SentenceSplitter::Punctuation) {
                let words: BTreeSet<String> = feature_tokens(sentence).into_iter().collect();
                let overlap = words.intersection(&question).count();
                if overlap > 0 && best.is_none_or(|(b, _)| overlap > b) {
                    best = Some((overlap, sentence));
                }
            }
        }
        let text = best.map(|(_, s)| s.to_string()).unwrap_or_default();
        Ok(LlmResponse { text, model_id: self.model_id() })
    }
}

/// Provider backed by a closure, for tests and fault injection.
pub struct FnLlm<F> {
    model: String,
    f: F,
}

impl<F> FnLlm<F>
where
    F: Fn(&LlmRequest) -> Result<LlmResponse, ProviderError> + Send + Sync,
{
    pub fn new(model: impl Into<String>, f: F) -> Self {
        Self { model: model.into(), f }
    }
}

impl<F> LlmProvider for FnLlm<F>
where
    F: Fn(&LlmRequest) -> Result<LlmResponse, ProviderError> + Send + Sync,
{
    fn model_id(&self) -> String {
        self.model.clone()
    }

    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, ProviderError> {
        (self.f)(request).map(|mut r| {
            if r.model_id.is_empty() {
                r.model_id = self.model.clone();
            }
            r
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AnswerPrompt {
    pub system: String,
    /// Chunk texts; newline within a tree, blank line between paragraphs.
    pub context: String,
    pub question: String,
    /// Chunks dropped from the tail to respect the character ceiling.
    pub dropped_chunks: Vec<String>,
}

impl AnswerPrompt {
    pub fn user_message(&self) -> String {
        ANSWER_USER.replace("{{QUESTION}}", &self.question).replacen("{{CONTEXT}}", &self.context, 1)
    }

    pub fn truncated(&self) -> bool {
        !self.dropped_chunks.is_empty()
    }

    pub fn request(&self, max_output_units: u32) -> LlmRequest {
        LlmRequest { system: Some(self.system.clone()), prompt: self.user_message(), max_output_units }
    }
}

fn render_context(parts: &[(Option<usize>, &str)]) -> String {
    let mut out = String::new();
    for (i, (group, text)) in parts.iter().enumerate() {
        if i > 0 {
            let same_tree = group.is_some() && *group == parts[i - 1].0;
            out.push_str(if same_tree { "\n" } else { "\n\n" });
        }
        out.push_str(text);
    }
    out
}

/// Lays bundle chunks out in order. Chunks from one tree form one paragraph;
/// anything outside a tree stands alone. Whole chunks are dropped from the
/// tail while the context exceeds `char_ceiling`.
pub fn assemble_prompt(
    bundle: &ContextBundle,
    corpus: &Corpus,
    question: &str,
    char_ceiling: usize,
) -> Result<AnswerPrompt, GenerationError> {
    let mut parts: Vec<(Option<usize>, &str)> = Vec::with_capacity(bundle.len());
    for entry in &bundle.entries {
        let chunk = corpus.chunk(&entry.chunk_id).ok_or_else(|| GenerationError::UnknownChunk(entry.chunk_id.clone()))?;
        parts.push((entry.tree_rank, chunk.text.as_str()));
    }
    let mut dropped = Vec::new();
    let mut context = render_context(&parts);
    while context.chars().count() > char_ceiling && !parts.is_empty() {
        parts.pop();
        dropped.push(bundle.entries[parts.len()].chunk_id.clone());
        context = render_context(&parts);
    }
    dropped.reverse();
    Ok(AnswerPrompt {
        system: ANSWER_SYSTEM.trim_end().to_string(),
        context,
        question: question.trim().to_string(),
        dropped_chunks: dropped,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GeneratedAnswer {
    pub text: String,
    pub model_id: String,
    /// Not part of equality-sensitive outputs such as eval reports.
    pub latency_ms: u64,
    pub attempts: u32,
    /// The provider returned nothing but whitespace.
    pub empty: bool,
}

pub fn generate_answer(
    llm: &dyn LlmProvider,
    prompt: &AnswerPrompt,
    retry: &RetryPolicy,
    max_output_units: u32,
) -> Result<GeneratedAnswer, GenerationError> {
    let request = prompt.request(max_output_units);
    #[cfg(not(target_arch = "wasm32"))]
    let started = std::time::Instant::now();
    let mut attempts = 0;
    let response = retry.run(|| {
        attempts += 1;
        llm.complete(&request)
    })?;
    #[cfg(not(target_arch = "wasm32"))]
    let latency_ms = started.elapsed().as_millis() as u64;
    #[cfg(target_arch = "wasm32")]
    let latency_ms = 0;
    let text = response.text.trim().to_string();
    Ok(GeneratedAnswer {
        empty: text.is_empty(),
        text,
        model_id: response.model_id,
        latency_ms,
        attempts,
    })
}
