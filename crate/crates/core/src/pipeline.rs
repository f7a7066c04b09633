//! End-to-end query path: seeds, expansion, organization, prompt, answer.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::embedding_index::{
    cosine, embed_texts, EmbeddingError, EmbeddingProvider, ScoredChunk, SimilarityCache, VectorIndex,
};
use crate::generation::{
    assemble_prompt, generate_answer, AnswerPrompt, GeneratedAnswer, GenerationError, LlmProvider,
    DEFAULT_CHAR_CEILING,
};
use crate::kg_store::{AssociationKg, TripletId};
use crate::organizer::{
    build_weighted_graph, dfs_edge_order, order_by_similarity, organize, text_representation,
    triplet_representation, BundleEntry, ChunkOrigin, ContextBundle, Reranker,
};
use crate::provider::RetryPolicy;
use crate::retrieval::{expand, seed_retrieve, seeds_only};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error("chunk `{0}` is neither indexed nor in the corpus")]
    UnknownChunk(String),
}

impl PipelineError {
    /// True when the failure came from an unreachable or timed-out provider.
    pub fn is_provider_unavailable(&self) -> bool {
        let retry = match self {
            PipelineError::Embedding(EmbeddingError::Provider(e)) => e,
            PipelineError::Generation(GenerationError::Provider(e)) => e,
            _ => return false,
        };
        retry.last.is_retryable()
    }
}

fn default_k() -> usize {
    10
}
fn default_hops() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn default_ceiling() -> usize {
    DEFAULT_CHAR_CEILING
}
fn default_output_units() -> u32 {
    256
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Seed chunks taken from semantic retrieval.
    #[serde(default = "default_k")]
    pub seed_k: usize,
    /// Final chunk budget.
    #[serde(default = "default_k")]
    pub budget_k: usize,
    #[serde(default = "default_hops")]
    pub hops: usize,
    #[serde(default = "yes")]
    pub keep_unlinked_seeds: bool,
    #[serde(default = "yes")]
    pub expansion: bool,
    #[serde(default = "yes")]
    pub organization: bool,
    #[serde(default = "default_ceiling")]
    pub char_ceiling: usize,
    #[serde(default = "default_output_units")]
    pub max_output_units: u32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed_k: default_k(),
            budget_k: default_k(),
            hops: default_hops(),
            keep_unlinked_seeds: true,
            expansion: true,
            organization: true,
            char_ceiling: DEFAULT_CHAR_CEILING,
            max_output_units: default_output_units(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.seed_k == 0 {
            return Err(PipelineError::Config("seed_k must be at least 1".into()));
        }
        if self.budget_k == 0 {
            return Err(PipelineError::Config("budget_k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Read-only view of everything a query needs.
#[derive(Clone, Copy)]
pub struct KnowledgeBase<'a> {
    pub corpus: &'a Corpus,
    pub kg: &'a AssociationKg,
    pub index: &'a VectorIndex,
}

#[derive(Clone, Copy)]
pub struct Providers<'a> {
    pub embedder: &'a dyn EmbeddingProvider,
    pub reranker: &'a dyn Reranker,
    pub llm: &'a dyn LlmProvider,
    pub retry: RetryPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpansionTrace {
    pub hops_used: usize,
    pub triplet_ids: BTreeSet<TripletId>,
    pub entities: BTreeSet<String>,
    pub chunks: Vec<String>,
    pub unlinked_seeds: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeTrace {
    pub triplet: String,
    pub source_chunk: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreeTrace {
    pub rank: usize,
    pub score: f64,
    pub entity_key: String,
    pub node_count: usize,
    /// Tree edges in DFS order.
    pub edges: Vec<EdgeTrace>,
    pub chunks: Vec<String>,
    pub triplet_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalTrace {
    pub query: String,
    pub config: PipelineConfig,
    pub seeds: Vec<ScoredChunk>,
    pub expansion: ExpansionTrace,
    pub graph_nodes: usize,
    pub graph_edges: usize,
    pub trees: Vec<TreeTrace>,
    pub rerank_fallback: Option<String>,
    pub bundle: ContextBundle,
}

pub fn retrieve(
    query: &str,
    kb: KnowledgeBase<'_>,
    providers: &Providers<'_>,
    cfg: &PipelineConfig,
    cache: &SimilarityCache,
) -> Result<RetrievalTrace, PipelineError> {
    cfg.validate()?;
    let seeds = seed_retrieve(query, kb.index, providers.embedder, cfg.seed_k, cache, &providers.retry)?;
    let expanded = if cfg.expansion {
        expand(kb.kg, &seeds, cfg.hops, cfg.keep_unlinked_seeds)
    } else {
        seeds_only(kb.kg, &seeds)
    };

    // s(q, c) for chunks outside the scored index: stored vector first, then embed
    let weight_of = |chunk_id: &str| -> Result<f64, PipelineError> {
        if let Some(v) = kb.index.get(chunk_id) {
            return Ok(cosine(&seeds.query_vector, v)?);
        }
        let chunk = kb.corpus.chunk(chunk_id).ok_or_else(|| PipelineError::UnknownChunk(chunk_id.to_string()))?;
        let v = embed_texts(providers.embedder, std::slice::from_ref(&chunk.text), 1, &providers.retry)?
            .pop()
            .expect("one vector per text");
        Ok(cosine(&seeds.query_vector, &v)?)
    };

    let expansion = ExpansionTrace {
        hops_used: expanded.hops_used,
        triplet_ids: expanded.subgraph.triplet_ids.clone(),
        entities: expanded.subgraph.entities.clone(),
        chunks: expanded.chunks.clone(),
        unlinked_seeds: expanded.unlinked_seeds.clone(),
    };

    if !cfg.organization {
        let mut weights = BTreeMap::new();
        for chunk in &expanded.chunks {
            let w = match cache.get(query, chunk) {
                Some(w) => w,
                None => {
                    let w = weight_of(chunk)?;
                    cache.insert(query, chunk, w);
                    w
                }
            };
            weights.insert(chunk.clone(), w);
        }
        let entries = order_by_similarity(&expanded.chunks, &weights)
            .into_iter()
            .map(|chunk_id| BundleEntry { chunk_id, tree_rank: None, tree_score: None, origin: ChunkOrigin::Expanded })
            .collect();
        return Ok(RetrievalTrace {
            query: query.to_string(),
            config: *cfg,
            seeds: seeds.scored,
            expansion,
            graph_nodes: 0,
            graph_edges: 0,
            trees: Vec::new(),
            rerank_fallback: None,
            bundle: ContextBundle { entries },
        });
    }

    let graph = build_weighted_graph(kb.kg, &expanded.subgraph, query, cache, weight_of)?;
    let covered: BTreeSet<&str> = graph.edges.iter().map(|e| e.source_chunk.as_str()).collect();
    let unlinked: Vec<String> = if cfg.keep_unlinked_seeds {
        seeds.chunk_ids().filter(|c| !covered.contains(c)).map(str::to_string).collect()
    } else {
        Vec::new()
    };
    let organized = organize(query, &graph, providers.reranker, &providers.retry, cfg.budget_k, &unlinked);

    let trees = organized
        .trees
        .iter()
        .enumerate()
        .map(|(rank, scored)| TreeTrace {
            rank,
            score: scored.score,
            entity_key: scored.tree.entity_key().to_string(),
            node_count: scored.tree.nodes.len(),
            edges: dfs_edge_order(&scored.tree)
                .into_iter()
                .map(|i| {
                    let e = &scored.tree.edges[i];
                    EdgeTrace {
                        triplet: format!("<{}, {}, {}>", e.head, e.relation, e.tail),
                        source_chunk: e.source_chunk.clone(),
                        weight: e.weight,
                    }
                })
                .collect(),
            chunks: text_representation(&scored.tree),
            triplet_text: triplet_representation(&scored.tree),
        })
        .collect();

    Ok(RetrievalTrace {
        query: query.to_string(),
        config: *cfg,
        seeds: seeds.scored,
        expansion,
        graph_nodes: organized.graph_nodes,
        graph_edges: organized.graph_edges,
        trees,
        rerank_fallback: organized.rerank_fallback,
        bundle: organized.bundle,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryOutcome {
    pub trace: RetrievalTrace,
    pub prompt: AnswerPrompt,
    pub answer: GeneratedAnswer,
}

pub fn answer_query(
    query: &str,
    kb: KnowledgeBase<'_>,
    providers: &Providers<'_>,
    cfg: &PipelineConfig,
    cache: &SimilarityCache,
) -> Result<QueryOutcome, PipelineError> {
    let trace = retrieve(query, kb, providers, cfg, cache)?;
    let prompt = assemble_prompt(&trace.bundle, kb.corpus, query, cfg.char_ceiling)?;
    let answer = generate_answer(providers.llm, &prompt, &providers.retry, cfg.max_output_units)?;
    Ok(QueryOutcome { trace, prompt, answer })
}
