//! Browser bindings. Each export takes and returns JSON strings; the plain
//! `*_json` functions hold the logic so native tests can call them.

use std::collections::BTreeSet;

use kgctx_core::corpus::{split_document, ChunkingConfig, Corpus, Document};
use kgctx_core::embedding_index::{HashEmbedder, SimilarityCache, VectorIndex};
use kgctx_core::generation::ExtractiveLlm;
use kgctx_core::kg_builder::{entity_key, Triplet};
use kgctx_core::kg_store::AssociationKg;
use kgctx_core::organizer::{
    connected_components, dfs_edge_order, max_spanning_tree, ContextEdge, EmbeddingReranker, WeightedContextGraph,
};
use kgctx_core::pipeline::{answer_query, KnowledgeBase, PipelineConfig, Providers};
use kgctx_core::provider::RetryPolicy;
use serde::{Deserialize, Serialize};
use serde_json::json;
use wasm_bindgen::prelude::*;

fn bad(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Splits `text` into chunks of at most `max_units` units.
pub fn chunk_text_json(text: &str, max_units: usize) -> Result<String, String> {
    let cfg = ChunkingConfig::with_max_units(max_units).ok_or("max_units must be at least 1")?;
    let doc = Document { doc_id: "input".into(), title: String::new(), text: text.into() };
    let chunks = split_document(&doc, &cfg);
    serde_json::to_string(&chunks).map_err(bad)
}

#[derive(Deserialize)]
struct EdgeIn {
    head: String,
    relation: String,
    tail: String,
    weight: f64,
    #[serde(default)]
    chunk: String,
}

#[derive(Serialize)]
struct TreeOut {
    nodes: Vec<String>,
    total_weight: f64,
    /// Indices into the input edge list, in depth-first order.
    edges: Vec<usize>,
}

#[derive(Serialize)]
struct ForestOut {
    nodes: Vec<String>,
    /// Node keys of each input edge.
    endpoints: Vec<(String, String)>,
    trees: Vec<TreeOut>,
}

/// Maximum spanning tree of each connected component of a weighted edge list.
pub fn spanning_trees_json(edges: &str) -> Result<String, String> {
    let input: Vec<EdgeIn> = serde_json::from_str(edges).map_err(bad)?;
    let mut nodes = BTreeSet::new();
    let mut graph_edges = Vec::new();
    let mut endpoints = Vec::new();
    for (i, e) in input.iter().enumerate() {
        if !e.weight.is_finite() {
            return Err(format!("edge {i}: weight must be a finite number"));
        }
        let (h, t) = (entity_key(&e.head), entity_key(&e.tail));
        if h.is_empty() || t.is_empty() {
            return Err(format!("edge {i}: empty entity"));
        }
        endpoints.push((h.clone(), t.clone()));
        if h == t {
            continue;
        }
        nodes.insert(h.clone());
        nodes.insert(t.clone());
        graph_edges.push(ContextEdge {
            triplet_id: i,
            head: e.head.clone(),
            relation: e.relation.clone(),
            tail: e.tail.clone(),
            head_key: h,
            tail_key: t,
            source_chunk: if e.chunk.is_empty() { format!("edge{i}") } else { e.chunk.clone() },
            weight: e.weight,
        });
    }
    let graph = WeightedContextGraph { nodes: nodes.clone(), edges: graph_edges };
    let trees = connected_components(&graph)
        .iter()
        .map(|c| {
            let tree = max_spanning_tree(c);
            TreeOut {
                nodes: tree.nodes.iter().cloned().collect(),
                total_weight: tree.total_weight(),
                edges: dfs_edge_order(&tree).into_iter().map(|i| tree.edges[i].triplet_id).collect(),
            }
        })
        .collect();
    serde_json::to_string(&ForestOut { nodes: nodes.into_iter().collect(), endpoints, trees }).map_err(bad)
}

#[derive(Deserialize)]
struct PipelineIn {
    documents: Vec<Document>,
    #[serde(default)]
    triplets: Vec<Triplet>,
    question: String,
    #[serde(default)]
    config: Option<PipelineConfig>,
}

/// Ingests the given documents and triplets in memory and answers one question
/// with hashed embeddings and the extractive answerer.
pub fn run_pipeline_json(input: &str) -> Result<String, String> {
    let input: PipelineIn = serde_json::from_str(input).map_err(bad)?;
    let cfg = input.config.unwrap_or_default();
    let mut corpus = Corpus::new();
    for doc in input.documents {
        corpus.add_document(doc, &ChunkingConfig::default()).map_err(bad)?;
    }
    let mut kg = AssociationKg::new("browser");
    kg.insert_triplets(input.triplets, &corpus).map_err(bad)?;
    let embedder = HashEmbedder::new(HashEmbedder::DEFAULT_DIM);
    let retry = RetryPolicy::none();
    let mut index = VectorIndex::for_provider(&embedder);
    let items: Vec<(String, String)> = corpus.chunks().map(|c| (c.chunk_id.clone(), c.text.clone())).collect();
    index.add_texts(&embedder, &items, 64, &retry).map_err(bad)?;
    let reranker = EmbeddingReranker::new(embedder.clone());
    let providers = Providers { embedder: &embedder, reranker: &reranker, llm: &ExtractiveLlm, retry };
    let kb = KnowledgeBase { corpus: &corpus, kg: &kg, index: &index };
    let out = answer_query(&input.question, kb, &providers, &cfg, &SimilarityCache::new()).map_err(bad)?;
    let context: Vec<_> = out
        .trace
        .bundle
        .entries
        .iter()
        .map(|e| json!({"entry": e, "text": corpus.chunk(&e.chunk_id).map(|c| c.text.as_str())}))
        .collect();
    serde_json::to_string(&json!({"answer": out.answer.text, "context": context, "trace": out.trace})).map_err(bad)
}

#[wasm_bindgen]
pub fn chunk_text(text: &str, max_units: usize) -> Result<String, JsValue> {
    chunk_text_json(text, max_units).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn spanning_trees(edges: &str) -> Result<String, JsValue> {
    spanning_trees_json(edges).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn run_pipeline(input: &str) -> Result<String, JsValue> {
    run_pipeline_json(input).map_err(|e| JsValue::from_str(&e))
}
