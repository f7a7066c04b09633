//! Knowledge-graph guided retrieval of text chunks and organization of the
//! retrieved subgraph into reranked spanning trees for answer generation.

pub mod corpus;
pub mod embedding_index;
pub mod eval_harness;
pub mod generation;
pub mod kg_builder;
pub mod kg_store;
pub mod organizer;
pub mod parallel;
pub mod pipeline;
pub mod provider;
pub mod retrieval;

pub use corpus::{Chunk, ChunkingConfig, Corpus, Document, QaExample};
pub use embedding_index::{EmbeddingProvider, HashEmbedder, SimilarityCache, VectorIndex};
pub use generation::{LlmProvider, MockLlm};
pub use kg_builder::Triplet;
pub use kg_store::AssociationKg;
pub use organizer::{ContextBundle, EmbeddingReranker, Reranker};
pub use pipeline::{answer_query, retrieve, KnowledgeBase, PipelineConfig, Providers};
pub use provider::RetryPolicy;
